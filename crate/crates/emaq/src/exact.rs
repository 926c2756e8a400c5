//! Closed-form expected-max backup on tabular MDPs, its fixed point, the
//! induced sample-then-argmax policy, and executable checks for the
//! operator's contraction, monotonicity, interpolation, and suboptimality
//! guarantees.
//!
//! Everything here is exact order statistics; Monte Carlo estimation only
//! appears in the neural training stack.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EmaqError, Result};
use crate::tabular::{q_learning_fixed_point, DiscretePolicy, QTable, TabularMdp, PROB_TOL};

/// Sample count N plus the behavior policy mu the samples are drawn from.
#[derive(Debug, Clone)]
pub struct ExpectedMaxSpec {
    n_samples: usize,
    behavior: DiscretePolicy,
}

impl ExpectedMaxSpec {
    pub fn new(n_samples: usize, behavior: DiscretePolicy) -> Result<Self> {
        if n_samples == 0 {
            return Err(EmaqError::Validation("n_samples must be >= 1".into()));
        }
        Ok(Self {
            n_samples,
            behavior,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn behavior(&self) -> &DiscretePolicy {
        &self.behavior
    }
}

/// c^n with guards for the endpoints; stable for n up to 1e6.
#[inline]
fn cum_pow(c: f64, n: usize) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    if c >= 1.0 {
        return 1.0;
    }
    if n <= 512 {
        c.powi(n as i32)
    } else {
        (n as f64 * c.ln()).exp()
    }
}

fn validate_support(values: &[f64], probs: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(EmaqError::Structural("empty support".into()));
    }
    if values.len() != probs.len() {
        return Err(EmaqError::Structural(format!(
            "values ({}) and probs ({}) differ in length",
            values.len(),
            probs.len()
        )));
    }
    let mut sum = 0.0;
    for p in probs {
        if !p.is_finite() || *p < 0.0 {
            return Err(EmaqError::Validation(format!("invalid probability {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(EmaqError::Validation(format!(
            "probabilities sum to {sum}, expected 1"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EmaqError::Validation("values must be finite".into()));
    }
    Ok(())
}

/// Indices sorted ascending by value, with value ties kept in index order.
fn sorted_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap().then(i.cmp(&j)));
    order
}

/// E[max of n iid draws], by grouping equal values and telescoping the
/// cumulative distribution: sum over distinct v_k of v_k (c_k^n - c_{k-1}^n).
pub fn exact_expected_max(values: &[f64], probs: &[f64], n: usize) -> Result<f64> {
    validate_support(values, probs)?;
    if n == 0 {
        return Err(EmaqError::Validation("n must be >= 1".into()));
    }
    let order = sorted_order(values);
    let mut total = 0.0;
    let mut cum = 0.0;
    let mut prev_pow = 0.0;
    let mut i = 0;
    while i < order.len() {
        let v = values[order[i]];
        let mut group_mass = 0.0;
        while i < order.len() && values[order[i]] == v {
            group_mass += probs[order[i]];
            i += 1;
        }
        cum += group_mass;
        let cur_pow = cum_pow(cum, n);
        total += v * (cur_pow - prev_pow);
        prev_pow = cur_pow;
    }
    Ok(total)
}

/// Per-action probability of being selected by the draw-n-then-argmax
/// process, with ties within an equal-value group resolved to the lowest
/// action index present in the sample.
pub fn exact_argmax_distribution(values: &[f64], probs: &[f64], n: usize) -> Result<Vec<f64>> {
    validate_support(values, probs)?;
    if n == 0 {
        return Err(EmaqError::Validation("n must be >= 1".into()));
    }
    let order = sorted_order(values);
    let mut out = vec![0.0; values.len()];
    let mut below = 0.0; // mass on values strictly less than the current group
    let mut i = 0;
    while i < order.len() {
        let v = values[order[i]];
        let mut group = Vec::new();
        while i < order.len() && values[order[i]] == v {
            group.push(order[i]);
            i += 1;
        }
        // `group` is in ascending index order because ties sort by index.
        // The selected action is v's group's lowest index present in the
        // sample, given no draw exceeded v. With S_j = below + mass of group
        // members with index >= g_j, P(select g_j) = S_j^n - S_{j+1}^n.
        let group_mass: f64 = group.iter().map(|&a| probs[a]).sum();
        let mut tail = group_mass;
        for &a in &group {
            let s_lo = below + (tail - probs[a]);
            let s_hi = below + tail;
            out[a] = (cum_pow(s_hi, n) - cum_pow(s_lo, n)).max(0.0);
            tail -= probs[a];
        }
        below += group_mass;
    }
    // The telescoped sum is exactly 1 in real arithmetic; for very large n
    // the exp/ln power path drifts by ~n*eps, so rescale the residue away.
    let total: f64 = out.iter().sum();
    if total > 0.0 && (total - 1.0).abs() <= 1e-9 {
        for p in &mut out {
            *p /= total;
        }
    }
    Ok(out)
}

/// One application of the expected-max backup: for each (s, a),
/// r(s,a) + gamma * sum_s' P(s'|s,a) * E[max of N draws of Q(s', .) under mu].
pub fn emaq_backup(mdp: &TabularMdp, spec: &ExpectedMaxSpec, q: &QTable) -> Result<QTable> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if spec.behavior.num_states() != ns
        || spec.behavior.num_actions() != na
        || q.num_states() != ns
        || q.num_actions() != na
    {
        return Err(EmaqError::Structural(
            "mdp, behavior, and q shapes must match".into(),
        ));
    }
    let em: Vec<f64> = (0..ns)
        .map(|s| exact_expected_max(q.row(s), spec.behavior.row(s), spec.n_samples))
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let exp: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(&em)
                .map(|(p, e)| p * e)
                .sum();
            values[s * na + a] = mdp.reward(s, a) + mdp.gamma() * exp;
        }
    }
    QTable::new(ns, na, values)
}

/// Iterates the expected-max backup to its fixed point Q^N_mu and extracts
/// the induced policy pi^N_mu from the argmax distribution per state.
pub fn solve_emaq_fixed_point(
    mdp: &TabularMdp,
    spec: &ExpectedMaxSpec,
    tol: f64,
) -> Result<(QTable, DiscretePolicy)> {
    if tol <= 0.0 {
        return Err(EmaqError::Validation("tol must be positive".into()));
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut q = QTable::zeros(ns, na);
    let mut prev_residual = f64::INFINITY;
    let mut growth_streak = 0usize;
    let mut converged = false;
    for _ in 0..crate::tabular::MAX_SWEEPS {
        let next = emaq_backup(mdp, spec, &q)?;
        let residual = next.linf_distance(&q);
        q = next;
        if residual <= tol {
            converged = true;
            break;
        }
        if residual > prev_residual {
            growth_streak += 1;
            if growth_streak >= 100 {
                return Err(EmaqError::Divergence(
                    "expected-max iteration residual grew for 100 consecutive sweeps".into(),
                ));
            }
        } else {
            growth_streak = 0;
        }
        prev_residual = residual;
    }
    if !converged {
        return Err(EmaqError::Divergence(format!(
            "expected-max fixed point not reached within {} sweeps",
            crate::tabular::MAX_SWEEPS
        )));
    }
    let mut probs = Vec::with_capacity(ns * na);
    for s in 0..ns {
        probs.extend(exact_argmax_distribution(
            q.row(s),
            spec.behavior.row(s),
            spec.n_samples,
        )?);
    }
    let policy = DiscretePolicy::new(ns, na, probs)?;
    Ok((q, policy))
}

/// Measures the operator's Lipschitz constant empirically: max over random
/// Q-pairs of ||T Q1 - T Q2||_inf / ||Q1 - Q2||_inf. Identical pairs are
/// skipped. The contraction theorem promises a value <= gamma.
pub fn verify_contraction(
    mdp: &TabularMdp,
    spec: &ExpectedMaxSpec,
    trials: usize,
    rng_seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(EmaqError::Validation("trials must be >= 1".into()));
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut rng = crate::rng::stream(rng_seed, &[0x636f6e74]);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let v1: Vec<f64> = (0..ns * na).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let v2: Vec<f64> = (0..ns * na).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let q1 = QTable::new(ns, na, v1)?;
        let q2 = QTable::new(ns, na, v2)?;
        let denom = q1.linf_distance(&q2);
        if denom == 0.0 {
            continue;
        }
        let t1 = emaq_backup(mdp, spec, &q1)?;
        let t2 = emaq_backup(mdp, spec, &q2)?;
        let ratio = t1.linf_distance(&t2) / denom;
        if ratio > worst {
            worst = ratio;
        }
    }
    Ok(worst)
}

/// Solves the fixed point for each N in an ascending list and returns the
/// largest pointwise violation Q^M(s,a) - Q^N(s,a) over consecutive pairs
/// M < N. The monotonicity theorem promises a value <= 0 up to solver slack.
pub fn verify_monotonicity(
    mdp: &TabularMdp,
    behavior: &DiscretePolicy,
    n_list: &[usize],
    tol: f64,
) -> Result<f64> {
    if n_list.len() < 2 {
        return Err(EmaqError::Validation(
            "n_list must contain at least two entries".into(),
        ));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EmaqError::Validation("n_list must be ascending".into()));
    }
    let mut worst = f64::NEG_INFINITY;
    let mut prev: Option<QTable> = None;
    for &n in n_list {
        let spec = ExpectedMaxSpec::new(n, behavior.clone())?;
        let (q, _) = solve_emaq_fixed_point(mdp, &spec, tol)?;
        if let Some(q_smaller) = &prev {
            for (lo, hi) in q_smaller.values().iter().zip(q.values()) {
                let violation = lo - hi;
                if violation > worst {
                    worst = violation;
                }
            }
        }
        prev = Some(q);
    }
    Ok(worst)
}

/// Which Q function the per-state gap Delta is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeltaSource {
    /// Default: Delta from the optimal Q*.
    Optimal,
    /// Variant: Delta from the fixed point Q^N_mu itself.
    FixedPoint,
}

/// Suboptimality diagnostics for one (instance, N) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuboptimalityReport {
    pub n_samples: usize,
    /// ||Q^N_mu - Q*||_inf.
    pub lhs: f64,
    /// gamma/(1-gamma) * max_{s,a} E_{s'}[Delta(s')] (the tighter form).
    pub rhs_expectation: f64,
    /// gamma/(1-gamma) * max_s Delta(s) (the looser form).
    pub rhs_max: f64,
    /// min(rhs forms) - lhs; the bound holds when this is >= 0.
    pub bound_slack: f64,
    /// For N = 1 only: gamma/(1-gamma) * max_{s,a} A(s,a), the advantage
    /// restatement of the max_s Delta form.
    pub advantage_bound: Option<f64>,
    /// inf_s of the behavior mass on the greedy argmax set of Q*.
    pub mu_star_min: f64,
    /// Per-state gap between the best action value and the expected best of
    /// N sampled values.
    pub delta: Vec<f64>,
}

/// Tie tolerance for deciding membership in the greedy argmax set of Q*.
const ARGMAX_TIE_TOL: f64 = 1e-9;

/// Computes the suboptimality bound report. Requires a full-support behavior
/// policy so that Q*_mu coincides with Q* and the greedy argmax set of Q* is
/// the optimal-action set.
pub fn suboptimality_bound_report(
    mdp: &TabularMdp,
    spec: &ExpectedMaxSpec,
    tol: f64,
    source: DeltaSource,
) -> Result<SuboptimalityReport> {
    if !spec.behavior.is_full_support() {
        return Err(EmaqError::Precondition(
            "suboptimality bound requires a full-support behavior policy".into(),
        ));
    }
    let qstar = q_learning_fixed_point(mdp, tol)?;
    let (qn, _) = solve_emaq_fixed_point(mdp, spec, tol)?;
    let q_src = match source {
        DeltaSource::Optimal => &qstar,
        DeltaSource::FixedPoint => &qn,
    };
    let ns = mdp.num_states();
    let mut delta = Vec::with_capacity(ns);
    for s in 0..ns {
        let row = q_src.row(s);
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let em = exact_expected_max(row, spec.behavior.row(s), spec.n_samples)?;
        delta.push(best - em);
    }
    let lhs = qn.linf_distance(&qstar);
    let factor = mdp.gamma() / (1.0 - mdp.gamma());
    let mut max_expected_delta = f64::NEG_INFINITY;
    for s in 0..ns {
        for a in 0..mdp.num_actions() {
            let e: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(&delta)
                .map(|(p, d)| p * d)
                .sum();
            if e > max_expected_delta {
                max_expected_delta = e;
            }
        }
    }
    let rhs_expectation = factor * max_expected_delta;
    let max_delta = delta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rhs_max = factor * max_delta;
    let bound_slack = rhs_expectation.min(rhs_max) - lhs;

    let advantage_bound = if spec.n_samples == 1 {
        // At N = 1 the expected max is the plain expectation, so
        // max_s Delta(s) = max_{s,a} [Q(s,a) - E_{a'~mu}Q(s,a')], the
        // advantage of the Delta-source Q with baseline V = E_mu[Q].
        let mut max_adv = f64::NEG_INFINITY;
        for s in 0..ns {
            let row = q_src.row(s);
            let v: f64 = spec
                .behavior
                .row(s)
                .iter()
                .zip(row)
                .map(|(p, q)| p * q)
                .sum();
            for q in row {
                let adv = q - v;
                if adv > max_adv {
                    max_adv = adv;
                }
            }
        }
        Some(factor * max_adv)
    } else {
        None
    };

    let mut mu_star_min = f64::INFINITY;
    for s in 0..ns {
        let row = qstar.row(s);
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mass: f64 = row
            .iter()
            .zip(spec.behavior.row(s))
            .filter(|(q, _)| **q >= best - ARGMAX_TIE_TOL)
            .map(|(_, p)| p)
            .sum();
        if mass < mu_star_min {
            mu_star_min = mass;
        }
    }

    Ok(SuboptimalityReport {
        n_samples: spec.n_samples,
        lhs,
        rhs_expectation,
        rhs_max,
        bound_slack,
        advantage_bound,
        mu_star_min,
        delta,
    })
}

/// Instance-specific envelope on ||Q^N_mu - Q*||_inf from the limit
/// argument: gamma/(1-gamma) * (1 - p_min)^N * (beta - alpha), where p_min
/// is the infimum over states of the behavior mass on the greedy argmax set
/// of Q* and [alpha, beta] are the discounted reward bounds.
pub fn limit_envelope(mdp: &TabularMdp, behavior: &DiscretePolicy, qstar: &QTable, n: usize) -> f64 {
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let mut p_min = f64::INFINITY;
    for s in 0..ns {
        let row = qstar.row(s);
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mass: f64 = row
            .iter()
            .zip(behavior.row(s))
            .filter(|(q, _)| **q >= best - ARGMAX_TIE_TOL)
            .map(|(_, p)| p)
            .sum();
        if mass < p_min {
            p_min = mass;
        }
    }
    let mut r_lo = f64::INFINITY;
    let mut r_hi = f64::NEG_INFINITY;
    for s in 0..ns {
        for a in 0..na {
            r_lo = r_lo.min(mdp.reward(s, a));
            r_hi = r_hi.max(mdp.reward(s, a));
        }
    }
    let span = (r_hi - r_lo) / (1.0 - mdp.gamma());
    mdp.gamma() / (1.0 - mdp.gamma()) * cum_pow(1.0 - p_min, n) * span
}

/// Aggregate of the executable theorem checks on one instance, emitted by
/// the `verify-theorems` CLI mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremReport {
    /// Measured sup over trials of the operator's Lipschitz ratio.
    pub contraction_ratio: f64,
    /// Max over (s,a) and consecutive N pairs of Q^M - Q^N for N > M.
    pub monotonicity_violation: f64,
    /// Min over tested N of (bound RHS - LHS).
    pub bound_slack: f64,
    /// inf_s of the behavior mass on the optimal-action set.
    pub mu_star_min: f64,
}

/// Runs contraction, monotonicity, and suboptimality checks on one instance.
pub fn verify_theorems(
    mdp: &TabularMdp,
    behavior: &DiscretePolicy,
    n_list: &[usize],
    trials: usize,
    seed: u64,
    tol: f64,
) -> Result<TheoremReport> {
    let mut contraction_ratio: f64 = 0.0;
    let mut bound_slack = f64::INFINITY;
    let mut mu_star_min = f64::INFINITY;
    for &n in n_list {
        let spec = ExpectedMaxSpec::new(n, behavior.clone())?;
        let ratio = verify_contraction(mdp, &spec, trials, seed)?;
        contraction_ratio = contraction_ratio.max(ratio);
        let report = suboptimality_bound_report(mdp, &spec, tol, DeltaSource::Optimal)?;
        bound_slack = bound_slack.min(report.bound_slack);
        mu_star_min = mu_star_min.min(report.mu_star_min);
    }
    let monotonicity_violation = verify_monotonicity(mdp, behavior, n_list, tol)?;
    Ok(TheoremReport {
        contraction_ratio,
        monotonicity_violation,
        bound_slack,
        mu_star_min,
    })
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Brute-force oracles, independent of the closed-form path.

    /// E[max of n draws] by enumerating all |support|^n weighted tuples.
    pub fn enumerate_expected_max(values: &[f64], probs: &[f64], n: usize) -> f64 {
        let k = values.len();
        let mut idx = vec![0usize; n];
        let mut total = 0.0;
        loop {
            let weight: f64 = idx.iter().map(|&i| probs[i]).product();
            let max = idx
                .iter()
                .map(|&i| values[i])
                .fold(f64::NEG_INFINITY, f64::max);
            total += weight * max;
            // odometer increment
            let mut pos = 0;
            loop {
                idx[pos] += 1;
                if idx[pos] < k {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
                if pos == n {
                    return total;
                }
            }
        }
    }

    /// Selection distribution by tuple enumeration, lowest-index tie rule.
    pub fn enumerate_argmax_distribution(values: &[f64], probs: &[f64], n: usize) -> Vec<f64> {
        let k = values.len();
        let mut idx = vec![0usize; n];
        let mut out = vec![0.0; k];
        loop {
            let weight: f64 = idx.iter().map(|&i| probs[i]).product();
            let max = idx
                .iter()
                .map(|&i| values[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let selected = idx
                .iter()
                .filter(|&&i| values[i] == max)
                .min()
                .copied()
                .unwrap();
            out[selected] += weight;
            let mut pos = 0;
            loop {
                idx[pos] += 1;
                if idx[pos] < k {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
                if pos == n {
                    return out;
                }
            }
        }
    }
}
