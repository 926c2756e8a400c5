//! Finite MDPs, discrete policies, Q tables, and exact fixed-point solvers.
//!
//! Dense tensors throughout; instances are a few hundred states at most.
//! Both solvers use synchronous sweeps so results do not depend on state
//! ordering or scheduling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EmaqError, Result};

pub const PROB_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 100_000;
const DIVERGENCE_PATIENCE: usize = 100;

/// Finite-state, finite-action MDP with dense transition and reward tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    /// Row-major [S x A x S] transition probabilities.
    transition: Vec<f64>,
    /// Row-major [S x A] rewards.
    reward: Vec<f64>,
    gamma: f64,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(EmaqError::Structural(
                "num_states and num_actions must be positive".into(),
            ));
        }
        if transition.len() != num_states * num_actions * num_states {
            return Err(EmaqError::Structural(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                num_states * num_actions * num_states
            )));
        }
        if reward.len() != num_states * num_actions {
            return Err(EmaqError::Structural(format!(
                "reward tensor has {} entries, expected {}",
                reward.len(),
                num_states * num_actions
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(EmaqError::Validation(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        for (i, r) in reward.iter().enumerate() {
            if !r.is_finite() {
                return Err(EmaqError::Validation(format!(
                    "reward entry {i} is not finite"
                )));
            }
        }
        for s in 0..num_states {
            for a in 0..num_actions {
                let row = &transition
                    [(s * num_actions + a) * num_states..(s * num_actions + a + 1) * num_states];
                let mut sum = 0.0;
                for (sp, p) in row.iter().enumerate() {
                    if !p.is_finite() || *p < 0.0 {
                        return Err(EmaqError::Validation(format!(
                            "transition[{s}][{a}][{sp}] = {p} is invalid"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(EmaqError::Validation(format!(
                        "transition row ({s},{a}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            transition,
            reward,
            gamma,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    /// Transition probabilities out of (s, a), one entry per next state.
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.num_actions + a) * self.num_states;
        &self.transition[base..base + self.num_states]
    }

    /// Random instance: Dirichlet(1) transition rows, rewards uniform [-1, 1].
    pub fn random<R: Rng>(num_states: usize, num_actions: usize, gamma: f64, rng: &mut R) -> Self {
        let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            let mut row: Vec<f64> = (0..num_states)
                .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                .collect();
            let sum: f64 = row.iter().sum();
            for p in &mut row {
                *p /= sum;
            }
            // Renormalize exactly so validation at PROB_TOL never trips.
            let sum2: f64 = row.iter().sum();
            let last = row.len() - 1;
            row[last] += 1.0 - sum2;
            transition.extend_from_slice(&row);
        }
        let reward: Vec<f64> = (0..num_states * num_actions)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Self::new(num_states, num_actions, transition, reward, gamma)
            .expect("random MDP construction is valid")
    }

    pub fn to_json(&self) -> String {
        let doc = MdpJson {
            num_states: self.num_states,
            num_actions: self.num_actions,
            gamma: self.gamma,
            reward: (0..self.num_states)
                .map(|s| (0..self.num_actions).map(|a| self.reward(s, a)).collect())
                .collect(),
            transition: (0..self.num_states)
                .map(|s| {
                    (0..self.num_actions)
                        .map(|a| self.transition_row(s, a).to_vec())
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("MDP serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpJson =
            serde_json::from_str(text).map_err(|e| EmaqError::Parse(format!("mdp json: {e}")))?;
        let mut reward = Vec::with_capacity(doc.num_states * doc.num_actions);
        for row in &doc.reward {
            if row.len() != doc.num_actions {
                return Err(EmaqError::Structural(
                    "reward rows must have num_actions entries".into(),
                ));
            }
            reward.extend_from_slice(row);
        }
        if doc.reward.len() != doc.num_states {
            return Err(EmaqError::Structural(
                "reward must have num_states rows".into(),
            ));
        }
        let mut transition = Vec::with_capacity(doc.num_states * doc.num_actions * doc.num_states);
        if doc.transition.len() != doc.num_states {
            return Err(EmaqError::Structural(
                "transition must have num_states rows".into(),
            ));
        }
        for per_state in &doc.transition {
            if per_state.len() != doc.num_actions {
                return Err(EmaqError::Structural(
                    "transition rows must have num_actions entries".into(),
                ));
            }
            for row in per_state {
                if row.len() != doc.num_states {
                    return Err(EmaqError::Structural(
                        "transition distributions must have num_states entries".into(),
                    ));
                }
                transition.extend_from_slice(row);
            }
        }
        Self::new(
            doc.num_states,
            doc.num_actions,
            transition,
            reward,
            doc.gamma,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct MdpJson {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    reward: Vec<Vec<f64>>,
    transition: Vec<Vec<Vec<f64>>>,
}

/// Per-state action distribution, row-major [S x A].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl DiscretePolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_states * num_actions {
            return Err(EmaqError::Structural(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                num_states * num_actions
            )));
        }
        for s in 0..num_states {
            let row = &probs[s * num_actions..(s + 1) * num_actions];
            let mut sum = 0.0;
            for (a, p) in row.iter().enumerate() {
                if !p.is_finite() || *p < 0.0 {
                    return Err(EmaqError::Validation(format!(
                        "policy[{s}][{a}] = {p} is invalid"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(EmaqError::Validation(format!(
                    "policy row {s} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self {
            num_states,
            num_actions,
            probs: vec![p; num_states * num_actions],
        }
    }

    /// Deterministic policy from per-state action indices.
    pub fn deterministic(num_states: usize, num_actions: usize, actions: &[usize]) -> Result<Self> {
        if actions.len() != num_states {
            return Err(EmaqError::Structural(
                "need one action index per state".into(),
            ));
        }
        let mut probs = vec![0.0; num_states * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(EmaqError::Structural(format!(
                    "action index {a} out of range for state {s}"
                )));
            }
            probs[s * num_actions + a] = 1.0;
        }
        Ok(Self {
            num_states,
            num_actions,
            probs,
        })
    }

    /// Random policy with Dirichlet(1) rows.
    pub fn random<R: Rng>(num_states: usize, num_actions: usize, rng: &mut R) -> Self {
        let mut probs = Vec::with_capacity(num_states * num_actions);
        for _ in 0..num_states {
            let mut row: Vec<f64> = (0..num_actions)
                .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                .collect();
            let sum: f64 = row.iter().sum();
            for p in &mut row {
                *p /= sum;
            }
            let sum2: f64 = row.iter().sum();
            let last = row.len() - 1;
            row[last] += 1.0 - sum2;
            probs.extend_from_slice(&row);
        }
        Self {
            num_states,
            num_actions,
            probs,
        }
    }

    /// Epsilon-mix with the uniform policy; guarantees full support.
    pub fn mixed_with_uniform(&self, eps: f64) -> Self {
        let u = 1.0 / self.num_actions as f64;
        let probs = self
            .probs
            .iter()
            .map(|p| (1.0 - eps) * p + eps * u)
            .collect();
        Self {
            num_states: self.num_states,
            num_actions: self.num_actions,
            probs,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    /// True when every action has strictly positive probability in every state.
    pub fn is_full_support(&self) -> bool {
        self.probs.iter().all(|p| *p > 0.0)
    }
}

/// Action-value table, row-major [S x A].
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(EmaqError::Structural(format!(
                "q table has {} entries, expected {}",
                values.len(),
                num_states * num_actions
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmaqError::Validation(format!(
                "q value at flat index {i} is not finite"
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Max over (s, a) of |self - other|.
    pub fn linf_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_shapes(mdp: &TabularMdp, policy: &DiscretePolicy) -> Result<()> {
    if policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions() {
        return Err(EmaqError::Structural(format!(
            "policy shape ({}, {}) does not match mdp shape ({}, {})",
            policy.num_states(),
            policy.num_actions(),
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    Ok(())
}

/// Runs a synchronous fixed-point sweep until the residual drops below tol.
fn iterate_to_fixed_point<F>(mdp: &TabularMdp, tol: f64, mut backup: F) -> Result<QTable>
where
    F: FnMut(&QTable) -> QTable,
{
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let mut prev_residual = f64::INFINITY;
    let mut growth_streak = 0usize;
    for _ in 0..MAX_SWEEPS {
        let next = backup(&q);
        let residual = next.linf_distance(&q);
        q = next;
        if residual <= tol {
            return Ok(q);
        }
        if residual > prev_residual {
            growth_streak += 1;
            if growth_streak >= DIVERGENCE_PATIENCE {
                return Err(EmaqError::Divergence(format!(
                    "residual grew for {DIVERGENCE_PATIENCE} consecutive sweeps (now {residual})"
                )));
            }
        } else {
            growth_streak = 0;
        }
        prev_residual = residual;
    }
    Err(EmaqError::Divergence(format!(
        "fixed point not reached within {MAX_SWEEPS} sweeps (residual {prev_residual})"
    )))
}

/// One application of the policy-evaluation backup T_mu.
pub fn policy_backup(mdp: &TabularMdp, policy: &DiscretePolicy, q: &QTable) -> QTable {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    // State values under the policy, computed once per sweep.
    let v: Vec<f64> = (0..ns)
        .map(|s| {
            policy
                .row(s)
                .iter()
                .zip(q.row(s))
                .map(|(p, qv)| p * qv)
                .sum()
        })
        .collect();
    let mut values = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let exp: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(&v)
                .map(|(p, vs)| p * vs)
                .sum();
            values[s * na + a] = mdp.reward(s, a) + mdp.gamma() * exp;
        }
    }
    QTable {
        num_states: ns,
        num_actions: na,
        values,
    }
}

/// One application of the Bellman optimality backup T*.
pub fn optimality_backup(mdp: &TabularMdp, q: &QTable) -> QTable {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let v: Vec<f64> = (0..ns)
        .map(|s| q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut values = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let exp: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(&v)
                .map(|(p, vs)| p * vs)
                .sum();
            values[s * na + a] = mdp.reward(s, a) + mdp.gamma() * exp;
        }
    }
    QTable {
        num_states: ns,
        num_actions: na,
        values,
    }
}

/// Exact policy evaluation: the unique Q with ||T_mu Q - Q||_inf <= tol.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &DiscretePolicy, tol: f64) -> Result<QTable> {
    check_shapes(mdp, policy)?;
    if tol <= 0.0 {
        return Err(EmaqError::Validation("tol must be positive".into()));
    }
    iterate_to_fixed_point(mdp, tol, |q| policy_backup(mdp, policy, q))
}

/// Q-learning fixed point: Q* with ||T* Q - Q||_inf <= tol.
pub fn q_learning_fixed_point(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    if tol <= 0.0 {
        return Err(EmaqError::Validation("tol must be positive".into()));
    }
    iterate_to_fixed_point(mdp, tol, |q| optimality_backup(mdp, q))
}

/// Deterministic argmax policy; ties broken by lowest action index.
pub fn greedy_policy(q: &QTable) -> DiscretePolicy {
    let actions: Vec<usize> = (0..q.num_states())
        .map(|s| {
            let row = q.row(s);
            let mut best = 0;
            for (a, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    DiscretePolicy::deterministic(q.num_states(), q.num_actions(), &actions)
        .expect("greedy policy shape is valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent dense linear solver (Gaussian elimination with partial
    /// pivoting) for the oracle (I - gamma P_mu) Q = r.
    fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            b.swap(col, pivot);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut acc = b[row];
            for k in row + 1..n {
                acc -= a[row][k] * x[k];
            }
            x[row] = acc / a[row][row];
        }
        x
    }

    fn single_state_mdp(rewards: &[f64], gamma: f64) -> TabularMdp {
        let na = rewards.len();
        TabularMdp::new(1, na, vec![1.0; na], rewards.to_vec(), gamma).unwrap()
    }

    #[test]
    fn geometric_series_single_state() {
        let mdp = single_state_mdp(&[1.0, 1.0], 0.9);
        let q = evaluate_policy(&mdp, &DiscretePolicy::uniform(1, 2), 1e-12).unwrap();
        assert!((q.get(0, 0) - 10.0).abs() < 1e-9);
        assert!((q.get(0, 1) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn gamma_zero_returns_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mdp = TabularMdp::random(4, 3, 0.0, &mut rng);
        let pol = DiscretePolicy::random(4, 3, &mut rng);
        let q = evaluate_policy(&mdp, &pol, 1e-12).unwrap();
        let qstar = q_learning_fixed_point(&mdp, 1e-12).unwrap();
        for s in 0..4 {
            for a in 0..3 {
                assert!((q.get(s, a) - mdp.reward(s, a)).abs() < 1e-12);
                assert!((qstar.get(s, a) - mdp.reward(s, a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evaluation_matches_linear_solve_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mdp = TabularMdp::random(5, 3, 0.9, &mut rng);
        let pol = DiscretePolicy::random(5, 3, &mut rng);
        let q = evaluate_policy(&mdp, &pol, 1e-12).unwrap();

        // Build the (S*A) x (S*A) system Q = r + gamma P Pi Q directly.
        let n = 15;
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![0.0; n];
        for s in 0..5 {
            for act in 0..3 {
                let row = s * 3 + act;
                a[row][row] += 1.0;
                b[row] = mdp.reward(s, act);
                for sp in 0..5 {
                    let p = mdp.transition_row(s, act)[sp];
                    for ap in 0..3 {
                        a[row][sp * 3 + ap] -= mdp.gamma() * p * pol.prob(sp, ap);
                    }
                }
            }
        }
        let x = solve_linear(a, b);
        for (i, expect) in x.iter().enumerate() {
            assert!(
                (q.values()[i] - expect).abs() < 1e-9,
                "entry {i}: {} vs {expect}",
                q.values()[i]
            );
        }
    }

    #[test]
    fn q_learning_two_action_closed_form() {
        // Single state, rewards [1, 2], gamma 0.5:
        // Q*(a) = r(a) + 0.5 * max_a Q*, max is Q*(a2) = 2 + 0.5 M => M = 4.
        let mdp = single_state_mdp(&[1.0, 2.0], 0.5);
        let q = q_learning_fixed_point(&mdp, 1e-12).unwrap();
        assert!((q.get(0, 0) - 3.0).abs() < 1e-9);
        assert!((q.get(0, 1) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn q_learning_matches_policy_enumeration_oracle() {
        // 4 states, 2 actions: enumerate all 16 deterministic policies,
        // evaluate each exactly, and verify Q* is attained by a greedy-
        // consistent policy and dominates all others.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mdp = TabularMdp::random(4, 2, 0.9, &mut rng);
        let qstar = q_learning_fixed_point(&mdp, 1e-12).unwrap();
        let mut best = vec![f64::NEG_INFINITY; 8];
        for mask in 0..16usize {
            let actions: Vec<usize> = (0..4).map(|s| (mask >> s) & 1).collect();
            let pol = DiscretePolicy::deterministic(4, 2, &actions).unwrap();
            let q = evaluate_policy(&mdp, &pol, 1e-13).unwrap();
            for (i, v) in q.values().iter().enumerate() {
                // Q^pi under the *one-step-greedy then follow pi* reading:
                // the enumeration's pointwise max over evaluated policies
                // equals Q* because the optimal policy is in the set.
                if *v > best[i] {
                    best[i] = *v;
                }
            }
        }
        for i in 0..8 {
            assert!(
                (qstar.values()[i] - best[i]).abs() < 1e-8,
                "entry {i}: {} vs {}",
                qstar.values()[i],
                best[i]
            );
        }
    }

    #[test]
    fn optimal_dominates_any_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..10 {
            let mdp = TabularMdp::random(6, 3, 0.9, &mut rng);
            let pol = DiscretePolicy::random(6, 3, &mut rng);
            let tol = 1e-10;
            let q = evaluate_policy(&mdp, &pol, tol).unwrap();
            let qstar = q_learning_fixed_point(&mdp, tol).unwrap();
            for i in 0..q.values().len() {
                assert!(
                    qstar.values()[i] >= q.values()[i] - 2.0 * tol,
                    "trial {trial} entry {i}"
                );
            }
        }
    }

    #[test]
    fn greedy_reevaluation_reproduces_qstar() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = TabularMdp::random(8, 4, 0.95, &mut rng);
        let tol = 1e-11;
        let qstar = q_learning_fixed_point(&mdp, tol).unwrap();
        let greedy = greedy_policy(&qstar);
        let q = evaluate_policy(&mdp, &greedy, tol).unwrap();
        assert!(q.linf_distance(&qstar) < 1e-6);
    }

    #[test]
    fn greedy_tie_breaks_to_lowest_index() {
        let q = QTable::new(3, 3, vec![1.0, 3.0, 3.0, 5.0, 2.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let pol = greedy_policy(&q);
        assert_eq!(pol.prob(0, 1), 1.0);
        assert_eq!(pol.prob(1, 0), 1.0);
        assert_eq!(pol.prob(2, 0), 1.0);
    }

    #[test]
    fn dimension_mismatch_is_structural_error() {
        let mdp = single_state_mdp(&[1.0], 0.5);
        let pol = DiscretePolicy::uniform(2, 1);
        assert!(matches!(
            evaluate_policy(&mdp, &pol, 1e-10),
            Err(EmaqError::Structural(_))
        ));
    }

    #[test]
    fn bad_transition_row_rejected() {
        let err = TabularMdp::new(1, 1, vec![0.9], vec![0.0], 0.5);
        assert!(matches!(err, Err(EmaqError::Validation(_))));
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = TabularMdp::random(3, 2, 0.8, &mut rng);
        let text = mdp.to_json();
        let back = TabularMdp::from_json(&text).unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn json_rejects_bad_probabilities() {
        let text = r#"{"num_states":1,"num_actions":1,"gamma":0.5,
                       "reward":[[0.0]],"transition":[[[0.5]]]}"#;
        assert!(matches!(
            TabularMdp::from_json(text),
            Err(EmaqError::Validation(_))
        ));
    }

    #[test]
    fn bellman_residual_contract_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mdp = TabularMdp::random(10, 3, 0.9, &mut rng);
        let pol = DiscretePolicy::random(10, 3, &mut rng);
        let tol = 1e-10;
        let q = evaluate_policy(&mdp, &pol, tol).unwrap();
        let backed = policy_backup(&mdp, &pol, &q);
        assert!(backed.linf_distance(&q) <= tol);
    }
}
