//! Built-in desk-scale environments: a 2-D point mass with bounded
//! kinematics, and a slippery gridworld exposed both as a rollout
//! environment (one-hot states, quantized 1-D continuous action) and as an
//! exactly equivalent `TabularMdp`, so the exact engine can serve as an
//! oracle for the neural pipeline.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EmaqError, Result};
use crate::tabular::{DiscretePolicy, QTable, TabularMdp};

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// True termination only. Horizon truncation is applied by the rollout
    /// harness and never sets this flag.
    pub terminal: bool,
}

/// A cloneable value-object environment. `step` is a pure function of
/// (state, action, rng draw); episode time is tracked by the caller, which
/// truncates at `horizon()` without marking the transition terminal.
pub trait Environment {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_low(&self) -> &[f64];
    fn action_high(&self) -> &[f64];
    fn horizon(&self) -> usize;
    fn reset(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn step(&self, state: &[f64], action: &[f64], rng: &mut ChaCha8Rng) -> StepResult;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMassConfig {
    pub goal: [f64; 2],
    pub start: [f64; 2],
    pub horizon: usize,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            goal: [0.5, 0.5],
            start: [-0.5, -0.5],
            horizon: 100,
        }
    }
}

/// 2-D point mass. State (x, y, vx, vy) ∈ [−1,1]⁴, action (ax, ay) ∈
/// [−1,1]². Dynamics v′ = clamp(0.95·v + 0.1·a), p′ = clamp(p + 0.1·v′);
/// reward −‖p′ − goal‖₂; no true terminals.
#[derive(Debug, Clone)]
pub struct PointMassEnv {
    config: PointMassConfig,
    bounds_low: [f64; 2],
    bounds_high: [f64; 2],
}

impl PointMassEnv {
    pub fn new(config: PointMassConfig) -> Self {
        Self {
            config,
            bounds_low: [-1.0, -1.0],
            bounds_high: [1.0, 1.0],
        }
    }

    pub fn config(&self) -> &PointMassConfig {
        &self.config
    }
}

impl Environment for PointMassEnv {
    fn name(&self) -> &str {
        "pointmass"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_low(&self) -> &[f64] {
        &self.bounds_low
    }

    fn action_high(&self) -> &[f64] {
        &self.bounds_high
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn reset(&self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![self.config.start[0], self.config.start[1], 0.0, 0.0]
    }

    fn step(&self, state: &[f64], action: &[f64], _rng: &mut ChaCha8Rng) -> StepResult {
        assert_eq!(state.len(), 4, "pointmass state must have 4 components");
        assert_eq!(action.len(), 2, "pointmass action must have 2 components");
        let mut next = vec![0.0; 4];
        for i in 0..2 {
            let a = action[i].clamp(-1.0, 1.0);
            let v = (0.95 * state[2 + i] + 0.1 * a).clamp(-1.0, 1.0);
            let p = (state[i] + 0.1 * v).clamp(-1.0, 1.0);
            next[i] = p;
            next[2 + i] = v;
        }
        let dx = next[0] - self.config.goal[0];
        let dy = next[1] - self.config.goal[1];
        StepResult {
            next_state: next,
            reward: -(dx * dx + dy * dy).sqrt(),
            terminal: false,
        }
    }
}

pub const GRID_MOVES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorldConfig {
    pub width: usize,
    pub height: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    /// With probability `slip` the executed move is uniform over the four
    /// directions, otherwise the intended one.
    pub slip: f64,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub gamma: f64,
    pub horizon: usize,
}

impl Default for GridWorldConfig {
    fn default() -> Self {
        Self {
            width: 4,
            height: 4,
            start: (0, 0),
            goal: (3, 3),
            slip: 0.1,
            step_reward: -0.01,
            goal_reward: 1.0,
            gamma: 0.99,
            horizon: 50,
        }
    }
}

/// Gridworld with one-hot state encoding and a single continuous action in
/// [−1, 1] quantized into four equal intervals (up, down, left, right).
/// Entering the goal cell terminates the episode.
#[derive(Debug, Clone)]
pub struct GridWorldEnv {
    config: GridWorldConfig,
    low: [f64; 1],
    high: [f64; 1],
}

/// Maps a continuous action in [−1, 1] to a move index 0..4
/// (0 up, 1 down, 2 left, 3 right) by equal-interval quantization.
pub fn action_to_move(a: f64) -> usize {
    let t = (a.clamp(-1.0, 1.0) + 1.0) / 2.0;
    ((t * GRID_MOVES as f64) as usize).min(GRID_MOVES - 1)
}

/// Continuous-action interval [lo, hi) owned by a move index.
pub fn move_interval(m: usize) -> (f64, f64) {
    assert!(m < GRID_MOVES);
    let w = 2.0 / GRID_MOVES as f64;
    (-1.0 + m as f64 * w, -1.0 + (m + 1) as f64 * w)
}

/// Midpoint representative of a move's continuous-action interval.
pub fn move_center(m: usize) -> f64 {
    let (lo, hi) = move_interval(m);
    0.5 * (lo + hi)
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    assert!(index < len);
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// Recovers a state index from a one-hot vector, tolerating float32 rounding.
pub fn one_hot_index(state: &[f64]) -> Result<usize> {
    let mut idx = None;
    for (i, &v) in state.iter().enumerate() {
        if (v - 1.0).abs() < 1e-6 {
            if idx.is_some() {
                return Err(EmaqError::Validation("state is not one-hot".into()));
            }
            idx = Some(i);
        } else if v.abs() > 1e-6 {
            return Err(EmaqError::Validation("state is not one-hot".into()));
        }
    }
    idx.ok_or_else(|| EmaqError::Validation("state is not one-hot".into()))
}

impl GridWorldEnv {
    pub fn new(config: GridWorldConfig) -> Result<Self> {
        if config.width == 0 || config.height == 0 {
            return Err(EmaqError::Config("grid dimensions must be positive".into()));
        }
        if config.start.0 >= config.width
            || config.start.1 >= config.height
            || config.goal.0 >= config.width
            || config.goal.1 >= config.height
        {
            return Err(EmaqError::Config("start/goal cell outside grid".into()));
        }
        if config.start == config.goal {
            return Err(EmaqError::Config("start cell equals goal cell".into()));
        }
        if !(0.0..=1.0).contains(&config.slip) {
            return Err(EmaqError::Config("slip must lie in [0, 1]".into()));
        }
        Ok(Self {
            config,
            low: [-1.0],
            high: [1.0],
        })
    }

    pub fn config(&self) -> &GridWorldConfig {
        &self.config
    }

    pub fn num_cells(&self) -> usize {
        self.config.width * self.config.height
    }

    pub fn cell_index(&self, x: usize, y: usize) -> usize {
        y * self.config.width + x
    }

    pub fn start_index(&self) -> usize {
        self.cell_index(self.config.start.0, self.config.start.1)
    }

    pub fn goal_index(&self) -> usize {
        self.cell_index(self.config.goal.0, self.config.goal.1)
    }

    /// Destination cell of a deterministic move; moves into walls stay put.
    fn move_dest(&self, cell: usize, m: usize) -> usize {
        let (w, h) = (self.config.width, self.config.height);
        let (x, y) = (cell % w, cell / w);
        let (nx, ny) = match m {
            0 => (x, if y + 1 < h { y + 1 } else { y }),
            1 => (x, y.saturating_sub(1)),
            2 => (x.saturating_sub(1), y),
            3 => (if x + 1 < w { x + 1 } else { x }, y),
            _ => unreachable!(),
        };
        self.cell_index(nx, ny)
    }

    /// Distribution over next cells for (cell, intended move) under the slip
    /// model. The goal cell is absorbing.
    pub fn transition_probs(&self, cell: usize, m: usize) -> Vec<f64> {
        let n = self.num_cells();
        let mut row = vec![0.0; n];
        if cell == self.goal_index() {
            row[cell] = 1.0;
            return row;
        }
        let slip = self.config.slip;
        for executed in 0..GRID_MOVES {
            let mut p = slip / GRID_MOVES as f64;
            if executed == m {
                p += 1.0 - slip;
            }
            row[self.move_dest(cell, executed)] += p;
        }
        row
    }

    /// The exactly equivalent tabular MDP: same cells, four actions, the
    /// goal cell absorbing with zero reward, r(s,a) = step_reward +
    /// goal_reward · P(next = goal | s, a).
    pub fn to_tabular(&self) -> TabularMdp {
        let n = self.num_cells();
        let goal = self.goal_index();
        let mut reward = Vec::with_capacity(n * GRID_MOVES);
        let mut transition = Vec::with_capacity(n * GRID_MOVES * n);
        for s in 0..n {
            for a in 0..GRID_MOVES {
                let row = self.transition_probs(s, a);
                let r = if s == goal {
                    0.0
                } else {
                    self.config.step_reward + self.config.goal_reward * row[goal]
                };
                reward.push(r);
                transition.extend_from_slice(&row);
            }
        }
        TabularMdp::new(n, GRID_MOVES, transition, reward, self.config.gamma)
            .expect("gridworld tabular construction is valid by construction")
    }
}

impl Environment for GridWorldEnv {
    fn name(&self) -> &str {
        "gridworld"
    }

    fn state_dim(&self) -> usize {
        self.num_cells()
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_low(&self) -> &[f64] {
        &self.low
    }

    fn action_high(&self) -> &[f64] {
        &self.high
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn reset(&self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        one_hot(self.start_index(), self.num_cells())
    }

    fn step(&self, state: &[f64], action: &[f64], rng: &mut ChaCha8Rng) -> StepResult {
        let cell = one_hot_index(state).expect("gridworld step requires a one-hot state");
        assert_eq!(action.len(), 1, "gridworld action must be 1-D");
        let intended = action_to_move(action[0]);
        let executed = if rng.gen::<f64>() < self.config.slip {
            rng.gen_range(0..GRID_MOVES)
        } else {
            intended
        };
        let next = self.move_dest(cell, executed);
        let reached = next == self.goal_index();
        StepResult {
            next_state: one_hot(next, self.num_cells()),
            reward: self.config.step_reward + if reached { self.config.goal_reward } else { 0.0 },
            terminal: reached,
        }
    }
}

/// Constructs the rollout environment together with its exact tabular twin.
pub fn gridworld_env(config: GridWorldConfig) -> Result<(GridWorldEnv, TabularMdp)> {
    let env = GridWorldEnv::new(config)?;
    let mdp = env.to_tabular();
    Ok((env, mdp))
}

pub fn pointmass_env(config: PointMassConfig) -> PointMassEnv {
    PointMassEnv::new(config)
}

/// Exact undiscounted expected episode return of `policy` over `horizon`
/// steps from `start`, by finite-horizon dynamic programming. With an
/// absorbing zero-reward goal this equals the expected rollout return.
pub fn finite_horizon_return(
    mdp: &TabularMdp,
    policy: &DiscretePolicy,
    horizon: usize,
    start: usize,
) -> f64 {
    let n = mdp.num_states();
    let mut v = vec![0.0; n];
    for _ in 0..horizon {
        let mut next_v = vec![0.0; n];
        for s in 0..n {
            let mut total = 0.0;
            for a in 0..mdp.num_actions() {
                let p = policy.prob(s, a);
                if p == 0.0 {
                    continue;
                }
                let flow: f64 = mdp
                    .transition_row(s, a)
                    .iter()
                    .zip(&v)
                    .map(|(t, val)| t * val)
                    .sum();
                total += p * (mdp.reward(s, a) + flow);
            }
            next_v[s] = total;
        }
        v = next_v;
    }
    v[start]
}

/// ε-greedy over a tabular Q, emitting the continuous action at the center
/// of the chosen move's quantization interval (with uniform jitter inside
/// the interval so datasets cover each bin).
pub struct TabularEpsGreedyActor<'a> {
    pub q: &'a QTable,
    pub eps: f64,
    pub label: String,
}

impl<'a> crate::dataset::Actor for TabularEpsGreedyActor<'a> {
    fn act(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = one_hot_index(state).expect("tabular actor requires one-hot states");
        let m = if rng.gen::<f64>() < self.eps {
            rng.gen_range(0..GRID_MOVES)
        } else {
            let row = self.q.row(s);
            let mut best = 0;
            for (a, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = a;
                }
            }
            best
        };
        let (lo, hi) = move_interval(m);
        vec![rng.gen_range(lo..hi)]
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{collect_transitions, Actor, RandomActor};
    use crate::exact::solve_emaq_fixed_point;
    use crate::tabular::{greedy_policy, q_learning_fixed_point};
    use rand_chacha::rand_core::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn pointmass_zero_action_from_rest() {
        let env = PointMassEnv::new(PointMassConfig::default());
        let mut r = rng(0);
        let s = env.reset(&mut r);
        let out = env.step(&s, &[0.0, 0.0], &mut r);
        assert_eq!(out.next_state[..2], s[..2]);
        let dx = s[0] - 0.5;
        let dy = s[1] - 0.5;
        assert!((out.reward + (dx * dx + dy * dy).sqrt()).abs() < 1e-15);
        assert!(!out.terminal);
    }

    #[test]
    fn pointmass_velocity_saturates_at_clamp() {
        // v' = 0.95 v + 0.1 has fixed point 2.0, so the clamp at 1.0 binds.
        let env = PointMassEnv::new(PointMassConfig::default());
        let mut r = rng(0);
        let mut s = vec![-1.0, 0.0, 0.0, 0.0];
        for _ in 0..200 {
            s = env.step(&s, &[1.0, 0.0], &mut r).next_state;
        }
        assert_eq!(s[2], 1.0);
        assert_eq!(s[3], 0.0);
    }

    #[test]
    fn pointmass_do_nothing_return_matches_scripted_oracle() {
        let config = PointMassConfig::default();
        let env = PointMassEnv::new(config.clone());
        let mut r = rng(0);
        let mut s = env.reset(&mut r);
        let mut ret = 0.0;
        for _ in 0..env.horizon() {
            let out = env.step(&s, &[0.0, 0.0], &mut r);
            ret += out.reward;
            s = out.next_state;
        }
        // Scripted oracle: position never moves from rest under zero action.
        let d = ((config.start[0] - config.goal[0]).powi(2)
            + (config.start[1] - config.goal[1]).powi(2))
        .sqrt();
        let oracle = -(env.horizon() as f64) * d;
        assert!((ret - oracle).abs() < 1e-12, "{ret} vs {oracle}");
    }

    #[test]
    fn action_quantization_partitions_the_interval() {
        assert_eq!(action_to_move(-1.0), 0);
        assert_eq!(action_to_move(-0.51), 0);
        assert_eq!(action_to_move(-0.5), 1);
        assert_eq!(action_to_move(-0.01), 1);
        assert_eq!(action_to_move(0.0), 2);
        assert_eq!(action_to_move(0.49), 2);
        assert_eq!(action_to_move(0.5), 3);
        assert_eq!(action_to_move(1.0), 3);
        for m in 0..GRID_MOVES {
            assert_eq!(action_to_move(move_center(m)), m);
        }
    }

    #[test]
    fn zero_slip_rows_are_one_hot() {
        let config = GridWorldConfig {
            slip: 0.0,
            ..GridWorldConfig::default()
        };
        let (env, mdp) = gridworld_env(config).unwrap();
        for s in 0..env.num_cells() {
            for a in 0..GRID_MOVES {
                let row = mdp.transition_row(s, a);
                let ones = row.iter().filter(|&&p| p == 1.0).count();
                let zeros = row.iter().filter(|&&p| p == 0.0).count();
                assert_eq!(ones, 1);
                assert_eq!(zeros, row.len() - 1);
            }
        }
    }

    #[test]
    fn exact_qstar_matches_finite_horizon_enumeration_3x3() {
        // On a 3x3 grid, compare the discounted Q* from the solver against
        // exhaustive finite-horizon value iteration run far past mixing.
        let config = GridWorldConfig {
            width: 3,
            height: 3,
            goal: (2, 2),
            gamma: 0.9,
            ..GridWorldConfig::default()
        };
        let (env, mdp) = gridworld_env(config).unwrap();
        let qstar = q_learning_fixed_point(&mdp, 1e-12).unwrap();
        let n = env.num_cells();
        let mut v = vec![0.0; n];
        for _ in 0..2000 {
            let mut next_v = vec![0.0; n];
            for s in 0..n {
                let mut best = f64::NEG_INFINITY;
                for a in 0..GRID_MOVES {
                    let flow: f64 = mdp
                        .transition_row(s, a)
                        .iter()
                        .zip(&v)
                        .map(|(t, val)| t * val)
                        .sum();
                    best = best.max(mdp.reward(s, a) + mdp.gamma() * flow);
                }
                next_v[s] = best;
            }
            v = next_v;
        }
        for s in 0..n {
            for a in 0..GRID_MOVES {
                let flow: f64 = mdp
                    .transition_row(s, a)
                    .iter()
                    .zip(&v)
                    .map(|(t, val)| t * val)
                    .sum();
                let q_enum = mdp.reward(s, a) + mdp.gamma() * flow;
                assert!(
                    (qstar.get(s, a) - q_enum).abs() < 1e-9,
                    "s={s} a={a}: {} vs {q_enum}",
                    qstar.get(s, a)
                );
            }
        }
    }

    #[test]
    fn rollout_return_matches_tabular_prediction() {
        let (env, mdp) = gridworld_env(GridWorldConfig::default()).unwrap();
        let qstar = q_learning_fixed_point(&mdp, 1e-12).unwrap();
        let policy = greedy_policy(&qstar);
        let predicted = finite_horizon_return(&mdp, &policy, env.horizon(), env.start_index());

        struct GreedyActor<'a>(&'a QTable);
        impl<'a> Actor for GreedyActor<'a> {
            fn act(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
                TabularEpsGreedyActor {
                    q: self.0,
                    eps: 0.0,
                    label: String::new(),
                }
                .act(state, rng)
            }
            fn describe(&self) -> String {
                "greedy".into()
            }
        }

        let mut r = rng(7);
        let episodes = 4000;
        let mut returns = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let mut s = env.reset(&mut r);
            let mut ret = 0.0;
            for _ in 0..env.horizon() {
                let a = GreedyActor(&qstar).act(&s, &mut r);
                let out = env.step(&s, &a, &mut r);
                ret += out.reward;
                if out.terminal {
                    break;
                }
                s = out.next_state;
            }
            returns.push(ret);
        }
        let mean: f64 = returns.iter().sum::<f64>() / episodes as f64;
        let var: f64 =
            returns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (episodes - 1) as f64;
        let sem = (var / episodes as f64).sqrt();
        assert!(
            (mean - predicted).abs() < 3.0 * sem + 1e-9,
            "mean {mean}, predicted {predicted}, sem {sem}"
        );
    }

    #[test]
    fn empirical_transition_frequencies_match_tabular_rows() {
        // Agreement between the rollout env and its tabular twin, per (s,a),
        // within 3 sigma multinomial bounds.
        let (env, mdp) = gridworld_env(GridWorldConfig::default()).unwrap();
        let mut r = rng(13);
        let trials = 3000;
        for s in 0..env.num_cells() {
            if s == env.goal_index() {
                continue;
            }
            let state = one_hot(s, env.num_cells());
            for m in 0..GRID_MOVES {
                let mut counts = vec![0usize; env.num_cells()];
                for _ in 0..trials {
                    let out = env.step(&state, &[move_center(m)], &mut r);
                    counts[one_hot_index(&out.next_state).unwrap()] += 1;
                }
                let row = mdp.transition_row(s, m);
                for (next, &p) in row.iter().enumerate() {
                    let freq = counts[next] as f64 / trials as f64;
                    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
                    assert!(
                        (freq - p).abs() <= 3.5 * sigma + 1e-12,
                        "s={s} m={m} next={next}: freq {freq} vs p {p}"
                    );
                }
            }
        }
    }

    #[test]
    fn medium_policy_return_sits_between_random_and_optimal() {
        let (env, mdp) = gridworld_env(GridWorldConfig::default()).unwrap();
        let qstar = q_learning_fixed_point(&mdp, 1e-12).unwrap();
        let optimal = greedy_policy(&qstar);
        let medium = optimal.mixed_with_uniform(0.5);
        let random = DiscretePolicy::uniform(mdp.num_states(), mdp.num_actions());
        let start = env.start_index();
        let h = env.horizon();
        let r_rand = finite_horizon_return(&mdp, &random, h, start);
        let r_med = finite_horizon_return(&mdp, &medium, h, start);
        let r_opt = finite_horizon_return(&mdp, &optimal, h, start);
        assert!(
            r_rand < r_med && r_med < r_opt,
            "random {r_rand}, medium {r_med}, optimal {r_opt}"
        );
    }

    #[test]
    fn expected_max_policy_improves_with_n_in_exact_engine() {
        // Sanity for the neural acceptance runs: on the tabular twin, the
        // exact expected-max fixed point's induced policy improves with N
        // when the behavior policy is the medium (eps = 0.5) policy.
        let (env, mdp) = gridworld_env(GridWorldConfig::default()).unwrap();
        let qstar = q_learning_fixed_point(&mdp, 1e-12).unwrap();
        let medium = greedy_policy(&qstar).mixed_with_uniform(0.5);
        let start = env.start_index();
        let h = env.horizon();
        let mut prev = f64::NEG_INFINITY;
        for n in [1usize, 4, 16, 64] {
            let spec = crate::exact::ExpectedMaxSpec::new(n, medium.clone()).unwrap();
            let (_, induced) = solve_emaq_fixed_point(&mdp, &spec, 1e-10).unwrap();
            let ret = finite_horizon_return(&mdp, &induced, h, start);
            assert!(
                ret >= prev - 1e-6,
                "return decreased at N={n}: {ret} < {prev}"
            );
            prev = ret;
        }
        let opt_ret = finite_horizon_return(&mdp, &greedy_policy(&qstar), h, start);
        assert!((prev - opt_ret).abs() < 0.05, "N=64 {prev} vs opt {opt_ret}");
    }

    #[test]
    fn collected_transitions_respect_bounds_and_terminals() {
        let (env, _) = gridworld_env(GridWorldConfig::default()).unwrap();
        let actor = RandomActor {
            low: env.action_low().to_vec(),
            high: env.action_high().to_vec(),
        };
        let mut r = rng(3);
        let transitions = collect_transitions(&env, &actor, 5000, &mut r);
        let goal = env.goal_index();
        for tr in &transitions {
            assert!(tr.action[0] >= -1.0 && tr.action[0] <= 1.0);
            let next = one_hot_index(
                &tr.next_state.iter().map(|v| *v as f64).collect::<Vec<_>>(),
            )
            .unwrap();
            assert_eq!(tr.terminal, next == goal);
        }
    }

    #[test]
    fn eps_greedy_actor_matches_mixed_policy_distribution() {
        let (env, mdp) = gridworld_env(GridWorldConfig::default()).unwrap();
        let qstar = q_learning_fixed_point(&mdp, 1e-12).unwrap();
        let expected = greedy_policy(&qstar).mixed_with_uniform(0.5);
        let actor = TabularEpsGreedyActor {
            q: &qstar,
            eps: 0.5,
            label: "medium".into(),
        };
        let mut r = rng(21);
        let s = env.start_index();
        let state = one_hot(s, env.num_cells());
        let trials = 20_000;
        let mut counts = vec![0usize; GRID_MOVES];
        for _ in 0..trials {
            let a = actor.act(&state, &mut r);
            counts[action_to_move(a[0])] += 1;
        }
        for m in 0..GRID_MOVES {
            let p = expected.prob(s, m);
            let freq = counts[m] as f64 / trials as f64;
            let sigma = (p * (1.0 - p) / trials as f64).sqrt();
            assert!((freq - p).abs() <= 4.0 * sigma, "move {m}: {freq} vs {p}");
        }
    }

    #[test]
    fn invalid_grid_configs_are_rejected() {
        let bad_goal = GridWorldConfig {
            goal: (9, 9),
            ..GridWorldConfig::default()
        };
        assert!(matches!(
            GridWorldEnv::new(bad_goal),
            Err(EmaqError::Config(_))
        ));
        let bad_slip = GridWorldConfig {
            slip: 1.5,
            ..GridWorldConfig::default()
        };
        assert!(matches!(
            GridWorldEnv::new(bad_slip),
            Err(EmaqError::Config(_))
        ));
    }
}
