//! Offline training: K Q-networks with EMA target copies, the λ-mix
//! ensemble reduction, bootstrapped targets that take the max over N
//! behavior samples at the next state, and minibatch squared-error updates.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::AutoregressiveBehaviorModel;
use crate::dataset::{OfflineDataset, Transition};
use crate::error::{EmaqError, Result};
use crate::neural::{read_checkpoint, write_checkpoint, Activation, AdamState, Mlp};

/// λ·min + (1−λ)·max over ensemble member values.
pub fn ensemble_value(values: &[f64], lambda_mix: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(EmaqError::Structural(
            "ensemble_value requires a non-empty value list".into(),
        ));
    }
    let mut lo = values[0];
    let mut hi = values[0];
    for &v in &values[1..] {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok(lambda_mix * lo + (1.0 - lambda_mix) * hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    /// Number of ensemble members K.
    pub num_members: usize,
    pub lambda_mix: f64,
    pub alpha_ema: f64,
    /// N: behavior samples per bootstrapped target.
    pub n_samples: usize,
    pub gamma: f64,
}

impl EnsembleConfig {
    /// Full-scale defaults: K = 8, λ = 1.0, α = 0.995.
    pub fn new(state_dim: usize, action_dim: usize, n_samples: usize, gamma: f64) -> Self {
        Self {
            state_dim,
            action_dim,
            hidden: vec![64, 64],
            num_members: 8,
            lambda_mix: 1.0,
            alpha_ema: 0.995,
            n_samples,
            gamma,
        }
    }

    /// Desk-scale profile: K = 4 and smaller networks, paired with batch 128
    /// in `TrainConfig::desk`.
    pub fn desk(state_dim: usize, action_dim: usize, n_samples: usize, gamma: f64) -> Self {
        Self {
            hidden: vec![48, 48],
            num_members: 4,
            ..Self::new(state_dim, action_dim, n_samples, gamma)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(EmaqError::Config("state/action dims must be positive".into()));
        }
        if self.num_members == 0 {
            return Err(EmaqError::Config("ensemble needs at least one member".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_mix) {
            return Err(EmaqError::Config("lambda_mix must lie in [0, 1]".into()));
        }
        if !(self.alpha_ema > 0.0 && self.alpha_ema < 1.0) {
            return Err(EmaqError::Config("alpha_ema must lie in (0, 1)".into()));
        }
        if self.n_samples == 0 {
            return Err(EmaqError::Config("n_samples must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(EmaqError::Config("gamma must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// K online Q-networks with matching EMA target copies. Each member maps
/// concat(state, action) to a scalar value.
pub struct QEnsemble {
    config: EnsembleConfig,
    online: Vec<Mlp>,
    target: Vec<Mlp>,
}

impl QEnsemble {
    pub fn new(config: EnsembleConfig, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![config.state_dim + config.action_dim];
        dims.extend_from_slice(&config.hidden);
        dims.push(1);
        let mut acts = vec![Activation::Relu; config.hidden.len()];
        acts.push(Activation::Identity);
        let mut online = Vec::with_capacity(config.num_members);
        let mut target = Vec::with_capacity(config.num_members);
        for _ in 0..config.num_members {
            let net = Mlp::glorot(&dims, &acts, rng)?;
            // Targets start as exact copies of their online nets.
            let mut t = Mlp::zeros(&dims, &acts)?;
            t.set_params(net.params())?;
            online.push(net);
            target.push(t);
        }
        Ok(Self {
            config,
            online,
            target,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn num_members(&self) -> usize {
        self.config.num_members
    }

    pub fn online_nets(&self) -> &[Mlp] {
        &self.online
    }

    pub fn online_nets_mut(&mut self) -> &mut [Mlp] {
        &mut self.online
    }

    pub fn target_nets(&self) -> &[Mlp] {
        &self.target
    }

    pub fn target_nets_mut(&mut self) -> &mut [Mlp] {
        &mut self.target
    }

    fn q_input(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(state.len() + action.len());
        input.extend_from_slice(state);
        input.extend_from_slice(action);
        input
    }

    /// Per-member online Q values at (s, a).
    pub fn online_values(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let input = self.q_input(state, action);
        self.online.iter().map(|n| Ok(n.forward(&input)?[0])).collect()
    }

    /// Per-member target Q values at (s, a).
    pub fn target_values(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let input = self.q_input(state, action);
        self.target.iter().map(|n| Ok(n.forward(&input)?[0])).collect()
    }

    /// θ_target ← α·θ_target + (1−α)·θ for every member.
    pub fn ema_update(&mut self) -> Result<()> {
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            t.ema_from(o, self.config.alpha_ema)?;
        }
        Ok(())
    }
}

/// Counter key for behavior draws inside targets. The j-th sample for a
/// transition comes from a stream keyed on (step, transition index, j), so
/// the first N samples are a prefix of the first N′ > N samples.
#[derive(Debug, Clone, Copy)]
pub struct SampleKey {
    pub seed: u64,
    pub step: u64,
    pub transition: u64,
}

/// Draws `n` behavior actions at `state` under the prefix-sampling scheme.
pub fn sampled_actions(
    behavior: &AutoregressiveBehaviorModel,
    state: &[f64],
    n: usize,
    key: SampleKey,
) -> Result<Vec<Vec<f64>>> {
    let h = behavior.embed(state)?;
    (0..n)
        .map(|j| {
            let mut rng = crate::rng::stream(key.seed, &[key.step, key.transition, j as u64]);
            behavior.sample_from_embedding(&h, 1.0, &mut rng)
        })
        .collect()
}

pub(crate) fn to_f64(values: &[f32]) -> Vec<f64> {
    values.iter().map(|v| *v as f64).collect()
}

/// Bootstrapped regression target: r + (1−t)·γ·max over N behavior samples
/// of the λ-mixed target-network value at the next state.
pub fn y_target(
    ensemble: &QEnsemble,
    behavior: &AutoregressiveBehaviorModel,
    tr: &Transition,
    key: SampleKey,
) -> Result<f64> {
    let r = tr.reward as f64;
    if tr.terminal {
        return Ok(r);
    }
    let next_state = to_f64(&tr.next_state);
    let actions = sampled_actions(behavior, &next_state, ensemble.config.n_samples, key)?;
    let mut best = f64::NEG_INFINITY;
    for action in &actions {
        let values = ensemble.target_values(&next_state, action)?;
        best = best.max(ensemble_value(&values, ensemble.config.lambda_mix)?);
    }
    Ok(r + ensemble.config.gamma * best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub num_updates: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub eval_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_updates: 10_000,
            batch_size: 256,
            learning_rate: 1e-4,
            eval_interval: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile paired with `EnsembleConfig::desk`.
    pub fn desk() -> Self {
        Self {
            batch_size: 128,
            ..Self::default()
        }
    }
}

/// Per-member optimizer state for one ensemble.
pub struct EnsembleOptimizers {
    members: Vec<AdamState>,
}

impl EnsembleOptimizers {
    pub fn new(ensemble: &QEnsemble, learning_rate: f64) -> Self {
        Self {
            members: ensemble
                .online
                .iter()
                .map(|n| AdamState::new(n.num_params(), learning_rate))
                .collect(),
        }
    }
}

/// One Algorithm-1 step: compute fixed targets for the batch, take one Adam
/// step per member on its mean squared error, then EMA the targets.
/// Returns the per-member pre-update loss.
pub fn train_step(
    ensemble: &mut QEnsemble,
    behavior: &AutoregressiveBehaviorModel,
    batch: &[&Transition],
    optimizers: &mut EnsembleOptimizers,
    seed: u64,
    step: u64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(EmaqError::Structural("train_step batch is empty".into()));
    }
    let mut targets = Vec::with_capacity(batch.len());
    let mut inputs = Vec::with_capacity(batch.len());
    for (idx, tr) in batch.iter().enumerate() {
        let key = SampleKey {
            seed,
            step,
            transition: idx as u64,
        };
        let y = y_target(ensemble, behavior, tr, key)?;
        if !y.is_finite() {
            return Err(EmaqError::Divergence(format!(
                "non-finite target at step {step}, batch index {idx} (reward {}, terminal {})",
                tr.reward, tr.terminal
            )));
        }
        targets.push(y);
        let mut input = to_f64(&tr.state);
        input.extend(tr.action.iter().map(|v| *v as f64));
        inputs.push(input);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut losses = Vec::with_capacity(ensemble.config.num_members);
    for (member, opt) in ensemble.online.iter_mut().zip(&mut optimizers.members) {
        let mut grads = vec![0.0; member.num_params()];
        let mut loss = 0.0;
        for (input, y) in inputs.iter().zip(&targets) {
            let cache = member.forward_cached(input)?;
            let diff = cache.output()[0] - y;
            loss += diff * diff;
            member.backward_accumulate(&cache, &[2.0 * diff * scale], &mut grads)?;
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(EmaqError::Divergence(format!(
                "non-finite loss at step {step} (batch size {}, target range [{:?}, {:?}])",
                batch.len(),
                targets.iter().cloned().fold(f64::INFINITY, f64::min),
                targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            )));
        }
        opt.step(member.params_mut(), &grads)?;
        losses.push(loss);
    }
    ensemble.ema_update()?;
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub member_losses: Vec<f64>,
    pub mean_loss: f64,
    pub eval_mean: Option<f64>,
    pub eval_std: Option<f64>,
}

/// CSV with header: step, loss_0..loss_{K−1}, mean_loss, eval_mean, eval_std.
pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let k = rows.first().map_or(0, |r| r.member_losses.len());
    let mut out = String::from("step");
    for i in 0..k {
        out.push_str(&format!(",loss_{i}"));
    }
    out.push_str(",mean_loss,eval_mean,eval_std\n");
    for row in rows {
        out.push_str(&row.step.to_string());
        for l in &row.member_losses {
            out.push_str(&format!(",{l}"));
        }
        out.push_str(&format!(",{}", row.mean_loss));
        match (row.eval_mean, row.eval_std) {
            (Some(m), Some(s)) => out.push_str(&format!(",{m},{s}\n")),
            _ => out.push_str(",,\n"),
        }
    }
    out
}

/// Full offline training loop: uniform minibatches with replacement,
/// metrics recorded at step 0 and every `eval_interval` thereafter. The
/// optional `eval` callback supplies (mean, std) rollout returns.
pub fn train(
    ensemble: &mut QEnsemble,
    behavior: &AutoregressiveBehaviorModel,
    dataset: &OfflineDataset,
    config: &TrainConfig,
    mut eval: Option<&mut dyn FnMut(&QEnsemble) -> Result<(f64, f64)>>,
) -> Result<Vec<MetricsRow>> {
    if dataset.is_empty() {
        return Err(EmaqError::Validation(
            "training requires a non-empty dataset".into(),
        ));
    }
    if config.batch_size == 0 || config.eval_interval == 0 {
        return Err(EmaqError::Config(
            "batch_size and eval_interval must be positive".into(),
        ));
    }
    let mut optimizers = EnsembleOptimizers::new(ensemble, config.learning_rate);
    let mut rng = crate::rng::stream(config.seed, &[0x0ff1]);
    let mut rows = Vec::new();

    let probe_losses = |ens: &QEnsemble, losses: Option<&[f64]>| -> Vec<f64> {
        match losses {
            Some(l) => l.to_vec(),
            None => vec![f64::NAN; ens.config.num_members],
        }
    };
    let mut record = |step: usize,
                      losses: Option<&[f64]>,
                      ens: &QEnsemble,
                      eval: &mut Option<&mut dyn FnMut(&QEnsemble) -> Result<(f64, f64)>>|
     -> Result<()> {
        let member_losses = probe_losses(ens, losses);
        let mean_loss = if member_losses.iter().all(|l| l.is_finite()) {
            member_losses.iter().sum::<f64>() / member_losses.len() as f64
        } else {
            f64::NAN
        };
        let (eval_mean, eval_std) = match eval {
            Some(f) => {
                let (m, s) = f(ens)?;
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        rows.push(MetricsRow {
            step,
            member_losses,
            mean_loss,
            eval_mean,
            eval_std,
        });
        Ok(())
    };

    record(0, None, ensemble, &mut eval)?;
    let mut last_losses: Vec<f64> = Vec::new();
    for step in 1..=config.num_updates {
        let batch: Vec<&Transition> = (0..config.batch_size)
            .map(|_| &dataset.transitions[rng.gen_range(0..dataset.len())])
            .collect();
        last_losses = train_step(
            ensemble,
            behavior,
            &batch,
            &mut optimizers,
            config.seed,
            step as u64,
        )?;
        if step % config.eval_interval == 0 {
            record(step, Some(&last_losses), ensemble, &mut eval)?;
        }
    }
    if config.num_updates % config.eval_interval != 0 && config.num_updates > 0 {
        record(config.num_updates, Some(&last_losses), ensemble, &mut eval)?;
    }
    Ok(rows)
}

/// Checkpoint bundle: one JSON config line, then the K online networks
/// followed by the K target networks.
pub fn save_ensemble<W: Write>(writer: &mut W, ensemble: &QEnsemble) -> Result<()> {
    let line = serde_json::to_string(&ensemble.config).expect("config serialization cannot fail");
    writer.write_all(line.as_bytes())?;
    writer.write_all(b"\n")?;
    for net in ensemble.online.iter().chain(&ensemble.target) {
        write_checkpoint(writer, net)?;
    }
    Ok(())
}

pub fn load_ensemble<R: Read>(reader: &mut R) -> Result<QEnsemble> {
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = reader.read(&mut byte)?;
        if n == 0 {
            return Err(EmaqError::Parse("ensemble header is not terminated".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let config: EnsembleConfig = serde_json::from_slice(&header_bytes)
        .map_err(|e| EmaqError::Parse(format!("ensemble header: {e}")))?;
    config.validate()?;
    let mut online = Vec::with_capacity(config.num_members);
    let mut target = Vec::with_capacity(config.num_members);
    for _ in 0..config.num_members {
        online.push(read_checkpoint(reader)?);
    }
    for _ in 0..config.num_members {
        target.push(read_checkpoint(reader)?);
    }
    for (o, t) in online.iter().zip(&target) {
        if o.layer_dims() != t.layer_dims() {
            return Err(EmaqError::Validation(
                "online/target shape mismatch in checkpoint".into(),
            ));
        }
        if o.input_dim() != config.state_dim + config.action_dim || o.output_dim() != 1 {
            return Err(EmaqError::Validation(
                "ensemble member shape disagrees with config".into(),
            ));
        }
    }
    Ok(QEnsemble {
        config,
        online,
        target,
    })
}
