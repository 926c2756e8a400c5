//! Offline transition datasets: in-memory representation, the on-disk
//! format (JSON header line + fixed little-endian float32 records), and
//! generation in the random / medium / mixed / medium-expert regimes.
//!
//! Record layout per transition: state (f32 x state_dim), action
//! (f32 x action_dim), reward (f32), next_state (f32 x state_dim),
//! terminal (u8). Values are stored as f32, so a round trip through disk is
//! bit-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{EmaqError, Result};

/// One (s, a, r, s', t) tuple. The terminal flag marks true termination,
/// never horizon truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_state: Vec<f32>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub env: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Free-form description of the generating policy / regime.
    pub policy: String,
    pub seed: u64,
    /// Creation timestamp, supplied by the caller so that generation with
    /// identical inputs produces identical bytes.
    pub created: String,
    pub num_transitions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub metadata: DatasetMetadata,
    pub transitions: Vec<Transition>,
}

impl OfflineDataset {
    pub fn validate(&self) -> Result<()> {
        if self.metadata.num_transitions != self.transitions.len() {
            return Err(EmaqError::Validation(format!(
                "metadata claims {} transitions, found {}",
                self.metadata.num_transitions,
                self.transitions.len()
            )));
        }
        for (i, tr) in self.transitions.iter().enumerate() {
            if tr.state.len() != self.metadata.state_dim
                || tr.next_state.len() != self.metadata.state_dim
            {
                return Err(EmaqError::Validation(format!(
                    "transition {i}: state dimension mismatch"
                )));
            }
            if tr.action.len() != self.metadata.action_dim {
                return Err(EmaqError::Validation(format!(
                    "transition {i}: action dimension mismatch"
                )));
            }
            if !tr.reward.is_finite() {
                return Err(EmaqError::Validation(format!(
                    "transition {i}: reward is not finite"
                )));
            }
            if tr.state.iter().any(|v| !v.is_finite())
                || tr.next_state.iter().any(|v| !v.is_finite())
                || tr.action.iter().any(|v| !v.is_finite())
            {
                return Err(EmaqError::Validation(format!(
                    "transition {i}: non-finite entry"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

pub fn save_dataset<W: Write>(writer: &mut W, dataset: &OfflineDataset) -> Result<()> {
    dataset.validate()?;
    let header =
        serde_json::to_string(&dataset.metadata).expect("metadata serialization cannot fail");
    writer.write_all(header.as_bytes())?;
    writer.write_all(b"\n")?;
    for tr in &dataset.transitions {
        for v in &tr.state {
            writer.write_all(&v.to_le_bytes())?;
        }
        for v in &tr.action {
            writer.write_all(&v.to_le_bytes())?;
        }
        writer.write_all(&tr.reward.to_le_bytes())?;
        for v in &tr.next_state {
            writer.write_all(&v.to_le_bytes())?;
        }
        writer.write_all(&[tr.terminal as u8])?;
    }
    Ok(())
}

pub fn save_dataset_file<P: AsRef<Path>>(path: P, dataset: &OfflineDataset) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    save_dataset(&mut writer, dataset)?;
    writer.flush()?;
    Ok(())
}

pub fn load_dataset<R: Read>(reader: &mut R) -> Result<OfflineDataset> {
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = reader.read(&mut byte)?;
        if n == 0 {
            return Err(EmaqError::Parse(
                "dataset header line is not terminated".into(),
            ));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
        if header_bytes.len() > 1 << 20 {
            return Err(EmaqError::Parse("dataset header exceeds 1 MiB".into()));
        }
    }
    let metadata: DatasetMetadata = serde_json::from_slice(&header_bytes)
        .map_err(|e| EmaqError::Parse(format!("dataset header: {e}")))?;
    let record_floats = 2 * metadata.state_dim + metadata.action_dim + 1;
    let record_bytes = record_floats * 4 + 1;
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    if body.len() != metadata.num_transitions * record_bytes {
        return Err(EmaqError::Parse(format!(
            "dataset body has {} bytes at offset {}, expected {} for {} records",
            body.len(),
            header_bytes.len() + 1,
            metadata.num_transitions * record_bytes,
            metadata.num_transitions
        )));
    }
    let mut transitions = Vec::with_capacity(metadata.num_transitions);
    let read_f32 = |buf: &[u8], pos: usize| -> f32 {
        f32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap())
    };
    for rec in 0..metadata.num_transitions {
        let base = rec * record_bytes;
        let mut pos = base;
        let take_vec = |len: usize, pos: &mut usize| -> Vec<f32> {
            let v: Vec<f32> = (0..len)
                .map(|i| read_f32(&body, *pos + 4 * i))
                .collect();
            *pos += 4 * len;
            v
        };
        let state = take_vec(metadata.state_dim, &mut pos);
        let action = take_vec(metadata.action_dim, &mut pos);
        let reward = read_f32(&body, pos);
        pos += 4;
        let next_state = take_vec(metadata.state_dim, &mut pos);
        let terminal_byte = body[pos];
        if terminal_byte > 1 {
            return Err(EmaqError::Parse(format!(
                "record {rec}: terminal byte {terminal_byte} is not 0/1"
            )));
        }
        transitions.push(Transition {
            state,
            action,
            reward,
            next_state,
            terminal: terminal_byte == 1,
        });
    }
    let dataset = OfflineDataset {
        metadata,
        transitions,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn load_dataset_file<P: AsRef<Path>>(path: P) -> Result<OfflineDataset> {
    let mut reader = BufReader::new(File::open(path)?);
    load_dataset(&mut reader)
}

/// D4RL-style data regimes at desk scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Random,
    Medium,
    Mixed,
    MediumExpert,
}

impl Regime {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "random" => Ok(Self::Random),
            "medium" => Ok(Self::Medium),
            "mixed" => Ok(Self::Mixed),
            "medium_expert" | "medium-expert" => Ok(Self::MediumExpert),
            other => Err(EmaqError::Config(format!("unknown regime '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Medium => "medium",
            Self::Mixed => "mixed",
            Self::MediumExpert => "medium_expert",
        }
    }
}

/// A data-collection policy: maps a state to an action.
pub trait Actor {
    fn act(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn describe(&self) -> String;
}

/// Uniform actions within the environment's bounds.
pub struct RandomActor {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl Actor for RandomActor {
    fn act(&self, _state: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(lo, hi)| rng.gen_range(*lo..*hi))
            .collect()
    }

    fn describe(&self) -> String {
        "uniform-random".into()
    }
}

/// Reference policies needed by the non-random regimes. `mixed_log` is the
/// replay log of a medium policy's training, supplied by whoever ran that
/// training.
pub struct RegimeSources<'a> {
    pub medium: Option<&'a dyn Actor>,
    pub expert: Option<&'a dyn Actor>,
    pub mixed_log: Option<Vec<Transition>>,
}

impl<'a> Default for RegimeSources<'a> {
    fn default() -> Self {
        Self {
            medium: None,
            expert: None,
            mixed_log: None,
        }
    }
}

/// Rolls `actor` in `env` until `size` transitions are collected. Episodes
/// end on true terminals or at the horizon; horizon truncation records
/// terminal = false.
pub fn collect_transitions(
    env: &dyn Environment,
    actor: &dyn Actor,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Transition> {
    let mut out = Vec::with_capacity(size);
    'outer: loop {
        let mut state = env.reset(rng);
        for _ in 0..env.horizon() {
            let action = actor.act(&state, rng);
            let step = env.step(&state, &action, rng);
            out.push(Transition {
                state: state.iter().map(|v| *v as f32).collect(),
                action: action.iter().map(|v| *v as f32).collect(),
                reward: step.reward as f32,
                next_state: step.next_state.iter().map(|v| *v as f32).collect(),
                terminal: step.terminal,
            });
            if out.len() == size {
                break 'outer;
            }
            if step.terminal {
                break;
            }
            state = step.next_state;
        }
    }
    out
}

/// Builds an offline dataset for the requested regime.
///
/// - random: uniform actions
/// - medium: the medium reference policy
/// - mixed: the supplied training replay log (truncated/cycled to size)
/// - medium_expert: first half medium, second half expert, in order
pub fn generate_dataset(
    env: &dyn Environment,
    regime: Regime,
    size: usize,
    seed: u64,
    sources: &RegimeSources,
    created: &str,
) -> Result<OfflineDataset> {
    if size == 0 {
        return Err(EmaqError::Config("dataset size must be positive".into()));
    }
    let mut rng = crate::rng::stream(seed, &[0xda7a]);
    let (transitions, policy_desc) = match regime {
        Regime::Random => {
            let actor = RandomActor {
                low: env.action_low().to_vec(),
                high: env.action_high().to_vec(),
            };
            (
                collect_transitions(env, &actor, size, &mut rng),
                actor.describe(),
            )
        }
        Regime::Medium => {
            let actor = sources.medium.ok_or_else(|| {
                EmaqError::Config("medium regime requires a medium reference policy".into())
            })?;
            (
                collect_transitions(env, actor, size, &mut rng),
                actor.describe(),
            )
        }
        Regime::Mixed => {
            let log = sources.mixed_log.as_ref().ok_or_else(|| {
                EmaqError::Config("mixed regime requires a training replay log".into())
            })?;
            if log.is_empty() {
                return Err(EmaqError::Config("mixed replay log is empty".into()));
            }
            let taken: Vec<Transition> = log.iter().cycle().take(size).cloned().collect();
            (taken, "medium-training-replay".into())
        }
        Regime::MediumExpert => {
            let medium = sources.medium.ok_or_else(|| {
                EmaqError::Config("medium_expert regime requires a medium policy".into())
            })?;
            let expert = sources.expert.ok_or_else(|| {
                EmaqError::Config("medium_expert regime requires an expert policy".into())
            })?;
            let half = size / 2;
            let mut transitions = collect_transitions(env, medium, half, &mut rng);
            transitions.extend(collect_transitions(env, expert, size - half, &mut rng));
            (
                transitions,
                format!("50/50 {} + {}", medium.describe(), expert.describe()),
            )
        }
    };
    let dataset = OfflineDataset {
        metadata: DatasetMetadata {
            env: env.name().to_string(),
            state_dim: env.state_dim(),
            action_dim: env.action_dim(),
            action_low: env.action_low().to_vec(),
            action_high: env.action_high().to_vec(),
            policy: format!("{} ({})", regime.as_str(), policy_desc),
            seed,
            created: created.to_string(),
            num_transitions: transitions.len(),
        },
        transitions,
    };
    dataset.validate()?;
    Ok(dataset)
}
