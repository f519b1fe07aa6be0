//! Random-policy rollouts, the replay dataset and its sampling routines.
//!
//! Observations are interned: every distinct observation is stored once and records
//! refer to it through an [`ObsId`]. Deterministic environments revisit the same
//! states constantly, so this keeps pixel datasets small and lets training encode
//! each distinct observation once per batch.

mod storage;

pub use storage::{DATASET_MAGIC, DATASET_VERSION};

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Encoding, Environment, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObsId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub state: ObsId,
    pub action: usize,
    pub reward: f64,
    pub next_state: ObsId,
    pub trajectory_id: usize,
    pub step_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationPolicy {
    #[default]
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env_id: String,
    pub seed: u64,
    pub policy: ExplorationPolicy,
    pub num_trajectories: usize,
    pub num_records: usize,
    pub num_actions: usize,
    pub episode_cap: usize,
    pub observation_shape: Vec<usize>,
    pub encoding: Encoding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayDataset {
    meta: DatasetMeta,
    observations: Vec<Observation>,
    records: Vec<TransitionRecord>,
    /// Visited states `s_0 … s_T` of each trajectory.
    trajectory_states: Vec<Vec<ObsId>>,
}

/// Incrementally assembles a dataset, interning observations by exact bit pattern.
pub struct DatasetBuilder {
    meta: DatasetMeta,
    observations: Vec<Observation>,
    index: HashMap<Vec<u64>, ObsId>,
    records: Vec<TransitionRecord>,
}

impl DatasetBuilder {
    pub fn new(meta: DatasetMeta) -> Self {
        DatasetBuilder { meta, observations: Vec::new(), index: HashMap::new(), records: Vec::new() }
    }

    pub fn intern(&mut self, obs: &Observation) -> Result<ObsId> {
        if obs.shape() != self.meta.observation_shape.as_slice() {
            return Err(Error::config(format!(
                "observation shape {:?} differs from dataset shape {:?}",
                obs.shape(),
                self.meta.observation_shape
            )));
        }
        let key = obs.key();
        if let Some(&id) = self.index.get(&key) {
            return Ok(id);
        }
        let id = ObsId(self.observations.len());
        self.observations.push(obs.clone());
        self.index.insert(key, id);
        Ok(id)
    }

    pub fn push(&mut self, record: TransitionRecord) {
        self.records.push(record);
    }

    pub fn finish(mut self) -> Result<ReplayDataset> {
        self.meta.num_records = self.records.len();
        ReplayDataset::from_parts(self.meta, self.observations, self.records)
    }
}

fn trajectory_seed(seed: u64, trajectory: usize) -> u64 {
    // splitmix64 finaliser over (seed, index)
    let mut z = seed ^ (trajectory as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Rolls out `num_trajectories` complete episodes with the exploration policy.
pub fn collect(
    env: &mut dyn Environment,
    policy: ExplorationPolicy,
    num_trajectories: usize,
    seed: u64,
) -> Result<ReplayDataset> {
    if num_trajectories == 0 {
        return Err(Error::usage("collect needs at least one trajectory"));
    }
    let meta = DatasetMeta {
        env_id: env.id(),
        seed,
        policy,
        num_trajectories,
        num_records: 0,
        num_actions: env.num_actions(),
        episode_cap: env.episode_cap(),
        observation_shape: env.observation_shape(),
        encoding: env.encoding(),
    };
    let mut builder = DatasetBuilder::new(meta);
    for k in 0..num_trajectories {
        let wrap = |e: Error| Error::Rollout { trajectory: k, source: Box::new(e) };
        let tseed = trajectory_seed(seed, k);
        let mut rng = ChaCha8Rng::seed_from_u64(tseed);
        let (obs, _goal) = env.reset(tseed).map_err(wrap)?;
        let mut state = builder.intern(&obs).map_err(wrap)?;
        for step_index in 0.. {
            let action = match policy {
                ExplorationPolicy::UniformRandom => rng.gen_range(0..env.num_actions()),
            };
            let step = env.step(action).map_err(wrap)?;
            let next_state = builder.intern(&step.next_observation).map_err(wrap)?;
            builder.push(TransitionRecord {
                state,
                action,
                reward: step.reward,
                next_state,
                trajectory_id: k,
                step_index,
            });
            state = next_state;
            if step.done {
                break;
            }
        }
    }
    builder.finish()
}

impl ReplayDataset {
    /// Validates record ordering and rebuilds the per-trajectory state lists.
    pub fn from_parts(
        meta: DatasetMeta,
        observations: Vec<Observation>,
        records: Vec<TransitionRecord>,
    ) -> Result<Self> {
        let mut trajectory_states: Vec<Vec<ObsId>> = Vec::new();
        for (i, r) in records.iter().enumerate() {
            if r.state.0 >= observations.len() || r.next_state.0 >= observations.len() {
                return Err(Error::format(0, format!("record {i} refers to a missing observation")));
            }
            if r.action >= meta.num_actions {
                return Err(Error::format(0, format!("record {i} has action {} out of range", r.action)));
            }
            if r.step_index == 0 {
                if r.trajectory_id != trajectory_states.len() {
                    return Err(Error::format(0, format!("record {i} starts trajectory out of order")));
                }
                trajectory_states.push(vec![r.state]);
            } else {
                let traj = trajectory_states
                    .get(r.trajectory_id)
                    .filter(|_| r.trajectory_id + 1 == trajectory_states.len())
                    .ok_or_else(|| Error::format(0, format!("record {i} breaks trajectory contiguity")))?;
                if traj.len() != r.step_index + 1 || *traj.last().unwrap() != r.state {
                    return Err(Error::format(0, format!("record {i} does not continue its trajectory")));
                }
            }
            if r.step_index >= meta.episode_cap {
                return Err(Error::format(0, format!("record {i} exceeds the episode cap")));
            }
            trajectory_states.last_mut().unwrap().push(r.next_state);
        }
        if meta.num_records != records.len() {
            return Err(Error::format(0, "record count does not match metadata"));
        }
        if !records.is_empty() && trajectory_states.len() != meta.num_trajectories {
            return Err(Error::format(0, "trajectory count does not match metadata"));
        }
        Ok(ReplayDataset { meta, observations, records, trajectory_states })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn observation(&self, id: ObsId) -> &Observation {
        &self.observations[id.0]
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectory_states.len()
    }

    pub fn trajectory_states(&self, trajectory: usize) -> &[ObsId] {
        &self.trajectory_states[trajectory]
    }

    pub fn trajectory_len(&self, trajectory: usize) -> usize {
        self.trajectory_states[trajectory].len() - 1
    }
}

/// Uniform sampling of record indices with replacement.
pub fn sample_batch_indices<R: Rng>(dataset: &ReplayDataset, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::usage("batch size must be positive"));
    }
    if dataset.is_empty() {
        return Err(Error::usage("cannot sample from an empty dataset"));
    }
    Ok((0..batch_size).map(|_| rng.gen_range(0..dataset.len())).collect())
}

pub fn sample_batch<'d, R: Rng>(
    dataset: &'d ReplayDataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<&'d TransitionRecord>> {
    Ok(sample_batch_indices(dataset, batch_size, rng)?
        .into_iter()
        .map(|i| &dataset.records[i])
        .collect())
}

/// Draws `count` states uniformly (with replacement) from the anchor's trajectory,
/// skipping any state whose observation equals the anchor's state or next state.
///
/// Returns fewer than `count` only when the trajectory holds no other observation.
pub fn sample_negatives<R: Rng>(
    dataset: &ReplayDataset,
    anchor: &TransitionRecord,
    count: usize,
    rng: &mut R,
) -> Vec<ObsId> {
    if count == 0 {
        return Vec::new();
    }
    let states = dataset.trajectory_states(anchor.trajectory_id);
    let allowed = |id: &ObsId| *id != anchor.state && *id != anchor.next_state;
    let mut out = Vec::with_capacity(count);
    let mut misses = 0;
    while out.len() < count && misses < 32 {
        let id = states[rng.gen_range(0..states.len())];
        if allowed(&id) {
            out.push(id);
        } else {
            misses += 1;
        }
    }
    if out.len() < count {
        let candidates: Vec<ObsId> = states.iter().copied().filter(allowed).collect();
        if candidates.is_empty() {
            return Vec::new();
        }
        while out.len() < count {
            out.push(candidates[rng.gen_range(0..candidates.len())]);
        }
    }
    out
}
