//! Discrete abstract MDP over a set of latent prototypes: temperature-softmax transitions
//! from the learned action effects, goal or predicted rewards, and a checker that
//! compares the result against an enumerated ground-truth MDP.

mod verify;

pub use verify::{map_states, verify_homomorphism, HomomorphismReport, TabularMdp, Violation, ViolationKind};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::envs::GoalSpec;
use crate::error::{Error, Result};
use crate::experience::{ObsId, ReplayDataset};
use crate::homomorphism::{sq_dist, LatentPoint, ModelParams};

pub const DEFAULT_DEDUP_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_PROTOTYPE_SAMPLES: usize = 1024;


/// Where a prototype came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrototypeSource {
    Dataset { observation: usize },
    Goal,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    points: Vec<LatentPoint>,
    sources: Vec<PrototypeSource>,
    tolerance: f64,
}

/// Indices of the points kept by greedy deduplication: a point is dropped when it lies
/// strictly within `tolerance` (squared distance) of an earlier kept point.
pub fn dedup_indices(points: &[LatentPoint], tolerance: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if kept.iter().all(|&k| sq_dist(&points[k], p) >= tolerance) {
            kept.push(i);
        }
    }
    kept
}

impl PrototypeSet {
    pub fn from_points(points: Vec<LatentPoint>, tolerance: f64) -> Result<Self> {
        let sources = vec![PrototypeSource::External; points.len()];
        Self::with_sources(points, sources, tolerance)
    }

    fn with_sources(points: Vec<LatentPoint>, sources: Vec<PrototypeSource>, tolerance: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::usage("a prototype set needs at least one point"));
        }
        if !(tolerance >= 0.0) {
            return Err(Error::config("dedup tolerance must be non-negative"));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
            return Err(Error::config("prototype points must be finite and share one positive dimension"));
        }
        let keep = dedup_indices(&points, tolerance);
        Ok(PrototypeSet {
            points: keep.iter().map(|&i| points[i].clone()).collect(),
            sources: keep.iter().map(|&i| sources[i]).collect(),
            tolerance,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[LatentPoint] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn sources(&self) -> &[PrototypeSource] {
        &self.sources
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::from_rows(&self.points).expect("prototypes share a dimension")
    }

    /// Index and squared distance of the closest prototype (lowest index on ties).
    pub fn nearest(&self, z: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.points.iter().enumerate() {
            let d = sq_dist(p, z);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Returns the prototype matching `z`, appending `z` when every prototype is farther than the tolerance.
    pub fn find_or_insert(&mut self, z: LatentPoint, source: PrototypeSource) -> Result<(usize, bool)> {
        if z.len() != self.dim() {
            return Err(Error::config("latent dimension differs from the prototype set"));
        }
        let (i, d) = self.nearest(&z);
        if d <= self.tolerance {
            return Ok((i, false));
        }
        self.points.push(z);
        self.sources.push(source);
        Ok((self.points.len() - 1, true))
    }
}

/// Encodes `samples` states drawn uniformly from the dataset (each record contributes its
/// state or its next state with equal odds) and prunes duplicates.
pub fn build_prototypes<R: Rng>(
    params: &ModelParams,
    dataset: &ReplayDataset,
    samples: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<PrototypeSet> {
    if dataset.is_empty() {
        return Err(Error::usage("cannot build prototypes from an empty dataset"));
    }
    if samples == 0 {
        return Err(Error::usage("prototype sample count must be positive"));
    }
    let ids: Vec<ObsId> = (0..samples)
        .map(|_| {
            let r = &dataset.records()[rng.gen_range(0..dataset.len())];
            if rng.gen_bool(0.5) {
                r.state
            } else {
                r.next_state
            }
        })
        .collect();
    // encode each distinct observation once
    let mut distinct: Vec<ObsId> = ids.clone();
    distinct.sort();
    distinct.dedup();
    let obs: Vec<_> = distinct.iter().map(|&id| dataset.observation(id)).collect();
    let z = params.encode_batch(&obs)?;
    let points = ids
        .iter()
        .map(|id| z.row_slice(distinct.binary_search(id).unwrap()).to_vec())
        .collect();
    let sources = ids.iter().map(|id| PrototypeSource::Dataset { observation: id.0 }).collect();
    PrototypeSet::with_sources(points, sources, tolerance)
}

/// Softmax over `−d/τ` with the row minimum subtracted first, so the closest entry is `e⁰`.
pub fn softmax_neg_distances(distances: &[f64], tau: f64) -> Vec<f64> {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = distances.iter().map(|d| (-(d - min) / tau).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// `T̂(x_j | x_i, a)` for every prototype pair: row `i` of the returned `(|X|, |X|)` matrix.
pub fn transition_probs(params: &ModelParams, prototypes: &PrototypeSet, action: usize, tau: f64) -> Result<Vec<Vec<f64>>> {
    check_tau(tau)?;
    let pred = params.predict_next_batch(&prototypes.as_tensor(), action)?;
    Ok((0..prototypes.len()).map(|i| row_from_prediction(prototypes, pred.row_slice(i), tau)).collect())
}

fn row_from_prediction(prototypes: &PrototypeSet, pred: &[f64], tau: f64) -> Vec<f64> {
    let d: Vec<f64> = prototypes.points().iter().map(|p| sq_dist(p, pred)).collect();
    softmax_neg_distances(&d, tau)
}

/// How prototype rewards are obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardMode<'g> {
    /// Reward 1 on the prototype matching the goal observation, 0 elsewhere.
    Goal(&'g GoalSpec),
    /// The reward head's prediction at each prototype.
    Predicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardAssignment {
    pub rewards: Vec<f64>,
    pub goal: Option<usize>,
    /// Whether the goal latent had to be added as a new prototype.
    pub inserted: bool,
}

pub fn assign_rewards(params: &ModelParams, prototypes: &mut PrototypeSet, mode: RewardMode<'_>) -> Result<RewardAssignment> {
    match mode {
        RewardMode::Goal(goal) => {
            let z = params.encode(&goal.goal_observation)?;
            let (g, inserted) = prototypes.find_or_insert(z, PrototypeSource::Goal)?;
            let mut rewards = vec![0.0; prototypes.len()];
            rewards[g] = 1.0;
            Ok(RewardAssignment { rewards, goal: Some(g), inserted })
        }
        RewardMode::Predicted => {
            let rewards = params.predict_reward_batch(&prototypes.as_tensor())?;
            Ok(RewardAssignment { rewards, goal: None, inserted: false })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractMdp {
    pub prototypes: PrototypeSet,
    pub num_actions: usize,
    /// Predicted next latent of every `(prototype, action)`, row-major `x * |A| + a`.
    pub predictions: Vec<LatentPoint>,
    /// Dense `(|X|, |A|, |X|)` probabilities.
    pub transitions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub absorbing: Vec<bool>,
    pub goal: Option<usize>,
    pub gamma: f64,
    /// `None` when the MDP was assembled from explicit tables.
    pub tau: Option<f64>,
}

impl AbstractMdp {
    /// Builds transitions and rewards; in goal mode the goal prototype absorbs when
    /// `goal_absorbing` is set.
    pub fn build(
        params: &ModelParams,
        mut prototypes: PrototypeSet,
        mode: RewardMode<'_>,
        tau: f64,
        gamma: f64,
        goal_absorbing: bool,
    ) -> Result<Self> {
        check_tau(tau)?;
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config(format!("discount must lie in [0, 1), got {gamma}")));
        }
        if prototypes.dim() != params.latent_dim {
            return Err(Error::config("prototype dimension differs from the model's latent dimension"));
        }
        let assignment = assign_rewards(params, &mut prototypes, mode)?;
        let na = params.num_actions;
        let n = prototypes.len();
        let latents = prototypes.as_tensor();
        let mut per_action = Vec::with_capacity(na);
        for a in 0..na {
            per_action.push(params.predict_next_batch(&latents, a)?);
        }
        let predictions = (0..n * na).map(|k| per_action[k % na].row_slice(k / na).to_vec()).collect();
        let mut absorbing = vec![false; n];
        if goal_absorbing {
            if let Some(g) = assignment.goal {
                absorbing[g] = true;
            }
        }
        let mut mdp = AbstractMdp {
            prototypes,
            num_actions: na,
            predictions,
            transitions: Vec::new(),
            rewards: assignment.rewards,
            absorbing,
            goal: assignment.goal,
            gamma,
            tau: Some(tau),
        };
        mdp.transitions = mdp.compute_transitions(tau);
        Ok(mdp)
    }

    /// Assembles an abstract MDP from explicit tables (tabular tests, external tools).
    pub fn from_parts(
        prototypes: PrototypeSet,
        num_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        absorbing: Vec<bool>,
        gamma: f64,
    ) -> Result<Self> {
        let n = prototypes.len();
        if transitions.len() != n * num_actions * n || rewards.len() != n || absorbing.len() != n {
            return Err(Error::config("abstract MDP tables do not match the prototype count"));
        }
        let mdp = AbstractMdp {
            prototypes,
            num_actions,
            predictions: Vec::new(),
            transitions,
            rewards,
            absorbing,
            goal: None,
            gamma,
            tau: None,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    fn compute_transitions(&self, tau: f64) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.predictions.len() * self.len());
        for pred in &self.predictions {
            t.extend(row_from_prediction(&self.prototypes, pred, tau));
        }
        t
    }

    /// Same prototypes and rewards with the transitions recomputed at another temperature.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        if self.predictions.is_empty() {
            return Err(Error::usage("temperature is fixed for an MDP assembled from explicit tables"));
        }
        let mut m = self.clone();
        m.tau = Some(tau);
        m.transitions = m.compute_transitions(tau);
        Ok(m)
    }

    /// Re-targets the MDP at a new goal without touching the model weights.
    pub fn with_goal(&self, params: &ModelParams, goal: &GoalSpec, goal_absorbing: bool) -> Result<Self> {
        let tau = self.tau.ok_or_else(|| Error::usage("cannot re-target an MDP assembled from explicit tables"))?;
        let mut prototypes = self.prototypes.clone();
        // drop a previously inserted goal prototype so goals do not accumulate
        if let Some(g) = self.goal {
            if self.prototypes.sources()[g] == PrototypeSource::Goal {
                prototypes.points.remove(g);
                prototypes.sources.remove(g);
            }
        }
        AbstractMdp::build(params, prototypes, RewardMode::Goal(goal), tau, self.gamma, goal_absorbing)
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn transition_row(&self, x: usize, action: usize) -> &[f64] {
        let n = self.len();
        let k = x * self.num_actions + action;
        &self.transitions[k * n..(k + 1) * n]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for x in 0..n {
            for a in 0..self.num_actions {
                let row = self.transition_row(x, a);
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::config(format!("transition ({x}, {a}) has an entry outside [0, 1]")));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::config(format!("transition ({x}, {a}) sums to {s}")));
                }
            }
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::config("non-finite reward"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("discount must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::diffcore::save_json(path, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let m: AbstractMdp = crate::diffcore::load_json(path)?;
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Dense, Layer, Parameterized, Sequential};
    use crate::envs::{Encoding, Observation};

    fn linear(weights: &[f64], rows: usize, cols: usize) -> Sequential {
        let dense = Dense::from_parts(Tensor::new(vec![rows, cols], weights.to_vec()).unwrap(), Tensor::zeros(&[rows])).unwrap();
        Sequential::new(cols, vec![Layer::Dense(dense)]).unwrap()
    }

    /// 1-D identity encoder; action 0 moves by +1, action 1 by −1.
    pub(crate) fn line_model() -> ModelParams {
        ModelParams {
            encoder: linear(&[1.0], 1, 1),
            action_net: linear(&[0.0, 1.0, -1.0], 1, 3),
            reward_net: linear(&[0.0], 1, 1),
            latent_dim: 1,
            num_actions: 2,
            observation_shape: vec![1],
        }
    }

    fn goal(v: f64) -> GoalSpec {
        GoalSpec { goal_observation: Observation::new(Tensor::new(vec![1], vec![v]).unwrap(), Encoding::Symbolic) }
    }

    #[test]
    fn dedup_examples() {
        let d = 1e-8;
        assert_eq!(PrototypeSet::from_points(vec![vec![1.0, 2.0]; 5], d).unwrap().len(), 1);
        // squared distance δ/2 from the first point, then one far away
        let near = (d).sqrt(); // ½·near² = δ/2
        let set = PrototypeSet::from_points(vec![vec![0.0], vec![near], vec![(20.0 * d).sqrt()]], d).unwrap();
        assert_eq!(set.len(), 2);
        assert!(PrototypeSet::from_points(vec![], d).is_err());
    }

    #[test]
    fn softmax_examples() {
        let single = softmax_neg_distances(&[3.7], 0.5);
        assert_eq!(single, vec![1.0]);
        let p = softmax_neg_distances(&[0.5, 0.0], 0.1);
        assert!((p[0] - 0.006692850924).abs() < 1e-9 && (p[1] - 0.993307149076).abs() < 1e-9);
        let sharp = softmax_neg_distances(&[0.2, 0.1, 0.3], 1e-20);
        assert_eq!(sharp, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn transitions_on_a_line() {
        let m = line_model();
        let protos = PrototypeSet::from_points(vec![vec![0.0], vec![1.0]], 1e-8).unwrap();
        let rows = transition_probs(&m, &protos, 0, 0.1).unwrap();
        // from 0, action +1 predicts 1: distances (0.5, 0)
        assert!((rows[0][1] - 0.993307149076).abs() < 1e-9);
        assert!(transition_probs(&m, &protos, 0, 0.0).is_err());
        let one = PrototypeSet::from_points(vec![vec![4.0]], 1e-8).unwrap();
        assert_eq!(transition_probs(&m, &one, 1, 1.0).unwrap(), vec![vec![1.0]]);
    }

    #[test]
    fn goal_rewards_match_or_insert() {
        let m = line_model();
        let mut protos = PrototypeSet::from_points(vec![vec![0.0], vec![1.0], vec![2.0]], 1e-8).unwrap();
        let a = assign_rewards(&m, &mut protos, RewardMode::Goal(&goal(1.0))).unwrap();
        assert_eq!(a.rewards, vec![0.0, 1.0, 0.0]);
        assert!(!a.inserted);
        let b = assign_rewards(&m, &mut protos, RewardMode::Goal(&goal(7.0))).unwrap();
        assert!(b.inserted && protos.len() == 4 && b.goal == Some(3));
        assert_eq!(b.rewards.iter().sum::<f64>(), 1.0);
        let c = assign_rewards(&m, &mut protos, RewardMode::Predicted).unwrap();
        assert_eq!(c.rewards, vec![0.0; 4]);
    }

    #[test]
    fn cartpole_goal_is_the_zero_observation() {
        let goal = GoalSpec { goal_observation: Observation::new(Tensor::zeros(&[4]), Encoding::Symbolic) };
        let mut m = ModelParams::new(
            &crate::homomorphism::ModelConfig::default(),
            &[4],
            2,
            3,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )
        .unwrap();
        for p in m.reward_net.parameters_mut() {
            p.fill(0.0);
        }
        let z0 = m.encode(&goal.goal_observation).unwrap();
        let mut protos = PrototypeSet::from_points(vec![z0.iter().map(|v| v + 1.0).collect()], 1e-8).unwrap();
        let a = assign_rewards(&m, &mut protos, RewardMode::Goal(&goal)).unwrap();
        assert_eq!(protos.point(a.goal.unwrap()), z0.as_slice());
    }

    #[test]
    fn build_and_retarget() {
        let m = line_model();
        let protos = PrototypeSet::from_points((0..5).map(|i| vec![i as f64]).collect(), 1e-8).unwrap();
        let mdp = AbstractMdp::build(&m, protos, RewardMode::Goal(&goal(4.0)), 1e-5, 0.9, true).unwrap();
        mdp.validate().unwrap();
        assert_eq!(mdp.goal, Some(4));
        assert!(mdp.absorbing[4]);
        assert_eq!(mdp.transition_row(1, 0)[2], 1.0);
        // the edge states' predictions fall off the line and snap back to the nearest prototype
        assert_eq!(mdp.transition_row(0, 1)[0], 1.0);
        let moved = mdp.with_goal(&m, &goal(0.0), true).unwrap();
        assert_eq!((moved.goal, moved.len()), (Some(0), 5));
        let off = mdp.with_goal(&m, &goal(2.5), true).unwrap();
        assert_eq!((off.goal, off.len()), (Some(5), 6));
        let back = off.with_goal(&m, &goal(3.0), true).unwrap();
        assert_eq!((back.goal, back.len()), (Some(3), 5));
        let soft = mdp.with_tau(1.0).unwrap();
        assert!(soft.transition_row(1, 0)[2] < 1.0);
        soft.validate().unwrap();
    }

    #[test]
    fn dump_round_trip() {
        let m = line_model();
        let protos = PrototypeSet::from_points((0..3).map(|i| vec![i as f64]).collect(), 1e-8).unwrap();
        let mdp = AbstractMdp::build(&m, protos, RewardMode::Predicted, 0.1, 0.9, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mdp.json");
        mdp.save(&path).unwrap();
        assert_eq!(AbstractMdp::load(&path).unwrap(), mdp);
    }
}
