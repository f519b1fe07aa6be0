use serde::{Deserialize, Serialize};

use super::{AbstractMdp, PrototypeSet};
use crate::envs::{GridGroundTruth, Observation};
use crate::error::{Error, Result};
use crate::homomorphism::ModelParams;

/// Deterministic tabular MDP with state rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// `next[s * |A| + a]`
    pub next: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl TabularMdp {
    pub fn new(num_states: usize, num_actions: usize, next: Vec<usize>, rewards: Vec<f64>) -> Result<Self> {
        if next.len() != num_states * num_actions || rewards.len() != num_states {
            return Err(Error::config("tabular MDP tables have the wrong size"));
        }
        if next.iter().any(|&s| s >= num_states) {
            return Err(Error::config("tabular successor out of range"));
        }
        Ok(TabularMdp { num_states, num_actions, next, rewards })
    }

    /// State reward of the room: the expected reward of a uniformly random action, which is
    /// what a state-dependent reward head regresses onto under random exploration.
    pub fn from_grid(gt: &GridGroundTruth) -> Self {
        let na = gt.num_actions;
        let rewards = (0..gt.states.len())
            .map(|s| gt.reward[s * na..(s + 1) * na].iter().sum::<f64>() / na as f64)
            .collect();
        TabularMdp { num_states: gt.states.len(), num_actions: na, next: gt.next.clone(), rewards }
    }

    pub fn successor(&self, s: usize, a: usize) -> usize {
        self.next[s * self.num_actions + a]
    }
}

/// Maps each observation to its nearest prototype, or `None` when that prototype is
/// farther than `max_distance`.
pub fn map_states(
    params: &ModelParams,
    prototypes: &PrototypeSet,
    observations: &[Observation],
    max_distance: Option<f64>,
) -> Result<Vec<Option<usize>>> {
    let refs: Vec<&Observation> = observations.iter().collect();
    let z = params.encode_batch(&refs)?;
    Ok((0..observations.len())
        .map(|i| {
            let (x, d) = prototypes.nearest(z.row_slice(i));
            match max_distance {
                Some(m) if d > m => None,
                _ => Some(x),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Unmapped,
    Transition,
    Reward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub state: usize,
    pub action: usize,
    pub kind: ViolationKind,
    /// Probability shortfall below the threshold, or absolute reward error.
    pub severity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomomorphismReport {
    pub checked: usize,
    pub passed: usize,
    pub transition_failures: usize,
    pub reward_failures: usize,
    pub unmapped: usize,
    pub min_transition_prob: f64,
    pub max_reward_error: f64,
    /// Worst violations first, at most 20.
    pub worst: Vec<Violation>,
}

impl HomomorphismReport {
    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}

/// Checks, for each `(s, a)` in `pairs`, that the abstract MDP moves the prototype of `s`
/// to the prototype of its true successor with probability at least `prob_threshold`,
/// and that the prototype reward is within `reward_tolerance` of the true state reward.
pub fn verify_homomorphism(
    mdp: &AbstractMdp,
    ground_truth: &TabularMdp,
    state_to_prototype: &[Option<usize>],
    pairs: &[(usize, usize)],
    prob_threshold: f64,
    reward_tolerance: f64,
) -> Result<HomomorphismReport> {
    if state_to_prototype.len() != ground_truth.num_states {
        return Err(Error::usage("state map must cover every ground-truth state"));
    }
    if mdp.num_actions != ground_truth.num_actions {
        return Err(Error::usage("abstract and ground-truth MDPs disagree on the action count"));
    }
    let mut report = HomomorphismReport {
        checked: 0,
        passed: 0,
        transition_failures: 0,
        reward_failures: 0,
        unmapped: 0,
        min_transition_prob: 1.0,
        max_reward_error: 0.0,
        worst: Vec::new(),
    };
    let mut violations = Vec::new();
    for &(s, a) in pairs {
        if s >= ground_truth.num_states || a >= ground_truth.num_actions {
            return Err(Error::usage(format!("pair ({s}, {a}) outside the ground-truth MDP")));
        }
        report.checked += 1;
        let s2 = ground_truth.successor(s, a);
        let (Some(x), Some(x2)) = (state_to_prototype[s], state_to_prototype[s2]) else {
            report.unmapped += 1;
            violations.push(Violation { state: s, action: a, kind: ViolationKind::Unmapped, severity: f64::INFINITY });
            continue;
        };
        let p = mdp.transition_row(x, a)[x2];
        let r_err = (mdp.rewards[x] - ground_truth.rewards[s]).abs();
        report.min_transition_prob = report.min_transition_prob.min(p);
        report.max_reward_error = report.max_reward_error.max(r_err);
        let mut ok = true;
        if p < prob_threshold {
            ok = false;
            report.transition_failures += 1;
            violations.push(Violation { state: s, action: a, kind: ViolationKind::Transition, severity: prob_threshold - p });
        }
        if r_err >= reward_tolerance {
            ok = false;
            report.reward_failures += 1;
            violations.push(Violation { state: s, action: a, kind: ViolationKind::Reward, severity: r_err });
        }
        if ok {
            report.passed += 1;
        }
    }
    violations.sort_by(|u, v| v.severity.total_cmp(&u.severity));
    violations.truncate(20);
    report.worst = violations;
    Ok(report)
}
