//! Value iteration on the abstract MDP, Q interpolation for encoded observations,
//! greedy acting in the real environment, episode evaluation and the temperature search.

mod evaluate;

pub use evaluate::{
    evaluate, tau_grid_search, write_summary_csv, EpisodeReport, Evaluation, EvaluationSummary, SummaryRow, TauSearch,
};

use serde::{Deserialize, Serialize};

use crate::abstract_mdp::{softmax_neg_distances, AbstractMdp, PrototypeSet};
use crate::envs::Observation;
use crate::error::{Error, Result};
use crate::homomorphism::{sq_dist, ModelParams};

pub const TAU_GRID: [f64; 6] = [1.0, 0.1, 0.001, 0.0001, 0.00001, 1e-20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub gamma: f64,
    pub backups: usize,
    pub tolerance: f64,
    /// Interpolation temperature `η`.
    pub eta: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig { gamma: 0.9, backups: 500, tolerance: 1e-10, eta: 1e-20 }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma must lie in [0, 1)"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("eta must be positive"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::config("VI tolerance must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub num_states: usize,
    pub num_actions: usize,
    /// Row-major `values[x * |A| + a]`.
    pub values: Vec<f64>,
    pub backups: usize,
    pub gamma: f64,
    /// Max-norm change of `Q` at each backup.
    pub residuals: Vec<f64>,
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl QTable {
    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.num_actions..(x + 1) * self.num_actions]
    }

    pub fn value(&self, x: usize) -> f64 {
        self.row(x).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy(&self, x: usize) -> usize {
        argmax(self.row(x))
    }

    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// `Q(x, a) = R(x) + γ Σ_x' T(x' | x, a) max_a' Q(x', a')`, with `Q(g, ·) = R(g)` on absorbing
/// prototypes. Runs until `backups` sweeps or a residual below `tolerance`.
pub fn value_iteration(mdp: &AbstractMdp, backups: usize, tolerance: f64) -> QTable {
    let n = mdp.len();
    let na = mdp.num_actions;
    // zero-probability successors are dropped; low temperatures make rows one-hot
    let mut offsets = Vec::with_capacity(n * na + 1);
    let mut succ: Vec<(u32, f64)> = Vec::new();
    offsets.push(0);
    for x in 0..n {
        for a in 0..na {
            if !mdp.absorbing[x] {
                succ.extend(
                    mdp.transition_row(x, a).iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(j, p)| (j as u32, *p)),
                );
            }
            offsets.push(succ.len());
        }
    }
    let mut q = vec![0.0; n * na];
    let mut v = vec![0.0; n];
    let mut residuals = Vec::new();
    let mut done = 0;
    while done < backups {
        for (x, vx) in v.iter_mut().enumerate() {
            *vx = q[x * na..(x + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        let mut residual: f64 = 0.0;
        for x in 0..n {
            for a in 0..na {
                let k = x * na + a;
                let future: f64 = if mdp.absorbing[x] {
                    0.0
                } else {
                    succ[offsets[k]..offsets[k + 1]].iter().map(|&(j, p)| p * v[j as usize]).sum()
                };
                let new = mdp.rewards[x] + mdp.gamma * future;
                residual = residual.max((new - q[k]).abs());
                q[k] = new;
            }
        }
        done += 1;
        residuals.push(residual);
        if residual < tolerance {
            break;
        }
    }
    QTable { num_states: n, num_actions: na, values: q, backups: done, gamma: mdp.gamma, residuals }
}

/// Softmax weights over `−d(x, z*)/η` for every prototype `x`.
pub fn interpolation_weights(prototypes: &PrototypeSet, z: &[f64], eta: f64) -> Vec<f64> {
    let d: Vec<f64> = prototypes.points().iter().map(|p| sq_dist(p, z)).collect();
    softmax_neg_distances(&d, eta)
}

pub fn interpolate_q(q: &QTable, prototypes: &PrototypeSet, z: &[f64], eta: f64) -> Result<Vec<f64>> {
    if prototypes.len() != q.num_states {
        return Err(Error::usage("Q table and prototype set have different sizes"));
    }
    if z.len() != prototypes.dim() {
        return Err(Error::config("latent dimension differs from the prototypes"));
    }
    let w = interpolation_weights(prototypes, z, eta);
    let mut out = vec![0.0; q.num_actions];
    for (x, wx) in w.iter().enumerate() {
        if *wx == 0.0 {
            continue;
        }
        for (o, qv) in out.iter_mut().zip(q.row(x)) {
            *o += wx * qv;
        }
    }
    Ok(out)
}

pub fn act_greedy(params: &ModelParams, q: &QTable, prototypes: &PrototypeSet, observation: &Observation, eta: f64) -> Result<usize> {
    let z = params.encode(observation)?;
    Ok(argmax(&interpolate_q(q, prototypes, &z, eta)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_mdp(n: usize, na: usize, t: Vec<f64>, r: Vec<f64>, absorbing: Vec<bool>) -> AbstractMdp {
        let protos = PrototypeSet::from_points((0..n).map(|i| vec![i as f64]).collect(), 1e-8).unwrap();
        AbstractMdp::from_parts(protos, na, t, r, absorbing, 0.9).unwrap()
    }

    #[test]
    fn zero_rewards_give_zero_q() {
        let m = table_mdp(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 0.0], vec![false; 2]);
        let q = value_iteration(&m, 500, 1e-10);
        assert!(q.values.iter().all(|v| *v == 0.0));
        assert_eq!(q.backups, 1);
    }

    #[test]
    fn two_state_chain() {
        // 0 → 1 deterministically, 1 is the absorbing goal
        let m = table_mdp(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 1.0], vec![false, true]);
        let q = value_iteration(&m, 500, 1e-10);
        assert!((q.value(1) - 1.0).abs() < 1e-12);
        assert!((q.value(0) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[1.0, 0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 1.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn interpolation_examples() {
        let protos = PrototypeSet::from_points(vec![vec![0.0], vec![2.0]], 1e-8).unwrap();
        let q = QTable { num_states: 2, num_actions: 2, values: vec![1.0, 0.0, 0.0, 3.0], backups: 0, gamma: 0.9, residuals: vec![] };
        assert_eq!(interpolate_q(&q, &protos, &[0.0], 1e-20).unwrap(), vec![1.0, 0.0]);
        let mid = interpolate_q(&q, &protos, &[1.0], 1e6).unwrap();
        assert!((mid[0] - 0.5).abs() < 1e-12 && (mid[1] - 1.5).abs() < 1e-12);
        let w = interpolation_weights(&protos, &[0.3], 0.7);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
