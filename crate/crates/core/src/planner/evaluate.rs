use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{act_greedy, value_iteration, PlannerConfig, QTable};
use crate::abstract_mdp::AbstractMdp;
use crate::envs::{Environment, GoalSplit};
use crate::error::{Error, Result};
use crate::homomorphism::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episode: usize,
    pub seed: u64,
    pub length: usize,
    pub undiscounted_return: f64,
    pub discounted_return: f64,
    pub success: bool,
    pub goal_prototype: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub episodes: usize,
    /// `NaN` when no episodes were run.
    pub mean_length: f64,
    /// Population standard deviation of episode lengths.
    pub std_length: f64,
    pub success_rate: f64,
    pub mean_return: f64,
}

impl EvaluationSummary {
    pub fn from_reports(reports: &[EpisodeReport]) -> Self {
        let n = reports.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let mean_length = mean(&|r| r.length as f64);
        let var = mean(&|r| (r.length as f64 - mean_length).powi(2));
        EvaluationSummary {
            episodes: reports.len(),
            mean_length,
            std_length: var.sqrt(),
            success_rate: mean(&|r| if r.success { 1.0 } else { 0.0 }),
            mean_return: mean(&|r| r.undiscounted_return),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub episodes: Vec<EpisodeReport>,
    pub summary: EvaluationSummary,
    /// Distinct goals planned for (each planned once).
    pub plans: usize,
}

pub(crate) fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (episode as u64).wrapping_add(0x9E37_79B9_7F4A_7C15).rotate_left(17)
}

/// Runs greedy lifted-policy episodes. Each episode's goal comes from the environment's
/// reset; the abstract MDP is re-targeted and solved once per distinct goal.
pub fn evaluate(
    env: &mut dyn Environment,
    params: &ModelParams,
    base: &AbstractMdp,
    config: &PlannerConfig,
    episodes: usize,
    seed: u64,
) -> Result<Evaluation> {
    config.validate()?;
    let absorbing = env.goal_terminates();
    let mut plans: HashMap<Vec<u64>, (AbstractMdp, QTable)> = HashMap::new();
    let mut reports = Vec::with_capacity(episodes);
    let cap = env.episode_cap();
    for episode in 0..episodes {
        let s = episode_seed(seed, episode);
        let (mut obs, goal) = env.reset(s)?;
        let key = goal.goal_observation.key();
        if !plans.contains_key(&key) {
            let mut mdp = base.with_goal(params, &goal, absorbing)?;
            mdp.gamma = config.gamma;
            let q = value_iteration(&mdp, config.backups, config.tolerance);
            plans.insert(key.clone(), (mdp, q));
        }
        let (mdp, q) = &plans[&key];
        let mut report = EpisodeReport {
            episode,
            seed: s,
            length: 0,
            undiscounted_return: 0.0,
            discounted_return: 0.0,
            success: false,
            goal_prototype: mdp.goal,
        };
        let mut discount = 1.0;
        while report.length < cap {
            let action = act_greedy(params, q, &mdp.prototypes, &obs, config.eta)?;
            let step = env.step(action)?;
            report.length += 1;
            report.undiscounted_return += step.reward;
            report.discounted_return += discount * step.reward;
            discount *= config.gamma;
            obs = step.next_observation;
            if step.done {
                report.success = step.info.success;
                break;
            }
        }
        reports.push(report);
    }
    let summary = EvaluationSummary::from_reports(&reports);
    Ok(Evaluation { episodes: reports, summary, plans: plans.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSearch {
    pub best: f64,
    /// `(τ, score)` in candidate order.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the temperature with the lowest score (normally mean episode length on train goals);
/// ties go to the smaller temperature.
pub fn tau_grid_search<F>(candidates: &[f64], mut score: F) -> Result<TauSearch>
where
    F: FnMut(f64) -> Result<f64>,
{
    if candidates.is_empty() {
        return Err(Error::usage("temperature grid is empty"));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, f64)> = None;
    for &tau in candidates {
        let s = score(tau)?;
        scores.push((tau, s));
        let better = match best {
            None => true,
            Some((bt, bs)) => s < bs || (s == bs && tau < bt),
        };
        if better {
            best = Some((tau, s));
        }
    }
    Ok(TauSearch { best: best.unwrap().0, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub env: String,
    pub goal_split: GoalSplit,
    #[serde(rename = "J")]
    pub negatives: usize,
    pub tau: f64,
    pub eta: f64,
    pub seed: u64,
    pub mean_length: f64,
    pub std_length: f64,
    pub success_rate: f64,
}

/// CSV with columns `env,goal_split,J,tau,eta,seed,mean_length,std_length,success_rate`.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::homomorphism::csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| crate::homomorphism::csv_error(path, e))?;
    }
    if rows.is_empty() {
        w.write_record(["env", "goal_split", "J", "tau", "eta", "seed", "mean_length", "std_length", "success_rate"])
            .map_err(|e| crate::homomorphism::csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
