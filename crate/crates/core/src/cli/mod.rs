//! Command-line pipeline: collect → train → plan → eval, plus latent export.
//!
//! Every artifact lives in the run's data directory under a fixed name, so each stage
//! finds the previous one's output without extra flags.

mod args;
mod config;
mod pca;

pub use args::{run, Cli, Command};
pub use config::{AbstractConfig, CollectConfig, EvalConfig, RunConfig, DATA_DIR_ENV};
pub use pca::{pca_2d, Pca, PCA_MAX_ITERATIONS, PCA_TOLERANCE};

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abstract_mdp::{build_prototypes, AbstractMdp, RewardMode};
use crate::diffcore::{load_json, save_json};
use crate::envs::{Environment, GoalSplit};
use crate::error::{Error, Result};
use crate::experience::{collect, ExplorationPolicy, ReplayDataset};
use crate::homomorphism::{csv_error, train, write_training_log, Checkpoint, TrainOutcome};
use crate::planner::{
    argmax, evaluate, interpolate_q, tau_grid_search, value_iteration, write_summary_csv, Evaluation, QTable,
    SummaryRow, TauSearch,
};

/// The abstract MDP as written by `plan`, tied to the checkpoint it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub checkpoint_fingerprint: String,
    pub env_id: String,
    pub tau_search: Option<TauSearch>,
    pub mdp: AbstractMdp,
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(Error::usage(format!("output directory {} does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}

fn build_env(config: &RunConfig, split: GoalSplit) -> Result<Box<dyn Environment>> {
    let mut env = config.env.clone();
    env.set_goal_split(split);
    env.build()
}

fn load_checkpoint(config: &RunConfig, env: &dyn Environment) -> Result<Checkpoint> {
    let ck = Checkpoint::load(&config.checkpoint_path())?;
    if ck.env_id != env.id() {
        return Err(Error::Stale(format!("checkpoint was trained on {} but the config describes {}", ck.env_id, env.id())));
    }
    Ok(ck)
}

fn load_plan(config: &RunConfig, ck: &Checkpoint) -> Result<PlanFile> {
    let plan: PlanFile = load_json(&config.abstract_mdp_path())?;
    plan.mdp.validate()?;
    if plan.checkpoint_fingerprint != ck.fingerprint() {
        return Err(Error::Stale("abstract MDP was built from a different checkpoint".into()));
    }
    Ok(plan)
}

pub fn cmd_collect(config: &RunConfig) -> Result<ReplayDataset> {
    let out = config.dataset_path();
    ensure_parent(&out)?;
    let mut env = config.env.build()?;
    let ds = collect(env.as_mut(), ExplorationPolicy::UniformRandom, config.collect.trajectories, config.collect.seed)?;
    ds.save(&out)?;
    println!(
        "collected {} transitions in {} trajectories ({} distinct observations) -> {}",
        ds.len(),
        ds.num_trajectories(),
        ds.observations().len(),
        out.display()
    );
    Ok(ds)
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    let ck_path = config.checkpoint_path();
    ensure_parent(&ck_path)?;
    let ds = ReplayDataset::load(&config.dataset_path())?;
    let out = train(&ds, &config.train).map_err(|e| {
        if let Error::Divergence { epoch, batch, message, last_good: Some(p) } = e {
            // keep the last finite parameters for inspection
            let ck = Checkpoint { params: *p, train_config: config.train.clone(), env_id: ds.meta().env_id.clone(), dataset_fingerprint: ds.fingerprint() };
            let salvage = config.data_dir.join("checkpoint.diverged.json");
            let _ = ck.save(&salvage);
            Error::Divergence { epoch, batch, message: format!("{message}; last good parameters in {}", salvage.display()), last_good: None }
        } else {
            e
        }
    })?;
    let ck = Checkpoint {
        params: out.params.clone(),
        train_config: config.train.clone(),
        env_id: ds.meta().env_id.clone(),
        dataset_fingerprint: ds.fingerprint(),
    };
    ck.save(&ck_path)?;
    write_training_log(&config.training_log_path(), &out.curve)?;
    match out.curve.last() {
        Some(e) => println!("trained {} epochs ({} steps), final loss {:.6} -> {}", out.curve.len(), out.steps, e.loss.total, ck_path.display()),
        None => println!("0 epochs: wrote initial parameters -> {}", ck_path.display()),
    }
    Ok(out)
}

pub fn cmd_plan(config: &RunConfig) -> Result<(PlanFile, QTable)> {
    let out = config.abstract_mdp_path();
    ensure_parent(&out)?;
    let mut env = build_env(config, config.eval.goal_split)?;
    let ck = load_checkpoint(config, env.as_ref())?;
    let ds = ReplayDataset::load(&config.dataset_path())?;
    ck.ensure_matches(&ds)?;
    let a = &config.abstract_mdp;
    let params = &ck.params;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let protos = build_prototypes(params, &ds, a.samples, a.dedup_tolerance, &mut rng)?;
    let absorbing = env.goal_terminates();
    let (_, goal) = env.reset(config.eval.seed)?;
    let base = AbstractMdp::build(params, protos, RewardMode::Goal(&goal), a.tau, config.planner.gamma, absorbing)?;

    let (mdp, search) = if a.grid_search {
        let mut train_env = build_env(config, GoalSplit::Train)?;
        let search = tau_grid_search(&a.tau_grid, |tau| {
            let candidate = base.with_tau(tau)?;
            let ev = evaluate(train_env.as_mut(), params, &candidate, &config.planner, config.eval.episodes, a.search_seed)?;
            println!("tau {tau:e}: mean length {:.2} on train goals", ev.summary.mean_length);
            if ev.summary.episodes == 0 {
                return Ok(f64::INFINITY);
            }
            // survival tasks (goal never ends the episode) score longer episodes as better
            Ok(if absorbing { ev.summary.mean_length } else { -ev.summary.mean_length })
        })?;
        let mut f = csv::Writer::from_path(config.tau_search_path()).map_err(|e| csv_error(&config.tau_search_path(), e))?;
        f.write_record(["tau", "mean_length"]).map_err(|e| csv_error(&config.tau_search_path(), e))?;
        for (t, s) in &search.scores {
            f.write_record([format!("{t:?}"), s.abs().to_string()]).map_err(|e| csv_error(&config.tau_search_path(), e))?;
        }
        f.flush().map_err(|e| Error::io(config.tau_search_path(), e))?;
        (base.with_tau(search.best)?, Some(search))
    } else {
        (base, None)
    };
    let q = value_iteration(&mdp, config.planner.backups, config.planner.tolerance);
    let plan = PlanFile { checkpoint_fingerprint: ck.fingerprint(), env_id: env.id(), tau_search: search, mdp };
    save_json(&out, &plan)?;
    save_json(&config.qtable_path(), &q)?;
    println!(
        "abstract MDP with {} prototypes at tau {:e}, VI {} backups (residual {:.2e}) -> {}",
        plan.mdp.len(),
        plan.mdp.tau.unwrap_or(f64::NAN),
        q.backups,
        q.final_residual(),
        out.display()
    );
    Ok((plan, q))
}

pub fn cmd_eval(config: &RunConfig) -> Result<(Evaluation, SummaryRow)> {
    let out = config.summary_path();
    ensure_parent(&out)?;
    let split = config.eval.goal_split;
    let mut env = build_env(config, split)?;
    let ck = load_checkpoint(config, env.as_ref())?;
    let plan = load_plan(config, &ck)?;
    let ev = evaluate(env.as_mut(), &ck.params, &plan.mdp, &config.planner, config.eval.episodes, config.eval.seed)?;
    let row = SummaryRow {
        env: env.id(),
        goal_split: split,
        negatives: ck.train_config.negatives,
        tau: plan.mdp.tau.unwrap_or(f64::NAN),
        eta: config.planner.eta,
        seed: config.eval.seed,
        mean_length: ev.summary.mean_length,
        std_length: ev.summary.std_length,
        success_rate: ev.summary.success_rate,
    };
    write_summary_csv(&out, std::slice::from_ref(&row))?;
    println!(
        "{} episodes on {split} goals: mean length {:.2} ± {:.2}, success {:.0}% -> {}",
        ev.summary.episodes,
        ev.summary.mean_length,
        ev.summary.std_length,
        100.0 * ev.summary.success_rate,
        out.display()
    );
    Ok((ev, row))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    /// The abstract MDP's prototypes.
    #[default]
    Prototypes,
    /// Every distinct observation in the dataset.
    Dataset,
}

/// Writes PCA coordinates, per-action argmax successors and values; returns the point count.
pub fn cmd_export_latents(config: &RunConfig, source: LatentSource) -> Result<usize> {
    let out = config.latents_path();
    ensure_parent(&out)?;
    let env = build_env(config, config.eval.goal_split)?;
    let ck = load_checkpoint(config, env.as_ref())?;
    let plan = load_plan(config, &ck)?;
    let q: QTable = load_json(&config.qtable_path())?;
    let mdp = &plan.mdp;
    let na = mdp.num_actions;
    let params = &ck.params;

    // (point, value, reward, successor per action)
    let rows: Vec<(Vec<f64>, f64, f64, Vec<usize>)> = match source {
        LatentSource::Prototypes => (0..mdp.len())
            .map(|x| {
                let next = (0..na).map(|a| argmax(mdp.transition_row(x, a))).collect();
                (mdp.prototypes.point(x).to_vec(), q.value(x), mdp.rewards[x], next)
            })
            .collect(),
        LatentSource::Dataset => {
            let ds = ReplayDataset::load(&config.dataset_path())?;
            ck.ensure_matches(&ds)?;
            let obs: Vec<_> = ds.observations().iter().collect();
            let z = params.encode_batch(&obs)?;
            let points: Vec<Vec<f64>> = (0..z.batch()).map(|i| z.row_slice(i).to_vec()).collect();
            let set = crate::abstract_mdp::PrototypeSet::from_points(points.clone(), 0.0)?;
            let mut rows = Vec::with_capacity(points.len());
            for p in &points {
                let qv = interpolate_q(&q, &mdp.prototypes, p, config.planner.eta)?;
                let value = qv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut next = Vec::with_capacity(na);
                for a in 0..na {
                    next.push(set.nearest(&params.predict_next(p, a)?).0);
                }
                rows.push((p.clone(), value, params.predict_reward(p)?, next));
            }
            rows
        }
    };
    let points: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    let pca = pca_2d(&points)?;
    let mut file = std::fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
    let label = match source {
        LatentSource::Prototypes => "prototypes",
        LatentSource::Dataset => "dataset observations",
    };
    writeln!(
        file,
        "# pca fit on {label} ({} points); component variances {} {}",
        points.len(),
        pca.variances[0],
        pca.variances[1]
    )
    .map_err(|e| Error::io(&out, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["id".to_string(), "pc1".into(), "pc2".into(), "value".into(), "reward".into()];
    header.extend((0..na).map(|a| format!("next_a{a}")));
    w.write_record(&header).map_err(|e| csv_error(&out, e))?;
    for (i, (p, value, reward, next)) in rows.iter().enumerate() {
        let [c1, c2] = pca.project(p);
        let mut rec = vec![i.to_string(), c1.to_string(), c2.to_string(), value.to_string(), reward.to_string()];
        rec.extend(next.iter().map(|n| n.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(&out, e))?;
    }
    w.flush().map_err(|e| Error::io(&out, e))?;
    println!("exported {} latent points -> {}", points.len(), out.display());
    Ok(points.len())
}

/// Full pipeline: collect, train, plan, evaluate on train and test goals, export prototypes.
pub fn cmd_run_all(config: &RunConfig) -> Result<Vec<SummaryRow>> {
    std::fs::create_dir_all(&config.data_dir).map_err(|e| Error::io(&config.data_dir, e))?;
    cmd_collect(config)?;
    cmd_train(config)?;
    cmd_plan(config)?;
    let mut rows = Vec::new();
    for split in [GoalSplit::Train, GoalSplit::Test] {
        let mut c = config.clone();
        c.eval.goal_split = split;
        rows.push(cmd_eval(&c)?.1);
    }
    write_summary_csv(&config.summary_path(), &rows)?;
    cmd_export_latents(config, LatentSource::Prototypes)?;
    Ok(rows)
}
