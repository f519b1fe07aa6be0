//! One PASS/FAIL line per acceptance criterion. Run a subset with
//! `cargo test --test acceptance -- 3 9`. Failures are reported but only change
//! the exit status when `EQPLAN_ACCEPTANCE_STRICT=1`.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use eqplan::abstract_mdp::{
    build_prototypes, dedup_indices, map_states, softmax_neg_distances, transition_probs, verify_homomorphism,
    AbstractMdp, PrototypeSet, RewardMode, TabularMdp,
};
use eqplan::cli::{cmd_collect, cmd_eval, cmd_plan, cmd_run_all, cmd_train, PlanFile, RunConfig};
use eqplan::diffcore::{compare_gradients, load_json, numeric_gradients, DEFAULT_STEP};
use eqplan::envs::{
    CartPoleConfig, EnvConfig, GoalSplit, GridConfig, GridWorld, ImageSource, TranslationConfig,
};
use eqplan::experience::{collect, ExplorationPolicy};
use eqplan::homomorphism::{hinge_negative, loss, loss_and_gradients, train, ModelParams, TrainConfig};
use eqplan::planner::{interpolation_weights, value_iteration, TAU_GRID};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MINUTE: f64 = 60.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Mean episode lengths of one trained configuration, evaluated through the CLI pipeline.
#[derive(Clone)]
struct PipelineRun {
    dir: PathBuf,
    train_mean: f64,
    test_mean: f64,
    tau: f64,
    secs: f64,
}

fn run_pipeline(base: &RunConfig, dir: &Path, dataset: Option<&Path>) -> PipelineRun {
    let t = Instant::now();
    std::fs::create_dir_all(dir).unwrap();
    let mut c = base.clone();
    c.data_dir = dir.to_path_buf();
    match dataset {
        Some(src) => {
            std::fs::copy(src, c.dataset_path()).unwrap();
        }
        None => {
            cmd_collect(&c).unwrap();
        }
    }
    cmd_train(&c).unwrap();
    let (plan, _) = cmd_plan(&c).unwrap();
    let mut means = [0.0; 2];
    for (m, split) in means.iter_mut().zip([GoalSplit::Train, GoalSplit::Test]) {
        let mut e = c.clone();
        e.eval.goal_split = split;
        *m = cmd_eval(&e).unwrap().0.summary.mean_length;
    }
    PipelineRun {
        dir: dir.to_path_buf(),
        train_mean: means[0],
        test_mean: means[1],
        tau: plan.mdp.tau.unwrap(),
        secs: t.elapsed().as_secs_f64(),
    }
}

/// Full-scale pixel room runs keyed by `(J, reward loss)`, sharing one dataset.
struct PixelRuns {
    root: PathBuf,
    dataset: Option<PathBuf>,
    runs: BTreeMap<(usize, bool), PipelineRun>,
}

impl PixelRuns {
    fn base() -> RunConfig {
        let mut c = RunConfig::default();
        c.abstract_mdp.grid_search = true;
        c
    }

    fn get(&mut self, negatives: usize, reward: bool) -> PipelineRun {
        if let Some(r) = self.runs.get(&(negatives, reward)) {
            return r.clone();
        }
        let dataset = self
            .dataset
            .get_or_insert_with(|| {
                let mut c = Self::base();
                c.data_dir = self.root.join("data");
                std::fs::create_dir_all(&c.data_dir).unwrap();
                cmd_collect(&c).unwrap();
                c.dataset_path()
            })
            .clone();
        let mut c = Self::base();
        c.train.negatives = negatives;
        c.train.use_reward_loss = reward;
        let dir = self.root.join(format!("j{negatives}-{}", if reward { "reward" } else { "noreward" }));
        let run = run_pipeline(&c, &dir, Some(&dataset));
        println!(
            "  pixel room J={negatives} reward_loss={reward}: train {:.2}, test {:.2}, tau {:e} ({:.0} s)",
            run.train_mean, run.test_mean, run.tau, run.secs
        );
        self.runs.insert((negatives, reward), run.clone());
        run
    }
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut largest = 0;
    let mut all = true;
    let nets = 24;
    for case in 0..nets {
        let (mut params, batch) = random_problem(&mut rng);
        largest = largest.max(parameter_count(&params));
        let margin = split_margin(&params, &batch);
        let use_reward = case % 4 != 3;
        let (_, analytic) = loss_and_gradients(&params, &batch, margin, use_reward).unwrap();
        let numeric =
            numeric_gradients(&mut params, DEFAULT_STEP, |p: &ModelParams| loss(p, &batch, margin, use_reward).unwrap().total);
        let report = compare_gradients(&analytic, &numeric, 1e-4);
        worst = worst.max(report.max_relative_error);
        all &= report.passed;
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        all && largest <= 500 && secs < MINUTE,
        format!("{nets} networks (largest {largest} parameters), max relative error {worst:.1e}, {secs:.1} s"),
    )
}

fn vi_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let mut policy_mismatches = 0;
    for _ in 0..50 {
        let m = random_tabular(&mut rng, 20);
        let q = value_iteration(&m.to_mdp(), 500, 1e-10);
        let oracle = policy_iteration(&m);
        worst = q.values.iter().zip(&oracle).fold(worst, |w, (a, b)| w.max((a - b).abs()));
        policy_mismatches += (0..m.n).filter(|&x| q.greedy(x) != first_max(&oracle[x * m.na..(x + 1) * m.na])).count();
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst < 1e-8 && policy_mismatches == 0 && secs < MINUTE,
        format!("50 MDPs, max |Q - Q_oracle| {worst:.1e}, {policy_mismatches} greedy mismatches, {secs:.1} s"),
    )
}

fn homomorphism_at_convergence() -> Outcome {
    let t = Instant::now();
    let grid = GridConfig::desk_scale();
    let mut env = GridWorld::new(grid.clone()).unwrap();
    let ds = collect(&mut env, ExplorationPolicy::UniformRandom, 1000, 0).unwrap();
    let cfg = TrainConfig { negatives: 5, epochs: 1000, stop_below: Some(0.01), ..Default::default() };
    let out = train(&ds, &cfg).unwrap();
    let final_loss = out.curve.last().unwrap().loss.total;
    let params = &out.params;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let protos = build_prototypes(params, &ds, 1024, 1e-8, &mut rng).unwrap();
    let mdp = AbstractMdp::build(params, protos, RewardMode::Predicted, 1e-5, 0.9, false).unwrap();
    let gt = GridWorld::ground_truth(&grid).unwrap();
    let truth = TabularMdp::from_grid(&gt);
    let index: HashMap<Vec<u64>, usize> = gt.observations.iter().enumerate().map(|(i, o)| (o.key(), i)).collect();
    let visited: HashSet<(usize, usize)> =
        ds.records().iter().map(|r| (index[&ds.observation(r.state).key()], r.action)).collect();
    let mut pairs: Vec<(usize, usize)> = visited.into_iter().collect();
    pairs.sort();
    let map = map_states(params, &mdp.prototypes, &gt.observations, None).unwrap();
    let report = verify_homomorphism(&mdp, &truth, &map, &pairs, 0.9, 0.1).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        final_loss < 0.01 && report.pass_rate() >= 0.95 && secs <= 10.0 * MINUTE,
        format!(
            "loss {final_loss:.4} after {} epochs; {}/{} visited pairs pass ({:.1}%), min transition prob {:.3}, max reward error {:.3}, {secs:.0} s",
            out.curve.len(),
            report.passed,
            report.checked,
            100.0 * report.pass_rate(),
            report.min_transition_prob,
            report.max_reward_error
        ),
    )
}

fn table1(pixels: &mut PixelRuns) -> Outcome {
    let r = pixels.get(5, true);
    outcome(
        r.train_mean <= 12.0 && r.test_mean <= 11.0 && r.secs <= 45.0 * MINUTE,
        format!("J=5 train goals {:.2} (<= 12), test goals {:.2} (<= 11), tau {:e}, {:.0} s", r.train_mean, r.test_mean, r.tau, r.secs),
    )
}

fn collapse_ablation(pixels: &mut PixelRuns) -> Outcome {
    let with = pixels.get(5, true).train_mean;
    let without = pixels.get(0, true).train_mean;
    outcome(without >= 4.0 * with, format!("J=0 {without:.2} vs J=5 {with:.2}, ratio {:.2} (>= 4)", without / with))
}

fn reward_ablation(pixels: &mut PixelRuns) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for j in [1, 3, 5] {
        let with = pixels.get(j, true).train_mean;
        let without = pixels.get(j, false).train_mean;
        let ratio = without / with;
        let ok = if j == 1 { ratio > 3.0 } else { (ratio - 1.0).abs() < 0.5 };
        pass &= ok;
        parts.push(format!("J={j} {with:.2} -> {without:.2} (x{ratio:.2})"));
    }
    outcome(pass, format!("{}; need J=1 x > 3, J=3/J=5 within 50%", parts.join(", ")))
}

fn cartpole(root: &Path) -> Outcome {
    let t = Instant::now();
    let mut base = RunConfig { env: EnvConfig::Cartpole(CartPoleConfig::default()), ..Default::default() };
    base.abstract_mdp.grid_search = true;
    let full = run_pipeline(&base, &root.join("cartpole-1000"), None);
    let mut small = base.clone();
    small.collect.trajectories = 100;
    small.train.epochs = 100;
    let limited = run_pipeline(&small, &root.join("cartpole-100"), None);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        full.train_mean >= 150.0 && limited.train_mean >= 120.0 && secs <= 20.0 * MINUTE,
        format!(
            "1000 trajectories {:.2} (>= 150, tau {:e}), 100 trajectories {:.2} (>= 120, tau {:e}), {secs:.0} s",
            full.train_mean, full.tau, limited.train_mean, limited.tau
        ),
    )
}

fn invariant_suite(root: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures: Vec<&str> = Vec::new();
    let mut check = |ok: bool, name: &'static str| {
        if !ok && !failures.contains(&name) {
            failures.push(name);
        }
    };
    for case in 0..100 {
        let n = rng.gen_range(1..30);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let protos = PrototypeSet::from_points(pts.clone(), 1e-8).unwrap();
        let params = ModelParams::new(&tiny_model_config(), &[3], 2, 3, &mut rng).unwrap();
        let tau = TAU_GRID[case % TAU_GRID.len()];
        for row in transition_probs(&params, &protos, case % 2, tau).unwrap() {
            check((row.iter().sum::<f64>() - 1.0).abs() < 1e-9 && row.iter().all(|&p| p >= 0.0), "transition rows");
        }
        let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let w = interpolation_weights(&protos, &z, [1e-20, 1e-3, 1.0][case % 3]);
        check((w.iter().sum::<f64>() - 1.0).abs() < 1e-9 && w.iter().all(|&p| p >= 0.0), "interpolation weights");
        check(hinge_negative(rng.gen_range(0.0..10.0), rng.gen_range(0.0..5.0)) >= 0.0, "hinge");
        let mut dup = pts.clone();
        dup.extend(pts.iter().take(n / 2).cloned());
        let kept: Vec<Vec<f64>> = dedup_indices(&dup, 1e-8).into_iter().map(|i| dup[i].clone()).collect();
        check(dedup_indices(&kept, 1e-8).len() == kept.len() && kept.len() <= n, "dedup idempotence");
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..20.0)).collect();
        let shift = rng.gen_range(-100.0..100.0);
        let shifted: Vec<f64> = d.iter().map(|x| x + shift).collect();
        let (p, q) = (softmax_neg_distances(&d, tau), softmax_neg_distances(&shifted, tau));
        check(p.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-9), "softmax shift invariance");
        let tab = random_tabular(&mut rng, 15);
        let vi = value_iteration(&tab.to_mdp(), 200, 0.0);
        check(vi.residuals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-15), "VI residual");
    }
    let mut tiny = RunConfig { env: EnvConfig::Gridworld(GridConfig::desk_scale()), ..Default::default() };
    tiny.collect.trajectories = 20;
    tiny.train.epochs = 3;
    tiny.abstract_mdp.grid_search = true;
    tiny.abstract_mdp.tau_grid = vec![1.0, 1e-20];
    tiny.eval.episodes = 5;
    let mut outputs = Vec::new();
    for k in 0..2 {
        let mut c = tiny.clone();
        c.data_dir = root.join(format!("determinism-{k}"));
        cmd_run_all(&c).unwrap();
        let files: Vec<Vec<u8>> = ["training_log.csv", "tau_search.csv", "eval_summary.csv", "latents.csv"]
            .iter()
            .map(|f| std::fs::read(c.data_dir.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    check(outputs[0] == outputs[1], "bit-identical CSV");
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "transition rows, interpolation weights, hinge, dedup, VI residual, softmax shift and CSV determinism hold".into()
        } else {
            format!("violated: {}", failures.join(", "))
        },
    )
}

fn goal_transfer(pixels: &mut PixelRuns) -> Outcome {
    let reference = pixels.get(5, true);
    let mut c = PixelRuns::base();
    c.data_dir = reference.dir.clone();
    let before = std::fs::read(c.checkpoint_path()).unwrap();
    let original: PlanFile = load_json(&c.abstract_mdp_path()).unwrap();
    c.abstract_mdp.grid_search = false;
    c.abstract_mdp.tau = original.mdp.tau.unwrap();
    let delivery = [0, 5];
    if let EnvConfig::Gridworld(g) = &mut c.env {
        g.delivery = Some(delivery);
    }
    c.eval.goal_split = GoalSplit::Train;
    cmd_plan(&c).unwrap();
    let moved = cmd_eval(&c).unwrap().0.summary.mean_length;
    let untouched = std::fs::read(c.checkpoint_path()).unwrap() == before;
    let gap = (moved - reference.train_mean).abs();
    outcome(
        gap <= 2.0 && untouched,
        format!(
            "delivery fixed at {delivery:?}: {moved:.2} vs train goals {:.2} (gap {gap:.2} <= 2), checkpoint unchanged: {untouched}",
            reference.train_mean
        ),
    )
}

fn translation(root: &Path) -> Outcome {
    let mut tc = TranslationConfig::default();
    let source = match std::env::var_os("EQPLAN_IDX_IMAGES") {
        Some(path) => {
            tc.images = ImageSource::Idx { path: path.into(), limit: None };
            "IDX images"
        }
        None => "synthetic sprites",
    };
    let mut base = RunConfig { env: EnvConfig::Translation(tc), ..Default::default() };
    base.abstract_mdp.grid_search = true;
    let run = run_pipeline(&base, &root.join("translation"), None);
    outcome(
        run.test_mean <= 8.0,
        format!("{source}: test goals {:.2} (<= 8), train goals {:.2}, tau {:e}, {:.0} s", run.test_mean, run.train_mean, run.tau, run.secs),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |id: u32| wanted.is_empty() || wanted.contains(&id);
    let scratch = tempfile::tempdir().unwrap();
    let root = scratch.path();
    let mut pixels = PixelRuns { root: root.join("pixels"), dataset: None, runs: BTreeMap::new() };

    type Criterion<'a> = (u32, &'static str, bool, Box<dyn FnMut(&mut PixelRuns) -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        (1, "gradient correctness", true, Box::new(|_| gradient_correctness())),
        (2, "value iteration oracle", true, Box::new(|_| vi_oracle())),
        (3, "homomorphism at convergence", true, Box::new(|_| homomorphism_at_convergence())),
        (4, "single object room, pixels", true, Box::new(table1)),
        (5, "collapse ablation", true, Box::new(collapse_ablation)),
        (6, "reward loss ablation", true, Box::new(reward_ablation)),
        (7, "cartpole", true, Box::new(|_| cartpole(root))),
        (8, "invariant suite", true, Box::new(|_| invariant_suite(root))),
        (9, "goal transfer without retraining", true, Box::new(goal_transfer)),
        (10, "image translation (stretch)", false, Box::new(|_| translation(root))),
    ];

    let mut lines = Vec::new();
    let mut gating_failures = 0;
    for (id, name, gating, mut f) in criteria {
        if !selected(id) {
            continue;
        }
        println!("criterion {id}: {name} ...");
        let t = Instant::now();
        let o = f(&mut pixels);
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let line = format!("{tag} {id:>2} {name}: {} [{:.0} s]", o.detail, t.elapsed().as_secs_f64());
        println!("{line}");
        if !o.pass && gating {
            gating_failures += 1;
        }
        lines.push(line);
    }
    println!("\nacceptance summary");
    for l in &lines {
        println!("{l}");
    }
    if gating_failures > 0 {
        println!("{gating_failures} gating criteria failed");
        if std::env::var_os("EQPLAN_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
