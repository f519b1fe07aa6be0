mod common;

use common::*;
use eqplan::abstract_mdp::{AbstractMdp, PrototypeSet, RewardMode};
use eqplan::diffcore::{compare_gradients, numeric_gradients, Tensor, DEFAULT_STEP};
use eqplan::envs::{Encoding, Observation};
use eqplan::homomorphism::{loss, loss_and_gradients, ModelParams};
use eqplan::planner::{act_greedy, value_iteration};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn value_iteration_matches_policy_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let m = random_tabular(&mut rng, 20);
        let q = value_iteration(&m.to_mdp(), 500, 1e-10);
        let oracle = policy_iteration(&m);
        for (k, (a, b)) in q.values.iter().zip(&oracle).enumerate() {
            assert!((a - b).abs() < 1e-8, "case {case} entry {k}: {a} vs {b}");
        }
        for x in 0..m.n {
            assert_eq!(q.greedy(x), first_max(&oracle[x * m.na..(x + 1) * m.na]), "case {case} state {x}");
        }
    }
}

#[test]
fn lifted_policy_is_optimal_on_exact_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..10 {
        let n = rng.gen_range(3..=6);
        let na = 3;
        let next: Vec<usize> = (0..n * na).map(|_| rng.gen_range(0..n)).collect();
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = tabular_embedding(&next, &rewards, na);

        // brute force over all |A|^|S| deterministic policies
        let mut t = vec![0.0; n * na * n];
        for (k, &y) in next.iter().enumerate() {
            t[k * n + y] = 1.0;
        }
        let truth = Tabular { n, na, t, r: rewards.clone(), absorbing: vec![false; n], gamma: 0.9 };
        let mut best = vec![f64::NEG_INFINITY; n];
        let mut policy = vec![0; n];
        for code in 0..na.pow(n as u32) {
            let mut c = code;
            for p in policy.iter_mut() {
                *p = c % na;
                c /= na;
            }
            let v = policy_value(&truth, &policy);
            best.iter_mut().zip(&v).for_each(|(b, x)| *b = b.max(*x));
        }
        let q_star = q_from_values(&truth, &best);

        let protos = PrototypeSet::from_points((0..n).map(|i| one_hot(n, i)).collect(), 1e-8).unwrap();
        let mdp = AbstractMdp::build(&params, protos, RewardMode::Predicted, 1e-20, 0.9, false).unwrap();
        let q = value_iteration(&mdp, 500, 1e-10);
        for s in 0..n {
            let obs = Observation::new(Tensor::new(vec![n], one_hot(n, s)).unwrap(), Encoding::Symbolic);
            let a = act_greedy(&params, &q, &mdp.prototypes, &obs, 1e-20).unwrap();
            let row = &q_star[s * na..(s + 1) * na];
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(row[a] >= top - 1e-9, "case {case} state {s}: lifted action {a} has Q {} < {top}", row[a]);
        }
    }
}

#[test]
fn embedding_predicts_exact_successors() {
    let next = [1, 0, 0, 1];
    let params = tabular_embedding(&next, &[0.0, 1.0], 2);
    assert_eq!(params.predict_next(&one_hot(2, 0), 0).unwrap(), one_hot(2, 1));
    assert_eq!(params.predict_next(&one_hot(2, 1), 0).unwrap(), one_hot(2, 0));
    assert_eq!(params.predict_next(&one_hot(2, 1), 1).unwrap(), one_hot(2, 1));
}

#[test]
fn full_loss_gradients_on_random_small_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..20 {
        let (mut params, batch) = random_problem(&mut rng);
        assert!(parameter_count(&params) <= 500);
        let margin = split_margin(&params, &batch);
        let use_reward = case % 4 != 3;
        let (_, analytic) = loss_and_gradients(&params, &batch, margin, use_reward).unwrap();
        let numeric =
            numeric_gradients(&mut params, DEFAULT_STEP, |p: &ModelParams| loss(p, &batch, margin, use_reward).unwrap().total);
        let report = compare_gradients(&analytic, &numeric, 1e-4);
        assert!(report.passed, "case {case}: max relative error {}", report.max_relative_error);
    }
}
