#![allow(dead_code)]

use eqplan::abstract_mdp::{AbstractMdp, PrototypeSet};
use eqplan::diffcore::{Dense, Layer, Parameterized, Sequential, Tensor};
use eqplan::homomorphism::{Anchor, EncoderArch, LossBatch, ModelConfig, ModelParams};
use rand::Rng;

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig { encoder: EncoderArch::Mlp { hidden: vec![4] }, action_hidden: vec![4], reward_hidden: vec![3] }
}

pub fn parameter_count(params: &ModelParams) -> usize {
    params.parameters().iter().map(|p| p.len()).sum()
}

/// Random tiny model plus a random batch, redrawn until every ReLU input is at least
/// `1e-3` away from its kink.
pub fn random_problem<R: Rng>(rng: &mut R) -> (ModelParams, LossBatch) {
    loop {
        let (params, batch) = draw_problem(rng);
        if model_relu_clearance(&params, &batch) >= 1e-3 {
            return (params, batch);
        }
    }
}

fn draw_problem<R: Rng>(rng: &mut R) -> (ModelParams, LossBatch) {
    let obs_len = rng.gen_range(2..=4);
    let latent = rng.gen_range(2..=4);
    let actions = rng.gen_range(2..=4);
    let mut params = ModelParams::new(&tiny_model_config(), &[obs_len], actions, latent, rng).unwrap();
    // zero biases let a dead hidden layer put the next ReLU exactly on its kink
    for p in params.parameters_mut() {
        if p.shape().len() == 1 {
            p.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        }
    }
    let u = rng.gen_range(4..=8);
    let rows: Vec<Vec<f64>> = (0..u).map(|_| (0..obs_len).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
    let anchors = (0..rng.gen_range(2..=6))
        .map(|_| Anchor {
            state: rng.gen_range(0..u),
            action: rng.gen_range(0..actions),
            reward: rng.gen_range(-1.0..1.0),
            next_state: rng.gen_range(0..u),
            negatives: (0..rng.gen_range(0..=3)).map(|_| rng.gen_range(0..u)).collect(),
        })
        .collect();
    let batch = LossBatch { observations: Tensor::from_rows(&rows).unwrap(), anchors };
    (params, batch)
}

/// Hinge margin in the widest gap between negative distances, so that some hinges are
/// active, some are not, and none sits near its kink.
pub fn split_margin(params: &ModelParams, batch: &LossBatch) -> f64 {
    let mut d = Vec::new();
    for a in &batch.anchors {
        let z = encode_row(params, batch, a.state);
        let pred = params.predict_next(&z, a.action).unwrap();
        for &n in &a.negatives {
            let zn = encode_row(params, batch, n);
            d.push(0.5 * zn.iter().zip(&pred).map(|(x, y)| (x - y) * (x - y)).sum::<f64>());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    // finite differences perturb distances slightly, so split at the widest gap and fall
    // back to all-active when repeated negatives leave no real gap
    let widest = (0..d.len() - 1).max_by(|&i, &j| (d[i + 1] - d[i]).total_cmp(&(d[j + 1] - d[j])));
    match widest {
        Some(i) if d[i + 1] - d[i] > 1e-3 => 0.5 * (d[i] + d[i + 1]),
        _ => d[d.len() - 1] + 1.0,
    }
}

fn encode_row(params: &ModelParams, batch: &LossBatch, row: usize) -> Vec<f64> {
    let x = Tensor::row(batch.observations.row_slice(row));
    params.encoder.forward(&x).unwrap().into_data()
}

pub struct Tabular {
    pub n: usize,
    pub na: usize,
    /// `t[(x * na + a) * n + y]`
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub absorbing: Vec<bool>,
    pub gamma: f64,
}

impl Tabular {
    pub fn to_mdp(&self) -> AbstractMdp {
        let protos = PrototypeSet::from_points((0..self.n).map(|i| vec![i as f64]).collect(), 1e-8).unwrap();
        AbstractMdp::from_parts(protos, self.na, self.t.clone(), self.r.clone(), self.absorbing.clone(), self.gamma).unwrap()
    }
}

pub fn random_tabular<R: Rng>(rng: &mut R, max_states: usize) -> Tabular {
    let n = rng.gen_range(2..=max_states);
    let na = 4;
    let mut t = Vec::with_capacity(n * na * n);
    for _ in 0..n * na {
        // sparse rows with a guaranteed nonzero entry
        let mut row: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.4) { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
        row[rng.gen_range(0..n)] += 0.5;
        let s: f64 = row.iter().sum();
        t.extend(row.iter().map(|p| p / s));
    }
    let r = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let absorbing = (0..n).map(|_| rng.gen_bool(0.2)).collect();
    Tabular { n, na, t, r, absorbing, gamma: 0.9 }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting (`a` row-major `n × n`).
pub fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).unwrap();
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let p = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / p;
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    x
}

/// Exact value of a deterministic policy: `V = R + γ P_π V`, with absorbing states held at `R`.
pub fn policy_value(m: &Tabular, policy: &[usize]) -> Vec<f64> {
    let n = m.n;
    let mut a = vec![0.0; n * n];
    for x in 0..n {
        a[x * n + x] = 1.0;
        if !m.absorbing[x] {
            let row = &m.t[(x * m.na + policy[x]) * n..(x * m.na + policy[x] + 1) * n];
            for (y, p) in row.iter().enumerate() {
                a[x * n + y] -= m.gamma * p;
            }
        }
    }
    solve(a, m.r.clone())
}

pub fn q_from_values(m: &Tabular, v: &[f64]) -> Vec<f64> {
    let n = m.n;
    let mut q = vec![0.0; n * m.na];
    for x in 0..n {
        for a in 0..m.na {
            let future: f64 = if m.absorbing[x] {
                0.0
            } else {
                m.t[(x * m.na + a) * n..(x * m.na + a + 1) * n].iter().zip(v).map(|(p, w)| p * w).sum()
            };
            q[x * m.na + a] = m.r[x] + m.gamma * future;
        }
    }
    q
}

pub fn first_max(row: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

/// Policy iteration with exact linear-solve evaluation; returns the optimal `Q`.
pub fn policy_iteration(m: &Tabular) -> Vec<f64> {
    let mut policy = vec![0; m.n];
    loop {
        let v = policy_value(m, &policy);
        let q = q_from_values(m, &v);
        let mut stable = true;
        for x in 0..m.n {
            let row = &q[x * m.na..(x + 1) * m.na];
            let best = first_max(row);
            // switch only on a strict improvement so the loop terminates
            if row[best] > row[policy[x]] + 1e-13 {
                policy[x] = best;
                stable = false;
            }
        }
        if stable {
            return q;
        }
    }
}

/// Exact embedding of a deterministic tabular MDP: one-hot observations, identity encoder,
/// an action net with one ReLU unit per `(s, a)` pair that fires only on that pair, and a
/// linear reward head.
pub fn tabular_embedding(next: &[usize], rewards: &[f64], na: usize) -> ModelParams {
    let n = rewards.len();
    let dense = |w: Vec<f64>, rows: usize, cols: usize, b: Vec<f64>| {
        Layer::Dense(Dense::from_parts(Tensor::new(vec![rows, cols], w).unwrap(), Tensor::new(vec![rows], b).unwrap()).unwrap())
    };
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    let encoder = Sequential::new(n, vec![dense(eye, n, n, vec![0.0; n])]).unwrap();
    let hidden = n * na;
    let mut w1 = vec![0.0; hidden * (n + na)];
    for s in 0..n {
        for a in 0..na {
            let h = s * na + a;
            w1[h * (n + na) + s] = 1.0;
            w1[h * (n + na) + n + a] = 1.0;
        }
    }
    let mut w2 = vec![0.0; n * hidden];
    for s in 0..n {
        for a in 0..na {
            let h = s * na + a;
            w2[next[h] * hidden + h] += 1.0;
            w2[s * hidden + h] -= 1.0;
        }
    }
    let action_net = Sequential::new(
        n + na,
        vec![dense(w1, hidden, n + na, vec![-1.0; hidden]), Layer::Relu, dense(w2, n, hidden, vec![0.0; n])],
    )
    .unwrap();
    let reward_net = Sequential::new(n, vec![dense(rewards.to_vec(), 1, n, vec![0.0])]).unwrap();
    ModelParams { encoder, action_net, reward_net, latent_dim: n, num_actions: na, observation_shape: vec![n] }
}

pub fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Smallest |pre-activation| feeding any ReLU of `net` over the rows of `input`.
pub fn relu_clearance(net: &Sequential, input: &Tensor) -> f64 {
    let mut clearance = f64::INFINITY;
    for (i, layer) in net.layers().iter().enumerate() {
        if matches!(layer, Layer::Relu) {
            let head = Sequential::new(net.input_size(), net.layers()[..i].to_vec()).unwrap();
            let pre = head.forward(input).unwrap();
            clearance = pre.data().iter().fold(clearance, |c, v| c.min(v.abs()));
        }
    }
    clearance
}

/// [`relu_clearance`] over the three networks as the loss evaluates them on `batch`.
pub fn model_relu_clearance(params: &ModelParams, batch: &LossBatch) -> f64 {
    let z = params.encoder.forward(&batch.observations).unwrap();
    let mut rows = Vec::new();
    for a in &batch.anchors {
        let mut row = z.row_slice(a.state).to_vec();
        row.extend(one_hot(params.num_actions, a.action));
        rows.push(row);
    }
    let act_in = Tensor::from_rows(&rows).unwrap();
    relu_clearance(&params.encoder, &batch.observations)
        .min(relu_clearance(&params.action_net, &act_in))
        .min(relu_clearance(&params.reward_net, &z))
}
