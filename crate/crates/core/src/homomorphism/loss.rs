use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::diffcore::{Gradients, Parameterized, Tensor};
use crate::error::{Error, Result};
use crate::experience::{ObsId, ReplayDataset, TransitionRecord};

/// `½ ‖z − z'‖²`
pub fn squared_distance(z: &[f64], other: &[f64]) -> Result<f64> {
    if z.len() != other.len() {
        return Err(Error::usage(format!("distance between latents of length {} and {}", z.len(), other.len())));
    }
    Ok(sq_dist(z, other))
}

#[inline]
pub(crate) fn sq_dist(z: &[f64], other: &[f64]) -> f64 {
    0.5 * z.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

pub fn hinge_negative(dist: f64, margin: f64) -> f64 {
    (margin - dist).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub transition: f64,
    pub reward: f64,
    pub negative: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(transition: f64, reward: f64, negative: f64) -> Self {
        LossBreakdown { transition, reward, negative, total: transition + reward + negative }
    }

    pub fn is_finite(&self) -> bool {
        self.transition.is_finite() && self.reward.is_finite() && self.negative.is_finite() && self.total.is_finite()
    }
}

/// One transition of a batch; indices point into [`LossBatch::observations`].
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub negatives: Vec<usize>,
}

/// A batch with its distinct observations gathered once, so each is encoded a single
/// time however often it appears as state, next state or negative.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    pub observations: Tensor,
    pub anchors: Vec<Anchor>,
}

impl LossBatch {
    pub fn from_dataset(dataset: &ReplayDataset, records: &[&TransitionRecord], negatives: &[Vec<ObsId>]) -> Result<Self> {
        if records.len() != negatives.len() {
            return Err(Error::usage("one negative list per record is required"));
        }
        let obs_len: usize = dataset.meta().observation_shape.iter().product();
        let mut local: HashMap<ObsId, usize> = HashMap::new();
        let mut data = Vec::new();
        let mut slot = |id: ObsId, data: &mut Vec<f64>| {
            *local.entry(id).or_insert_with(|| {
                data.extend_from_slice(dataset.observation(id).values());
                data.len() / obs_len - 1
            })
        };
        let mut anchors = Vec::with_capacity(records.len());
        for (r, negs) in records.iter().zip(negatives) {
            let state = slot(r.state, &mut data);
            let next_state = slot(r.next_state, &mut data);
            let negatives = negs.iter().map(|&n| slot(n, &mut data)).collect();
            anchors.push(Anchor { state, action: r.action, reward: r.reward, next_state, negatives });
        }
        let rows = data.len() / obs_len.max(1);
        Ok(LossBatch { observations: Tensor::new(vec![rows, obs_len], data)?, anchors })
    }
}

fn diverged(message: impl Into<String>) -> Error {
    Error::Divergence { epoch: 0, batch: 0, message: message.into(), last_good: None }
}

pub fn loss(params: &ModelParams, batch: &LossBatch, margin: f64, use_reward_loss: bool) -> Result<LossBreakdown> {
    Ok(evaluate(params, batch, margin, use_reward_loss, false)?.0)
}

/// Loss breakdown plus gradients in `params.parameters()` order.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &LossBatch,
    margin: f64,
    use_reward_loss: bool,
) -> Result<(LossBreakdown, Gradients)> {
    let (b, g) = evaluate(params, batch, margin, use_reward_loss, true)?;
    Ok((b, g.expect("gradients requested")))
}

fn evaluate(
    params: &ModelParams,
    batch: &LossBatch,
    margin: f64,
    use_reward_loss: bool,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    let n = batch.anchors.len();
    if n == 0 {
        return Err(Error::usage("loss over an empty batch"));
    }
    let d = params.latent_dim;
    let na = params.num_actions;
    let u = batch.observations.batch();
    for a in &batch.anchors {
        if a.action >= na {
            return Err(Error::usage(format!("action {} outside 0..{na}", a.action)));
        }
        if a.state >= u || a.next_state >= u || a.negatives.iter().any(|&k| k >= u) {
            return Err(Error::usage("anchor refers to a missing observation"));
        }
    }

    let enc = params.encoder.forward_trace(&batch.observations)?;
    let z = enc.output();
    if !z.is_finite() {
        return Err(diverged("non-finite latent"));
    }

    // distinct (state, action) pairs through the action network
    let mut pair_of: HashMap<(usize, usize), usize> = HashMap::new();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let anchor_pair: Vec<usize> = batch
        .anchors
        .iter()
        .map(|a| {
            *pair_of.entry((a.state, a.action)).or_insert_with(|| {
                pairs.push((a.state, a.action));
                pairs.len() - 1
            })
        })
        .collect();
    let mut act_in = Vec::with_capacity(pairs.len() * (d + na));
    for &(s, a) in &pairs {
        params.action_input(z.row_slice(s), a, &mut act_in);
    }
    let act_in = Tensor::new(vec![pairs.len(), d + na], act_in)?;
    let act = params.action_net.forward_trace(&act_in)?;
    let mut pred = act.output().clone();
    for (p, &(s, _)) in pairs.iter().enumerate() {
        for (x, zs) in pred.row_slice_mut(p).iter_mut().zip(z.row_slice(s)) {
            *x += zs;
        }
    }

    let rew = if use_reward_loss { Some(params.reward_net.forward_trace(z)?) } else { None };

    let inv_n = 1.0 / n as f64;
    let (mut t_sum, mut r_sum, mut n_sum) = (0.0, 0.0, 0.0);
    let mut d_pred = Tensor::zeros(&[pairs.len(), d]);
    let mut d_z = Tensor::zeros(&[u, d]);
    let mut d_r = Tensor::zeros(&[u, 1]);
    let mut diff = vec![0.0; d];
    for (anchor, &p) in batch.anchors.iter().zip(&anchor_pair) {
        let pr = pred.row_slice(p);
        let target = z.row_slice(anchor.next_state);
        for i in 0..d {
            diff[i] = pr[i] - target[i];
        }
        t_sum += 0.5 * diff.iter().map(|x| x * x).sum::<f64>();
        if want_grads {
            for (g, x) in d_pred.row_slice_mut(p).iter_mut().zip(&diff) {
                *g += x * inv_n;
            }
            for (g, x) in d_z.row_slice_mut(anchor.next_state).iter_mut().zip(&diff) {
                *g -= x * inv_n;
            }
        }
        if let Some(r) = &rew {
            let e = r.output().data()[anchor.state] - anchor.reward;
            r_sum += 0.5 * e * e;
            d_r.data_mut()[anchor.state] += e * inv_n;
        }
        for &k in &anchor.negatives {
            let zn = z.row_slice(k);
            let dist = sq_dist(zn, pr);
            if dist < margin {
                n_sum += margin - dist;
                if want_grads {
                    for i in 0..d {
                        diff[i] = (zn[i] - pr[i]) * inv_n;
                    }
                    for (g, x) in d_pred.row_slice_mut(p).iter_mut().zip(&diff) {
                        *g += x;
                    }
                    for (g, x) in d_z.row_slice_mut(k).iter_mut().zip(&diff) {
                        *g -= x;
                    }
                }
            }
        }
    }
    let breakdown = LossBreakdown::new(t_sum * inv_n, r_sum * inv_n, n_sum * inv_n);
    if !breakdown.is_finite() {
        return Err(diverged(format!("non-finite loss {breakdown:?}")));
    }
    if !want_grads {
        return Ok((breakdown, None));
    }

    let enc_np = params.encoder.parameters().len();
    let act_np = params.action_net.parameters().len();
    let mut grads = params.zero_gradients();
    let (g_enc, rest) = grads.split_at_mut(enc_np);
    let (g_act, g_rew) = rest.split_at_mut(act_np);

    let d_act_in = params.action_net.backward(&act, &d_pred, g_act, true)?.expect("input gradient");
    for (p, &(s, _)) in pairs.iter().enumerate() {
        let row = d_z.row_slice_mut(s);
        for i in 0..d {
            row[i] += d_pred.row_slice(p)[i] + d_act_in.row_slice(p)[i];
        }
    }
    if let Some(r) = &rew {
        let d_rin = params.reward_net.backward(r, &d_r, g_rew, true)?.expect("input gradient");
        d_z.add_assign(&d_rin)?;
    }
    params.encoder.backward(&enc, &d_z, g_enc, false)?;
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(diverged("non-finite gradient"));
    }
    Ok((breakdown, Some(grads)))
}
