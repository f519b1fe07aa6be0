use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::loss::{loss_and_gradients, LossBatch, LossBreakdown};
use super::{ModelConfig, ModelParams};
use crate::diffcore::{adam_step, load_json, save_json, AdamConfig, AdamState, Parameterized};
use crate::error::{Error, Result};
use crate::experience::{sample_batch, sample_negatives, ReplayDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub latent_dim: usize,
    /// Negatives per anchor (`J`).
    pub negatives: usize,
    /// Hinge margin `ε`.
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub use_reward_loss: bool,
    pub seed: u64,
    /// Stop early once an epoch's mean total loss falls below this value.
    pub stop_below: Option<f64>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent_dim: 50,
            negatives: 5,
            margin: 1.0,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 512,
            use_reward_loss: true,
            seed: 0,
            stop_below: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim must be at least 1"));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::config("hinge margin must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub curve: Vec<EpochLoss>,
    pub steps: usize,
}

pub fn train(dataset: &ReplayDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::usage("cannot train on an empty dataset"));
    }
    let meta = dataset.meta();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::new(&config.model, &meta.observation_shape, meta.num_actions, config.latent_dim, &mut rng)?;
    let mut adam = AdamState::new(&params.parameters(), AdamConfig::with_learning_rate(config.learning_rate));
    let batches = dataset.len().div_ceil(config.batch_size);
    let mut curve = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for epoch in 0..config.epochs {
        let mut sum = LossBreakdown::default();
        for b in 0..batches {
            let records = sample_batch(dataset, config.batch_size, &mut rng)?;
            let negatives: Vec<_> =
                records.iter().map(|r| sample_negatives(dataset, r, config.negatives, &mut rng)).collect();
            let batch = LossBatch::from_dataset(dataset, &records, &negatives)?;
            let result = loss_and_gradients(&params, &batch, config.margin, config.use_reward_loss)
                .and_then(|(l, g)| {
                    adam_step(&mut params.parameters_mut(), &g, &mut adam)?;
                    Ok(l)
                });
            let l = match result {
                Ok(l) => l,
                Err(Error::Divergence { message, .. }) => {
                    return Err(Error::Divergence { epoch, batch: b, message, last_good: Some(Box::new(params)) })
                }
                Err(e) => return Err(e),
            };
            sum.transition += l.transition;
            sum.reward += l.reward;
            sum.negative += l.negative;
            steps += 1;
        }
        let k = batches as f64;
        let (t, r, n) = (sum.transition / k, sum.reward / k, sum.negative / k);
        let loss = LossBreakdown { transition: t, reward: r, negative: n, total: t + r + n };
        curve.push(EpochLoss { epoch, loss });
        if config.stop_below.is_some_and(|s| loss.total < s) {
            break;
        }
    }
    Ok(TrainOutcome { params, curve, steps })
}

/// CSV with columns `epoch,transition_term,reward_term,negative_term,total`.
pub fn write_training_log(path: &Path, curve: &[EpochLoss]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["epoch", "transition_term", "reward_term", "negative_term", "total"])
        .map_err(|e| csv_error(path, e))?;
    for e in curve {
        w.write_record([
            e.epoch.to_string(),
            e.loss.transition.to_string(),
            e.loss.reward.to_string(),
            e.loss.negative.to_string(),
            e.loss.total.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(0, format!("{}: {other:?}", path.display())),
    }
}

/// Trained parameters with the provenance needed to refuse mismatched artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub train_config: TrainConfig,
    pub env_id: String,
    pub dataset_fingerprint: String,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = load_json(path)?;
        c.params.validate()?;
        Ok(c)
    }

    /// Hex sha256 of the serialized parameters.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(&self.params).expect("parameters serialize");
        Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn ensure_matches(&self, dataset: &ReplayDataset) -> Result<()> {
        let fp = dataset.fingerprint();
        if fp != self.dataset_fingerprint {
            return Err(Error::Stale(format!(
                "checkpoint was trained on dataset {} but {} was supplied",
                short(&self.dataset_fingerprint),
                short(&fp)
            )));
        }
        Ok(())
    }
}

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}
