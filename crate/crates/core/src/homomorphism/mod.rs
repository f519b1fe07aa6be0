//! Learned state encoder, action-effect network and reward head, the contrastive
//! action-equivariance loss and its training loop.

mod loss;
mod train;

pub use loss::{hinge_negative, loss, loss_and_gradients, squared_distance, Anchor, LossBatch, LossBreakdown};
pub(crate) use loss::sq_dist;
pub(crate) use train::csv_error;
pub use train::{
    train, write_training_log, Checkpoint, EpochLoss, TrainConfig, TrainOutcome,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Parameterized, Sequential, Tensor};
use crate::envs::Observation;
use crate::error::{Error, Result};

pub type LatentPoint = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderArch {
    /// Dense layers over the flattened observation.
    Mlp { hidden: Vec<usize> },
    /// Same-padded convolutions (ReLU after each) followed by dense layers.
    Conv { channels: Vec<usize>, kernel: usize, stride: usize, hidden: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderArch,
    pub action_hidden: Vec<usize>,
    pub reward_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderArch::Mlp { hidden: vec![64, 32] },
            action_hidden: vec![64],
            reward_hidden: vec![64],
        }
    }
}

impl ModelConfig {
    /// Two 16-channel 3×3 convolutions in front of the 64 → 32 dense stack.
    pub fn conv() -> Self {
        ModelConfig {
            encoder: EncoderArch::Conv { channels: vec![16, 16], kernel: 3, stride: 1, hidden: vec![64, 32] },
            ..ModelConfig::default()
        }
    }
}

/// `Z_θ` (encoder), `Ā_φ` (action effect over `concat(z, onehot(a))`) and `R̄_ζ` (reward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: Sequential,
    pub action_net: Sequential,
    pub reward_net: Sequential,
    pub latent_dim: usize,
    pub num_actions: usize,
    pub observation_shape: Vec<usize>,
}

fn widths(first: usize, hidden: &[usize], last: usize) -> Vec<usize> {
    let mut w = vec![first];
    w.extend_from_slice(hidden);
    w.push(last);
    w
}

impl ModelParams {
    pub fn new<R: Rng>(
        config: &ModelConfig,
        observation_shape: &[usize],
        num_actions: usize,
        latent_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::config("latent dimension must be at least 1"));
        }
        if num_actions == 0 {
            return Err(Error::config("need at least one action"));
        }
        let obs_len: usize = observation_shape.iter().product();
        if obs_len == 0 {
            return Err(Error::config("observation shape is empty"));
        }
        let encoder = match &config.encoder {
            EncoderArch::Mlp { hidden } => Sequential::mlp(&widths(obs_len, hidden, latent_dim), rng)?,
            EncoderArch::Conv { channels, kernel, stride, hidden } => {
                let [c, h, w] = <[usize; 3]>::try_from(observation_shape).map_err(|_| {
                    Error::config(format!("conv encoder needs (c, h, w) observations, got {observation_shape:?}"))
                })?;
                let mut dense = hidden.clone();
                dense.push(latent_dim);
                Sequential::conv_mlp([c, h, w], channels, *kernel, *stride, &dense, rng)?
            }
        };
        let action_net = Sequential::mlp(&widths(latent_dim + num_actions, &config.action_hidden, latent_dim), rng)?;
        let reward_net = Sequential::mlp(&widths(latent_dim, &config.reward_hidden, 1), rng)?;
        Ok(ModelParams {
            encoder,
            action_net,
            reward_net,
            latent_dim,
            num_actions,
            observation_shape: observation_shape.to_vec(),
        })
    }

    /// Checks the three networks agree on `D` and the action count.
    pub fn validate(&self) -> Result<()> {
        let d = self.latent_dim;
        let obs_len: usize = self.observation_shape.iter().product();
        if self.encoder.input_size() != obs_len || self.encoder.output_size() != d {
            return Err(Error::config("encoder does not map observations to the latent dimension"));
        }
        if self.action_net.input_size() != d + self.num_actions || self.action_net.output_size() != d {
            return Err(Error::config("action network does not match latent dimension and action count"));
        }
        if self.reward_net.input_size() != d || self.reward_net.output_size() != 1 {
            return Err(Error::config("reward network must map latents to a scalar"));
        }
        Ok(())
    }

    fn observation_len(&self) -> usize {
        self.encoder.input_size()
    }

    /// Stacks observations into an `(n, obs_len)` batch.
    pub fn observation_batch(&self, observations: &[&Observation]) -> Result<Tensor> {
        let len = self.observation_len();
        let mut data = Vec::with_capacity(observations.len() * len);
        for o in observations {
            if o.shape() != self.observation_shape.as_slice() {
                return Err(Error::config(format!(
                    "observation shape {:?} does not match encoder input {:?}",
                    o.shape(),
                    self.observation_shape
                )));
            }
            data.extend_from_slice(o.values());
        }
        Tensor::new(vec![observations.len(), len], data)
    }

    pub fn encode(&self, observation: &Observation) -> Result<LatentPoint> {
        Ok(self.encode_batch(&[observation])?.into_data())
    }

    /// `(n, D)` latents for a batch of observations.
    pub fn encode_batch(&self, observations: &[&Observation]) -> Result<Tensor> {
        let x = self.observation_batch(observations)?;
        self.encoder.forward(&x)
    }

    pub(crate) fn action_input(&self, z: &[f64], action: usize, out: &mut Vec<f64>) {
        out.extend_from_slice(z);
        out.extend((0..self.num_actions).map(|b| if b == action { 1.0 } else { 0.0 }));
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action >= self.num_actions {
            return Err(Error::usage(format!("action {action} outside 0..{}", self.num_actions)));
        }
        Ok(())
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_dim {
            return Err(Error::config(format!("latent of length {} but D = {}", z.len(), self.latent_dim)));
        }
        Ok(())
    }

    /// `Ā_φ(z, a)`.
    pub fn action_effect(&self, z: &[f64], action: usize) -> Result<LatentPoint> {
        self.check_action(action)?;
        self.check_latent(z)?;
        let mut input = Vec::with_capacity(z.len() + self.num_actions);
        self.action_input(z, action, &mut input);
        let n = input.len();
        Ok(self.action_net.forward(&Tensor::new(vec![1, n], input)?)?.into_data())
    }

    /// `z + Ā_φ(z, a)`.
    pub fn predict_next(&self, z: &[f64], action: usize) -> Result<LatentPoint> {
        let delta = self.action_effect(z, action)?;
        Ok(z.iter().zip(&delta).map(|(a, b)| a + b).collect())
    }

    /// Predicted next latents for every row of `latents` under one action.
    pub fn predict_next_batch(&self, latents: &Tensor, action: usize) -> Result<Tensor> {
        self.check_action(action)?;
        if latents.row_len() != self.latent_dim {
            return Err(Error::config("latent batch width differs from D"));
        }
        let n = latents.batch();
        let mut input = Vec::with_capacity(n * (self.latent_dim + self.num_actions));
        for i in 0..n {
            self.action_input(latents.row_slice(i), action, &mut input);
        }
        let mut out = self.action_net.forward(&Tensor::new(vec![n, self.latent_dim + self.num_actions], input)?)?;
        out.add_assign(latents)?;
        Ok(out)
    }

    /// `R̄_ζ(z)`.
    pub fn predict_reward(&self, z: &[f64]) -> Result<f64> {
        self.check_latent(z)?;
        Ok(self.reward_net.forward(&Tensor::row(z))?.data()[0])
    }

    pub fn predict_reward_batch(&self, latents: &Tensor) -> Result<Vec<f64>> {
        Ok(self.reward_net.forward(latents)?.into_data())
    }
}

impl Parameterized for ModelParams {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.parameters();
        p.extend(self.action_net.parameters());
        p.extend(self.reward_net.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.parameters_mut();
        p.extend(self.action_net.parameters_mut());
        p.extend(self.reward_net.parameters_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Encoding;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(values: &[f64]) -> Observation {
        Observation::new(Tensor::new(vec![values.len()], values.to_vec()).unwrap(), Encoding::Symbolic)
    }

    fn model(d: usize) -> ModelParams {
        ModelParams::new(&ModelConfig::default(), &[3], 2, d, &mut ChaCha8Rng::seed_from_u64(7)).unwrap()
    }

    #[test]
    fn default_latent_dimension() {
        assert_eq!(TrainConfig::default().latent_dim, 50);
        let m = model(50);
        assert_eq!(m.encode(&obs(&[0.1, 0.2, 0.3])).unwrap().len(), 50);
        m.validate().unwrap();
    }

    #[test]
    fn encoding_is_deterministic_and_separates() {
        let m = model(8);
        let a = m.encode(&obs(&[1.0, 0.0, 0.5])).unwrap();
        assert_eq!(a, m.encode(&obs(&[1.0, 0.0, 0.5])).unwrap());
        let b = m.encode(&obs(&[0.0, 1.0, 0.5])).unwrap();
        assert!(squared_distance(&a, &b).unwrap() > 0.0);
        assert!(matches!(m.encode(&obs(&[1.0, 2.0])), Err(Error::Config(_))));
    }

    #[test]
    fn zero_action_network_predicts_identity() {
        let mut m = model(4);
        for p in m.action_net.parameters_mut() {
            p.fill(0.0);
        }
        let z = m.encode(&obs(&[0.3, 0.1, 0.9])).unwrap();
        assert_eq!(m.predict_next(&z, 1).unwrap(), z);
        assert!(matches!(m.predict_next(&z, 2), Err(Error::Usage(_))));
    }

    #[test]
    fn prediction_is_additive() {
        let m = model(4);
        let z = m.encode(&obs(&[0.3, 0.1, 0.9])).unwrap();
        let delta = m.action_effect(&z, 0).unwrap();
        let next = m.predict_next(&z, 0).unwrap();
        for i in 0..4 {
            assert_eq!(next[i], z[i] + delta[i]);
        }
        let batch = m.predict_next_batch(&Tensor::row(&z), 0).unwrap();
        for i in 0..4 {
            assert!((batch.data()[i] - next[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_encoder_builds_for_images() {
        let m = ModelParams::new(&ModelConfig::conv(), &[3, 6, 6], 4, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        m.validate().unwrap();
        assert!(ModelParams::new(&ModelConfig::conv(), &[12], 4, 5, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
