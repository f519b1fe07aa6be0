use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Encoding, EnvStep, Environment, GoalSpec, GoalSplit, Observation, StepInfo, UnderlyingState,
};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
/// Half the pole length.
pub const POLE_HALF_LENGTH: f64 = 0.5;
pub const FORCE: f64 = 10.0;
pub const DT: f64 = 0.02;
pub const ANGLE_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
pub const POSITION_LIMIT: f64 = 2.4;

/// `(x, ẋ, θ, θ̇)`
pub type CartPoleState = [f64; 4];

/// One explicit-Euler step of the classic cart-pole equations under `force`.
pub fn cartpole_dynamics(state: CartPoleState, force: f64) -> CartPoleState {
    let [x, x_dot, theta, theta_dot] = state;
    let total_mass = CART_MASS + POLE_MASS;
    let polemass_length = POLE_MASS * POLE_HALF_LENGTH;
    let (sin, cos) = theta.sin_cos();
    let temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass;
    let theta_acc = (GRAVITY * sin - cos * temp)
        / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
    let x_acc = temp - polemass_length * theta_acc * cos / total_mass;
    [x + DT * x_dot, x_dot + DT * x_acc, theta + DT * theta_dot, theta_dot + DT * theta_acc]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartPoleConfig {
    pub max_steps: usize,
    /// Half-width of the uniform initial-state draw.
    pub init_noise: f64,
    /// Start exactly at the origin.
    pub zero_init: bool,
}

impl Default for CartPoleConfig {
    fn default() -> Self {
        CartPoleConfig { max_steps: 200, init_noise: 0.05, zero_init: false }
    }
}

pub struct CartPole {
    config: CartPoleConfig,
    state: CartPoleState,
    steps: usize,
    active: bool,
}

fn observe(state: &CartPoleState) -> Observation {
    Observation::new(Tensor::new(vec![4], state.to_vec()).expect("4-vector"), Encoding::Symbolic)
}

impl CartPole {
    pub fn new(config: CartPoleConfig) -> Result<Self> {
        if config.max_steps == 0 || !(config.init_noise >= 0.0) {
            return Err(Error::config("cartpole needs max_steps > 0 and init_noise >= 0"));
        }
        Ok(CartPole { config, state: [0.0; 4], steps: 0, active: false })
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    pub fn set_state(&mut self, state: CartPoleState) {
        self.state = state;
    }
}

impl Environment for CartPole {
    fn id(&self) -> String {
        "cartpole".to_string()
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn observation_shape(&self) -> Vec<usize> {
        vec![4]
    }

    fn encoding(&self) -> Encoding {
        Encoding::Symbolic
    }

    fn episode_cap(&self) -> usize {
        self.config.max_steps
    }

    fn reset(&mut self, seed: u64) -> Result<(Observation, GoalSpec)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = self.config.init_noise;
        self.state = if self.config.zero_init || a == 0.0 {
            [0.0; 4]
        } else {
            std::array::from_fn(|_| rng.gen_range(-a..=a))
        };
        self.steps = 0;
        self.active = true;
        let goal = GoalSpec { goal_observation: observe(&[0.0; 4]) };
        Ok((observe(&self.state), goal))
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        if !self.active {
            return Err(Error::usage("cartpole step without an active episode"));
        }
        let force = match action {
            0 => -FORCE,
            1 => FORCE,
            other => return Err(Error::usage(format!("cartpole action {other} out of range 0..2"))),
        };
        self.state = cartpole_dynamics(self.state, force);
        self.steps += 1;
        let [x, _, theta, _] = self.state;
        let failed = x.abs() > POSITION_LIMIT || theta.abs() > ANGLE_LIMIT;
        let capped = self.steps >= self.config.max_steps;
        let done = failed || capped;
        self.active = !done;
        Ok(EnvStep {
            next_observation: observe(&self.state),
            reward: 1.0,
            done,
            info: StepInfo { state: UnderlyingState::CartPole(self.state), success: capped && !failed },
        })
    }

    fn goal_split(&self) -> GoalSplit {
        GoalSplit::Train
    }

    fn set_goal_split(&mut self, _split: GoalSplit) {}

    fn goal_terminates(&self) -> bool {
        false
    }
}
