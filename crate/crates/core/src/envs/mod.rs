//! Deterministic goal-conditioned environments: the object-collection room, CartPole and
//! the image-translation task (with IDX ingestion and a bundled synthetic sprite set).

mod cartpole;
mod gridworld;
mod idx;
mod translation;

pub use cartpole::{cartpole_dynamics, CartPole, CartPoleConfig, CartPoleState};
pub use gridworld::{Cell, GridConfig, GridGroundTruth, GridState, GridTask, GridWorld};
pub use idx::{idx_load, idx_parse, ImageSet, IDX_IMAGE_MAGIC};
pub use translation::{synthetic_sprites, ImageSource, Translation, TranslationConfig, MAX_OFFSET};

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// Channel-per-object image, values in `[0, 1]`.
    Pixels,
    /// Compact vector (one-hot layout or raw physical state).
    Symbolic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub data: Tensor,
    pub encoding: Encoding,
}

impl Observation {
    pub fn new(data: Tensor, encoding: Encoding) -> Self {
        Observation { data, encoding }
    }

    pub fn values(&self) -> &[f64] {
        self.data.data()
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    /// Bit pattern key used for exact-equality interning.
    pub fn key(&self) -> Vec<u64> {
        self.values().iter().map(|v| v.to_bits()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalSpec {
    pub goal_observation: Observation,
}

/// Ground-truth state exposed for test oracles; agents never see it.
#[derive(Debug, Clone, PartialEq)]
pub enum UnderlyingState {
    Grid(GridState),
    CartPole(CartPoleState),
    Translation { image: usize, offset: (i32, i32) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub state: UnderlyingState,
    /// Set on the final step of an episode that reached its goal.
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub next_observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalSplit {
    #[default]
    Train,
    Test,
}

impl std::str::FromStr for GoalSplit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(GoalSplit::Train),
            "test" => Ok(GoalSplit::Test),
            other => Err(format!("unknown goal split {other:?} (train|test)")),
        }
    }
}

impl std::fmt::Display for GoalSplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GoalSplit::Train => "train",
            GoalSplit::Test => "test",
        })
    }
}

pub trait Environment: Send {
    fn id(&self) -> String;
    fn num_actions(&self) -> usize;
    fn observation_shape(&self) -> Vec<usize>;
    fn encoding(&self) -> Encoding;
    fn episode_cap(&self) -> usize;
    /// Starts an episode; everything random about it derives from `seed`.
    fn reset(&mut self, seed: u64) -> Result<(Observation, GoalSpec)>;
    fn step(&mut self, action: usize) -> Result<EnvStep>;
    fn goal_split(&self) -> GoalSplit;
    fn set_goal_split(&mut self, split: GoalSplit);
    /// Whether reaching the goal ends the episode (and so should absorb during planning).
    fn goal_terminates(&self) -> bool {
        true
    }
}

/// Serializable description of an environment instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Gridworld(GridConfig),
    Cartpole(CartPoleConfig),
    Translation(TranslationConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Gridworld(GridConfig::default())
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvConfig::Gridworld(c) => Box::new(GridWorld::new(c.clone())?),
            EnvConfig::Cartpole(c) => Box::new(CartPole::new(c.clone())?),
            EnvConfig::Translation(c) => Box::new(Translation::new(c.clone())?),
        })
    }

    pub fn set_goal_split(&mut self, split: GoalSplit) {
        match self {
            EnvConfig::Gridworld(c) => c.goal_split = split,
            EnvConfig::Cartpole(_) => {}
            EnvConfig::Translation(c) => c.goal_split = split,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Gridworld(_) => "gridworld",
            EnvConfig::Cartpole(_) => "cartpole",
            EnvConfig::Translation(_) => "translation",
        }
    }
}
