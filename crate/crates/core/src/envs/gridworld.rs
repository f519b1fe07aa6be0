use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Encoding, EnvStep, Environment, GoalSpec, GoalSplit, Observation, StepInfo, UnderlyingState,
};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const STEP_REWARD: f64 = -0.1;
pub const PICKUP_REWARD: f64 = 1.0;
pub const WRONG_PICKUP_REWARD: f64 = -1.0;
pub const DELIVERY_REWARD: f64 = 1.0;

/// `(row, col)`
pub type Cell = [usize; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridTask {
    /// A key only.
    #[default]
    Single,
    /// A key and an envelope.
    Double,
}

impl GridTask {
    pub fn num_objects(self) -> usize {
        match self {
            GridTask::Single => 1,
            GridTask::Double => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Cells per side.
    pub size: usize,
    /// Pixels per cell side when rendering images.
    pub cell_px: usize,
    pub task: GridTask,
    pub encoding: Encoding,
    pub max_steps: usize,
    pub goal_split: GoalSplit,
    /// Object cells (key first). `None` places them at fixed cells near the centre.
    pub objects: Option<Vec<Cell>>,
    /// Re-sample object cells on every reset instead of keeping the layout fixed.
    pub randomize_objects: bool,
    /// Forces one delivery cell for every episode (goal-transfer experiments).
    pub delivery: Option<Cell>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig::full_scale()
    }
}

impl GridConfig {
    /// 6×6 room rendered at 8 px per cell: 3×48×48 images.
    pub fn full_scale() -> Self {
        GridConfig {
            size: 6,
            cell_px: 8,
            task: GridTask::Single,
            encoding: Encoding::Pixels,
            max_steps: 100,
            goal_split: GoalSplit::Train,
            objects: None,
            randomize_objects: false,
            delivery: None,
        }
    }

    /// Same room with one-hot symbolic observations, for fast tests.
    pub fn desk_scale() -> Self {
        GridConfig { encoding: Encoding::Symbolic, ..GridConfig::full_scale() }
    }

    /// 12×12 room at 4 px per cell (also 3×48×48).
    pub fn large() -> Self {
        GridConfig { size: 12, cell_px: 4, ..GridConfig::full_scale() }
    }

    fn default_objects(&self) -> Vec<Cell> {
        let c = self.size / 2;
        let key = [c.saturating_sub(1), c.saturating_sub(1)];
        let envelope = [c.min(self.size - 1), (c + 1).min(self.size - 1)];
        let mut cells = vec![key, envelope];
        cells.truncate(self.task.num_objects());
        cells
    }

    pub fn corners(&self) -> [Cell; 4] {
        let m = self.size - 1;
        [[0, 0], [0, m], [m, 0], [m, m]]
    }

    pub fn observation_shape(&self) -> Vec<usize> {
        match self.encoding {
            Encoding::Pixels => vec![3, self.size * self.cell_px, self.size * self.cell_px],
            Encoding::Symbolic => vec![3 * self.size * self.size],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::config("grid size must be at least 2"));
        }
        if self.cell_px == 0 || self.max_steps == 0 {
            return Err(Error::config("cell_px and max_steps must be positive"));
        }
        let cells = self.size * self.size;
        if cells < self.task.num_objects() + 1 {
            return Err(Error::config("grid too small for agent and objects"));
        }
        if let Some(objs) = &self.objects {
            if objs.len() != self.task.num_objects() {
                return Err(Error::config(format!(
                    "task needs {} object cells, got {}",
                    self.task.num_objects(),
                    objs.len()
                )));
            }
            for (i, o) in objs.iter().enumerate() {
                if o[0] >= self.size || o[1] >= self.size {
                    return Err(Error::config(format!("object {i} at {o:?} is outside the grid")));
                }
                if objs[..i].contains(o) {
                    return Err(Error::config("object cells must be distinct"));
                }
            }
        }
        if let Some(d) = self.delivery {
            if d[0] >= self.size || d[1] >= self.size {
                return Err(Error::config(format!("delivery cell {d:?} is outside the grid")));
            }
        }
        Ok(())
    }

    /// Renders an arbitrary underlying state.
    pub fn render(&self, state: &GridState) -> Observation {
        let n = self.size;
        match self.encoding {
            Encoding::Pixels => {
                let side = n * self.cell_px;
                let mut data = vec![0.0; 3 * side * side];
                let mut paint = |channel: usize, cell: Cell| {
                    for dy in 0..self.cell_px {
                        for dx in 0..self.cell_px {
                            let y = cell[0] * self.cell_px + dy;
                            let x = cell[1] * self.cell_px + dx;
                            data[(channel * side + y) * side + x] = 1.0;
                        }
                    }
                };
                paint(0, state.agent);
                for (k, obj) in state.objects.iter().enumerate() {
                    if let Some(cell) = obj {
                        paint(k + 1, *cell);
                    }
                }
                Observation::new(
                    Tensor::new(vec![3, side, side], data).expect("grid image shape"),
                    Encoding::Pixels,
                )
            }
            Encoding::Symbolic => {
                let mut data = vec![0.0; 3 * n * n];
                data[state.agent[0] * n + state.agent[1]] = 1.0;
                for (k, obj) in state.objects.iter().enumerate() {
                    if let Some(cell) = obj {
                        data[(k + 1) * n * n + cell[0] * n + cell[1]] = 1.0;
                    }
                }
                Observation::new(
                    Tensor::new(vec![3 * n * n], data).expect("grid vector shape"),
                    Encoding::Symbolic,
                )
            }
        }
    }
}

/// Agent cell plus the cell of every object still lying in the room.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridState {
    pub agent: Cell,
    pub objects: Vec<Option<Cell>>,
}

#[derive(Debug, Clone)]
struct Episode {
    state: GridState,
    target: usize,
    delivery: Cell,
    steps: usize,
    done: bool,
}

pub struct GridWorld {
    config: GridConfig,
    episode: Option<Episode>,
}

fn move_cell(cell: Cell, action: usize, size: usize) -> Cell {
    let [r, c] = cell;
    match action {
        0 => [r.saturating_sub(1), c],
        1 => [(r + 1).min(size - 1), c],
        2 => [r, c.saturating_sub(1)],
        _ => [r, (c + 1).min(size - 1)],
    }
}

/// Result of applying one action to an underlying state, ignoring the step cap.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub state: GridState,
    pub reward: f64,
    pub delivered: bool,
}

/// Deterministic room dynamics shared by the environment and the ground-truth enumerator.
pub fn grid_transition(size: usize, state: &GridState, action: usize, target: usize, delivery: Cell) -> Outcome {
    let mut next = state.clone();
    next.agent = move_cell(state.agent, action, size);
    let mut reward = STEP_REWARD;
    for (k, obj) in next.objects.iter_mut().enumerate() {
        if *obj == Some(next.agent) {
            *obj = None;
            reward += if k == target { PICKUP_REWARD } else { WRONG_PICKUP_REWARD };
        }
    }
    let delivered = next.objects[target].is_none() && next.agent == delivery;
    if delivered {
        reward += DELIVERY_REWARD;
    }
    Outcome { state: next, reward, delivered }
}

impl GridWorld {
    pub fn new(config: GridConfig) -> Result<Self> {
        config.validate()?;
        Ok(GridWorld { config, episode: None })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&GridState> {
        self.episode.as_ref().map(|e| &e.state)
    }

    /// Delivery cell and target object of the running episode.
    pub fn goal_cell(&self) -> Option<(Cell, usize)> {
        self.episode.as_ref().map(|e| (e.delivery, e.target))
    }

    fn layout<R: Rng>(&self, rng: &mut R) -> Vec<Cell> {
        let n = self.config.size;
        if self.config.randomize_objects {
            let mut cells: Vec<Cell> = (0..n * n).map(|i| [i / n, i % n]).collect();
            cells.shuffle(rng);
            cells.truncate(self.config.task.num_objects());
            cells
        } else {
            self.config.objects.clone().unwrap_or_else(|| self.config.default_objects())
        }
    }

    /// Goal image: agent on the delivery cell, target object gone, other objects in place.
    pub fn goal_observation(&self, objects: &[Cell], target: usize, delivery: Cell) -> Observation {
        let state = GridState {
            agent: delivery,
            objects: objects
                .iter()
                .enumerate()
                .map(|(k, c)| if k == target { None } else { Some(*c) })
                .collect(),
        };
        self.config.render(&state)
    }

    /// Enumerates every state reachable from any start under the fixed object layout.
    pub fn ground_truth(config: &GridConfig) -> Result<GridGroundTruth> {
        config.validate()?;
        if config.randomize_objects {
            return Err(Error::usage("ground truth needs a fixed object layout"));
        }
        let env = GridWorld::new(config.clone())?;
        let objects = config.objects.clone().unwrap_or_else(|| config.default_objects());
        let n = config.size;
        let corners = config.corners();
        let mut index: HashMap<GridState, usize> = HashMap::new();
        let mut states = Vec::new();
        let mut frontier = Vec::new();
        for i in 0..n * n {
            let cell = [i / n, i % n];
            if objects.contains(&cell) {
                continue;
            }
            let s = GridState { agent: cell, objects: objects.iter().map(|c| Some(*c)).collect() };
            index.insert(s.clone(), states.len());
            states.push(s.clone());
            frontier.push(s);
        }
        while let Some(s) = frontier.pop() {
            for a in 0..4 {
                let out = grid_transition(n, &s, a, 0, [usize::MAX, usize::MAX]);
                if !index.contains_key(&out.state) {
                    index.insert(out.state.clone(), states.len());
                    states.push(out.state.clone());
                    frontier.push(out.state);
                }
            }
        }
        let mut next = Vec::with_capacity(states.len() * 4);
        let mut reward = Vec::with_capacity(states.len() * 4);
        for s in &states {
            // a carrying agent standing on the delivery corner has already ended its episode,
            // so that corner never pairs with this state
            let live: Vec<Cell> =
                corners.iter().copied().filter(|&c| !(s.objects[0].is_none() && s.agent == c)).collect();
            for a in 0..4 {
                let mut expected = 0.0;
                for &corner in &live {
                    expected += grid_transition(n, s, a, 0, corner).reward / live.len() as f64;
                }
                next.push(index[&grid_transition(n, s, a, 0, corners[0]).state]);
                reward.push(expected);
            }
        }
        let observations = states.iter().map(|s| env.config.render(s)).collect();
        Ok(GridGroundTruth { states, observations, next, reward, num_actions: 4 })
    }
}

/// Tabular view of the room under training goals (key target, uniformly random corner).
#[derive(Debug, Clone)]
pub struct GridGroundTruth {
    pub states: Vec<GridState>,
    pub observations: Vec<Observation>,
    /// `next[s * 4 + a]`
    pub next: Vec<usize>,
    /// Expected immediate reward of `(s, a)` over the delivery corners under which `s` is live.
    pub reward: Vec<f64>,
    pub num_actions: usize,
}

impl Environment for GridWorld {
    fn id(&self) -> String {
        let task = match self.config.task {
            GridTask::Single => "single",
            GridTask::Double => "double",
        };
        let enc = match self.config.encoding {
            Encoding::Pixels => "pixels",
            Encoding::Symbolic => "symbolic",
        };
        format!("gridworld-{task}-{n}x{n}-{enc}", n = self.config.size)
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn observation_shape(&self) -> Vec<usize> {
        self.config.observation_shape()
    }

    fn encoding(&self) -> Encoding {
        self.config.encoding
    }

    fn episode_cap(&self) -> usize {
        self.config.max_steps
    }

    fn reset(&mut self, seed: u64) -> Result<(Observation, GoalSpec)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.config.size;
        let objects = self.layout(&mut rng);
        let free: Vec<Cell> =
            (0..n * n).map(|i| [i / n, i % n]).filter(|c| !objects.contains(c)).collect();
        let agent = *free.choose(&mut rng).expect("validated grid has a free cell");
        let target = match self.config.goal_split {
            GoalSplit::Train => 0,
            GoalSplit::Test => rng.gen_range(0..objects.len()),
        };
        let delivery = match (self.config.delivery, self.config.goal_split) {
            (Some(cell), _) => cell,
            (None, GoalSplit::Train) => *self.config.corners().choose(&mut rng).unwrap(),
            (None, GoalSplit::Test) => {
                let i = rng.gen_range(0..n * n);
                [i / n, i % n]
            }
        };
        let state = GridState { agent, objects: objects.iter().map(|c| Some(*c)).collect() };
        let obs = self.config.render(&state);
        let goal = GoalSpec { goal_observation: self.goal_observation(&objects, target, delivery) };
        self.episode = Some(Episode { state, target, delivery, steps: 0, done: false });
        Ok((obs, goal))
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        if action >= 4 {
            return Err(Error::usage(format!("gridworld action {action} out of range 0..4")));
        }
        let size = self.config.size;
        let cap = self.config.max_steps;
        let ep = self
            .episode
            .as_mut()
            .filter(|e| !e.done)
            .ok_or_else(|| Error::usage("gridworld step without an active episode"))?;
        let out = grid_transition(size, &ep.state, action, ep.target, ep.delivery);
        ep.state = out.state;
        ep.steps += 1;
        ep.done = out.delivered || ep.steps >= cap;
        Ok(EnvStep {
            next_observation: self.config.render(&ep.state),
            reward: out.reward,
            done: ep.done,
            info: StepInfo { state: UnderlyingState::Grid(ep.state.clone()), success: out.delivered },
        })
    }

    fn goal_split(&self) -> GoalSplit {
        self.config.goal_split
    }

    fn set_goal_split(&mut self, split: GoalSplit) {
        self.config.goal_split = split;
    }
}
