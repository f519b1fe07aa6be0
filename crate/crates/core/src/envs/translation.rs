use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::idx::{idx_load, ImageSet};
use super::{
    Encoding, EnvStep, Environment, GoalSpec, GoalSplit, Observation, StepInfo, UnderlyingState,
};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Offsets live in `[-MAX_OFFSET, MAX_OFFSET]²`, a 7×7 grid.
pub const MAX_OFFSET: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ImageSource {
    /// Procedurally drawn greyscale sprites, no files needed.
    Synthetic { count: usize, size: usize, seed: u64 },
    /// An IDX image file such as the Fashion-MNIST training images.
    Idx { path: PathBuf, limit: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslationConfig {
    pub images: ImageSource,
    /// The last `test_images` images form the held-out image split.
    pub test_images: usize,
    /// Use held-out images instead of training images.
    pub held_out_images: bool,
    /// Pixels moved per unit of offset.
    pub step_px: usize,
    pub max_steps: usize,
    pub goal_split: GoalSplit,
}

impl Default for TranslationConfig {
    fn default() -> Self {
        TranslationConfig {
            images: ImageSource::Synthetic { count: 12, size: 8, seed: 0 },
            test_images: 2,
            held_out_images: false,
            step_px: 2,
            max_steps: 100,
            goal_split: GoalSplit::Train,
        }
    }
}

/// Deterministic sprite set: each image is a few overlapping rectangles of random intensity.
pub fn synthetic_sprites(count: usize, size: usize, seed: u64) -> ImageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = (0..count)
        .map(|_| {
            let mut img = vec![0.0; size * size];
            let blobs = rng.gen_range(2..=3);
            for _ in 0..blobs {
                let h = rng.gen_range(1..=size.div_ceil(2).max(1));
                let w = rng.gen_range(1..=size.div_ceil(2).max(1));
                let r0 = rng.gen_range(0..=size - h);
                let c0 = rng.gen_range(0..=size - w);
                let level = f64::from(rng.gen_range(128u8..=255)) / 255.0;
                for r in r0..r0 + h {
                    for c in c0..c0 + w {
                        img[r * size + c] = level;
                    }
                }
            }
            img
        })
        .collect();
    ImageSet { rows: size, cols: size, images }
}

#[derive(Debug, Clone)]
struct Episode {
    image: usize,
    offset: (i32, i32),
    goal: (i32, i32),
    steps: usize,
    done: bool,
}

pub struct Translation {
    config: TranslationConfig,
    images: ImageSet,
    episode: Option<Episode>,
}

impl Translation {
    pub fn new(config: TranslationConfig) -> Result<Self> {
        let images = match &config.images {
            ImageSource::Synthetic { count, size, seed } => {
                if *size == 0 {
                    return Err(Error::config("sprite size must be positive"));
                }
                synthetic_sprites(*count, *size, *seed)
            }
            ImageSource::Idx { path, limit } => {
                let mut set = idx_load(path)?;
                if let Some(n) = limit {
                    set.images.truncate(*n);
                }
                set
            }
        };
        Self::with_images(config, images)
    }

    pub fn with_images(config: TranslationConfig, images: ImageSet) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::format(0, "translation task needs at least one image"));
        }
        if config.test_images >= images.len() && !config.held_out_images {
            return Err(Error::config("test_images leaves no training images"));
        }
        if config.held_out_images && config.test_images == 0 {
            return Err(Error::config("held-out image split is empty"));
        }
        if config.step_px == 0 || config.max_steps == 0 {
            return Err(Error::config("step_px and max_steps must be positive"));
        }
        Ok(Translation { config, images, episode: None })
    }

    fn canvas(&self) -> (usize, usize) {
        let pad = 2 * MAX_OFFSET as usize * self.config.step_px;
        (self.images.rows + pad, self.images.cols + pad)
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    /// Image `index` shifted by `offset = (dx, dy)` units on the padded canvas.
    pub fn render(&self, index: usize, offset: (i32, i32)) -> Observation {
        let (h, w) = self.canvas();
        let step = self.config.step_px as i32;
        let top = (MAX_OFFSET * step + offset.1 * step) as usize;
        let left = (MAX_OFFSET * step + offset.0 * step) as usize;
        let img = &self.images.images[index];
        let mut data = vec![0.0; h * w];
        for r in 0..self.images.rows {
            let src = &img[r * self.images.cols..(r + 1) * self.images.cols];
            data[(top + r) * w + left..(top + r) * w + left + self.images.cols].copy_from_slice(src);
        }
        Observation::new(Tensor::new(vec![1, h, w], data).expect("canvas shape"), Encoding::Pixels)
    }

    fn split_range(&self) -> std::ops::Range<usize> {
        let n = self.images.len();
        let cut = n - self.config.test_images.min(n);
        if self.config.held_out_images {
            cut..n
        } else {
            0..cut
        }
    }

    pub fn offset(&self) -> Option<(i32, i32)> {
        self.episode.as_ref().map(|e| e.offset)
    }

    pub fn goal_offset(&self) -> Option<(i32, i32)> {
        self.episode.as_ref().map(|e| e.goal)
    }
}

impl Environment for Translation {
    fn id(&self) -> String {
        let source = match self.config.images {
            ImageSource::Synthetic { .. } => "sprites",
            ImageSource::Idx { .. } => "idx",
        };
        format!("translation-{source}")
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn observation_shape(&self) -> Vec<usize> {
        let (h, w) = self.canvas();
        vec![1, h, w]
    }

    fn encoding(&self) -> Encoding {
        Encoding::Pixels
    }

    fn episode_cap(&self) -> usize {
        self.config.max_steps
    }

    fn reset(&mut self, seed: u64) -> Result<(Observation, GoalSpec)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = rng.gen_range(self.split_range());
        let gx = match self.config.goal_split {
            GoalSplit::Train => rng.gen_range(-MAX_OFFSET..=-1),
            GoalSplit::Test => rng.gen_range(1..=MAX_OFFSET),
        };
        let gy = rng.gen_range(-MAX_OFFSET..=MAX_OFFSET);
        let goal = GoalSpec { goal_observation: self.render(image, (gx, gy)) };
        self.episode = Some(Episode { image, offset: (0, 0), goal: (gx, gy), steps: 0, done: false });
        Ok((self.render(image, (0, 0)), goal))
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        if action >= 4 {
            return Err(Error::usage(format!("translation action {action} out of range 0..4")));
        }
        let cap = self.config.max_steps;
        let ep = self
            .episode
            .as_mut()
            .filter(|e| !e.done)
            .ok_or_else(|| Error::usage("translation step without an active episode"))?;
        let (dx, dy) = match action {
            0 => (0, -1),
            1 => (0, 1),
            2 => (-1, 0),
            _ => (1, 0),
        };
        ep.offset = (
            (ep.offset.0 + dx).clamp(-MAX_OFFSET, MAX_OFFSET),
            (ep.offset.1 + dy).clamp(-MAX_OFFSET, MAX_OFFSET),
        );
        ep.steps += 1;
        let reached = ep.offset == ep.goal;
        ep.done = reached || ep.steps >= cap;
        let (image, offset, done) = (ep.image, ep.offset, ep.done);
        Ok(EnvStep {
            next_observation: self.render(image, offset),
            reward: if reached { 1.0 } else { 0.0 },
            done,
            info: StepInfo { state: UnderlyingState::Translation { image, offset }, success: reached },
        })
    }

    fn goal_split(&self) -> GoalSplit {
        self.config.goal_split
    }

    fn set_goal_split(&mut self, split: GoalSplit) {
        self.config.goal_split = split;
    }
}
