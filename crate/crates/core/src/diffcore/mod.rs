//! Small reverse-mode numeric core: dense and convolution layers, ReLU, squared-error
//! objectives, Adam, finite-difference gradient checks and JSON checkpoints.
//!
//! Activations are `(batch, features)` matrices. Convolutions reinterpret the feature
//! axis as `(channels, height, width)`, so a dense layer after a conv flattens for free.

mod adam;
mod gradcheck;
mod layer;
mod network;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{
    analytic_gradients, compare_gradients, grad_check, numeric_gradients, relative_error,
    GradCheckReport, DEFAULT_STEP, RELATIVE_ERROR_FLOOR,
};
pub use layer::{Conv2d, Dense, Layer};
pub use network::{
    half_squared_error, mean_squared_error, Gradients, Parameterized, Sequential, Tape, Trace,
};
pub use tensor::Tensor;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "eqplan-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    payload: T,
}

/// Writes any parameter container as versioned JSON. Floats are written in shortest
/// round-trip form, so `load_json` returns bit-identical values.
pub fn save_json<T: Serialize>(path: &Path, payload: &T) -> Result<()> {
    let env = Envelope {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        payload,
    };
    let text = serde_json::to_string(&env)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let env: Envelope<T> = serde_json::from_str(&text).map_err(|e| {
        Error::format(e.column() as u64, format!("{}: {e}", path.display()))
    })?;
    if env.format != CHECKPOINT_FORMAT {
        return Err(Error::format(0, format!("unexpected container format {:?}", env.format)));
    }
    if env.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            0,
            format!("checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})", env.version),
        ));
    }
    Ok(env.payload)
}
