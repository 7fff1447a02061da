//! Noise schedules, GRF perturbation, EDM training and the guided Heun
//! sampler.
//!
//! The diffusion state lives in normalized units: each channel of the
//! training data is shifted and scaled to zero mean and unit variance by a
//! [`Normalizer`]. PDE residuals are always evaluated on de-normalized
//! fields.

mod model;
mod sampler;
mod schedule;
mod tasks;
mod train;

pub use model::{Model, Normalizer};
pub use sampler::{sample, DenoiseFn, GateSnapshot, Guidance, SampleOptions, SampleOutput, Solution};
pub use schedule::{default_schedule, karras_schedule, SigmaSchedule, RHO, SIGMA_MAX, SIGMA_MIN};
pub use tasks::{observe, sample_task_masks, task_masks, ObservationSpec, Task, TaskLaw};
pub use train::{
    draw_sample, edm_loss, loss_gradient_check, prepare_batch, train_step, EpochStats, PreparedBatch, SampleDraw, StepResult, TrainConfig,
    Trainer, CHUNK,
};

use crate::error::{Error, Result};
use crate::field::{sample_grf, Field, GrfSpec};

/// Length scale of the default diffusion noise covariance.
pub const NOISE_LENGTH_SCALE: f64 = 0.05;

/// Periodic RBF field with unit pointwise variance.
pub fn default_noise() -> GrfSpec {
    GrfSpec::rbf(NOISE_LENGTH_SCALE)
}

/// `x_σ = x_0 + σ ε` with `ε` drawn from `grf`; `σ = 0` returns `x_0`.
pub fn perturb(x0: &Field, sigma: f64, grf: &GrfSpec, seed: u64) -> Result<Field> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise level {sigma} must be finite and >= 0")));
    }
    if sigma == 0.0 {
        return Ok(x0.clone());
    }
    let [b, c, n, _] = x0.shape();
    let eps = sample_grf(grf, b, c, n, seed)?;
    x0.zip_map(&eps, |x, e| x + sigma * e)
}
