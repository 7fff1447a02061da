use rand::Rng;

use crate::datagen::{corrupt_with, mask_with};
use crate::error::{Error, Result};
use crate::field::Field;

named_enum!(
    /// What is observed: nothing, all or a sparse subset of one or both
    /// channels, or a noise-corrupted channel.
    Task {
        Unconditional => "uncond" = 0,
        Forward => "forward" = 1,
        Inverse => "inverse" = 2,
        SparseForward => "sparse_forward" = 3,
        SparseInverse => "sparse_inverse" = 4,
        SparseBoth => "sparse_both" = 5,
        NoisyForward => "noisy_forward" = 6,
        NoisyInverse => "noisy_inverse" = 7,
    }
);

impl Task {
    /// Whether `(a, u)` are observed.
    pub fn observed(self) -> (bool, bool) {
        match self {
            Task::Unconditional => (false, false),
            Task::Forward | Task::SparseForward | Task::NoisyForward => (true, false),
            Task::Inverse | Task::SparseInverse | Task::NoisyInverse => (false, true),
            Task::SparseBoth => (true, true),
        }
    }

    pub fn is_sparse(self) -> bool {
        matches!(self, Task::SparseForward | Task::SparseInverse | Task::SparseBoth)
    }

    pub fn is_noisy(self) -> bool {
        matches!(self, Task::NoisyForward | Task::NoisyInverse)
    }

    /// The channel being predicted, if the task has a single target.
    pub fn target_channel(self) -> Option<usize> {
        match self.observed() {
            (true, false) => Some(1),
            (false, true) => Some(0),
            _ => None,
        }
    }

    /// Observed pixels are copied into the final output unless the
    /// observations are corrupted.
    pub fn replaces_by_default(self) -> bool {
        !self.is_noisy() && self != Task::Unconditional
    }
}

/// Sparse observation fraction `q` and the corruption applied by noisy
/// tasks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservationSpec {
    pub sparsity: f64,
    pub noise_fraction: f64,
    pub noise_sigma: f64,
}

impl Default for ObservationSpec {
    fn default() -> Self {
        Self { sparsity: 0.03, noise_fraction: 1.0, noise_sigma: 1.0 }
    }
}

/// `[batch, 2, n, n]` masks for `task`. Sparse tasks draw `round(q·n²)`
/// pixels per plane, independently for each observed channel.
pub fn task_masks(task: Task, sparsity: f64, batch: usize, size: usize, rng: &mut impl Rng) -> Result<Field> {
    let (obs_a, obs_u) = task.observed();
    let mut planes = Vec::with_capacity(2);
    for observed in [obs_a, obs_u] {
        planes.push(match (observed, task.is_sparse()) {
            (false, _) => Field::zeros(batch, 1, size)?,
            (true, false) => Field::constant(batch, 1, size, 1.0)?,
            (true, true) => mask_with(sparsity, batch, 1, size, rng)?,
        });
    }
    Field::concat_channels(&[&planes[0], &planes[1]])
}

/// Observations of `truth` under `masks`: the masked truth, corrupted first
/// for noisy tasks. Unobserved entries are zero.
pub fn observe(task: Task, truth: &Field, masks: &Field, spec: &ObservationSpec, rng: &mut impl Rng) -> Result<Field> {
    let source = if task.is_noisy() {
        corrupt_with(truth, spec.noise_fraction, spec.noise_sigma, rng)?
    } else {
        truth.clone()
    };
    source.zip_map(masks, |v, m| v * m)
}

/// A distribution over tasks with `q ~ U[q_range]` for sparse draws.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskLaw {
    pub tasks: Vec<(Task, f64)>,
    pub q_range: (f64, f64),
}

impl Default for TaskLaw {
    /// Uniform over the unconditional, full and sparse tasks.
    fn default() -> Self {
        let tasks = [
            Task::Unconditional,
            Task::Forward,
            Task::Inverse,
            Task::SparseForward,
            Task::SparseInverse,
            Task::SparseBoth,
        ];
        Self::uniform(&tasks)
    }
}

impl TaskLaw {
    pub fn uniform(tasks: &[Task]) -> Self {
        let p = 1.0 / tasks.len() as f64;
        Self { tasks: tasks.iter().map(|&t| (t, p)).collect(), q_range: (0.01, 0.10) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("task law is empty".into()));
        }
        if self.tasks.iter().any(|(_, p)| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("task probabilities must be non-negative".into()));
        }
        let total: f64 = self.tasks.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("task probabilities sum to {total}, not 1")));
        }
        let (lo, hi) = self.q_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("sparsity range ({lo}, {hi}) must lie in (0, 1]")));
        }
        Ok(())
    }

    pub fn draw(&self, rng: &mut impl Rng) -> (Task, f64) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut task = self.tasks[self.tasks.len() - 1].0;
        for &(t, p) in &self.tasks {
            acc += p;
            if u < acc {
                task = t;
                break;
            }
        }
        let (lo, hi) = self.q_range;
        let q = if hi > lo { rng.random_range(lo..hi) } else { lo };
        (task, q)
    }
}

/// Draws a task from `law` and its `[1, 2, n, n]` masks.
pub fn sample_task_masks(law: &TaskLaw, size: usize, rng: &mut impl Rng) -> Result<(Task, Field)> {
    law.validate()?;
    let (task, q) = law.draw(rng);
    Ok((task, task_masks(task, q, 1, size, rng)?))
}
