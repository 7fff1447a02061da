use std::time::Instant;

use rayon::prelude::*;

use super::csv_out::{format_sig, CsvTable};
use super::{darcy_error_rate, moments, relative_l2_per_sample};
use crate::datagen::sample_seed;
use crate::diffusion::{default_noise, GateSnapshot, Model, ObservationSpec, SampleOptions, SigmaSchedule, Task};
use crate::error::{Error, Result};
use crate::field::{Field, GrfSpec};
use crate::pde::{guided_residual, Equation};

/// Test samples per sampler call.
pub const EVAL_CHUNK: usize = 8;

const OBSERVATION_TAG: u64 = 0x6f62_7365_7276_6521;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub task: Task,
    pub schedule: SigmaSchedule,
    pub seed: u64,
    /// Overrides the task's default replacement of observed pixels.
    pub replace: Option<bool>,
    pub observation: ObservationSpec,
    /// Covariance of the sampler's starting noise.
    pub noise: GrfSpec,
    /// Residual moments after every sampling step.
    pub moments: bool,
    pub gates: bool,
}

impl EvalOptions {
    pub fn new(task: Task, schedule: SigmaSchedule) -> Self {
        Self {
            task,
            schedule,
            seed: 0,
            replace: None,
            observation: ObservationSpec::default(),
            noise: default_noise(),
            moments: false,
            gates: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub samples: usize,
    pub steps: usize,
    /// Mean relative L2 on the predicted channel (both channels when the
    /// task has no single target).
    pub relative_l2: f64,
    pub per_sample: Vec<f64>,
    /// Binary error rate of the recovered coefficient, Darcy inverse tasks
    /// only.
    pub darcy_error_rate: Option<f64>,
    /// `(skewness, excess kurtosis)` of the guided residual after each step,
    /// pooled over the test set.
    pub residual_moments: Vec<(f64, f64)>,
    /// Mean guidance gate per denoiser call, averaged over the test set.
    pub gates: Vec<GateSnapshot>,
    pub seconds_per_sample: f64,
    /// Denoiser calls per sampler run.
    pub denoiser_calls: usize,
    /// Physical `[a, u]` predictions.
    pub predictions: Field,
    /// Physical states after each step, kept alongside the moments.
    pub trajectory: Vec<Field>,
}

impl EvalReport {
    pub fn summary_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            "task",
            "samples",
            "steps",
            "relative_l2",
            "darcy_error_rate",
            "seconds_per_sample",
            "denoiser_calls",
        ]);
        t.push(vec![
            self.task.name().into(),
            self.samples.to_string(),
            self.steps.to_string(),
            format_sig(self.relative_l2, 6),
            self.darcy_error_rate.map(|v| format_sig(v, 6)).unwrap_or_default(),
            format_sig(self.seconds_per_sample, 6),
            self.denoiser_calls.to_string(),
        ]);
        t
    }

    pub fn moments_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["iteration", "skewness", "excess_kurtosis"]);
        for (i, (s, k)) in self.residual_moments.iter().enumerate() {
            t.push(vec![(i + 1).to_string(), format_sig(*s, 6), format_sig(*k, 6)]);
        }
        t
    }
}

/// Channels scored for `task`.
fn scored(task: Task, f: &Field) -> Field {
    match task.target_channel() {
        Some(c) => f.channel(c),
        None => f.clone(),
    }
}

struct ChunkResult {
    fields: Field,
    states: Vec<Field>,
    residuals: Vec<Vec<f64>>,
    gates: Vec<GateSnapshot>,
    calls: usize,
}

/// Samples every test item of `truth` (physical `[a, u]`) under `opts.task`
/// and scores the predictions.
pub fn evaluate(model: &Model, truth: &Field, opts: &EvalOptions) -> Result<EvalReport> {
    if truth.batch() == 0 {
        return Err(Error::invalid("empty test set"));
    }
    let replace = opts.replace.unwrap_or(opts.task.replaces_by_default());
    let sample_opts = SampleOptions {
        noise: opts.noise.clone(),
        record_states: opts.moments,
        record_gates: opts.gates,
        ..Default::default()
    };
    let chunks: Vec<(usize, usize)> =
        (0..truth.batch()).step_by(EVAL_CHUNK).map(|s| (s, (s + EVAL_CHUNK).min(truth.batch()))).collect();
    let start = Instant::now();
    let results: Vec<ChunkResult> = chunks
        .par_iter()
        .enumerate()
        .map(|(k, &(lo, hi))| {
            let part = Field::stack(&(lo..hi).map(|i| truth.sample(i)).collect::<Vec<_>>())?;
            let (obs, masks) =
                model.observations(opts.task, &part, &opts.observation, sample_seed(opts.seed ^ OBSERVATION_TAG, k as u64))?;
            let sol = model.solve(&obs, &masks, &opts.schedule, sample_seed(opts.seed, k as u64), replace, &sample_opts)?;
            let states =
                sol.trace.states.iter().map(|s| model.normalizer.denormalize(s)).collect::<Result<Vec<_>>>()?;
            let residuals = states
                .iter()
                .map(|x| Ok(guided_residual(x, &obs, &masks, &model.pde)?.into_vec()))
                .collect::<Result<_>>()?;
            Ok(ChunkResult {
                fields: sol.fields,
                states,
                residuals,
                gates: sol.trace.gates,
                calls: sol.trace.denoiser_calls,
            })
        })
        .collect::<Result<_>>()?;
    let seconds = start.elapsed().as_secs_f64();

    let predictions = Field::stack(
        &results.iter().flat_map(|r| (0..r.fields.batch()).map(|i| r.fields.sample(i))).collect::<Vec<_>>(),
    )?;
    let per_sample = relative_l2_per_sample(&scored(opts.task, &predictions), &scored(opts.task, truth))?;
    let darcy = (model.pde.equation == Equation::Darcy && opts.task.target_channel() == Some(0))
        .then(|| darcy_error_rate(&predictions.channel(0), &truth.channel(0)))
        .transpose()?;
    let steps = opts.schedule.steps();
    let trajectory = if opts.moments {
        (0..steps)
            .map(|i| Field::stack(&results.iter().flat_map(|r| (0..r.states[i].batch()).map(move |b| r.states[i].sample(b))).collect::<Vec<_>>()))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let residual_moments = if opts.moments {
        (0..steps)
            .map(|i| {
                let pooled: Vec<f64> = results.iter().flat_map(|r| r.residuals[i].iter().copied()).collect();
                moments(&pooled)
            })
            .collect()
    } else {
        Vec::new()
    };
    let gates = match results.first() {
        Some(first) if !first.gates.is_empty() => (0..first.gates.len())
            .map(|j| {
                let weight: f64 = results.iter().map(|r| r.fields.batch() as f64).sum();
                let mean = results.iter().map(|r| r.gates[j].mean * r.fields.batch() as f64).sum::<f64>() / weight;
                GateSnapshot { sigma: first.gates[j].sigma, mean }
            })
            .collect(),
        _ => Vec::new(),
    };
    Ok(EvalReport {
        task: opts.task,
        samples: truth.batch(),
        steps,
        relative_l2: per_sample.iter().sum::<f64>() / per_sample.len() as f64,
        per_sample,
        darcy_error_rate: darcy,
        residual_moments,
        gates,
        seconds_per_sample: seconds / truth.batch() as f64,
        denoiser_calls: results[0].calls,
        predictions,
        trajectory,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub sigma: f64,
    pub relative_l2: f64,
}

/// Mean relative L2 over a grid of corruption fractions and noise levels.
pub fn noise_sweep(
    model: &Model,
    truth: &Field,
    base: &EvalOptions,
    fractions: &[f64],
    sigmas: &[f64],
) -> Result<Vec<SweepRow>> {
    if !base.task.is_noisy() {
        return Err(Error::invalid(format!("noise sweep needs a noisy task, got {}", base.task.name())));
    }
    let mut rows = Vec::with_capacity(fractions.len() * sigmas.len());
    for &fraction in fractions {
        for &sigma in sigmas {
            let mut opts = base.clone();
            opts.observation.noise_fraction = fraction;
            opts.observation.noise_sigma = sigma;
            opts.moments = false;
            let report = evaluate(model, truth, &opts)?;
            rows.push(SweepRow { fraction, sigma, relative_l2: report.relative_l2 });
        }
    }
    Ok(rows)
}

impl SweepRow {
    pub fn table(task: Task, rows: &[SweepRow]) -> CsvTable {
        let mut t = CsvTable::new(&["task", "fraction", "sigma", "relative_l2"]);
        for r in rows {
            t.push(vec![task.name().into(), format_sig(r.fraction, 6), format_sig(r.sigma, 6), format_sig(r.relative_l2, 6)]);
        }
        t
    }
}
