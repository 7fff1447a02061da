use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::Model;
use super::tasks::{observe, task_masks, ObservationSpec, Task};
use super::schedule::SigmaSchedule;
use super::default_noise;
use crate::datagen::sample_seed;
use crate::denoiser::{Conditioning, Denoiser, ForwardCtx};
use crate::error::{Error, Result};
use crate::field::{sample_grf, Field, GrfSpec};

/// A batched `x̂₀ = D(x; σ, cond)`.
pub trait DenoiseFn {
    fn denoise_at(&self, x: &Field, sigma: f64, cond: &Conditioning, ctx: &mut ForwardCtx) -> Result<Field>;
}

impl DenoiseFn for Denoiser {
    fn denoise_at(&self, x: &Field, sigma: f64, cond: &Conditioning, ctx: &mut ForwardCtx) -> Result<Field> {
        self.denoise_with(x, &vec![sigma; x.batch()], cond, ctx)
    }
}

/// Normalized observations, their masks and the residual they induce on a
/// normalized state.
pub struct Guidance<'m> {
    pub model: &'m Model,
    pub obs: Field,
    pub masks: Field,
}

impl Guidance<'_> {
    pub fn residual(&self, x: &Field) -> Result<Field> {
        self.model.residual(x, &self.obs, &self.masks)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOptions {
    /// Covariance of the initial draw `x_0 ~ σ_0 · GRF`.
    pub noise: GrfSpec,
    /// Unit-scale starting noise `[B,2,n,n]`, used instead of a fresh draw.
    pub initial: Option<Field>,
    pub record_gates: bool,
    /// Keep the state after every step.
    pub record_states: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { noise: default_noise(), initial: None, record_gates: false, record_states: false }
    }
}

/// Mean guidance gate over layers and batch for one denoiser call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateSnapshot {
    pub sigma: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    /// Final normalized state.
    pub state: Field,
    pub denoiser_calls: usize,
    pub residual_calls: usize,
    pub gates: Vec<GateSnapshot>,
    /// Normalized state after each step.
    pub states: Vec<Field>,
}

/// Heun integration of the probability-flow ODE from `σ_0` down to 0.
///
/// Each step evaluates the guided residual at the current state, takes an
/// Euler step, and (unless the next level is 0) corrects with the average
/// of the two slopes, re-evaluating the residual at the predicted state.
/// Batch item `b` starts from a GRF draw seeded by `sample_seed(seed, b)`
/// unless `opts.initial` supplies the noise.
pub fn sample<D: DenoiseFn>(
    den: &D,
    guide: &Guidance,
    schedule: &SigmaSchedule,
    seed: u64,
    opts: &SampleOptions,
) -> Result<SampleOutput> {
    let [b, c, n, _] = guide.obs.shape();
    if c != 2 {
        return Err(Error::shape(format!("observations must have channels [a, u], got {c}")));
    }
    let s = schedule.sigmas();
    let mut x = match &opts.initial {
        Some(z) if z.shape() != guide.obs.shape() => {
            return Err(Error::shape(format!(
                "initial noise {:?} does not match observations {:?}",
                z.shape(),
                guide.obs.shape()
            )))
        }
        Some(z) => z.scale(s[0]),
        None => {
            let draws = (0..b)
                .map(|i| sample_grf(&opts.noise, 1, 2, n, sample_seed(seed, i as u64)))
                .collect::<Result<Vec<_>>>()?;
            Field::stack(&draws)?.scale(s[0])
        }
    };
    let mut out = SampleOutput {
        state: Field::zeros(b, 2, n)?,
        denoiser_calls: 0,
        residual_calls: 0,
        gates: Vec::new(),
        states: Vec::new(),
    };
    let eval = |x: &Field, sigma: f64, out: &mut SampleOutput| -> Result<Field> {
        if sigma <= 0.0 {
            return Err(Error::Schedule(format!("denoiser called at level {sigma}")));
        }
        let cond = Conditioning { obs: guide.obs.clone(), masks: guide.masks.clone(), residual: guide.residual(x)? };
        out.residual_calls += 1;
        let mut ctx = if opts.record_gates { ForwardCtx::recording() } else { ForwardCtx::default() };
        let x0 = den.denoise_at(x, sigma, &cond, &mut ctx)?;
        out.denoiser_calls += 1;
        if let Some(records) = ctx.gates.filter(|r| !r.is_empty()) {
            let all: Vec<f64> = records.iter().flat_map(|r| r.gate.iter().copied()).collect();
            out.gates.push(GateSnapshot { sigma, mean: all.iter().sum::<f64>() / all.len() as f64 });
        }
        if !x0.is_finite() {
            return Err(Error::Numerical(format!("denoiser output is not finite at level {sigma}")));
        }
        Ok(x0)
    };
    for i in 0..schedule.steps() {
        let (sigma, next) = (s[i], s[i + 1]);
        let x0 = eval(&x, sigma, &mut out)?;
        if next == 0.0 {
            // the Euler step to zero lands exactly on the estimate
            x = x0;
            if opts.record_states {
                out.states.push(x.clone());
            }
            continue;
        }
        let d = x.zip_map(&x0, |xv, dv| (xv - dv) / sigma)?;
        let pred = x.zip_map(&d, |xv, dv| xv + (next - sigma) * dv)?;
        x = {
            let x0p = eval(&pred, next, &mut out)?;
            let dp = pred.zip_map(&x0p, |xv, dv| (xv - dv) / next)?;
            let slope = d.zip_map(&dp, |a, b| 0.5 * (a + b))?;
            x.zip_map(&slope, |xv, sv| xv + (next - sigma) * sv)?
        };
        if opts.record_states {
            out.states.push(x.clone());
        }
    }
    out.state = x;
    Ok(out)
}

/// A physical-space prediction and the sampler trace behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub fields: Field,
    pub trace: SampleOutput,
}

impl Model {
    /// Samples `[a, u]` given physical observations. With `replace`, observed
    /// pixels of the output are set to the observations.
    pub fn solve(
        &self,
        obs: &Field,
        masks: &Field,
        schedule: &SigmaSchedule,
        seed: u64,
        replace: bool,
        opts: &SampleOptions,
    ) -> Result<Solution> {
        obs.require_same_shape(masks, "observations and masks")?;
        let obs_norm = self.normalizer.normalize(obs)?.zip_map(masks, |v, m| v * m)?;
        let guide = Guidance { model: self, obs: obs_norm, masks: masks.clone() };
        let trace = sample(&self.denoiser, &guide, schedule, seed, opts)?;
        let mut fields = self.normalizer.denormalize(&trace.state)?;
        if replace {
            for ((v, o), m) in fields.data_mut().iter_mut().zip(obs.data()).zip(masks.data()) {
                if *m == 1.0 {
                    *v = *o;
                }
            }
        }
        Ok(Solution { fields, trace })
    }
}

impl Model {
    /// Physical observations of `truth` and their masks for `task`.
    ///
    /// Noisy tasks corrupt in normalized units, so `noise_sigma = 1` is one
    /// data standard deviation.
    pub fn observations(&self, task: Task, truth: &Field, spec: &ObservationSpec, seed: u64) -> Result<(Field, Field)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masks = task_masks(task, spec.sparsity, truth.batch(), truth.size(), &mut rng)?;
        let norm = self.normalizer.normalize(truth)?;
        let obs = observe(task, &norm, &masks, spec, &mut rng)?;
        let obs = self.normalizer.denormalize(&obs)?.zip_map(&masks, |v, m| v * m)?;
        Ok((obs, masks))
    }
}
