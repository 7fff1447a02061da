use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::model::{Model, Normalizer};
use super::tasks::{observe, task_masks, ObservationSpec, Task, TaskLaw};
use super::default_noise;
use crate::autodiff::check::{check_gradients, CheckOptions, CheckReport};
use crate::autodiff::{adam_step, ema_decay, ema_update, AdamConfig, AdamState, Graph, ParamKind, ParamStore, Tape, Tensor, Var};
use crate::datagen::{sample_seed, Dataset};
use crate::denoiser::{loss_weight, Checkpoint, Conditioning, Denoiser, DenoiserConfig, ForwardCtx, ParamVars, SIGMA_RANGE};
use crate::error::{Error, Result};
use crate::field::{sample_grf_with, Field, GrfSpec};
use crate::pde::PdeSpec;

/// Samples per tape. Gradients of a batch are summed over chunks in a
/// fixed order, so results do not depend on the thread count.
pub const CHUNK: usize = 4;

const CALIBRATION_TAG: u64 = 0x6361_6c69_6272_6174;
const SHUFFLE_TAG: u64 = 0x7368_7566_666c_6521;
const DROPOUT_TAG: u64 = 0x6472_6f70_6f75_7421;
const CALIBRATION_SAMPLES: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup_epochs: f64,
    pub ema_half_life_epochs: f64,
    pub seed: u64,
    /// `ln σ ~ N(p_mean, p_std²)`.
    pub p_mean: f64,
    pub p_std: f64,
    pub noise: GrfSpec,
    pub law: TaskLaw,
    pub observation: ObservationSpec,
    /// Per-step decay of the running residual scale.
    pub residual_decay: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 32,
            lr: 1e-4,
            warmup_epochs: 50.0,
            ema_half_life_epochs: 5.0,
            seed: 0,
            p_mean: -1.2,
            p_std: 1.2,
            noise: default_noise(),
            law: TaskLaw::default(),
            observation: ObservationSpec::default(),
            residual_decay: 0.99,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.warmup_epochs >= 0.0 && self.ema_half_life_epochs > 0.0) {
            return Err(Error::Config("warmup must be >= 0 and the EMA half-life positive".into()));
        }
        if !(self.p_std >= 0.0 && self.p_mean.is_finite()) {
            return Err(Error::Config("noise-level law must have finite mean and std >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.residual_decay) {
            return Err(Error::Config(format!("residual decay {} outside [0, 1)", self.residual_decay)));
        }
        self.noise.validate()?;
        self.law.validate()
    }
}

/// One training example's randomness, a pure function of its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleDraw {
    pub sigma: f64,
    pub task: Task,
    pub masks: Field,
    pub obs: Field,
    pub x_noisy: Field,
}

/// Draws `σ`, a task with its masks and observations, and the noisy state
/// for one normalized `[1, 2, n, n]` sample.
pub fn draw_sample(cfg: &TrainConfig, x0: &Field, seed: u64) -> Result<SampleDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: f64 = rng.sample(StandardNormal);
    let sigma = (cfg.p_mean + cfg.p_std * z).exp().clamp(SIGMA_RANGE.0, SIGMA_RANGE.1);
    let (task, q) = cfg.law.draw(&mut rng);
    let n = x0.size();
    let masks = task_masks(task, q, 1, n, &mut rng)?;
    let obs = observe(task, x0, &masks, &cfg.observation, &mut rng)?;
    let eps = sample_grf_with(&cfg.noise, 1, 2, n, &mut rng)?;
    let x_noisy = x0.zip_map(&eps, |x, e| x + sigma * e)?;
    Ok(SampleDraw { sigma, task, masks, obs, x_noisy })
}

/// Everything the loss needs for a batch, with residuals already computed.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedBatch {
    pub x0: Field,
    pub x_noisy: Field,
    pub sigma: Vec<f64>,
    pub tasks: Vec<Task>,
    pub cond: Conditioning,
}

fn rows(f: &Field, r: Range<usize>) -> Result<Field> {
    Field::stack(&r.map(|i| f.sample(i)).collect::<Vec<_>>())
}

impl PreparedBatch {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    fn slice(&self, r: Range<usize>) -> Result<Self> {
        Ok(Self {
            x0: rows(&self.x0, r.clone())?,
            x_noisy: rows(&self.x_noisy, r.clone())?,
            sigma: self.sigma[r.clone()].to_vec(),
            tasks: self.tasks[r.clone()].to_vec(),
            cond: Conditioning {
                obs: rows(&self.cond.obs, r.clone())?,
                masks: rows(&self.cond.masks, r.clone())?,
                residual: rows(&self.cond.residual, r)?,
            },
        })
    }

    /// RMS of the raw residual over the batch.
    pub fn residual_rms(&self) -> f64 {
        let d = self.cond.residual.data();
        (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt()
    }
}

/// Draws per-sample noise, tasks and residuals for normalized `x0`, one
/// seed per sample.
pub fn prepare_batch(model: &Model, x0: &Field, seeds: &[u64], cfg: &TrainConfig) -> Result<PreparedBatch> {
    if seeds.len() != x0.batch() {
        return Err(Error::shape(format!("{} seeds for a batch of {}", seeds.len(), x0.batch())));
    }
    let items: Vec<(SampleDraw, Field)> = (0..x0.batch())
        .into_par_iter()
        .map(|i| {
            let d = draw_sample(cfg, &x0.sample(i), seeds[i])?;
            let r = model.residual(&d.x_noisy, &d.obs, &d.masks)?;
            Ok((d, r))
        })
        .collect::<Result<_>>()?;
    let stack = |f: &dyn Fn(&(SampleDraw, Field)) -> Field| Field::stack(&items.iter().map(f).collect::<Vec<_>>());
    Ok(PreparedBatch {
        x0: x0.clone(),
        x_noisy: stack(&|(d, _)| d.x_noisy.clone())?,
        sigma: items.iter().map(|(d, _)| d.sigma).collect(),
        tasks: items.iter().map(|(d, _)| d.task).collect(),
        cond: Conditioning {
            obs: stack(&|(d, _)| d.obs.clone())?,
            masks: stack(&|(d, _)| d.masks.clone())?,
            residual: stack(&|(_, r)| r.clone())?,
        },
    })
}

/// `Σ_i λ(σ_i) mean((D(x_σ,i) − x_0,i)²) / total`, with the per-sample
/// weighted errors `[B,1,1,1]` as the second output.
pub fn edm_loss<'a>(
    g: &mut dyn Graph<'a>,
    den: &Denoiser,
    vars: &ParamVars,
    batch: &PreparedBatch,
    total: usize,
    ctx: &mut ForwardCtx,
) -> Result<(Var, Var)> {
    let b = batch.len();
    let d = den.forward(g, vars, &batch.x_noisy, &batch.sigma, &batch.cond, ctx)?;
    let x0 = g.constant(Tensor::from_field(&batch.x0));
    let diff = g.sub(d, x0)?;
    let sq = g.square(diff);
    let per = g.mean_axes(sq, &[1, 2, 3])?;
    let w: Vec<f64> = batch.sigma.iter().map(|&s| loss_weight(s, den.sigma_data)).collect();
    let w = g.constant(Tensor::new(vec![b, 1, 1, 1], w)?);
    let weighted = g.mul(per, w)?;
    let sum = g.sum_all(weighted);
    Ok((g.scale(sum, 1.0 / total as f64), weighted))
}

/// Central-difference check of the loss gradient with respect to every
/// parameter of `model` on a fixed batch, dropout off.
pub fn loss_gradient_check(model: &Model, batch: &PreparedBatch, opts: &CheckOptions) -> Result<CheckReport> {
    let den = &model.denoiser;
    let names: Vec<String> = den.params.names().map(String::from).collect();
    let inputs: Vec<Tensor> = den.params.iter().map(|(_, t)| t.clone()).collect();
    check_gradients(&inputs, opts, |g, vars| {
        let pv = ParamVars::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
        let (loss, _) = edm_loss(g, den, &pv, batch, batch.len(), &mut ForwardCtx::default())?;
        Ok(loss)
    })
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub loss: f64,
    /// `λ(σ_i) mean((D − x_0)²)` per sample.
    pub per_sample: Vec<f64>,
    pub grads: BTreeMap<String, Tensor>,
    pub residual_rms: f64,
}

/// Loss and gradients on normalized `x0` with one seed per sample.
/// Dropout masks derive from `dropout_seed`. A non-finite per-sample loss
/// fails with that sample's batch position.
pub fn train_step(model: &Model, x0: &Field, seeds: &[u64], cfg: &TrainConfig, dropout_seed: u64) -> Result<StepResult> {
    let batch = prepare_batch(model, x0, seeds, cfg)?;
    let b = batch.len();
    let den = &model.denoiser;
    let chunks: Vec<Range<usize>> = (0..b).step_by(CHUNK).map(|s| s..(s + CHUNK).min(b)).collect();
    let parts: Vec<(f64, Vec<f64>, BTreeMap<String, Tensor>)> = chunks
        .par_iter()
        .enumerate()
        .map(|(ci, r)| {
            let sub = batch.slice(r.clone())?;
            let mut ctx = if den.config.dropout > 0.0 {
                ForwardCtx::training(ChaCha8Rng::seed_from_u64(sample_seed(dropout_seed ^ DROPOUT_TAG, ci as u64)))
            } else {
                ForwardCtx::default()
            };
            let mut tape = Tape::new();
            let vars = ParamVars::bind(&mut tape, &den.params);
            let (loss, per) = edm_loss(&mut tape, den, &vars, &sub, b, &mut ctx)?;
            let value = tape.value(loss).item();
            let per = tape.value(per).data().to_vec();
            if let Some(i) = per.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { index: r.start + i });
            }
            Ok((value, per, tape.backward(loss)?.into_named()))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut per_sample = Vec::with_capacity(b);
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    for (l, per, g) in parts {
        loss += l;
        per_sample.extend(per);
        for (name, t) in g {
            match grads.get_mut(&name) {
                Some(acc) => acc.add_assign(&t),
                None => {
                    grads.insert(name, t);
                }
            }
        }
    }
    Ok(StepResult { loss, per_sample, grads, residual_rms: batch.residual_rms() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

/// Adam with linear warmup, an EMA of the parameters and a running
/// residual scale.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub ema: ParamStore,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub epoch: usize,
    pub step: u64,
    data: Field,
}

impl Trainer {
    /// Fits the normalizer to `data`, initializes parameters from
    /// `config.seed` and calibrates the residual scale.
    pub fn new(den_config: DenoiserConfig, pde: PdeSpec, data: &Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        den_config.validate(Some(data.size()))?;
        let normalizer = Normalizer::fit(&data.fields)?;
        let norm = normalizer.normalize(&data.fields)?;
        let mut denoiser = Denoiser::new(den_config, config.seed)?;
        let d = norm.data();
        denoiser.sigma_data = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
        let mut model = Model { denoiser, normalizer, pde, resolution: data.size() };
        let count = data.len().min(CALIBRATION_SAMPLES);
        let seeds: Vec<u64> = (0..count as u64).map(|i| sample_seed(config.seed ^ CALIBRATION_TAG, i)).collect();
        let probe = prepare_batch(&model, &rows(&norm, 0..count)?, &seeds, &config)?;
        let rms = probe.residual_rms();
        if rms > 0.0 && rms.is_finite() {
            model.denoiser.residual_scale = rms;
        }
        let ema = model.denoiser.params.clone();
        Ok(Self { model, ema, adam: AdamState::default(), config, epoch: 0, step: 0, data: norm })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.data.batch().div_ceil(self.config.batch)
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let warmup = self.config.warmup_epochs * self.steps_per_epoch() as f64;
        if warmup <= 0.0 {
            self.config.lr
        } else {
            self.config.lr * ((step + 1) as f64 / warmup).min(1.0)
        }
    }

    /// The sample order of an epoch.
    pub fn permutation(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.batch()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(self.config.seed ^ SHUFFLE_TAG, epoch as u64)));
        order
    }

    /// Per-sample seeds of the next step for dataset indices `indices`.
    pub fn step_seeds(&self, indices: &[usize]) -> Vec<u64> {
        let step_seed = sample_seed(self.config.seed, self.step);
        indices.iter().map(|&i| sample_seed(step_seed, i as u64)).collect()
    }

    /// Loss and gradients the next step would use for `indices`, without
    /// updating anything.
    pub fn evaluate_step(&self, indices: &[usize]) -> Result<StepResult> {
        let x0 = rows_at(&self.data, indices)?;
        let seeds = self.step_seeds(indices);
        train_step(&self.model, &x0, &seeds, &self.config, sample_seed(self.config.seed, self.step))
            .map_err(|e| match e {
                Error::NonFiniteLoss { index } => Error::NonFiniteLoss { index: indices[index] },
                other => other,
            })
    }

    /// One optimizer step on `indices`. Returns the batch loss.
    pub fn step_on(&mut self, indices: &[usize]) -> Result<f64> {
        let res = self.evaluate_step(indices)?;
        let lr = self.lr_at(self.step);
        adam_step(&mut self.model.denoiser.params, &res.grads, &mut self.adam, lr, &self.config.adam)?;
        let decay = ema_decay(self.config.ema_half_life_epochs, self.steps_per_epoch())?;
        ema_update(&mut self.ema, &self.model.denoiser.params, decay)?;
        if res.residual_rms > 0.0 && res.residual_rms.is_finite() {
            let d = self.config.residual_decay;
            let scale = &mut self.model.denoiser.residual_scale;
            *scale = d * *scale + (1.0 - d) * res.residual_rms;
        }
        if !self.model.denoiser.params.is_finite() {
            return Err(Error::Numerical(format!("parameters diverged at step {}", self.step)));
        }
        self.step += 1;
        Ok(res.loss)
    }

    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let order = self.permutation(self.epoch);
        let lr = self.lr_at(self.step);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(self.config.batch) {
            total += self.step_on(idx)?;
            batches += 1;
        }
        let stats = EpochStats { epoch: self.epoch, mean_loss: total / batches as f64, lr };
        self.epoch += 1;
        Ok(stats)
    }

    /// The model with EMA parameters.
    pub fn ema_model(&self) -> Model {
        let mut m = self.model.clone();
        m.denoiser.params = self.ema.clone();
        m
    }

    /// Model, EMA shadow (`ema.`), Adam moments (`adam.m.`, `adam.v.`) and
    /// `meta.train = [step, epoch, adam step]`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.insert_params("ema.", &self.ema);
        for (prefix, moments) in [("adam.m.", &self.adam.m), ("adam.v.", &self.adam.v)] {
            let store = moment_store(&self.model.denoiser.params, moments);
            ck.insert_params(prefix, &store);
        }
        ck.insert_scalars("meta.train", &[self.step as f64, self.epoch as f64, self.adam.step as f64]);
        ck
    }

    /// Continues a run saved by [`Trainer::to_checkpoint`] on the same
    /// (physical) data.
    pub fn resume(ck: &Checkpoint, data: &Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::from_checkpoint(ck)?;
        if data.size() != model.resolution {
            return Err(Error::invalid(format!(
                "data resolution {} does not match the checkpoint's {}",
                data.size(),
                model.resolution
            )));
        }
        let template = &model.denoiser.params;
        let ema = ck.params_like("ema.", template)?;
        let m = ck.params_like("adam.m.", template)?;
        let v = ck.params_like("adam.v.", template)?;
        let &[step, epoch, adam_step] = ck.scalars("meta.train")? else {
            return Err(Error::Malformed("meta.train must hold 3 values".into()));
        };
        let adam = AdamState {
            step: adam_step as u64,
            m: m.iter().map(|(k, t)| (k.clone(), t.clone())).collect(),
            v: v.iter().map(|(k, t)| (k.clone(), t.clone())).collect(),
        };
        let norm = model.normalizer.normalize(&data.fields)?;
        Ok(Self { model, ema, adam, config, epoch: epoch as usize, step: step as u64, data: norm })
    }
}

fn rows_at(f: &Field, indices: &[usize]) -> Result<Field> {
    if let Some(&i) = indices.iter().find(|&&i| i >= f.batch()) {
        return Err(Error::invalid(format!("sample {i} out of range for {} samples", f.batch())));
    }
    Field::stack(&indices.iter().map(|&i| f.sample(i)).collect::<Vec<_>>())
}

fn moment_store(params: &ParamStore, moments: &BTreeMap<String, Tensor>) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, t) in params.iter() {
        let value = moments.get(name).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        out.insert(name.clone(), value, params.kind(name).unwrap_or(ParamKind::Real));
    }
    out
}
