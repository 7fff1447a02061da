//! The flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use prisma::datagen::DatasetSpec;
use prisma::denoiser::{AttentionMode, DenoiserConfig, GateMode, ResidualLift, SraMode};
use prisma::diffusion::{default_schedule, karras_schedule, ObservationSpec, SigmaSchedule, Task, TrainConfig};
use prisma::field::GrfSpec;
use prisma::pde::{Equation, PdeSpec};
use prisma::{Error, Result};
use sha2::{Digest, Sha256};

/// Whether observed pixels are copied into sampled outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Replace {
    Auto,
    On,
    Off,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub pde: Equation,
    pub resolution: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub levels: usize,
    pub channels: Vec<usize>,
    pub modes: Vec<usize>,
    pub embed_dim: usize,
    pub lr: f64,
    pub warmup_epochs: f64,
    pub epochs: usize,
    pub batch: usize,
    pub dropout: f64,
    pub ema_half_life: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub rbf_scale: f64,
    pub steps_n: usize,
    pub task: Task,
    pub sparsity_q: f64,
    pub noise_fraction: f64,
    pub noise_sigma: f64,
    pub sra_mode: SraMode,
    pub gate_mode: GateMode,
    pub attention_mode: AttentionMode,
    pub residual_lift: ResidualLift,
    pub replace_observed: Replace,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pde: Equation::Poisson,
            resolution: 32,
            n_train: 2048,
            n_test: 256,
            seed: 0,
            levels: 3,
            channels: vec![32, 64, 64],
            modes: vec![12, 8, 4],
            embed_dim: 256,
            lr: 1e-4,
            warmup_epochs: 50.0,
            epochs: 100,
            batch: 32,
            dropout: 0.13,
            ema_half_life: 5.0,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            rbf_scale: 0.05,
            steps_n: 20,
            task: Task::Forward,
            sparsity_q: 0.03,
            noise_fraction: 1.0,
            noise_sigma: 1.0,
            sra_mode: SraMode::Sra,
            gate_mode: GateMode::SkipGate,
            attention_mode: AttentionMode::PhaseAware,
            residual_lift: ResidualLift::Conv,
            replace_observed: Replace::Auto,
        }
    }
}

pub const KEYS: &[&str] = &[
    "pde",
    "resolution",
    "n_train",
    "n_test",
    "seed",
    "levels",
    "channels",
    "modes",
    "embed_dim",
    "lr",
    "warmup_epochs",
    "epochs",
    "batch",
    "dropout",
    "ema_half_life",
    "sigma_min",
    "sigma_max",
    "rho",
    "rbf_scale",
    "steps_N",
    "task",
    "sparsity_q",
    "noise_fraction",
    "noise_sigma",
    "sra_mode",
    "gate_mode",
    "attention_mode",
    "residual_lift",
    "replace_observed",
];

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: {what}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, "not a number"))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown and
    /// repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        let mut levels_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", lineno + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: {key} given twice", lineno + 1)));
            }
            levels_set |= key == "levels";
            cfg.set(key, value)?;
        }
        if !levels_set && seen.contains("channels") {
            cfg.levels = cfg.channels.len();
        }
        cfg.expand_lists();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "pde" => self.pde = Equation::parse(value).map_err(|e| bad(key, value, &e.to_string()))?,
            "resolution" => self.resolution = num(key, value)?,
            "n_train" => self.n_train = num(key, value)?,
            "n_test" => self.n_test = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "levels" => self.levels = num(key, value)?,
            "channels" => self.channels = list(key, value)?,
            "modes" => self.modes = list(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "warmup_epochs" => self.warmup_epochs = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "ema_half_life" => self.ema_half_life = num(key, value)?,
            "sigma_min" => self.sigma_min = num(key, value)?,
            "sigma_max" => self.sigma_max = num(key, value)?,
            "rho" => self.rho = num(key, value)?,
            "rbf_scale" => self.rbf_scale = num(key, value)?,
            "steps_N" => self.steps_n = num(key, value)?,
            "task" => self.task = Task::parse(value)?,
            "sparsity_q" => self.sparsity_q = num(key, value)?,
            "noise_fraction" => self.noise_fraction = num(key, value)?,
            "noise_sigma" => self.noise_sigma = num(key, value)?,
            "sra_mode" => self.sra_mode = SraMode::parse(value)?,
            "gate_mode" => self.gate_mode = GateMode::parse(value)?,
            "attention_mode" => self.attention_mode = AttentionMode::parse(value)?,
            "residual_lift" => self.residual_lift = ResidualLift::parse(value)?,
            "replace_observed" => {
                self.replace_observed = match value {
                    "auto" => Replace::Auto,
                    "true" => Replace::On,
                    "false" => Replace::Off,
                    _ => return Err(bad(key, value, "expected auto, true or false")),
                }
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// A single width or mode count applies to every level.
    fn expand_lists(&mut self) {
        for v in [&mut self.channels, &mut self.modes] {
            if v.len() == 1 && self.levels > 1 {
                *v = vec![v[0]; self.levels];
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != self.levels || self.modes.len() != self.levels {
            return Err(Error::Config(format!(
                "levels = {} but {} channel and {} mode entries",
                self.levels,
                self.channels.len(),
                self.modes.len()
            )));
        }
        self.dataset_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.denoiser_config().validate(Some(self.resolution))?;
        self.train_config().validate()?;
        self.schedule()?;
        if !(self.sparsity_q > 0.0 && self.sparsity_q <= 1.0) {
            return Err(Error::Config(format!("sparsity_q {} outside (0, 1]", self.sparsity_q)));
        }
        if !((0.0..=1.0).contains(&self.noise_fraction) && self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_fraction must lie in [0, 1] and noise_sigma be >= 0".into()));
        }
        Ok(())
    }

    /// Every key in canonical order, one `key = value` per line.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let replace = match self.replace_observed {
            Replace::Auto => "auto",
            Replace::On => "true",
            Replace::Off => "false",
        };
        let values: Vec<String> = vec![
            self.pde.name().into(),
            self.resolution.to_string(),
            self.n_train.to_string(),
            self.n_test.to_string(),
            self.seed.to_string(),
            self.levels.to_string(),
            join(&self.channels),
            join(&self.modes),
            self.embed_dim.to_string(),
            self.lr.to_string(),
            self.warmup_epochs.to_string(),
            self.epochs.to_string(),
            self.batch.to_string(),
            self.dropout.to_string(),
            self.ema_half_life.to_string(),
            self.sigma_min.to_string(),
            self.sigma_max.to_string(),
            self.rho.to_string(),
            self.rbf_scale.to_string(),
            self.steps_n.to_string(),
            self.task.name().into(),
            self.sparsity_q.to_string(),
            self.noise_fraction.to_string(),
            self.noise_sigma.to_string(),
            self.sra_mode.name().into(),
            self.gate_mode.name().into(),
            self.attention_mode.name().into(),
            self.residual_lift.name().into(),
            replace.into(),
        ];
        for (k, v) in KEYS.iter().zip(values) {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn pde_spec(&self) -> PdeSpec {
        PdeSpec::new(self.pde)
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        let mut spec = DatasetSpec::new(self.pde);
        spec.n_train = self.n_train;
        spec.n_test = self.n_test;
        spec.resolution = self.resolution;
        spec.seed = self.seed;
        spec
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            channels: self.channels.clone(),
            modes: self.modes.clone(),
            embed_dim: self.embed_dim,
            dropout: self.dropout,
            sra_mode: self.sra_mode,
            gate_mode: self.gate_mode,
            attention_mode: self.attention_mode,
            residual_lift: self.residual_lift,
        }
    }

    pub fn noise(&self) -> GrfSpec {
        GrfSpec::rbf(self.rbf_scale)
    }

    pub fn observation(&self) -> ObservationSpec {
        ObservationSpec { sparsity: self.sparsity_q, noise_fraction: self.noise_fraction, noise_sigma: self.noise_sigma }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            warmup_epochs: self.warmup_epochs,
            ema_half_life_epochs: self.ema_half_life,
            seed: self.seed,
            noise: self.noise(),
            observation: self.observation(),
            ..TrainConfig::default()
        }
    }

    /// `steps_N` Karras steps; a single step runs `[σ_max, 0]`.
    pub fn schedule(&self) -> Result<SigmaSchedule> {
        self.schedule_with(self.steps_n)
    }

    pub fn schedule_with(&self, steps: usize) -> Result<SigmaSchedule> {
        match steps {
            0 => Err(Error::Config("steps_N must be at least 1".into())),
            1 if self.sigma_max > 0.0 => SigmaSchedule::from_sigmas(vec![self.sigma_max, 0.0]),
            _ if (self.sigma_min, self.sigma_max, self.rho) == (0.002, 80.0, 7.0) => default_schedule(steps),
            _ => karras_schedule(steps, self.sigma_min, self.sigma_max, self.rho),
        }
    }

    pub fn replace_for(&self, task: Task) -> bool {
        match self.replace_observed {
            Replace::Auto => task.replaces_by_default(),
            Replace::On => true,
            Replace::Off => false,
        }
    }
}
