//! Command-line entry points: data generation, training, sampling and
//! evaluation.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use prisma::autodiff::check::CheckOptions;
use prisma::datagen::{read_dataset, sample_seed, write_dataset, Dataset, Dtype, Split};
use prisma::denoiser::{decode_checkpoint, encode_checkpoint, read_checkpoint, Checkpoint};
use prisma::diffusion::{loss_gradient_check, prepare_batch, Model, SampleOptions, Task, Trainer};
use prisma::field::Field;
use prisma::metrics::{
    evaluate, format_sig, moments, noise_sweep, relative_l2, write_csv, CsvTable,
    EvalOptions, SweepRow,
};
use prisma::pde::{Equation, PdeSpec};
use prisma::Error;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_ACCEPTANCE: i32 = 5;

/// Central differences at step 1e-4 on a loss of order 10 carry about 1e-11
/// of roundoff, so relative deviations are only meaningful well above that.
pub const GRADCHECK_FLOOR: f64 = 1e-7;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Schedule(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
            Error::NonFiniteLoss { .. } | Error::Numerical(_) | Error::CgNotConverged { .. } => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        };
        Self::new(code, e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "prisma", about = "Residual-guided diffusion for PDE forward and inverse problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate `n_train + n_test` samples into a PRGD file.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Train on the first `n_train` samples of a PRGD file.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Per-epoch loss log; defaults to `<out stem>.loss.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Sample predictions with the guided Heun sampler.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Defaults to the configured task.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ground-truth fields the observations are drawn from.
        #[arg(long)]
        obs: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-sample metrics; defaults to `<out stem>.metrics.csv`.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Also write the state after every step (iteration-major).
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Number of unconditional samples.
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        force: bool,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pde: String,
        /// Score only the task's predicted channel.
        #[arg(long)]
        task: Option<String>,
    },
    /// Residual skewness and excess kurtosis per snapshot.
    ResidualStats {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        pde: String,
        /// Number of consecutive equal-size snapshots in the file.
        #[arg(long, default_value_t = 1)]
        iterations: usize,
    },
    /// Finite-difference check of the full model's loss gradient.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Gradients smaller than this are judged by absolute error; their
        /// central differences are dominated by roundoff.
        #[arg(long, default_value_t = GRADCHECK_FLOOR)]
        abs_floor: f64,
    },
    /// Relative error over corruption fractions and noise levels.
    NoiseSweep {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "noisy_inverse")]
        task: String,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.1, 0.3, 0.5, 0.9])]
        fractions: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.5, 1.0, 2.0])]
        sigmas: Vec<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn check_writable(path: &Path, force: bool) -> CliResult {
    if path.exists() && !force {
        return Err(CliError::new(EXIT_CONFIG, format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn header(cfg: &RunConfig, seed: u64) -> String {
    format!("config_hash={} seed={seed}", cfg.hash())
}

fn save_csv(path: &Path, comment: &str, table: &CsvTable) -> CliResult {
    let mut buf = Vec::new();
    write_csv(&mut buf, Some(comment), table)?;
    fs::write(path, buf).map_err(Error::from)?;
    Ok(())
}

fn print_csv(comment: Option<&str>, table: &CsvTable) -> CliResult {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    write_csv(&mut lock, comment, table)?;
    lock.flush().map_err(Error::from)?;
    Ok(())
}

fn parse_pde(s: &str) -> CliResult<Equation> {
    Ok(Equation::parse(s)?)
}

fn parse_task(s: &str) -> CliResult<Task> {
    Ok(Task::parse(s)?)
}

/// `[hi, lo]` 32-bit halves, exact in f64.
fn split_u64(v: u64) -> [f64; 2] {
    [(v >> 32) as f64, (v & 0xffff_ffff) as f64]
}

fn stamp(ck: &mut Checkpoint, cfg: &RunConfig, seed: u64) {
    let hash = u64::from_str_radix(&cfg.hash(), 16).unwrap_or(0);
    let [h0, h1] = split_u64(hash);
    let [s0, s1] = split_u64(seed);
    ck.insert_scalars("meta.run", &[h0, h1, s0, s1]);
}

fn write_ck(ck: &Checkpoint, path: &Path) -> CliResult {
    fs::write(path, encode_checkpoint(ck)?).map_err(Error::from)?;
    Ok(())
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::GenData { config, out, seed, force } => gen_data(config.as_deref(), &out, seed, force),
        Command::Train { config, data, out, resume, log, seed, force } => {
            train(config.as_deref(), &data, &out, resume.as_deref(), log, seed, force)
        }
        Command::Sample { ckpt, task, steps, seed, obs, config, out, metrics, trajectory, count, force } => {
            let args = SampleArgs { ckpt, task, steps, seed, obs, config, out, metrics, trajectory, count, force };
            sample(args)
        }
        Command::Eval { pred, truth, pde, task } => eval(&pred, &truth, &pde, task.as_deref()),
        Command::ResidualStats { pred, pde, iterations } => residual_stats(&pred, &pde, iterations),
        Command::Gradcheck { config, tolerance, abs_floor } => gradcheck(config.as_deref(), tolerance, abs_floor),
        Command::NoiseSweep { ckpt, data, config, task, fractions, sigmas, steps, seed, out, force } => {
            let args = SweepArgs { ckpt, data, config, task, fractions, sigmas, steps, seed, out, force };
            sweep(args)
        }
    }
}

fn gen_data(config: Option<&Path>, out: &Path, seed: Option<u64>, force: bool) -> CliResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    check_writable(out, force)?;
    let spec = cfg.dataset_spec();
    let train = spec.generate(Split::Train)?;
    let test = spec.generate(Split::Test)?;
    let fields = Field::stack(&[train.fields, test.fields].iter().flat_map(|f| (0..f.batch()).map(|i| f.sample(i))).collect::<Vec<_>>())?;
    let pde = cfg.pde_spec();
    let mut worst = 0.0f64;
    for b in 0..fields.batch() {
        let s = fields.sample(b);
        worst = worst.max(pde.residual(&s.channel(0), &s.channel(1))?.max_abs());
    }
    let ds = Dataset { equation: cfg.pde, fields };
    write_dataset(&ds, Dtype::F64, out)?;
    println!("samples={} resolution={} pde={} residual_max={worst:.3e}", ds.len(), ds.size(), cfg.pde.name());
    Ok(())
}

fn train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    log: Option<PathBuf>,
    seed: Option<u64>,
    force: bool,
) -> CliResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    check_writable(out, force)?;
    let ema_path = with_suffix(out, ".ema.prck");
    check_writable(&ema_path, force)?;
    let log = log.unwrap_or_else(|| with_suffix(out, ".loss.csv"));
    let ds = read_dataset(data)?;
    if ds.equation != cfg.pde {
        return Err(CliError::new(EXIT_DATA, format!("data is {}, config says {}", ds.equation.name(), cfg.pde.name())));
    }
    if ds.size() != cfg.resolution {
        return Err(CliError::new(EXIT_DATA, format!("data resolution {} vs config {}", ds.size(), cfg.resolution)));
    }
    if ds.len() < cfg.n_train {
        return Err(CliError::new(EXIT_DATA, format!("data has {} samples, n_train = {}", ds.len(), cfg.n_train)));
    }
    let train_set = Dataset { equation: ds.equation, fields: ds.select(&(0..cfg.n_train).collect::<Vec<_>>())? };
    let tc = cfg.train_config();
    let mut trainer = match resume {
        Some(p) => Trainer::resume(&read_checkpoint(p)?, &train_set, tc)?,
        None => Trainer::new(cfg.denoiser_config(), cfg.pde_spec(), &train_set, tc)?,
    };
    let mut table = CsvTable::new(&["epoch", "step", "lr", "loss"]);
    while trainer.epoch < cfg.epochs {
        let stats = trainer.run_epoch()?;
        eprintln!("epoch {} loss {}", stats.epoch, format_sig(stats.mean_loss, 6));
        table.push(vec![
            stats.epoch.to_string(),
            trainer.step.to_string(),
            format_sig(stats.lr, 6),
            format_sig(stats.mean_loss, 6),
        ]);
    }
    let mut ck = trainer.to_checkpoint();
    stamp(&mut ck, &cfg, cfg.seed);
    write_ck(&ck, out)?;
    let mut ema = trainer.ema_model().to_checkpoint();
    stamp(&mut ema, &cfg, cfg.seed);
    write_ck(&ema, &ema_path)?;
    save_csv(&log, &header(&cfg, cfg.seed), &table)?;
    println!(
        "epochs={} steps={} params={} out={} ema={}",
        trainer.epoch,
        trainer.step,
        trainer.model.denoiser.parameter_count(),
        out.display(),
        ema_path.display()
    );
    Ok(())
}

struct SampleArgs {
    ckpt: PathBuf,
    task: Option<String>,
    steps: Option<usize>,
    seed: u64,
    obs: Option<PathBuf>,
    config: Option<PathBuf>,
    out: PathBuf,
    metrics: Option<PathBuf>,
    trajectory: Option<PathBuf>,
    count: usize,
    force: bool,
}

fn load_model(path: &Path) -> CliResult<Model> {
    let bytes = fs::read(path).map_err(Error::from)?;
    Ok(Model::from_checkpoint(&decode_checkpoint(&bytes)?)?)
}

fn stack_all(parts: &[Field]) -> CliResult<Field> {
    Ok(Field::stack(&parts.iter().flat_map(|f| (0..f.batch()).map(move |i| f.sample(i))).collect::<Vec<_>>())?)
}

fn sample(a: SampleArgs) -> CliResult {
    let cfg = load_config(a.config.as_deref())?;
    let task = a.task.as_deref().map(parse_task).transpose()?.unwrap_or(cfg.task);
    let steps = a.steps.unwrap_or(cfg.steps_n);
    let schedule = cfg.schedule_with(steps)?;
    check_writable(&a.out, a.force)?;
    let metrics_path = a.metrics.clone().unwrap_or_else(|| with_suffix(&a.out, ".metrics.csv"));
    let model = load_model(&a.ckpt)?;
    let replace = cfg.replace_for(task);
    let n = model.resolution;

    let (predictions, per_sample, calls, trajectory) = if task == Task::Unconditional {
        if a.count == 0 {
            return Err(CliError::new(EXIT_CONFIG, "--count must be positive"));
        }
        let zeros = Field::zeros(a.count, 2, n)?;
        let opts = SampleOptions { noise: cfg.noise(), record_states: a.trajectory.is_some(), ..Default::default() };
        let sol = model.solve(&zeros, &zeros, &schedule, a.seed, false, &opts)?;
        let traj = sol.trace.states.iter().map(|s| model.normalizer.denormalize(s)).collect::<Result<Vec<_>, _>>()?;
        (sol.fields, None, sol.trace.denoiser_calls, traj)
    } else {
        let Some(obs_path) = a.obs.as_deref() else {
            return Err(CliError::new(EXIT_CONFIG, format!("task {} needs --obs", task.name())));
        };
        let truth = read_dataset(obs_path)?;
        if truth.equation != model.pde.equation {
            return Err(CliError::new(
                EXIT_DATA,
                format!("observations are {}, model is {}", truth.equation.name(), model.pde.equation.name()),
            ));
        }
        let mut opts = EvalOptions::new(task, schedule.clone());
        opts.seed = a.seed;
        opts.replace = Some(replace);
        opts.observation = cfg.observation();
        opts.noise = cfg.noise();
        opts.moments = a.trajectory.is_some();
        let report = evaluate(&model, &truth.fields, &opts)?;
        (report.predictions, Some(report.per_sample), report.denoiser_calls, report.trajectory)
    };

    let ds = Dataset { equation: model.pde.equation, fields: predictions };
    write_dataset(&ds, Dtype::F64, &a.out)?;
    if let Some(path) = &a.trajectory {
        let all = stack_all(&trajectory)?;
        write_dataset(&Dataset { equation: model.pde.equation, fields: all }, Dtype::F64, path)?;
    }
    let mut table = CsvTable::new(&["sample", "task", "steps", "denoiser_calls", "relative_l2"]);
    for i in 0..ds.len() {
        let err = per_sample.as_ref().map(|p| format_sig(p[i], 6)).unwrap_or_default();
        table.push(vec![i.to_string(), task.name().into(), steps.to_string(), calls.to_string(), err]);
    }
    save_csv(&metrics_path, &header(&cfg, a.seed), &table)?;
    println!("samples={} steps={steps} denoiser_calls={calls}", ds.len());
    Ok(())
}

fn eval(pred: &Path, truth: &Path, pde: &str, task: Option<&str>) -> CliResult {
    let eq = parse_pde(pde)?;
    let p = read_dataset(pred)?;
    let t = read_dataset(truth)?;
    for (ds, what) in [(&p, "predictions"), (&t, "truth")] {
        if ds.equation != eq {
            return Err(CliError::new(EXIT_DATA, format!("{what} are {}, expected {}", ds.equation.name(), eq.name())));
        }
    }
    if p.fields.shape() != t.fields.shape() {
        return Err(CliError::new(
            EXIT_DATA,
            format!("prediction shape {:?} vs truth {:?}", p.fields.shape(), t.fields.shape()),
        ));
    }
    let task = task.map(parse_task).transpose()?;
    let rel = |c: Option<usize>| -> CliResult<f64> {
        Ok(match c {
            Some(c) => relative_l2(&p.fields.channel(c), &t.fields.channel(c))?,
            None => relative_l2(&p.fields, &t.fields)?,
        })
    };
    let main = rel(task.and_then(Task::target_channel))?;
    let darcy = (eq == Equation::Darcy)
        .then(|| prisma::metrics::darcy_error_rate(&p.fields.channel(0), &t.fields.channel(0)))
        .transpose()?;
    let mut table =
        CsvTable::new(&["task", "samples", "relative_l2", "relative_l2_a", "relative_l2_u", "darcy_error_rate"]);
    table.push(vec![
        task.map(|t| t.name()).unwrap_or("all").into(),
        p.len().to_string(),
        format_sig(main, 6),
        format_sig(rel(Some(0))?, 6),
        format_sig(rel(Some(1))?, 6),
        darcy.map(|d| format_sig(d, 6)).unwrap_or_default(),
    ]);
    print_csv(None, &table)
}

fn residual_stats(pred: &Path, pde: &str, iterations: usize) -> CliResult {
    let eq = parse_pde(pde)?;
    let ds = read_dataset(pred)?;
    if ds.equation != eq {
        return Err(CliError::new(EXIT_DATA, format!("file holds {}, expected {}", ds.equation.name(), eq.name())));
    }
    if iterations == 0 || ds.len() % iterations != 0 {
        return Err(CliError::new(EXIT_CONFIG, format!("{} samples do not split into {iterations} snapshots", ds.len())));
    }
    let spec = PdeSpec::new(eq);
    let per = ds.len() / iterations;
    let mut table = CsvTable::new(&["iteration", "skewness", "excess_kurtosis"]);
    for it in 0..iterations {
        let mut values = Vec::new();
        for b in it * per..(it + 1) * per {
            let s = ds.fields.sample(b);
            values.extend(spec.residual(&s.channel(0), &s.channel(1))?.into_vec());
        }
        let (skew, kurt) = moments(&values);
        table.push(vec![(it + 1).to_string(), format_sig(skew, 6), format_sig(kurt, 6)]);
    }
    print_csv(None, &table)
}

/// The reference check runs on two samples drawn from the configured
/// dataset, with dropout off.
fn gradcheck(config: Option<&Path>, tolerance: f64, abs_floor: f64) -> CliResult {
    let mut cfg = load_config(config)?;
    cfg.dropout = 0.0;
    let mut spec = cfg.dataset_spec();
    spec.n_train = 2;
    let data = spec.generate(Split::Train)?;
    let mut tc = cfg.train_config();
    tc.batch = 2;
    let trainer = Trainer::new(cfg.denoiser_config(), cfg.pde_spec(), &data, tc.clone())?;
    let model = &trainer.model;
    let x0 = model.normalizer.normalize(&data.fields)?;
    let seeds = [sample_seed(cfg.seed, 0), sample_seed(cfg.seed, 1)];
    let batch = prepare_batch(model, &x0, &seeds, &tc)?;
    let opts = CheckOptions {
        step: 1e-4,
        rel_tol: tolerance,
        abs_floor,
        max_entries_per_tensor: 6,
        seed: cfg.seed,
    };
    let report = loss_gradient_check(model, &batch, &opts)?;
    let failures = report.failures().len();
    println!(
        "tensors={} entries={} max_rel_error={:.3e} failures={failures}",
        model.denoiser.params.len(),
        report.entries.len() + report.directional.len(),
        report.max_rel_error()
    );
    if failures > 0 || report.max_rel_error() >= tolerance {
        return Err(CliError::new(EXIT_ACCEPTANCE, format!("gradient check failed on {failures} entries")));
    }
    Ok(())
}

struct SweepArgs {
    ckpt: PathBuf,
    data: PathBuf,
    config: Option<PathBuf>,
    task: String,
    fractions: Vec<f64>,
    sigmas: Vec<f64>,
    steps: Option<usize>,
    seed: u64,
    out: PathBuf,
    force: bool,
}

fn sweep(a: SweepArgs) -> CliResult {
    let cfg = load_config(a.config.as_deref())?;
    let task = parse_task(&a.task)?;
    if !task.is_noisy() {
        return Err(CliError::new(EXIT_CONFIG, format!("noise sweep needs a noisy task, got {}", task.name())));
    }
    check_writable(&a.out, a.force)?;
    let model = load_model(&a.ckpt)?;
    let truth = read_dataset(&a.data)?;
    if truth.equation != model.pde.equation {
        return Err(CliError::new(EXIT_DATA, "data and model solve different equations"));
    }
    let mut opts = EvalOptions::new(task, cfg.schedule_with(a.steps.unwrap_or(cfg.steps_n))?);
    opts.seed = a.seed;
    opts.replace = Some(cfg.replace_for(task));
    opts.observation = cfg.observation();
    opts.noise = cfg.noise();
    let rows = noise_sweep(&model, &truth.fields, &opts, &a.fractions, &a.sigmas)?;
    let table = SweepRow::table(task, &rows);
    save_csv(&a.out, &header(&cfg, a.seed), &table)?;
    print_csv(None, &table)
}

/// Caps the rayon pool at `PRISMA_THREADS` when set.
pub fn init_threads() -> CliResult {
    if let Ok(v) = std::env::var("PRISMA_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::new(EXIT_CONFIG, format!("PRISMA_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?;
    }
    Ok(())
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book {}
