use prisma::denoiser::SraMode;
use prisma::diffusion::Task;
use prisma::pde::Equation;
use prisma_cli::config::{Replace, KEYS};
use prisma_cli::RunConfig;

#[test]
fn empty_file_gives_defaults() {
    let cfg = RunConfig::parse("# nothing here\n\n").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.pde, Equation::Poisson);
    assert_eq!(cfg.lr, 1e-4);
    assert_eq!(cfg.warmup_epochs, 50.0);
    assert_eq!(cfg.epochs, 100);
    assert_eq!(cfg.batch, 32);
    assert_eq!(cfg.dropout, 0.13);
    assert_eq!(cfg.ema_half_life, 5.0);
    assert_eq!((cfg.sigma_min, cfg.sigma_max, cfg.rho), (0.002, 80.0, 7.0));
    assert_eq!(cfg.rbf_scale, 0.05);
    assert_eq!(cfg.steps_n, 20);
    assert_eq!(cfg.sra_mode, SraMode::Sra);
}

#[test]
fn parses_every_key() {
    let text = "pde = darcy\nresolution = 16\nn_train = 8\nn_test = 2\nseed = 3\nchannels = 8, 8\nmodes = 4\n\
                task = sparse_inverse # trailing comment\nsra_mode = concat\nreplace_observed = false\nsteps_N = 5\n";
    let cfg = RunConfig::parse(text).unwrap();
    assert_eq!(cfg.pde, Equation::Darcy);
    assert_eq!(cfg.levels, 2);
    assert_eq!(cfg.channels, vec![8, 8]);
    assert_eq!(cfg.modes, vec![4, 4]);
    assert_eq!(cfg.task, Task::SparseInverse);
    assert_eq!(cfg.sra_mode, SraMode::Concat);
    assert_eq!(cfg.replace_observed, Replace::Off);
    assert_eq!(cfg.schedule().unwrap().steps(), 5);
}

#[test]
fn canonical_text_round_trips() {
    let cfg = RunConfig::parse("pde = helmholtz\nresolution = 16\nchannels = 8,8\nmodes = 4,3\nlr = 0.001\n").unwrap();
    let canon = cfg.canonical();
    assert_eq!(canon.lines().count(), KEYS.len());
    let back = RunConfig::parse(&canon).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    assert_eq!(cfg.hash().len(), 16);
    assert_ne!(cfg.hash(), RunConfig::default().hash());
}

#[test]
fn rejects_bad_input() {
    for text in [
        "learning_rate = 1\n",
        "lr = 1\nlr = 2\n",
        "lr\n",
        "lr = fast\n",
        "channels = 8,8\nlevels = 3\n",
        "replace_observed = maybe\n",
        "steps_N = 0\n",
        "task = everything\n",
    ] {
        assert!(RunConfig::parse(text).is_err(), "{text:?} accepted");
    }
}

#[test]
fn replacement_follows_task_unless_forced() {
    let mut cfg = RunConfig::default();
    assert!(cfg.replace_for(Task::Forward));
    assert!(!cfg.replace_for(Task::NoisyForward));
    assert!(!cfg.replace_for(Task::Unconditional));
    cfg.replace_observed = Replace::On;
    assert!(cfg.replace_for(Task::NoisyForward));
    cfg.replace_observed = Replace::Off;
    assert!(!cfg.replace_for(Task::Forward));
}
