use std::f64::consts::PI;

use prisma::autodiff::check::{check_gradients, CheckOptions};
use prisma::autodiff::{Eval, Graph, ParamKind, ParamStore, Tensor, Var};
use prisma::denoiser::*;
use prisma::field::Field;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn small_config() -> DenoiserConfig {
    DenoiserConfig { channels: vec![8, 8], modes: vec![4, 2], embed_dim: 8, dropout: 0.0, ..Default::default() }
}

/// Brute-force DFT of one real plane, `X(ky, kx) = Σ x e^{-2πi(ky i + kx j)/n}`.
fn dft(x: &[f64], n: usize, ky: usize, kx: usize) -> (f64, f64) {
    let (mut re, mut im) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let phase = -2.0 * PI * ((ky * i + kx * j) as f64) / n as f64;
            re += x[i * n + j] * phase.cos();
            im += x[i * n + j] * phase.sin();
        }
    }
    (re, im)
}

struct SraCase {
    x: Tensor,
    r: Tensor,
    c: Tensor,
    w_gain: Tensor,
    lift: Tensor,
    fc1_w: Tensor,
    fc1_b: Tensor,
    fc2_w: Tensor,
    fc2_b: Tensor,
}

impl SraCase {
    fn random(b: usize, ch: usize, n: usize, m: usize, e: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            x: random(&[b, ch, n, n], 2.0, &mut rng),
            r: random(&[b, 1, n, n], 2.0, &mut rng),
            c: random(&[b, e], 1.0, &mut rng),
            w_gain: random(&[2, m, m], 50.0, &mut rng),
            lift: random(&[ch, 1, 1, 1], 1.0, &mut rng),
            fc1_w: random(&[e, e + 1], 1.0, &mut rng),
            fc1_b: random(&[e], 1.0, &mut rng),
            fc2_w: random(&[1, e], 1.0, &mut rng),
            fc2_b: random(&[1], 1.0, &mut rng),
        }
    }

    fn run<'a>(
        &'a self,
        g: &mut Eval<'a>,
        s: &SraSettings,
        lift: bool,
        ov: Option<GateOverride>,
    ) -> (Var, SraOutput) {
        let x = g.param("x", &self.x);
        let c = g.param("c", &self.c);
        let p = SraParams {
            w_gain: g.param("w_gain", &self.w_gain),
            lift: lift.then(|| g.param("lift", &self.lift)),
            gate: GateParams {
                fc1_w: g.param("fc1_w", &self.fc1_w),
                fc1_b: g.param("fc1_b", &self.fc1_b),
                fc2_w: g.param("fc2_w", &self.fc2_w),
                fc2_b: g.param("fc2_b", &self.fc2_b),
            },
        };
        let out = sra_block(g, x, &self.r, c, &p, s, ov).unwrap();
        (x, out)
    }
}

fn settings(m: usize) -> SraSettings {
    SraSettings { modes: m, gate_mode: GateMode::SkipGate, attention_mode: AttentionMode::PhaseAware }
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn embedding_is_bounded_and_pure() {
    let e = noise_embedding(0.37, 256).unwrap();
    assert_eq!(e.len(), 256);
    assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(e, noise_embedding(0.37, 256).unwrap());
    assert!(noise_embedding(0.0, 256).is_err());
    assert!(noise_embedding(-1.0, 256).is_err());
}

#[test]
fn embedding_doubling_is_a_phase_shift() {
    let half = 128;
    let sigma = 1.7;
    let (a, b) = (noise_embedding(sigma, 256).unwrap(), noise_embedding(2.0 * sigma, 256).unwrap());
    for i in 0..half {
        let w = 2.0 * (0.005f64).powf(i as f64 / (half - 1) as f64);
        let shift = w * 2f64.ln();
        // rotate (sin, cos) of the lower level by the shift
        let (s, c) = (a[i], a[half + i]);
        let rotated_sin = s * shift.cos() + c * shift.sin();
        let rotated_cos = c * shift.cos() - s * shift.sin();
        assert!((b[i] - rotated_sin).abs() < 1e-12, "sin {i}");
        assert!((b[half + i] - rotated_cos).abs() < 1e-12, "cos {i}");
        assert!((b[i] - (w * (2.0 * sigma).ln()).sin()).abs() < 1e-12);
    }
}

fn pack(n: usize, ma: f64, mu: f64, seed: u64) -> (Field, Conditioning) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_field = |c| {
        let data = (0..c * n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Field::new(1, c, n, data).unwrap()
    };
    let x = rand_field(2);
    let obs = rand_field(2);
    let residual = rand_field(1);
    let ones = Field::constant(1, 1, n, 1.0).unwrap();
    let masks = Field::concat_channels(&[&ones.scale(ma), &ones.scale(mu)]).unwrap();
    (x, Conditioning { obs, masks, residual })
}

#[test]
fn input_layout_follows_the_masks() {
    let (x, forward) = pack(8, 1.0, 0.0, 1);
    let input = assemble_input(&x, &forward).unwrap();
    assert_eq!(input.channels(), INPUT_CHANNELS);
    assert_eq!(input.plane(0, 2), forward.obs.plane(0, 0));
    assert!(input.plane(0, 3).iter().all(|&v| v == 0.0));
    assert_eq!(input.plane(0, 0), x.plane(0, 0));
    assert_eq!(input.plane(0, 6), forward.residual.plane(0, 0));

    let (x, uncond) = pack(8, 0.0, 0.0, 2);
    let input = assemble_input(&x, &uncond).unwrap();
    for c in 2..6 {
        assert!(input.plane(0, c).iter().all(|&v| v == 0.0));
    }

    let (x, mut bad) = pack(8, 1.0, 0.0, 3);
    bad.masks.data_mut()[0] = 0.5;
    assert!(assemble_input(&x, &bad).is_err());
    let (x, _) = pack(16, 1.0, 0.0, 3);
    assert!(assemble_input(&x, &forward).is_err());
}

#[test]
fn zero_residual_with_closed_gate_is_identity() {
    let mut case = SraCase::random(2, 4, 8, 3, 6, 4);
    case.r = Tensor::zeros(&[2, 1, 8, 8]);
    let mut g = Eval::new();
    let ov = GateOverride { gate: Some(0.0), attention: None };
    let (x, out) = case.run(&mut g, &settings(3), true, Some(ov));
    assert_eq!(g.value(out.score).max_abs(), 0.0);
    assert!(g.value(out.attention).data().iter().all(|&a| a == 0.5));
    assert!(max_diff(g.value(out.out), g.value(x)) < 1e-12);
}

#[test]
fn saturated_gate_and_attention_is_identity() {
    let case = SraCase::random(2, 4, 8, 3, 6, 5);
    let mut g = Eval::new();
    let ov = GateOverride { gate: Some(1.0), attention: Some(1.0) };
    let (x, out) = case.run(&mut g, &settings(3), true, Some(ov));
    assert!(max_diff(g.value(out.out), g.value(x)) < 1e-12);
}

#[test]
fn single_channel_self_score_is_the_power_spectrum() {
    let n = 8;
    let mut case = SraCase::random(1, 1, n, 3, 4, 6);
    case.r = case.x.clone();
    case.lift = Tensor::full(&[1, 1, 1, 1], 1.0);
    for lift in [true, false] {
        let mut g = Eval::new();
        let (_, out) = case.run(&mut g, &settings(3), lift, None);
        let s = g.value(out.score);
        assert_eq!(s.shape(), &[1, 1, n, n / 2 + 1, 1]);
        for ky in 0..n {
            for kx in 0..=n / 2 {
                let (re, im) = dft(case.x.data(), n, ky, kx);
                let expected = (re * re + im * im) / (n * n * n * n) as f64;
                let got = s.data()[ky * (n / 2 + 1) + kx];
                assert!((got - expected).abs() < 1e-12 * expected.max(1.0), "({ky},{kx}): {got} vs {expected}");
            }
        }
    }
}

#[test]
fn magnitude_only_score_ignores_relative_phase() {
    let n = 8;
    let case = SraCase::random(1, 3, n, 2, 4, 7);
    let mut shifted = SraCase::random(1, 3, n, 2, 4, 7);
    // circularly shift one feature channel: its spectrum changes by a phase only
    let mut data = case.x.data().to_vec();
    let plane: Vec<f64> = data[..n * n].to_vec();
    for p in 0..n * n {
        data[p] = plane[((p / n + 3) % n) * n + (p % n + 5) % n];
    }
    shifted.x = Tensor::new(vec![1, 3, n, n], data).unwrap();
    let score = |case: &SraCase, mode| {
        let s = SraSettings { attention_mode: mode, ..settings(2) };
        let mut g = Eval::new();
        let (_, out) = case.run(&mut g, &s, true, None);
        g.value(out.score).clone()
    };
    let (mag, mag_shifted) = (score(&case, AttentionMode::MagnitudeOnly), score(&shifted, AttentionMode::MagnitudeOnly));
    assert!(max_diff(&mag, &mag_shifted) < 1e-12);
    let (phase, phase_shifted) = (score(&case, AttentionMode::PhaseAware), score(&shifted, AttentionMode::PhaseAware));
    assert!(max_diff(&phase, &phase_shifted) > 1e-6);
    // triangle inequality: the coherent sum never exceeds the magnitude sum
    assert!(phase.data().iter().zip(mag.data()).all(|(p, m)| *p <= m + 1e-15));
}

#[test]
fn gate_mode_multipliers() {
    let case = SraCase::random(1, 2, 8, 2, 4, 8);
    for (mode, expect) in [
        (GateMode::SkipGate, 1.0 - 0.25 + 0.25 * 0.6),
        (GateMode::Multiplicative, 0.25 * 0.6),
        (GateMode::None, 0.6),
    ] {
        let s = SraSettings { gate_mode: mode, ..settings(2) };
        let mut g = Eval::new();
        let ov = GateOverride { gate: Some(0.25), attention: Some(0.6) };
        let (_, out) = case.run(&mut g, &s, true, Some(ov));
        let m = g.value(out.multiplier);
        // retained corner (0,0) and an unretained mode (4,3)
        assert!((m.data()[0] - expect).abs() < 1e-15, "{mode:?}");
        assert_eq!(m.data()[4 * 5 + 3], 1.0);
    }
}

#[test]
fn gate_at_zero_weights_is_one_half() {
    let e = 6;
    let zeros = [
        Tensor::zeros(&[e, e + 1]),
        Tensor::zeros(&[e]),
        Tensor::zeros(&[1, e]),
        Tensor::zeros(&[1]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let r_avg = random(&[3, 1], 5.0, &mut rng);
    let c = random(&[3, e], 1.0, &mut rng);
    let mut g = Eval::new();
    let vars: Vec<Var> = zeros.iter().map(|t| g.param("", t)).collect();
    let p = GateParams { fc1_w: vars[0], fc1_b: vars[1], fc2_w: vars[2], fc2_b: vars[3] };
    let (r, c) = (g.constant(r_avg), g.constant(c));
    let out = guidance_gate(&mut g, r, c, &p).unwrap();
    assert!(g.value(out).data().iter().all(|&v| v == 0.5));
}

#[test]
fn gate_gradient_matches_finite_differences() {
    let e = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let inputs = vec![
        random(&[e, e + 1], 1.0, &mut rng),
        random(&[e], 1.0, &mut rng),
        random(&[1, e], 1.0, &mut rng),
        random(&[1], 1.0, &mut rng),
    ];
    let r_avg = random(&[3, 1], 2.0, &mut rng);
    let c = random(&[3, e], 1.0, &mut rng);
    let report = check_gradients(&inputs, &CheckOptions::default(), |g, v| {
        let p = GateParams { fc1_w: v[0], fc1_b: v[1], fc2_w: v[2], fc2_b: v[3] };
        let (r, c) = (g.constant(r_avg.clone()), g.constant(c.clone()));
        let out = guidance_gate(g, r, c, &p)?;
        let sq = g.square(out);
        Ok(g.sum_all(sq))
    })
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures());
}

fn layer_store(cfg: &DenoiserConfig) -> ParamStore {
    init_params(cfg, 3)
}

fn zero_all(store: &mut ParamStore, prefix: &str) {
    for (name, t) in store.iter_mut() {
        if name.starts_with(prefix) && !name.contains("norm.gamma") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[test]
fn layer_with_zero_paths_outputs_zero() {
    let cfg = small_config();
    let specs = layer_specs(&cfg);
    let dec = specs.iter().find(|s| s.in_channels != s.out_channels).unwrap().clone();
    let mut store = layer_store(&cfg);
    zero_all(&mut store, &format!("{}.", dec.prefix));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 8 >> dec.level;
    let x = random(&[2, dec.in_channels, n, n], 1.0, &mut rng);
    let r = random(&[2, 1, n, n], 1.0, &mut rng);
    let c = random(&[2, cfg.embed_dim], 1.0, &mut rng);
    let mut g = Eval::new();
    let vars = ParamVars::bind(&mut g, &store);
    let (x, c) = (g.constant(x), g.constant(c));
    let out = uno_layer(&mut g, x, &r, c, &vars, &dec, &cfg, &mut ForwardCtx::default()).unwrap();
    assert_eq!(g.value(out.out).max_abs(), 0.0);
}

#[test]
fn spectral_path_annihilates_unretained_modes() {
    let cfg = small_config();
    let spec = layer_specs(&cfg)[0].clone();
    let (n, m) = (16, spec.modes);
    let store = layer_store(&cfg);
    // cos(2π(ky y + kx x)) with |ky| ≥ m or kx ≥ m
    let waves = [(0usize, m), (m, 1), (5, 6), (8, 0)];
    let mut data = Vec::new();
    for _ in 0..spec.in_channels {
        for i in 0..n {
            for j in 0..n {
                let v: f64 = waves
                    .iter()
                    .map(|&(ky, kx)| (2.0 * PI * (ky * i + kx * j) as f64 / n as f64).cos())
                    .sum();
                data.push(v);
            }
        }
    }
    let x = Tensor::new(vec![1, spec.in_channels, n, n], data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let r = random(&[1, 1, n, n], 1.0, &mut rng);
    let c = random(&[1, cfg.embed_dim], 1.0, &mut rng);
    let mut g = Eval::new();
    let vars = ParamVars::bind(&mut g, &store);
    let (x, c) = (g.constant(x), g.constant(c));
    let out = uno_layer(&mut g, x, &r, c, &vars, &spec, &cfg, &mut ForwardCtx::default()).unwrap();
    assert!(g.value(out.spectral).max_abs() < 1e-12);
    assert!(g.value(out.local).max_abs() > 1e-3);
}

#[test]
fn sra_off_equals_closed_gate() {
    let cfg = small_config();
    let off = DenoiserConfig { sra_mode: SraMode::Off, ..cfg.clone() };
    let store = layer_store(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for spec in layer_specs(&cfg) {
        let n = 8 >> spec.level;
        let x = random(&[2, spec.in_channels, n, n], 1.0, &mut rng);
        let r = random(&[2, 1, n, n], 1.0, &mut rng);
        let c = random(&[2, cfg.embed_dim], 1.0, &mut rng);
        let run = |cfg: &DenoiserConfig, ov| {
            let mut g = Eval::new();
            let vars = ParamVars::bind(&mut g, &store);
            let (x, c) = (g.constant(x.clone()), g.constant(c.clone()));
            let mut ctx = ForwardCtx { gate_override: ov, ..Default::default() };
            let out = uno_layer(&mut g, x, &r, c, &vars, &spec, cfg, &mut ctx).unwrap();
            g.value(out.out).clone()
        };
        let closed = run(&cfg, Some(GateOverride { gate: Some(0.0), attention: None }));
        assert!(max_diff(&run(&off, None), &closed) < 1e-12, "{}", spec.prefix);
    }
}

#[test]
fn ablations_differ_only_in_sra_tensors() {
    let names = |mode| {
        let cfg = DenoiserConfig { sra_mode: mode, ..Default::default() };
        init_params(&cfg, 0).names().map(String::from).collect::<Vec<_>>()
    };
    let (sra, off, concat) = (names(SraMode::Sra), names(SraMode::Off), names(SraMode::Concat));
    assert_eq!(off, concat);
    let extra: Vec<_> = sra.iter().filter(|n| !off.contains(n)).collect();
    assert!(off.iter().all(|n| sra.contains(n)));
    assert!(extra.iter().all(|n| n.contains(".sra.")));
    // 5 layers × (w_gain, lift, 4 gate tensors)
    assert_eq!(extra.len(), 5 * 6);
    let full = Denoiser::new(DenoiserConfig::default(), 0).unwrap();
    assert_eq!(full.parameter_count(), Denoiser::new(DenoiserConfig::default(), 1).unwrap().parameter_count());
}

#[test]
fn zero_network_reduces_to_skip_scaling() {
    let mut den = Denoiser::new(small_config(), 0).unwrap();
    den.sigma_data = 0.7;
    for (_, t) in den.params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let (x, cond) = pack(8, 1.0, 0.0, 14);
    for sigma in [0.002, 0.5, 80.0] {
        let out = den.denoise(&x, &[sigma], &cond).unwrap();
        let c_skip = 0.49 / (sigma * sigma + 0.49);
        let expected = x.scale(c_skip);
        let err = out.zip_map(&expected, |a, b| a - b).unwrap().max_abs();
        assert!(err < 1e-15, "{sigma}: {err}");
    }
    let out = den.denoise(&x, &[0.002], &cond).unwrap();
    let c_out = 0.002 * 0.7 / (0.002f64.powi(2) + 0.49).sqrt();
    assert!(out.zip_map(&x, |a, b| a - b).unwrap().max_abs() <= c_out * x.max_abs());
    assert!(den.denoise(&x, &[1e-5], &cond).is_err());
    assert!(den.denoise(&x, &[900.0], &cond).is_err());
}

#[test]
fn preconditioner_algebra() {
    for (s, d) in [(0.002, 0.5), (1.0, 1.0), (80.0, 0.3)] {
        let p = Precond::new(s, d);
        // c_skip² σ_d² + c_out² ... the target variance identity
        assert!((p.c_skip + p.c_out * p.c_out / (d * d) - 1.0).abs() < 1e-12);
        assert!((p.c_in * (s * s + d * d).sqrt() - 1.0).abs() < 1e-12);
        assert!((loss_weight(s, d) * p.c_out * p.c_out - 1.0).abs() < 1e-12);
    }
}

#[test]
fn unobserved_pixels_do_not_leak() {
    let den = Denoiser::new(small_config(), 1).unwrap();
    let (x, cond) = pack(8, 0.0, 1.0, 15);
    let mut moved = cond.clone();
    // a_obs is unobserved everywhere
    moved.obs.plane_mut(0, 0)[17] += 3.0;
    let a = den.denoise(&x, &[1.0], &cond).unwrap();
    let b = den.denoise(&x, &[1.0], &moved).unwrap();
    assert_eq!(a, b);
    let mut seen = cond.clone();
    seen.obs.plane_mut(0, 1)[17] += 3.0;
    assert_ne!(a, den.denoise(&x, &[1.0], &seen).unwrap());
}

#[test]
fn every_task_preserves_the_state_shape() {
    let den = Denoiser::new(small_config(), 2).unwrap();
    for (ma, mu) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        let (x, cond) = pack(8, ma, mu, 16);
        assert_eq!(den.denoise(&x, &[3.0], &cond).unwrap().shape(), x.shape());
    }
    let (x, cond) = pack(16, 1.0, 0.0, 17);
    assert_eq!(den.denoise(&x, &[3.0], &cond).unwrap().shape(), [1, 2, 16, 16]);
    let (x, cond) = pack(4, 1.0, 0.0, 17);
    assert!(den.denoise(&x, &[3.0], &cond).is_err());
}

#[test]
fn sra_commutes_with_band_limited_upsampling() {
    let (b, ch, n, m, e) = (2, 3, 8, 3, 4);
    let mut case = SraCase::random(b, ch, n, m, e, 18);
    // strip the Nyquist content so the field is exactly band limited
    let band = |t: &Tensor, c| {
        let f = Field::new(b, c, n, t.data().to_vec()).unwrap();
        f.fourier_resample(n).unwrap()
    };
    let x = band(&case.x, ch);
    let r = band(&case.r, 1);
    case.x = Tensor::from_field(&x);
    case.r = Tensor::from_field(&r);
    let mut fine = SraCase::random(b, ch, n, m, e, 18);
    fine.x = Tensor::from_field(&x.fourier_resample(2 * n).unwrap());
    fine.r = Tensor::from_field(&r.fourier_resample(2 * n).unwrap());

    let mut g1 = Eval::new();
    let (_, coarse) = case.run(&mut g1, &settings(m), true, None);
    let mut g2 = Eval::new();
    let (_, up) = fine.run(&mut g2, &settings(m), true, None);
    let down = g2.value(up.out).to_field().unwrap().subsample(2).unwrap();
    let err = max_diff(&Tensor::from_field(&down), g1.value(coarse.out));
    assert!(err < 1e-6, "{err}");
    assert!(max_diff(g1.value(coarse.gate), g2.value(up.gate)) < 1e-12);
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let cfg = DenoiserConfig { channels: vec![8, 8], modes: vec![4, 2], embed_dim: 8, dropout: 0.0, ..Default::default() };
    let mut den = Denoiser::new(cfg, 19).unwrap();
    // open the SRA blocks so every parameter influences the output
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for (name, t) in den.params.iter_mut() {
        if name.ends_with("w_gain") {
            *t = random(t.shape(), 2.0, &mut rng);
        }
    }
    let (x, mut cond) = pack(16, 1.0, 0.0, 20);
    cond.residual = cond.residual.scale(20.0);
    let x0 = x.map(|v| 0.5 * v);
    let names: Vec<String> = den.params.names().map(String::from).collect();
    let inputs: Vec<Tensor> = names.iter().map(|n| den.params.get(n).unwrap().clone()).collect();
    let opts = CheckOptions { step: 1e-4, rel_tol: 1e-4, abs_floor: 1e-9, max_entries_per_tensor: 6, seed: 1 };
    let report = check_gradients(&inputs, &opts, |g, v| {
        let vars = ParamVars::from_pairs(names.iter().cloned().zip(v.iter().copied()));
        let out = den.forward(g, &vars, &x, &[0.8], &cond, &mut ForwardCtx::default())?;
        let target = g.constant(Tensor::from_field(&x0));
        let d = g.sub(out, target)?;
        let sq = g.square(d);
        Ok(g.sum_all(sq))
    })
    .unwrap();
    assert!(report.passed(), "max rel {}: {:?}", report.max_rel_error(), report.failures());
}

#[test]
fn checkpoint_restores_the_model() {
    let mut den = Denoiser::new(small_config(), 21).unwrap();
    den.sigma_data = 0.42;
    den.residual_scale = 3.5;
    let bytes = encode_checkpoint(&den.to_checkpoint()).unwrap();
    assert_eq!(&bytes[..4], b"PRCK");
    let back = Denoiser::from_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap();
    assert_eq!(back, den);
    let spectral = &decode_checkpoint(&bytes).unwrap().tensors["level0.spectral.w"];
    assert_eq!(spectral.0, TensorDtype::ComplexF64);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.prck");
    write_checkpoint(&den.to_checkpoint(), &path).unwrap();
    assert_eq!(Denoiser::from_checkpoint(&read_checkpoint(&path).unwrap()).unwrap(), den);
}

#[test]
fn checkpoint_errors_are_distinct() {
    let good = encode_checkpoint(&Denoiser::new(small_config(), 22).unwrap().to_checkpoint()).unwrap();
    let mut bad = good.clone();
    bad[1] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(prisma::Error::BadMagic { .. })));
    let mut bad = good.clone();
    bad[4] = 2;
    assert!(matches!(decode_checkpoint(&bad), Err(prisma::Error::UnsupportedVersion(2))));
    assert!(matches!(decode_checkpoint(&good[..good.len() - 3]), Err(prisma::Error::Truncated(_))));
    let mut long = good.clone();
    long.push(0);
    assert!(matches!(decode_checkpoint(&long), Err(prisma::Error::Malformed(_))));

    let mut ck = Checkpoint::new();
    ck.insert("odd", TensorDtype::ComplexF64, Tensor::zeros(&[3, 3]));
    assert!(encode_checkpoint(&ck).is_err());
    let mut ck = Denoiser::new(small_config(), 22).unwrap().to_checkpoint();
    ck.tensors.remove("proj.b");
    assert!(Denoiser::from_checkpoint(&ck).is_err());
}

fn arb_tensor() -> impl Strategy<Value = (TensorDtype, Tensor)> {
    (prop::collection::vec(1usize..4, 0..4), 0u8..3, any::<u64>()).prop_map(|(mut shape, kind, seed)| {
        let dtype = [TensorDtype::F32, TensorDtype::F64, TensorDtype::ComplexF64][kind as usize];
        if dtype == TensorDtype::ComplexF64 {
            shape.push(2);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(-1e3..1e3);
                if dtype == TensorDtype::F32 { v as f32 as f64 } else { v }
            })
            .collect();
        (dtype, Tensor::new(shape, data).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoint_round_trips_bitwise(entries in prop::collection::btree_map("[a-z][a-z0-9._]{0,20}", arb_tensor(), 0..6)) {
        let ck = Checkpoint { tensors: entries };
        let back = decode_checkpoint(&encode_checkpoint(&ck).unwrap()).unwrap();
        prop_assert_eq!(back.tensors.len(), ck.tensors.len());
        for (name, (dtype, t)) in &ck.tensors {
            let (bd, bt) = &back.tensors[name];
            prop_assert_eq!(bd, dtype);
            prop_assert_eq!(bt.shape(), t.shape());
            prop_assert!(bt.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn closed_gate_is_identity(seed in any::<u64>(), ch in 1usize..4, log_n in 2u32..5) {
        let n = 1 << log_n;
        let m = (n / 2).min(3);
        let case = SraCase::random(2, ch, n, m, 4, seed);
        let mut g = Eval::new();
        let (x, out) = case.run(&mut g, &settings(m), seed % 2 == 0, Some(GateOverride { gate: Some(0.0), attention: None }));
        prop_assert!(max_diff(g.value(out.out), g.value(x)) < 1e-12 * g.value(x).max_abs().max(1.0));
    }

    #[test]
    fn sra_never_amplifies_a_mode(seed in any::<u64>(), ch in 1usize..4, log_n in 2u32..5) {
        let n = 1usize << log_n;
        let m = (n / 2).min(3);
        let case = SraCase::random(2, ch, n, m, 4, seed);
        let mut g = Eval::new();
        let (x, out) = case.run(&mut g, &settings(m), true, None);
        let gate = g.value(out.gate).data().to_vec();
        let xs = g.rfft2(x).unwrap();
        let ys = g.rfft2(out.out).unwrap();
        let (xs, ys) = (g.value(xs).data().to_vec(), g.value(ys).data().to_vec());
        let wh = n / 2 + 1;
        for (k, (xz, yz)) in xs.chunks(2).zip(ys.chunks(2)).enumerate() {
            let b = k / (ch * n * wh);
            let (row, col) = ((k / wh) % n, k % wh);
            let retained = col < m && (row < m || row > n - m);
            let (xm, ym) = (xz[0].hypot(xz[1]), yz[0].hypot(yz[1]));
            let tol = 1e-12 * xm.max(1.0);
            prop_assert!(ym <= xm + tol);
            if retained {
                prop_assert!(ym >= (1.0 - gate[b]) * xm - tol);
            } else {
                prop_assert!((ym - xm).abs() <= tol);
            }
        }
    }

    #[test]
    fn gate_stays_inside_the_unit_interval(seed in any::<u64>(), r in 0.0f64..=100.0) {
        // r_avg is a root mean square of a residual clamped to ±100
        let cfg = DenoiserConfig { embed_dim: 16, ..Default::default() };
        let store = init_params(&cfg, seed);
        let case = SraCase::random(1, 1, 4, 2, 16, seed);
        let mut g = Eval::new();
        let vars = ["fc1.w", "fc1.b", "fc2.w", "fc2.b"].map(|n| g.param("", store.get(&format!("level0.sra.gate.{n}")).unwrap()));
        let p = GateParams { fc1_w: vars[0], fc1_b: vars[1], fc2_w: vars[2], fc2_b: vars[3] };
        let rv = g.constant(Tensor::new(vec![1, 1], vec![r]).unwrap());
        let c = g.param("c", &case.c);
        let out = guidance_gate(&mut g, rv, c, &p).unwrap();
        let v = g.value(out).item();
        prop_assert!(v > 0.0 && v < 1.0);
    }
}

#[test]
fn params_are_finite_and_kinds_are_recorded() {
    let den = Denoiser::new(DenoiserConfig::default(), 0).unwrap();
    assert!(den.params.is_finite());
    assert_eq!(den.params.kind("level2.spectral.w"), Some(ParamKind::Complex));
    assert_eq!(den.params.get("level2.sra.w_gain").unwrap().shape(), &[2, 4, 4]);
    assert!(den.params.get("level0.sra.w_gain").unwrap().data().iter().all(|&v| v == 0.0));
    assert_eq!(den.params.get("level1.dec.sra.gate.fc2.b").unwrap().data(), &[-2.0]);
    assert!(den.params.get("level1.local.shortcut.w").is_some());
    assert!(den.params.get("level2.local.shortcut.w").is_none());
}

