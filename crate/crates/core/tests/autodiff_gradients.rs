use prisma::autodiff::check::{check_gradients, CheckOptions};
use prisma::autodiff::{Eval, Graph, Tape, Tensor, Var};
use prisma::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so that kinks stay outside the FD stencil.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut t = randn(shape, seed);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output entry carries a
/// distinct upstream gradient.
fn probe<'a>(g: &mut dyn Graph<'a>, out: Var, seed: u64) -> Result<Var> {
    let r = randn(&g.shape(out), seed ^ 0x9e37);
    let r = g.constant(r);
    let p = g.mul(out, r)?;
    Ok(g.sum_all(p))
}

fn assert_check<F>(inputs: &[Tensor], f: F)
where
    F: for<'a> Fn(&mut dyn Graph<'a>, &[Var]) -> Result<Var>,
{
    let report = check_gradients(inputs, &CheckOptions::default(), f).unwrap();
    let failures = report.failures();
    assert!(failures.is_empty(), "{} mismatches, first {:?}", failures.len(), failures.first());
}

#[test]
fn broadcast_arithmetic() {
    let a = randn(&[2, 3, 4], 1);
    let b = randn(&[1, 3, 1], 2);
    assert_check(&[a.clone(), b.clone()], |g, v| {
        let s = g.add(v[0], v[1])?;
        probe(g, s, 3)
    });
    assert_check(&[a.clone(), b.clone()], |g, v| {
        let s = g.sub(v[1], v[0])?;
        probe(g, s, 4)
    });
    assert_check(&[a, b], |g, v| {
        let s = g.mul(v[0], v[1])?;
        probe(g, s, 5)
    });
}

#[test]
fn pointwise() {
    let x = away_from_zero(&[3, 5], 6);
    assert_check(&[x.clone()], |g, v| {
        let s = g.scale(v[0], -2.5);
        let s = g.add_scalar(s, 0.7);
        probe(g, s, 7)
    });
    assert_check(&[x.clone()], |g, v| {
        let s = g.relu(v[0]);
        probe(g, s, 8)
    });
    assert_check(&[x.clone()], |g, v| {
        let s = g.gelu(v[0]);
        probe(g, s, 9)
    });
    assert_check(&[x.clone()], |g, v| {
        let s = g.sigmoid(v[0]);
        probe(g, s, 10)
    });
    assert_check(&[x], |g, v| {
        let s = g.square(v[0]);
        probe(g, s, 11)
    });
}

#[test]
fn reductions_and_reshape() {
    let x = randn(&[2, 3, 4, 5], 12);
    assert_check(&[x.clone()], |g, v| {
        let s = g.sum_axes(v[0], &[1, 3])?;
        probe(g, s, 13)
    });
    assert_check(&[x.clone()], |g, v| {
        let s = g.mean_axes(v[0], &[2])?;
        probe(g, s, 14)
    });
    assert_check(&[x], |g, v| {
        let s = g.reshape(v[0], &[6, 20])?;
        probe(g, s, 15)
    });
}

#[test]
fn linear_layer() {
    let x = randn(&[4, 5], 16);
    let w = randn(&[3, 5], 17);
    let b = randn(&[3], 18);
    assert_check(&[x.clone(), w.clone(), b], |g, v| {
        let s = g.linear(v[0], v[1], Some(v[2]))?;
        probe(g, s, 19)
    });
    assert_check(&[x, w], |g, v| {
        let s = g.linear(v[0], v[1], None)?;
        probe(g, s, 20)
    });
}

#[test]
fn convolution() {
    let x = randn(&[2, 3, 8, 8], 21);
    let w3 = randn(&[4, 3, 3, 3], 22);
    let w1 = randn(&[2, 3, 1, 1], 23);
    let b = randn(&[4], 24);
    assert_check(&[x.clone(), w3, b], |g, v| {
        let s = g.conv2d(v[0], v[1], Some(v[2]))?;
        probe(g, s, 25)
    });
    assert_check(&[x, w1], |g, v| {
        let s = g.conv2d(v[0], v[1], None)?;
        probe(g, s, 26)
    });
}

#[test]
fn group_norm() {
    let x = randn(&[2, 4, 4, 4], 27);
    let gamma = randn(&[4], 28);
    let beta = randn(&[4], 29);
    assert_check(&[x, gamma, beta], |g, v| {
        let s = g.group_norm(v[0], v[1], v[2], 2)?;
        probe(g, s, 30)
    });
}

#[test]
fn dropout_and_concat() {
    let x = randn(&[2, 2, 3], 31);
    let y = randn(&[2, 1, 3], 32);
    let mask: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 / 0.87 }).collect();
    assert_check(&[x.clone()], |g, v| {
        let s = g.dropout(v[0], mask.clone())?;
        probe(g, s, 33)
    });
    assert_check(&[x, y], |g, v| {
        let s = g.concat(&[v[1], v[0], v[1]])?;
        probe(g, s, 34)
    });
}

#[test]
fn fourier_transforms() {
    let x = randn(&[2, 8, 8], 35);
    assert_check(&[x], |g, v| {
        let s = g.rfft2(v[0])?;
        probe(g, s, 36)
    });
    // Arbitrary half spectra, not necessarily the transform of a real field.
    let z = randn(&[2, 8, 5, 2], 37);
    assert_check(&[z], |g, v| {
        let s = g.irfft2(v[0])?;
        probe(g, s, 38)
    });
}

#[test]
fn complex_ops() {
    let a = randn(&[2, 3, 4, 2], 39);
    let b = randn(&[1, 3, 1, 2], 40);
    for conj in [false, true] {
        assert_check(&[a.clone(), b.clone()], |g, v| {
            let s = g.complex_mul(v[0], v[1], conj)?;
            probe(g, s, 41)
        });
    }
    let z = away_from_zero(&[3, 4, 2], 42);
    assert_check(&[z], |g, v| {
        let s = g.complex_abs(v[0])?;
        probe(g, s, 43)
    });
}

#[test]
fn spectral_mixing() {
    let x = randn(&[2, 3, 8, 5, 2], 44);
    let w = randn(&[2, 3, 2, 3, 3, 2], 45);
    assert_check(&[x, w], |g, v| {
        let s = g.spectral_mix(v[0], v[1])?;
        probe(g, s, 46)
    });
}

#[test]
fn resampling() {
    let x = randn(&[2, 2, 8, 8], 47);
    assert_check(&[x.clone()], |g, v| {
        let s = g.avg_pool(v[0], 2)?;
        probe(g, s, 48)
    });
    let small = randn(&[1, 2, 4, 4], 49);
    assert_check(&[small], |g, v| {
        let s = g.upsample(v[0], 2)?;
        probe(g, s, 50)
    });
}

#[test]
fn sum_gradient_is_ones() {
    let x = randn(&[3, 4], 51);
    let mut tape = Tape::new();
    let v = tape.param("x", &x);
    let s = tape.sum_all(v);
    let g = tape.backward(s).unwrap();
    assert!(g.param("x").unwrap().data().iter().all(|&d| d == 1.0));
}

#[test]
fn squared_norm_of_sigmoid_affine() {
    let w = randn(&[4, 6], 52);
    let x = randn(&[3, 6], 53);
    assert_check(&[w, x], |g, v| {
        let y = g.linear(v[1], v[0], None)?;
        let s = g.sigmoid(y);
        let q = g.square(s);
        Ok(g.sum_all(q))
    });
}

#[test]
fn fft_round_trip_has_zero_gradient() {
    let x = randn(&[2, 8, 8], 54);
    let mut tape = Tape::new();
    let v = tape.param("x", &x);
    let f = tape.rfft2(v).unwrap();
    let back = tape.irfft2(f).unwrap();
    let d = tape.sub(back, v).unwrap();
    let l = probe(&mut tape, d, 55).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.param("x").unwrap().max_abs() < 1e-12);
}

#[test]
fn backward_rejects_non_scalar() {
    let x = randn(&[2], 56);
    let mut tape = Tape::new();
    let v = tape.param("x", &x);
    assert!(tape.backward(v).is_err());
}

#[test]
fn shared_subexpressions_accumulate() {
    // f(x) = x·x + x  →  f'(x) = 2x + 1
    let x = Tensor::new(vec![1], vec![0.3]).unwrap();
    let mut tape = Tape::new();
    let v = tape.param("x", &x);
    let sq = tape.mul(v, v).unwrap();
    let f = tape.add(sq, v).unwrap();
    let l = tape.sum_all(f);
    let g = tape.backward(l).unwrap();
    assert!((g.param("x").unwrap().item() - 1.6).abs() < 1e-15);
}

#[test]
fn eval_creates_no_tape() {
    let before = prisma::autodiff::tapes_created_on_this_thread();
    let x = randn(&[2, 4, 4], 57);
    let mut g = Eval::new();
    let v = g.param("x", &x);
    let f = g.rfft2(v).unwrap();
    let _ = g.irfft2(f).unwrap();
    assert_eq!(prisma::autodiff::tapes_created_on_this_thread(), before);
}

/// `⟨L x, y⟩ = ⟨x, Lᵀ y⟩` with `Lᵀ y` obtained from backward.
fn adjoint_gap<F>(x: &Tensor, seed: u64, op: F) -> f64
where
    F: for<'a> Fn(&mut Tape<'a>, Var) -> Var,
{
    let mut tape = Tape::new();
    let v = tape.param("x", x);
    let out = op(&mut tape, v);
    let y = randn(&tape.shape(out), seed);
    let lhs = tape.value(out).dot(&y);
    let yc = tape.constant(y);
    let p = tape.mul(out, yc).unwrap();
    let l = tape.sum_all(p);
    let g = tape.backward(l).unwrap();
    let rhs = x.dot(g.param("x").unwrap());
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300)
}

#[test]
fn linear_primitives_satisfy_adjoint_identity() {
    let x = randn(&[2, 3, 16, 16], 58);
    let w = randn(&[2, 3, 4, 4, 4, 2], 59);
    let k = randn(&[5, 3, 3, 3], 60);
    let checks: Vec<(&str, f64)> = vec![
        ("rfft2", adjoint_gap(&x, 61, |t, v| t.rfft2(v).unwrap())),
        ("avg_pool", adjoint_gap(&x, 62, |t, v| t.avg_pool(v, 4).unwrap())),
        ("upsample", adjoint_gap(&x, 63, |t, v| t.upsample(v, 2).unwrap())),
        ("conv", adjoint_gap(&x, 64, |t, v| {
            let kv = t.constant(k.clone());
            t.conv2d(v, kv, None).unwrap()
        })),
        ("spectral", adjoint_gap(&x, 65, |t, v| {
            let z = t.rfft2(v).unwrap();
            let wv = t.constant(w.clone());
            let m = t.spectral_mix(z, wv).unwrap();
            t.irfft2(m).unwrap()
        })),
    ];
    let z = randn(&[2, 16, 9, 2], 66);
    let irfft = adjoint_gap(&z, 67, |t, v| t.irfft2(v).unwrap());
    for (name, gap) in checks.into_iter().chain([("irfft2", irfft)]) {
        assert!(gap < 1e-12, "{name}: {gap}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fft_adjoint_any_size(log_h in 1usize..5, log_w in 1usize..5, seed in any::<u64>()) {
        let x = randn(&[1, 1 << log_h, 1 << log_w], seed);
        prop_assert!(adjoint_gap(&x, seed.wrapping_add(1), |t, v| t.rfft2(v).unwrap()) < 1e-12);
        let z = randn(&[1, 1 << log_h, (1 << log_w) / 2 + 1, 2], seed);
        prop_assert!(adjoint_gap(&z, seed.wrapping_add(2), |t, v| t.irfft2(v).unwrap()) < 1e-12);
    }

    #[test]
    fn pointwise_gradients_match_fd(seed in any::<u64>()) {
        let x = away_from_zero(&[6], seed);
        let report = check_gradients(&[x], &CheckOptions::default(), |g, v| {
            let a = g.gelu(v[0]);
            let b = g.sigmoid(a);
            let c = g.mul(a, b)?;
            Ok(g.sum_all(c))
        }).unwrap();
        prop_assert!(report.passed());
    }
}

#[test]
fn replay_and_adam_are_deterministic() {
    use prisma::autodiff::{adam_step, AdamConfig, AdamState, ParamKind, ParamStore};
    let run = || {
        let mut store = ParamStore::new();
        store.insert("w", randn(&[4, 6], 70), ParamKind::Real);
        let x = randn(&[3, 6], 71);
        let mut state = AdamState::default();
        let mut losses = Vec::new();
        for _ in 0..5 {
            let grads = {
                let mut tape = Tape::new();
                let w = tape.param("w", store.get("w").unwrap());
                let xv = tape.constant(x.clone());
                let y = tape.linear(xv, w, None).unwrap();
                let s = tape.sigmoid(y);
                let q = tape.square(s);
                let l = tape.sum_all(q);
                losses.push(tape.value(l).item());
                tape.backward(l).unwrap().into_named()
            };
            adam_step(&mut store, &grads, &mut state, 1e-2, &AdamConfig::default()).unwrap();
        }
        (losses, store.get("w").unwrap().clone())
    };
    let (l1, w1) = run();
    let (l2, w2) = run();
    assert_eq!(l1, l2);
    assert_eq!(w1, w2);
    assert!(l1.last() < l1.first());
}

#[test]
fn mode_embedding() {
    let w = randn(&[2, 3, 3], 72);
    assert_check(&[w.clone()], |g, v| {
        let s = g.embed_modes(v[0], 8, 5)?;
        probe(g, s, 73)
    });
    let mut e = Eval::new();
    let v = e.param("w", &w);
    let out = e.embed_modes(v, 8, 5).unwrap();
    let grid = e.value(out);
    assert_eq!(grid.data()[0], w.data()[0]);
    assert_eq!(grid.data()[5 * 5 + 2], w.data()[9 + 2]);
    assert_eq!(grid.data()[3 * 5], 0.0);
    assert_eq!(grid.data()[4], 0.0);
}
