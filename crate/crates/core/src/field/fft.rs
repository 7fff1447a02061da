//! Real-input 2-D FFT kernels over a single `h × w` plane.
//!
//! Half-spectrum layout: `h` rows by `w/2 + 1` columns, row-major. The
//! forward transform is unnormalized; the inverse divides by `h·w`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                let dir = if inverse { FftDirection::Inverse } else { FftDirection::Forward };
                planner.plan_fft(len, dir)
            })
            .clone()
    })
}

/// Weighting applied to half-spectrum columns during synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Synthesis {
    /// Columns `0` and `w/2` count once, interior columns twice (the
    /// Hermitian mirror). This is the inverse real FFT.
    Hermitian,
    /// Every stored column counts once. This is the adjoint of [`rfft2_plane`].
    Unit,
}

#[inline]
pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// Forward unnormalized DFT of a real plane into the half spectrum.
pub fn rfft2_plane(input: &[f64], h: usize, w: usize, out: &mut [Complex64]) {
    let wh = half_width(w);
    debug_assert_eq!(input.len(), h * w);
    debug_assert_eq!(out.len(), h * wh);

    let mut rows: Vec<Complex64> = input.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan(w, false).process(&mut rows);

    // columns j = 0..wh, stored transposed so each column is contiguous
    let mut cols = vec![Complex64::new(0.0, 0.0); wh * h];
    for i in 0..h {
        for j in 0..wh {
            cols[j * h + i] = rows[i * w + j];
        }
    }
    plan(h, false).process(&mut cols);
    for j in 0..wh {
        for i in 0..h {
            out[i * wh + j] = cols[j * h + i];
        }
    }
}

/// Real part of `scale · Σ_k c_j X[k] e^{+2πi k·n/N}` over the stored half
/// spectrum, with column weights `c_j` chosen by `mode`.
pub fn synthesize_plane(
    input: &[Complex64],
    h: usize,
    w: usize,
    mode: Synthesis,
    scale: f64,
    out: &mut [f64],
) {
    let wh = half_width(w);
    debug_assert_eq!(input.len(), h * wh);
    debug_assert_eq!(out.len(), h * w);

    let mut cols = vec![Complex64::new(0.0, 0.0); wh * h];
    for i in 0..h {
        for j in 0..wh {
            cols[j * h + i] = input[i * wh + j];
        }
    }
    plan(h, true).process(&mut cols);

    let mut rows = vec![Complex64::new(0.0, 0.0); h * w];
    for i in 0..h {
        for j in 0..wh {
            let weight = match mode {
                Synthesis::Unit => 1.0,
                Synthesis::Hermitian => {
                    if j == 0 || (w % 2 == 0 && j == w / 2) {
                        1.0
                    } else {
                        2.0
                    }
                }
            };
            rows[i * w + j] = cols[j * h + i] * weight;
        }
    }
    plan(w, true).process(&mut rows);
    for (o, z) in out.iter_mut().zip(rows.iter()) {
        *o = z.re * scale;
    }
}

/// Inverse of [`rfft2_plane`]; divides by `h·w`.
pub fn irfft2_plane(input: &[Complex64], h: usize, w: usize, out: &mut [f64]) {
    synthesize_plane(input, h, w, Synthesis::Hermitian, 1.0 / (h * w) as f64, out);
}

/// Signed wavenumber of FFT index `i` on an axis of length `n`, using the
/// convention `{-n/2+1, …, n/2}`.
#[inline]
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}
