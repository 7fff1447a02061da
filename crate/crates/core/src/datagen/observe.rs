use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::Field;

fn pixel_count(fraction: f64, plane: usize) -> usize {
    (fraction * plane as f64).round() as usize
}

/// Adds `N(0, σ²)` noise to exactly `round(p·H·W)` distinct pixels of every
/// plane, chosen uniformly.
pub fn corrupt_observations(f: &Field, fraction: f64, sigma: f64, seed: u64) -> Result<Field> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("corruption fraction {fraction} outside [0, 1]")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise level {sigma} must be non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corrupt_with(f, fraction, sigma, &mut rng)
}

pub(crate) fn corrupt_with(f: &Field, fraction: f64, sigma: f64, rng: &mut impl Rng) -> Result<Field> {
    let mut out = f.clone();
    let plane = f.plane_len();
    let count = pixel_count(fraction, plane);
    for b in 0..f.batch() {
        for c in 0..f.channels() {
            let dst = out.plane_mut(b, c);
            for p in sample(rng, plane, count) {
                let e: f64 = rng.sample(StandardNormal);
                dst[p] += sigma * e;
            }
        }
    }
    Ok(out)
}

/// Binary mask with exactly `round(q·H·W)` ones per plane, placed uniformly
/// without replacement.
pub fn sample_sparsity_mask(fraction: f64, seed: u64, batch: usize, channels: usize, size: usize) -> Result<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mask_with(fraction, batch, channels, size, &mut rng)
}

pub(crate) fn mask_with(fraction: f64, batch: usize, channels: usize, size: usize, rng: &mut impl Rng) -> Result<Field> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("observed fraction {fraction} must lie in (0, 1]")));
    }
    let mut out = Field::zeros(batch, channels, size)?;
    let plane = size * size;
    let count = pixel_count(fraction, plane);
    if count == 0 {
        return Err(Error::invalid(format!("observed fraction {fraction} leaves no pixel of {size}x{size} observed")));
    }
    for b in 0..batch {
        for c in 0..channels {
            let dst = out.plane_mut(b, c);
            for p in sample(rng, plane, count) {
                dst[p] = 1.0;
            }
        }
    }
    Ok(out)
}
