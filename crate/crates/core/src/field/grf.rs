//! Gaussian random fields on the periodic unit square, sampled spectrally.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{fft, Field};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GrfKind {
    /// Squared-exponential covariance `exp(-r²/2ℓ²)` on the torus. The
    /// spectrum is normalized so the pointwise variance is `amplitude²`.
    Rbf { length_scale: f64 },
    /// Covariance `amplitude² (-Δ + shift·I)^{-2}`, spectral density
    /// `amplitude² (|2πk|² + shift)^{-2}`.
    InverseLaplacianSquared { shift: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrfSpec {
    pub kind: GrfKind,
    pub amplitude: f64,
}

impl GrfSpec {
    pub fn rbf(length_scale: f64) -> Self {
        Self { kind: GrfKind::Rbf { length_scale }, amplitude: 1.0 }
    }

    pub fn inverse_laplacian_squared(shift: f64) -> Self {
        Self { kind: GrfKind::InverseLaplacianSquared { shift }, amplitude: 1.0 }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::invalid(format!("GRF amplitude {} must be finite and >= 0", self.amplitude)));
        }
        match self.kind {
            GrfKind::Rbf { length_scale } if !(length_scale > 0.0 && length_scale.is_finite()) => Err(
                Error::invalid(format!("GRF length scale {length_scale} must be positive")),
            ),
            GrfKind::InverseLaplacianSquared { shift } if !(shift > 0.0 && shift.is_finite()) => {
                Err(Error::invalid(format!("GRF shift {shift} must be positive")))
            }
            _ => Ok(()),
        }
    }

    /// Spectral density on the stored half spectrum of an `n × n` grid
    /// (rows by signed `ky`, columns by `kx ≥ 0`).
    pub fn density_table(&self, n: usize) -> Vec<f64> {
        let wh = fft::half_width(n);
        let mut table = vec![0.0; n * wh];
        for i in 0..n {
            let ky = fft::wavenumber(i, n) as f64;
            for j in 0..wh {
                let kx = j as f64;
                let k2 = kx * kx + ky * ky;
                table[i * wh + j] = match self.kind {
                    GrfKind::Rbf { length_scale } => {
                        (-2.0 * PI * PI * length_scale * length_scale * k2).exp()
                    }
                    GrfKind::InverseLaplacianSquared { shift } => {
                        (4.0 * PI * PI * k2 + shift).powi(-2)
                    }
                };
            }
        }
        if let GrfKind::Rbf { .. } = self.kind {
            // normalize over the full (mirrored) spectrum
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..wh {
                    let w = if j == 0 || j == n / 2 { 1.0 } else { 2.0 };
                    total += w * table[i * wh + j];
                }
            }
            table.iter_mut().for_each(|d| *d /= total);
        }
        let a2 = self.amplitude * self.amplitude;
        table.iter_mut().for_each(|d| *d *= a2);
        table
    }
}

/// Draws `batch × channels` independent fields; a pure function of
/// `(spec, shape, seed)`.
pub fn sample_grf(
    spec: &GrfSpec,
    batch: usize,
    channels: usize,
    size: usize,
    seed: u64,
) -> Result<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_grf_with(spec, batch, channels, size, &mut rng)
}

/// As [`sample_grf`] but drawing from a caller-owned generator.
///
/// White noise is transformed, each mode scaled by `sqrt(n² · density)`,
/// and transformed back. The pointwise variance equals the sum of the
/// density over the grid's modes.
pub fn sample_grf_with<R: Rng + ?Sized>(
    spec: &GrfSpec,
    batch: usize,
    channels: usize,
    size: usize,
    rng: &mut R,
) -> Result<Field> {
    spec.validate()?;
    let mut out = Field::zeros(batch, channels, size)?;
    let n = size;
    let wh = fft::half_width(n);
    let gain: Vec<f64> = spec.density_table(n).iter().map(|d| ((n * n) as f64 * d).sqrt()).collect();
    let mut noise = vec![0.0; n * n];
    let mut spec_buf = vec![Complex64::new(0.0, 0.0); n * wh];
    for b in 0..batch {
        for c in 0..channels {
            noise.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            fft::rfft2_plane(&noise, n, n, &mut spec_buf);
            spec_buf.iter_mut().zip(&gain).for_each(|(z, g)| *z *= g);
            fft::irfft2_plane(&spec_buf, n, n, out.plane_mut(b, c));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = GrfSpec::rbf(0.05);
        let a = sample_grf(&spec, 2, 2, 16, 42).unwrap();
        let b = sample_grf(&spec, 2, 2, 16, 42).unwrap();
        let c = sample_grf(&spec, 2, 2, 16, 43).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(sample_grf(&GrfSpec::rbf(0.0), 1, 1, 8, 0).is_err());
        assert!(sample_grf(&GrfSpec::rbf(-1.0), 1, 1, 8, 0).is_err());
        assert!(sample_grf(&GrfSpec::inverse_laplacian_squared(0.0), 1, 1, 8, 0).is_err());
    }

    #[test]
    fn densities_are_finite_and_nonnegative() {
        for spec in [GrfSpec::rbf(0.05), GrfSpec::rbf(2.0), GrfSpec::inverse_laplacian_squared(9.0)] {
            assert!(spec.density_table(32).iter().all(|d| d.is_finite() && *d >= 0.0));
        }
    }

    #[test]
    fn rbf_has_unit_marginal_variance() {
        let f = sample_grf(&GrfSpec::rbf(0.05), 400, 1, 16, 9).unwrap();
        let var = f.data().iter().map(|v| v * v).sum::<f64>() / f.data().len() as f64;
        assert!((var - 1.0).abs() < 0.05, "var = {var}");
    }
}
