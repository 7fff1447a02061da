use num_complex::Complex64;

use super::{fft, Field, Spectrum};
use crate::error::{Error, Result};

impl Field {
    /// Non-overlapping `factor × factor` mean pooling.
    pub fn downsample(&self, factor: usize) -> Result<Field> {
        if factor == 0 || self.size % factor != 0 || !factor.is_power_of_two() {
            return Err(Error::invalid(format!(
                "downsample factor {factor} does not divide grid size {}",
                self.size
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let n = self.size;
        let m = n / factor;
        let inv = 1.0 / (factor * factor) as f64;
        let mut data = vec![0.0; self.batch * self.channels * m * m];
        for (src, dst) in self.data.chunks(n * n).zip(data.chunks_mut(m * m)) {
            pool_plane(src, n, factor, inv, dst);
        }
        Ok(Field::from_raw(self.batch, self.channels, m, data))
    }

    /// Bilinear interpolation onto a grid `factor` times finer, with cell
    /// centres aligned and edge values clamped.
    pub fn upsample(&self, factor: usize) -> Result<Field> {
        if factor == 0 || !factor.is_power_of_two() {
            return Err(Error::invalid(format!("upsample factor {factor} is not a power of two")));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let n = self.size;
        let m = n * factor;
        let mut data = vec![0.0; self.batch * self.channels * m * m];
        let taps = bilinear_taps(n, factor);
        for (src, dst) in self.data.chunks(n * n).zip(data.chunks_mut(m * m)) {
            for (i, &(i0, i1, wi)) in taps.iter().enumerate() {
                for (j, &(j0, j1, wj)) in taps.iter().enumerate() {
                    let top = src[i0 * n + j0] * (1.0 - wj) + src[i0 * n + j1] * wj;
                    let bot = src[i1 * n + j0] * (1.0 - wj) + src[i1 * n + j1] * wj;
                    dst[i * m + j] = top * (1.0 - wi) + bot * wi;
                }
            }
        }
        Ok(Field::from_raw(self.batch, self.channels, m, data))
    }

    /// Band-limited (trigonometric) resampling to `new_size` points per axis:
    /// zero-pads or truncates the spectrum. Content at the source Nyquist
    /// frequency is dropped.
    pub fn fourier_resample(&self, new_size: usize) -> Result<Field> {
        if new_size < 2 || !new_size.is_power_of_two() {
            return Err(Error::invalid(format!("target size {new_size} is not a power of two")));
        }
        let n = self.size;
        let spec = self.fft2();
        let keep = n.min(new_size) / 2; // |k| < keep retained
        let wh_new = fft::half_width(new_size);
        let wh_old = fft::half_width(n);
        let scale = (new_size * new_size) as f64 / (n * n) as f64;
        let mut data = vec![Complex64::new(0.0, 0.0); self.batch * self.channels * new_size * wh_new];
        for (src, dst) in spec.data().chunks(n * wh_old).zip(data.chunks_mut(new_size * wh_new)) {
            for i in 0..n {
                let k = fft::wavenumber(i, n);
                if k.unsigned_abs() as usize >= keep {
                    continue;
                }
                let row = if k >= 0 { k as usize } else { (new_size as i64 + k) as usize };
                for j in 0..keep {
                    dst[row * wh_new + j] = src[i * wh_old + j] * scale;
                }
            }
        }
        Ok(Spectrum::new(self.batch, self.channels, new_size, data)?.ifft2())
    }

    /// Keeps every `factor`-th grid point. Exact inverse of
    /// [`Field::fourier_resample`] upsampling for band-limited fields.
    pub fn subsample(&self, factor: usize) -> Result<Field> {
        if factor == 0 || self.size % factor != 0 {
            return Err(Error::invalid(format!("subsample factor {factor} does not divide grid size")));
        }
        let n = self.size;
        let m = n / factor;
        let mut data = Vec::with_capacity(self.batch * self.channels * m * m);
        for src in self.data.chunks(n * n) {
            for i in 0..m {
                for j in 0..m {
                    data.push(src[i * factor * n + j * factor]);
                }
            }
        }
        Ok(Field::from_raw(self.batch, self.channels, m, data))
    }
}

pub(crate) fn pool_plane(src: &[f64], n: usize, factor: usize, inv: f64, dst: &mut [f64]) {
    let m = n / factor;
    for i in 0..n {
        let row = &src[i * n..(i + 1) * n];
        let out = &mut dst[(i / factor) * m..(i / factor + 1) * m];
        for (j, v) in row.iter().enumerate() {
            out[j / factor] += v * inv;
        }
    }
}

/// For each fine index: (coarse lower, coarse upper, weight of upper).
pub(crate) fn bilinear_taps(n: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..n * factor)
        .map(|i| {
            let pos = (i as f64 + 0.5) / factor as f64 - 0.5;
            if pos <= 0.0 {
                (0, 0, 0.0)
            } else if pos >= (n - 1) as f64 {
                (n - 1, n - 1, 0.0)
            } else {
                let lo = pos.floor() as usize;
                (lo, lo + 1, pos - lo as f64)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_matches_hand_computed_means() {
        let f = Field::new(1, 1, 4, (0..16).map(f64::from).collect()).unwrap();
        let d = f.downsample(2).unwrap();
        assert_eq!(d.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn constants_are_preserved() {
        let f = Field::constant(2, 3, 16, 3.5).unwrap();
        for factor in [1, 2, 4, 8, 16] {
            assert!(f.downsample(factor).unwrap().data().iter().all(|&v| (v - 3.5).abs() < 1e-15));
        }
        for factor in [2, 4] {
            let up = f.upsample(factor).unwrap();
            assert!(up.data().iter().all(|&v| (v - 3.5).abs() < 1e-15));
            assert_eq!(up.downsample(factor).unwrap(), f);
        }
    }

    #[test]
    fn rejects_bad_factors() {
        let f = Field::zeros(1, 1, 8).unwrap();
        assert!(f.downsample(3).is_err());
        assert!(f.downsample(16).is_err());
        assert!(f.upsample(3).is_err());
    }

    #[test]
    fn pooling_partitions_the_sum() {
        let f = Field::new(1, 2, 8, (0..128).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let d = f.downsample(4).unwrap();
        assert!((d.sum() * 16.0 - f.sum()).abs() < 1e-12);
    }

    #[test]
    fn fourier_upsample_then_subsample_is_identity_for_band_limited() {
        let n = 16;
        let f = Field::from_fn(n, super::super::periodic_coord(n), |x, y| {
            let t = 2.0 * std::f64::consts::PI;
            (t * x).sin() + 0.3 * (3.0 * t * y).cos() + 0.1 * (t * (2.0 * x + 5.0 * y)).sin()
        })
        .unwrap();
        let up = f.fourier_resample(32).unwrap();
        let back = up.subsample(2).unwrap();
        assert!(back.zip_map(&f, |a, b| a - b).unwrap().max_abs() < 1e-12);
        let down = up.fourier_resample(16).unwrap();
        assert!(down.zip_map(&f, |a, b| a - b).unwrap().max_abs() < 1e-12);
    }
}
