//! Discretized fields on the unit square and their Fourier spectra.
//!
//! A [`Field`] is a real `batch × channels × n × n` array with `n` a power of
//! two. A [`Spectrum`] holds the real-input half spectrum of a field:
//! `batch × channels × n × (n/2 + 1)` complex coefficients, unnormalized on
//! the forward side.
//!
//! Wavevectors follow `k ∈ {-n/2+1, …, n/2}` in cycles per unit length, so
//! the physical wavenumber on `(0,1)²` is `2πk`.

pub mod fft;
mod grf;
mod resample;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub use grf::{sample_grf, sample_grf_with, GrfKind, GrfSpec};
pub(crate) use resample::{bilinear_taps as bilinear_taps_of, pool_plane as pool_plane_into};

/// Spatial axis of a field plane. `X` runs along columns, `Y` along rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    batch: usize,
    channels: usize,
    size: usize,
    data: Vec<f64>,
}

fn check_dims(batch: usize, channels: usize, size: usize) -> Result<()> {
    if batch == 0 || channels == 0 {
        return Err(Error::shape(format!(
            "batch and channels must be >= 1 (got {batch} x {channels})"
        )));
    }
    if size < 2 || !size.is_power_of_two() {
        return Err(Error::shape(format!("grid size {size} is not a power of two >= 2")));
    }
    Ok(())
}

impl Field {
    pub fn new(batch: usize, channels: usize, size: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(batch, channels, size)?;
        if data.len() != batch * channels * size * size {
            return Err(Error::shape(format!(
                "data length {} does not match {batch}x{channels}x{size}x{size}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { batch, channels, size, data })
    }

    pub fn zeros(batch: usize, channels: usize, size: usize) -> Result<Self> {
        Self::constant(batch, channels, size, 0.0)
    }

    pub fn constant(batch: usize, channels: usize, size: usize, value: f64) -> Result<Self> {
        check_dims(batch, channels, size)?;
        if !value.is_finite() {
            return Err(Error::invalid("constant must be finite"));
        }
        Ok(Self { batch, channels, size, data: vec![value; batch * channels * size * size] })
    }

    /// Builds a single-sample, single-channel field by evaluating `f(x, y)`
    /// at the points returned by `coord(i)` along each axis.
    pub fn from_fn(
        size: usize,
        coord: impl Fn(usize) -> f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                data.push(f(coord(j), coord(i)));
            }
        }
        Self::new(1, 1, size, data)
    }

    /// Skips the finiteness scan. Callers guarantee the invariants.
    pub(crate) fn from_raw(batch: usize, channels: usize, size: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), batch * channels * size * size);
        Self { batch, channels, size, data }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Grid points per axis (`H = W`).
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn plane_len(&self) -> usize {
        self.size * self.size
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.size, self.size]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let n = self.plane_len();
        let start = (b * self.channels + c) * n;
        &self.data[start..start + n]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        let start = (b * self.channels + c) * n;
        &mut self.data[start..start + n]
    }

    pub fn get(&self, b: usize, c: usize, i: usize, j: usize) -> f64 {
        self.plane(b, c)[i * self.size + j]
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn require_same_shape(&self, other: &Field, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    /// One batch item as a field of batch 1.
    pub fn sample(&self, b: usize) -> Field {
        let n = self.channels * self.plane_len();
        Field::from_raw(1, self.channels, self.size, self.data[b * n..(b + 1) * n].to_vec())
    }

    /// One channel across the batch.
    pub fn channel(&self, c: usize) -> Field {
        let mut data = Vec::with_capacity(self.batch * self.plane_len());
        for b in 0..self.batch {
            data.extend_from_slice(self.plane(b, c));
        }
        Field::from_raw(self.batch, 1, self.size, data)
    }

    /// Concatenates fields along the channel axis.
    pub fn concat_channels(parts: &[&Field]) -> Result<Field> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let (batch, size) = (first.batch, first.size);
        if parts.iter().any(|p| p.batch != batch || p.size != size) {
            return Err(Error::shape("concat_channels: batch/size mismatch"));
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(batch * channels * size * size);
        for b in 0..batch {
            for p in parts {
                for c in 0..p.channels {
                    data.extend_from_slice(p.plane(b, c));
                }
            }
        }
        Ok(Field::from_raw(batch, channels, size, data))
    }

    /// Concatenates fields along the batch axis.
    pub fn stack(parts: &[Field]) -> Result<Field> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to stack"))?;
        let (channels, size) = (first.channels, first.size);
        if parts.iter().any(|p| p.channels != channels || p.size != size) {
            return Err(Error::shape("stack: channel/size mismatch"));
        }
        let batch = parts.iter().map(|p| p.batch).sum();
        let mut data = Vec::with_capacity(batch * channels * size * size);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Field::from_raw(batch, channels, size, data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.batch, self.channels, self.size, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.require_same_shape(other, "zip_map")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Field::from_raw(self.batch, self.channels, self.size, data))
    }

    pub fn scale(&self, s: f64) -> Field {
        self.map(|v| v * s)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Unnormalized forward DFT of every plane.
    pub fn fft2(&self) -> Spectrum {
        let n = self.size;
        let wh = fft::half_width(n);
        let mut data = vec![Complex64::new(0.0, 0.0); self.batch * self.channels * n * wh];
        for (plane, out) in self.data.chunks(n * n).zip(data.chunks_mut(n * wh)) {
            fft::rfft2_plane(plane, n, n, out);
        }
        Spectrum { batch: self.batch, channels: self.channels, size: n, data }
    }

    /// Multiplies the spectrum along `axis` by `(i·2πk)^order`. Assumes the
    /// field is periodic on the unit square. The Nyquist mode of the
    /// differentiated axis is zeroed for every `order >= 1`.
    pub fn spectral_derivative(&self, axis: Axis, order: u32) -> Field {
        if order == 0 {
            return self.clone();
        }
        let n = self.size;
        let mut spec = self.fft2();
        spec.map_modes(|kx, ky, z| {
            let k = match axis {
                Axis::X => kx,
                Axis::Y => ky,
            };
            if k.unsigned_abs() as usize * 2 == n {
                return Complex64::new(0.0, 0.0);
            }
            let factor = Complex64::new(0.0, 2.0 * std::f64::consts::PI * k as f64).powu(order);
            z * factor
        });
        spec.ifft2()
    }
}

/// Half-spectrum coefficients of a [`Field`].
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    batch: usize,
    channels: usize,
    size: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(batch: usize, channels: usize, size: usize, data: Vec<Complex64>) -> Result<Self> {
        check_dims(batch, channels, size)?;
        if data.len() != batch * channels * size * fft::half_width(size) {
            return Err(Error::shape("spectrum data length does not match its shape"));
        }
        Ok(Self { batch, channels, size, data })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Spatial grid size of the field this spectrum came from.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn half_width(&self) -> usize {
        fft::half_width(self.size)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn plane(&self, b: usize, c: usize) -> &[Complex64] {
        let n = self.size * self.half_width();
        let start = (b * self.channels + c) * n;
        &self.data[start..start + n]
    }

    /// Coefficient at row `i`, half-axis column `j`.
    pub fn get(&self, b: usize, c: usize, i: usize, j: usize) -> Complex64 {
        self.plane(b, c)[i * self.half_width() + j]
    }

    /// Applies `f(kx, ky, z)` to every stored coefficient, where `kx` is the
    /// column (half-axis) wavenumber and `ky` the signed row wavenumber.
    pub fn map_modes(&mut self, f: impl Fn(i64, i64, Complex64) -> Complex64) {
        let n = self.size;
        let wh = self.half_width();
        for plane in self.data.chunks_mut(n * wh) {
            for i in 0..n {
                let ky = fft::wavenumber(i, n);
                for j in 0..wh {
                    let z = &mut plane[i * wh + j];
                    *z = f(j as i64, ky, *z);
                }
            }
        }
    }

    /// Inverse transform (divides by `n²`). Interior half-axis columns are
    /// counted twice, standing in for their Hermitian mirrors.
    pub fn ifft2(&self) -> Field {
        let n = self.size;
        let wh = self.half_width();
        let mut data = vec![0.0; self.batch * self.channels * n * n];
        for (plane, out) in self.data.chunks(n * wh).zip(data.chunks_mut(n * n)) {
            fft::irfft2_plane(plane, n, n, out);
        }
        Field::from_raw(self.batch, self.channels, self.size, data)
    }

    /// `Σ |z|²` over the full (mirrored) spectrum.
    pub fn energy(&self) -> f64 {
        let n = self.size;
        let wh = self.half_width();
        let mut total = 0.0;
        for plane in self.data.chunks(n * wh) {
            for i in 0..n {
                for j in 0..wh {
                    let w = if j == 0 || j == n / 2 { 1.0 } else { 2.0 };
                    total += w * plane[i * wh + j].norm_sqr();
                }
            }
        }
        total
    }
}

/// Grid coordinate of index `i` for a periodic grid of `n` points on `[0,1)`.
pub fn periodic_coord(n: usize) -> impl Fn(usize) -> f64 {
    move |i| i as f64 / n as f64
}

/// Grid coordinate of index `i` for the `n` interior nodes of a Dirichlet
/// grid on `[0,1]` (spacing `1/(n+1)`).
pub fn dirichlet_coord(n: usize) -> impl Fn(usize) -> f64 {
    move |i| (i + 1) as f64 / (n + 1) as f64
}

/// Grid spacing of the interior-node Dirichlet grid.
pub fn dirichlet_spacing(n: usize) -> f64 {
    1.0 / (n + 1) as f64
}
