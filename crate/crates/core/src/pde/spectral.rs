//! Pseudo-spectral operators on the periodic unit square, shared by the
//! vorticity residual and the vorticity integrator.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::field::fft::{half_width, irfft2_plane, rfft2_plane, wavenumber};

/// Precomputed wavenumber tables for an `n × n` periodic plane.
#[derive(Clone, Debug)]
pub(crate) struct Periodic {
    pub n: usize,
    wh: usize,
    /// `2πk_x` per half-spectrum column, zero on the Nyquist column.
    dx: Vec<f64>,
    /// `2πk_y` per row, zero on the Nyquist row.
    dy: Vec<f64>,
    /// `|2πk|²` per half-spectrum mode (Nyquist included).
    k2: Vec<f64>,
    /// 2/3-rule mask per half-spectrum mode.
    dealias: Vec<f64>,
}

impl Periodic {
    pub fn new(n: usize) -> Self {
        let wh = half_width(n);
        let nyq = |k: i64| k.unsigned_abs() as usize * 2 == n;
        let dx: Vec<f64> = (0..wh).map(|j| if nyq(j as i64) { 0.0 } else { 2.0 * PI * j as f64 }).collect();
        let dy: Vec<f64> = (0..n)
            .map(|i| {
                let k = wavenumber(i, n);
                if nyq(k) { 0.0 } else { 2.0 * PI * k as f64 }
            })
            .collect();
        let cut = n as f64 / 3.0;
        let mut k2 = vec![0.0; n * wh];
        let mut dealias = vec![0.0; n * wh];
        for i in 0..n {
            let ky = wavenumber(i, n) as f64;
            for j in 0..wh {
                let kx = j as f64;
                k2[i * wh + j] = 4.0 * PI * PI * (kx * kx + ky * ky);
                dealias[i * wh + j] = if kx.abs() < cut && ky.abs() < cut { 1.0 } else { 0.0 };
            }
        }
        Self { n, wh, dx, dy, k2, dealias }
    }

    pub fn forward(&self, plane: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n * self.wh];
        rfft2_plane(plane, self.n, self.n, &mut out);
        out
    }

    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        irfft2_plane(spec, self.n, self.n, &mut out);
        out
    }

    fn map(&self, spec: &[Complex64], f: impl Fn(usize, usize, Complex64) -> Complex64) -> Vec<Complex64> {
        let mut out = spec.to_vec();
        for i in 0..self.n {
            for j in 0..self.wh {
                let idx = i * self.wh + j;
                out[idx] = f(i, j, spec[idx]);
            }
        }
        out
    }

    pub fn d_dx(&self, spec: &[Complex64]) -> Vec<Complex64> {
        self.map(spec, |_, j, z| z * Complex64::new(0.0, self.dx[j]))
    }

    pub fn d_dy(&self, spec: &[Complex64]) -> Vec<Complex64> {
        self.map(spec, |i, _, z| z * Complex64::new(0.0, self.dy[i]))
    }

    pub fn laplacian(&self, spec: &[Complex64]) -> Vec<Complex64> {
        let wh = self.wh;
        self.map(spec, |i, j, z| z * -self.k2[i * wh + j])
    }

    /// Solves `Δψ = -ω` with the mean mode of `ψ` set to zero.
    pub fn streamfunction(&self, omega: &[Complex64]) -> Vec<Complex64> {
        let wh = self.wh;
        self.map(omega, |i, j, z| {
            let k2 = self.k2[i * wh + j];
            if k2 == 0.0 { Complex64::new(0.0, 0.0) } else { z / k2 }
        })
    }

    pub fn dealiased(&self, spec: &[Complex64]) -> Vec<Complex64> {
        let wh = self.wh;
        self.map(spec, |i, j, z| z * self.dealias[i * wh + j])
    }

    /// Returns `(v·∇ω, Δω)` in physical space for the spectrum of `ω`, with
    /// `v = ∇⊥ψ = (∂ψ/∂y, -∂ψ/∂x)` and `Δψ = -ω`.
    pub fn transport_terms(&self, omega: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let psi = self.streamfunction(omega);
        let vx = self.inverse(&self.d_dy(&psi));
        let vy: Vec<f64> = self.inverse(&self.d_dx(&psi)).into_iter().map(|v| -v).collect();
        let wx = self.inverse(&self.d_dx(omega));
        let wy = self.inverse(&self.d_dy(omega));
        let adv = (0..vx.len()).map(|p| vx[p] * wx[p] + vy[p] * wy[p]).collect();
        (adv, self.inverse(&self.laplacian(omega)))
    }
}
