use std::f64::consts::PI;

use num_complex::Complex64;

use crate::autodiff::kernels::gemm;
use crate::error::{Error, Result};
use crate::field::{dirichlet_spacing, Field};
use crate::pde::spectral::Periodic;
use crate::pde::{darcy_flux, ns_forcing, Equation, PdeSpec};

/// Relative residual target of the Darcy conjugate-gradient solve.
pub const CG_TOLERANCE: f64 = 1e-10;
/// RK4 substeps per vorticity step.
pub const NS_SUBSTEPS: usize = 10;

/// Solves for `u` given the coefficient `a`, plane by plane.
///
/// Poisson and Helmholtz use an exact sine-basis diagonalization of the
/// five-point operator; Darcy runs Jacobi-preconditioned CG on the flux-form
/// system; Navier–Stokes advances `a = ω_t` by one step `Δt`.
pub fn solve_forward(a: &Field, spec: &PdeSpec) -> Result<Field> {
    spec.validate()?;
    let n = a.size();
    let mut out = Field::zeros(a.batch(), a.channels(), n)?;
    for b in 0..a.batch() {
        for c in 0..a.channels() {
            let src = a.plane(b, c);
            let u = match spec.equation {
                Equation::Poisson => DirichletSine::new(n).solve(src, 0.0),
                Equation::Helmholtz => DirichletSine::new(n).solve(src, spec.k * spec.k),
                Equation::Darcy => solve_darcy(src, n, spec.g, CG_TOLERANCE, 20 * n * n)?.0,
                Equation::NavierStokes => integrate_vorticity(src, n, spec, 1),
            };
            out.plane_mut(b, c).copy_from_slice(&u);
        }
    }
    if !out.is_finite() {
        return Err(Error::Numerical("solver produced non-finite values".into()));
    }
    Ok(out)
}

/// Fast diagonalization of the zero-Dirichlet five-point Laplacian on the
/// interior nodes, in the dense sine basis.
pub(crate) struct DirichletSine {
    n: usize,
    /// `S[i][p] = sin(π (i+1)(p+1) / (n+1))`, symmetric, `S² = (n+1)/2 · I`.
    basis: Vec<f64>,
    /// Eigenvalues of the 1-D second difference.
    eig: Vec<f64>,
}

impl DirichletSine {
    pub fn new(n: usize) -> Self {
        let m = (n + 1) as f64;
        let mut basis = vec![0.0; n * n];
        for i in 0..n {
            for p in 0..n {
                basis[i * n + p] = (PI * ((i + 1) * (p + 1)) as f64 / m).sin();
            }
        }
        let h = dirichlet_spacing(n);
        let eig = (1..=n).map(|p| -4.0 / (h * h) * (PI * p as f64 / (2.0 * m)).sin().powi(2)).collect();
        Self { n, basis, eig }
    }

    fn sandwich(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut tmp = vec![0.0; n * n];
        let mut out = vec![0.0; n * n];
        gemm(n, n, n, &self.basis, false, x, false, 0.0, &mut tmp);
        gemm(n, n, n, &tmp, false, &self.basis, false, 0.0, &mut out);
        out
    }

    /// Solves `(Δ_h + shift) u = rhs`.
    pub fn solve(&self, rhs: &[f64], shift: f64) -> Vec<f64> {
        let n = self.n;
        let mut coef = self.sandwich(rhs);
        let norm = (2.0 / (n + 1) as f64).powi(2);
        for p in 0..n {
            for q in 0..n {
                coef[p * n + q] *= norm / (self.eig[p] + self.eig[q] + shift);
            }
        }
        self.sandwich(&coef)
    }
}

/// Iteration statistics of a CG solve.
#[derive(Clone, Debug)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `−∇·(a∇u) = g` with Jacobi-preconditioned CG to the given
/// relative residual.
pub fn solve_darcy(a: &[f64], n: usize, g: f64, tol: f64, max_iter: usize) -> Result<(Vec<f64>, CgStats)> {
    let h2 = dirichlet_spacing(n).powi(2);
    let apply = |u: &[f64], out: &mut [f64]| {
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = -darcy_flux(a, u, n, i, j) / h2;
            }
        }
    };
    let diag: Vec<f64> = {
        let mut e = vec![0.0; n * n];
        let mut d = vec![0.0; n * n];
        for p in 0..n * n {
            e[p] = 1.0;
            let (i, j) = (p / n, p % n);
            d[p] = -darcy_flux(a, &e, n, i, j) / h2;
            e[p] = 0.0;
        }
        d
    };
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::invalid("Darcy coefficient must be positive"));
    }
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();

    let b = vec![g; n * n];
    let b_norm = dot(&b, &b).sqrt();
    let mut u = vec![0.0; n * n];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n * n];
    let mut rz = dot(&r, &z);
    let mut trace = Vec::new();
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for k in 0..u.len() {
            u[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rel = dot(&r, &r).sqrt() / b_norm;
        trace.push(rel);
        if !rel.is_finite() {
            break;
        }
        if rel < tol {
            // Confirm against the true residual, not the recurrence.
            let mut au = vec![0.0; n * n];
            apply(&u, &mut au);
            let true_rel = au.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() / b_norm;
            if true_rel < tol {
                return Ok((u, CgStats { iterations: it, relative_residual: true_rel }));
            }
            for k in 0..r.len() {
                r[k] = b[k] - au[k];
            }
        }
        for k in 0..z.len() {
            z[k] = r[k] / diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..p.len() {
            p[k] = z[k] + beta * p[k];
        }
    }
    let residual = trace.last().copied().unwrap_or(f64::NAN);
    Err(Error::CgNotConverged { iterations: trace.len(), residual, trace })
}

/// Advances periodic vorticity by `steps · Δt` with RK4 substeps, 2/3-rule
/// dealiasing of the advection term and the fixed forcing.
pub fn integrate_vorticity(omega: &[f64], n: usize, spec: &PdeSpec, steps: usize) -> Vec<f64> {
    let ops = Periodic::new(n);
    let forcing = ops.forward(ns_forcing(n).plane(0, 0));
    let nu = spec.nu;
    let rhs = |w: &[Complex64]| -> Vec<Complex64> {
        let (adv, _) = ops.transport_terms(w);
        let adv = ops.dealiased(&ops.forward(&adv));
        let lap = ops.laplacian(w);
        (0..w.len()).map(|k| -adv[k] + nu * lap[k] + forcing[k]).collect()
    };
    let axpy = |x: &[Complex64], s: f64, y: &[Complex64]| -> Vec<Complex64> {
        x.iter().zip(y).map(|(a, b)| a + b * s).collect()
    };
    let dt = spec.dt / NS_SUBSTEPS as f64;
    let mut w = ops.forward(omega);
    for _ in 0..steps * NS_SUBSTEPS {
        let k1 = rhs(&w);
        let k2 = rhs(&axpy(&w, dt / 2.0, &k1));
        let k3 = rhs(&axpy(&w, dt / 2.0, &k2));
        let k4 = rhs(&axpy(&w, dt, &k3));
        for k in 0..w.len() {
            w[k] += (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]) * (dt / 6.0);
        }
    }
    ops.inverse(&w)
}
