//! Discrete residual operators `R(a, u)` for the supported equations.
//!
//! Dirichlet problems live on the `n × n` interior nodes of the unit square,
//! `x_i = (i+1)/(n+1)`, so the zero ghost values sit exactly on the boundary.
//! The Navier–Stokes residual is periodic and fully pseudo-spectral.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{dirichlet_spacing, Field};

pub(crate) mod spectral;

use spectral::Periodic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Equation {
    Poisson,
    Darcy,
    Helmholtz,
    NavierStokes,
}

impl Equation {
    pub const ALL: [Equation; 4] = [Equation::Poisson, Equation::Darcy, Equation::Helmholtz, Equation::NavierStokes];

    pub fn name(self) -> &'static str {
        match self {
            Equation::Poisson => "poisson",
            Equation::Darcy => "darcy",
            Equation::Helmholtz => "helmholtz",
            Equation::NavierStokes => "navier_stokes",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s || (s == "ns" && *e == Equation::NavierStokes))
            .ok_or_else(|| Error::invalid(format!("unknown equation {s:?}")))
    }

    /// Stable one-byte code used by the dataset container.
    pub fn code(self) -> u8 {
        match self {
            Equation::Poisson => 1,
            Equation::Darcy => 2,
            Equation::Helmholtz => 3,
            Equation::NavierStokes => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.code() == code)
            .ok_or_else(|| Error::Malformed(format!("unknown equation code {code}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    DirichletZero,
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdeSpec {
    pub equation: Equation,
    /// Helmholtz wavenumber.
    pub k: f64,
    /// Kinematic viscosity.
    pub nu: f64,
    /// Time step of the one-step vorticity residual.
    pub dt: f64,
    /// Constant Darcy forcing.
    pub g: f64,
    pub boundary: Boundary,
}

impl PdeSpec {
    pub fn new(equation: Equation) -> Self {
        let boundary = match equation {
            Equation::NavierStokes => Boundary::Periodic,
            _ => Boundary::DirichletZero,
        };
        Self { equation, k: 1.0, nu: 1e-3, dt: 0.1, g: 1.0, boundary }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::new(self.equation).boundary;
        if self.boundary != expected {
            return Err(Error::invalid(format!("{} needs {:?} boundaries", self.equation.name(), expected)));
        }
        let check = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        match self.equation {
            Equation::Poisson => Ok(()),
            Equation::Darcy => check("g", self.g),
            Equation::Helmholtz => check("k", self.k),
            Equation::NavierStokes => {
                check("nu", self.nu)?;
                check("dt", self.dt)
            }
        }
    }

    /// Residual of the pair `(a, u)`. For Navier–Stokes `a` is `ω_t` and `u`
    /// is `ω_{t+Δt}`, with the fixed forcing of [`ns_forcing`].
    pub fn residual(&self, a: &Field, u: &Field) -> Result<Field> {
        self.validate()?;
        let h = dirichlet_spacing(a.size());
        match self.equation {
            Equation::Poisson => residual_poisson(a, u, h),
            Equation::Darcy => residual_darcy(a, u, h, self.g),
            Equation::Helmholtz => residual_helmholtz(a, u, h, self.k),
            Equation::NavierStokes => {
                let f = ns_forcing(a.size());
                residual_navier_stokes(a, u, &f, self)
            }
        }
    }
}

/// `0.1 (sin 2π(x+y) + cos 2π(x+y))` on the periodic grid, one channel.
pub fn ns_forcing(n: usize) -> Field {
    Field::from_fn(n, crate::field::periodic_coord(n), |x, y| {
        let t = 2.0 * PI * (x + y);
        0.1 * (t.sin() + t.cos())
    })
    .expect("forcing is finite")
}

/// Applies `f(index, [center, east, west, north, south])` with zero ghosts
/// outside the grid.
fn stencil(u: &[f64], n: usize, out: &mut [f64], f: impl Fn(usize, [f64; 5]) -> f64) {
    for i in 0..n {
        for j in 0..n {
            let at = |ii: isize, jj: isize| {
                if ii < 0 || jj < 0 || ii >= n as isize || jj >= n as isize {
                    0.0
                } else {
                    u[ii as usize * n + jj as usize]
                }
            };
            let (ii, jj) = (i as isize, j as isize);
            let p = i * n + j;
            out[p] = f(p, [at(ii, jj), at(ii, jj + 1), at(ii, jj - 1), at(ii + 1, jj), at(ii - 1, jj)]);
        }
    }
}

fn planewise(a: &Field, u: &Field, mut f: impl FnMut(&[f64], &[f64], &mut [f64])) -> Result<Field> {
    a.require_same_shape(u, "residual (a, u)")?;
    let mut out = Field::zeros(a.batch(), a.channels(), a.size())?;
    for b in 0..a.batch() {
        for c in 0..a.channels() {
            f(a.plane(b, c), u.plane(b, c), out.plane_mut(b, c));
        }
    }
    Ok(out)
}

fn check_spacing(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("grid spacing must be positive, got {h}")))
    }
}

/// Five-point `Δu − a` with zero Dirichlet ghosts.
pub fn residual_poisson(a: &Field, u: &Field, h: f64) -> Result<Field> {
    check_spacing(h)?;
    let n = a.size();
    let inv = 1.0 / (h * h);
    planewise(a, u, |ap, up, out| {
        stencil(up, n, out, |p, [c, e, w, nn, s]| (e + w + nn + s - 4.0 * c) * inv - ap[p]);
    })
}

/// Five-point `Δu + k²u − a` with zero Dirichlet ghosts.
pub fn residual_helmholtz(a: &Field, u: &Field, h: f64, k: f64) -> Result<Field> {
    check_spacing(h)?;
    let n = a.size();
    let inv = 1.0 / (h * h);
    let k2 = k * k;
    planewise(a, u, |ap, up, out| {
        stencil(up, n, out, |p, [c, e, w, nn, s]| (e + w + nn + s - 4.0 * c) * inv + k2 * c - ap[p]);
    })
}

/// Flux-form `−∇·(a∇u) − g` with arithmetic face averages. Outside the grid
/// `u` is zero and `a` repeats the adjacent interior value.
pub fn residual_darcy(a: &Field, u: &Field, h: f64, g: f64) -> Result<Field> {
    check_spacing(h)?;
    let n = a.size();
    let inv = 1.0 / (h * h);
    planewise(a, u, |ap, up, out| {
        for i in 0..n {
            for j in 0..n {
                let p = i * n + j;
                let flux = darcy_flux(ap, up, n, i, j);
                out[p] = -flux * inv - g;
            }
        }
    })
}

/// `Σ_faces a_face (u_nb − u_c)` at node `(i, j)`.
#[inline]
pub(crate) fn darcy_flux(a: &[f64], u: &[f64], n: usize, i: usize, j: usize) -> f64 {
    let p = i * n + j;
    let (ac, uc) = (a[p], u[p]);
    let mut total = 0.0;
    let mut face = |q: Option<usize>| match q {
        Some(q) => total += 0.5 * (ac + a[q]) * (u[q] - uc),
        None => total += ac * (0.0 - uc),
    };
    face((j + 1 < n).then(|| p + 1));
    face((j > 0).then(|| p - 1));
    face((i + 1 < n).then(|| p + n));
    face((i > 0).then(|| p - n));
    total
}

/// One-step vorticity transport residual
/// `(ω₁ − ω₀)/Δt + v₁·∇ω₁ − νΔω₁ − f`, with `v₁` recovered from `ω₁`.
pub fn residual_navier_stokes(omega_t: &Field, omega_next: &Field, f: &Field, spec: &PdeSpec) -> Result<Field> {
    omega_t.require_same_shape(omega_next, "residual (ω_t, ω_next)")?;
    if f.size() != omega_t.size() || f.channels() != 1 || f.batch() != 1 {
        return Err(Error::shape("forcing must be a single plane of matching size"));
    }
    let ops = Periodic::new(omega_t.size());
    let inv_dt = 1.0 / spec.dt;
    let nu = spec.nu;
    let fp = f.plane(0, 0);
    planewise(omega_t, omega_next, |w0, w1, out| {
        let (adv, lap) = ops.transport_terms(&ops.forward(w1));
        for p in 0..out.len() {
            out[p] = (w1[p] - w0[p]) * inv_dt + adv[p] - nu * lap[p] - fp[p];
        }
    })
}

/// `R(M_a⊙a_obs + (1−M_a)⊙a_state, M_u⊙u_obs + (1−M_u)⊙u_state)`.
///
/// `state`, `obs` and `masks` carry channels `[a, u]`; the result has one
/// channel.
pub fn guided_residual(state: &Field, obs: &Field, masks: &Field, spec: &PdeSpec) -> Result<Field> {
    let (a, u) = mix_observations(state, obs, masks)?;
    spec.residual(&a, &u)
}

/// The mixed `(a, u)` pair fed to the residual.
pub fn mix_observations(state: &Field, obs: &Field, masks: &Field) -> Result<(Field, Field)> {
    state.require_same_shape(obs, "guided residual (state, obs)")?;
    state.require_same_shape(masks, "guided residual (state, masks)")?;
    if state.channels() != 2 {
        return Err(Error::shape(format!("expected channels [a, u], got {}", state.channels())));
    }
    if let Some(v) = masks.data().iter().find(|&&m| m != 0.0 && m != 1.0) {
        return Err(Error::invalid(format!("mask entries must be 0 or 1, found {v}")));
    }
    let mut mixed = state.clone();
    for ((x, o), m) in mixed.data_mut().iter_mut().zip(obs.data()).zip(masks.data()) {
        if *m == 1.0 {
            *x = *o;
        }
    }
    Ok((mixed.channel(0), mixed.channel(1)))
}
