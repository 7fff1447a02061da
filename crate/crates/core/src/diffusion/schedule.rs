use crate::error::{Error, Result};

pub const SIGMA_MIN: f64 = 0.002;
pub const SIGMA_MAX: f64 = 80.0;
pub const RHO: f64 = 7.0;

/// Noise levels `σ_0 > σ_1 > … > σ_N = 0`, stored high to low.
///
/// Sampling step `i` moves from `σ_i` to `σ_{i+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaSchedule {
    sigmas: Vec<f64>,
}

impl SigmaSchedule {
    /// Accepts any strictly decreasing sequence of positive levels closed by
    /// a single trailing zero.
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        let Some((&last, rest)) = sigmas.split_last() else {
            return Err(Error::Schedule("empty schedule".into()));
        };
        if rest.is_empty() {
            return Err(Error::Schedule("schedule needs at least one positive level".into()));
        }
        if last != 0.0 {
            return Err(Error::Schedule(format!("schedule must end at 0, ends at {last}")));
        }
        if let Some(s) = rest.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Schedule(format!("level {s} reached before the final step")));
        }
        if sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Schedule("schedule must be strictly decreasing".into()));
        }
        Ok(Self { sigmas })
    }

    /// Number of sampling steps `N`.
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.sigmas[i]
    }

    /// Denoiser evaluations a Heun pass over this schedule makes.
    pub fn denoiser_calls(&self) -> usize {
        2 * self.steps() - 1
    }
}

/// `σ_i = (σ_max^{1/ρ} + i/(N−1) (σ_min^{1/ρ} − σ_max^{1/ρ}))^ρ` for
/// `i < N`, then `σ_N = 0`. The endpoints are set exactly.
pub fn karras_schedule(n: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<SigmaSchedule> {
    if n < 2 {
        return Err(Error::Schedule(format!("need at least 2 steps, got {n}")));
    }
    if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
        return Err(Error::Schedule(format!("need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Schedule(format!("rho must be positive, got {rho}")));
    }
    let (lo, hi) = (sigma_min.powf(1.0 / rho), sigma_max.powf(1.0 / rho));
    let mut sigmas: Vec<f64> = (0..n)
        .map(|i| (hi + i as f64 / (n - 1) as f64 * (lo - hi)).powf(rho))
        .collect();
    sigmas[0] = sigma_max;
    sigmas[n - 1] = sigma_min;
    sigmas.push(0.0);
    SigmaSchedule::from_sigmas(sigmas)
}

/// The default schedule with `N` steps; `N = 1` gives `[σ_max, 0]`.
pub fn default_schedule(n: usize) -> Result<SigmaSchedule> {
    if n == 1 {
        SigmaSchedule::from_sigmas(vec![SIGMA_MAX, 0.0])
    } else {
        karras_schedule(n, SIGMA_MIN, SIGMA_MAX, RHO)
    }
}
