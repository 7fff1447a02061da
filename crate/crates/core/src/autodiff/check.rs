//! Central finite-difference comparison against [`Tape::backward`].

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Eval, Graph, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
    /// Entries per tensor probed individually; tensors at or below this
    /// size are checked exhaustively.
    pub max_entries_per_tensor: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, rel_tol: 1e-6, abs_floor: 1e-8, max_entries_per_tensor: usize::MAX, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct EntryCheck {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl EntryCheck {
    pub fn abs_error(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }

    /// `|a - n| / max(|a|, |n|)`, or zero when both vanish.
    pub fn rel_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            self.abs_error() / scale
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub entries: Vec<EntryCheck>,
    /// Per tensor: analytic vs numeric directional derivative along a
    /// random unit direction.
    pub directional: Vec<EntryCheck>,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl CheckReport {
    fn passes(&self, e: &EntryCheck) -> bool {
        e.abs_error() <= self.rel_tol * e.analytic.abs().max(e.numeric.abs()) + self.abs_floor
    }

    pub fn failures(&self) -> Vec<&EntryCheck> {
        self.entries.iter().chain(&self.directional).filter(|e| !self.passes(e)).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    /// Largest relative deviation among entries whose scale exceeds the
    /// absolute floor.
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .chain(&self.directional)
            .filter(|e| e.analytic.abs().max(e.numeric.abs()) > self.abs_floor)
            .map(EntryCheck::rel_error)
            .fold(0.0, f64::max)
    }
}

/// Compares backward gradients of the scalar `f(inputs)` with central
/// differences. `f` is evaluated on an [`Eval`] graph for the numeric side.
pub fn check_gradients<F>(inputs: &[Tensor], opts: &CheckOptions, f: F) -> Result<CheckReport>
where
    F: for<'a> Fn(&mut dyn Graph<'a>, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| tape.param(&format!("in{i}"), t)).collect();
        let loss = f(&mut tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect::<Vec<_>>()
    };
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Eval::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param("", t)).collect();
        let loss = f(&mut g, &vars)?;
        let v = g.value(loss);
        if v.numel() != 1 {
            return Err(Error::invalid("gradient check needs a scalar function"));
        }
        Ok(v.item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = CheckReport { rel_tol: opts.rel_tol, abs_floor: opts.abs_floor, ..Default::default() };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        let indices: Vec<usize> = if t.numel() <= opts.max_entries_per_tensor {
            (0..t.numel()).collect()
        } else {
            let mut idx = sample(&mut rng, t.numel(), opts.max_entries_per_tensor).into_vec();
            idx.sort_unstable();
            idx
        };
        for index in indices {
            let orig = t.data()[index];
            work[ti].data_mut()[index] = orig + opts.step;
            let plus = eval(&work)?;
            work[ti].data_mut()[index] = orig - opts.step;
            let minus = eval(&work)?;
            work[ti].data_mut()[index] = orig;
            report.entries.push(EntryCheck {
                tensor: ti,
                index,
                analytic: analytic[ti].data()[index],
                numeric: (plus - minus) / (2.0 * opts.step),
            });
        }
        if t.numel() > opts.max_entries_per_tensor {
            let dir = random_unit(t.numel(), &mut rng);
            let analytic_dd: f64 = dir.iter().zip(analytic[ti].data()).map(|(d, g)| d * g).sum();
            let shift = |sign: f64, work: &mut Vec<Tensor>| {
                for ((w, o), d) in work[ti].data_mut().iter_mut().zip(t.data()).zip(&dir) {
                    *w = o + sign * opts.step * d;
                }
            };
            shift(1.0, &mut work);
            let plus = eval(&work)?;
            shift(-1.0, &mut work);
            let minus = eval(&work)?;
            work[ti] = t.clone();
            report.directional.push(EntryCheck {
                tensor: ti,
                index: usize::MAX,
                analytic: analytic_dd,
                numeric: (plus - minus) / (2.0 * opts.step),
            });
        }
    }
    Ok(report)
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    v.into_iter().map(|x| x / norm).collect()
}
