use crate::denoiser::{Checkpoint, Denoiser};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::pde::{guided_residual, Boundary, Equation, PdeSpec};

/// Per-channel affine map to zero mean and unit variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { mean: [0.0; 2], std: [1.0; 2] }
    }
}

impl Normalizer {
    /// Channel statistics over every sample and pixel. A constant channel
    /// gets unit scale.
    pub fn fit(fields: &Field) -> Result<Self> {
        if fields.channels() != 2 || fields.batch() == 0 {
            return Err(Error::shape(format!("normalizer needs [B>0, 2, H, W], got {:?}", fields.shape())));
        }
        let mut out = Self::default();
        for c in 0..2 {
            let values: Vec<f64> = (0..fields.batch()).flat_map(|b| fields.plane(b, c).iter().copied()).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            out.mean[c] = mean;
            out.std[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(out)
    }

    fn apply(&self, f: &Field, op: impl Fn(f64, f64, f64) -> f64) -> Result<Field> {
        if f.channels() != 2 {
            return Err(Error::shape(format!("expected channels [a, u], got {}", f.channels())));
        }
        let mut out = f.clone();
        for b in 0..f.batch() {
            for c in 0..2 {
                let (m, s) = (self.mean[c], self.std[c]);
                out.plane_mut(b, c).iter_mut().for_each(|v| *v = op(*v, m, s));
            }
        }
        Ok(out)
    }

    pub fn normalize(&self, f: &Field) -> Result<Field> {
        self.apply(f, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, f: &Field) -> Result<Field> {
        self.apply(f, |v, m, s| v * s + m)
    }
}

/// A denoiser together with everything needed to run it on physical data.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub denoiser: Denoiser,
    pub normalizer: Normalizer,
    pub pde: PdeSpec,
    /// Training resolution.
    pub resolution: usize,
}

impl Model {
    /// Guided residual of a normalized state against normalized
    /// observations, evaluated in physical units.
    pub fn residual(&self, state: &Field, obs: &Field, masks: &Field) -> Result<Field> {
        let x = self.normalizer.denormalize(state)?;
        let o = self.normalizer.denormalize(obs)?;
        guided_residual(&x, &o, masks, &self.pde)
    }

    /// The denoiser checkpoint plus `meta.normalizer`, `meta.pde` and
    /// `meta.resolution`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.denoiser.to_checkpoint();
        let n = &self.normalizer;
        ck.insert_scalars("meta.normalizer", &[n.mean[0], n.mean[1], n.std[0], n.std[1]]);
        let p = &self.pde;
        ck.insert_scalars("meta.pde", &[p.equation.code() as f64, p.k, p.nu, p.dt, p.g]);
        ck.insert_scalars("meta.resolution", &[self.resolution as f64]);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let denoiser = Denoiser::from_checkpoint(ck)?;
        let &[m0, m1, s0, s1] = ck.scalars("meta.normalizer")? else {
            return Err(Error::Malformed("meta.normalizer must hold 4 values".into()));
        };
        let &[code, k, nu, dt, g] = ck.scalars("meta.pde")? else {
            return Err(Error::Malformed("meta.pde must hold 5 values".into()));
        };
        if !(code >= 0.0 && code < 256.0 && code.fract() == 0.0) {
            return Err(Error::Malformed(format!("bad equation code {code}")));
        }
        let equation = Equation::from_code(code as u8)?;
        let boundary: Boundary = PdeSpec::new(equation).boundary;
        let pde = PdeSpec { equation, k, nu, dt, g, boundary };
        pde.validate().map_err(|e| Error::Malformed(e.to_string()))?;
        let resolution = ck.scalar("meta.resolution")?;
        if !(resolution >= 1.0 && resolution.fract() == 0.0) {
            return Err(Error::Malformed(format!("bad resolution {resolution}")));
        }
        Ok(Self { denoiser, normalizer: Normalizer { mean: [m0, m1], std: [s0, s1] }, pde, resolution: resolution as usize })
    }
}
