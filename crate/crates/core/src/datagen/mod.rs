//! Classical solvers and samplers that manufacture `(a, u)` pairs.

mod coefficients;
mod container;
mod observe;
mod solvers;

use rayon::prelude::*;

pub use coefficients::{default_coefficient_grf, sample_coefficient};
pub use container::{decode_dataset, encode_dataset, read_dataset, write_dataset, Dtype, HEADER_LEN, MAGIC, VERSION};
pub use observe::{corrupt_observations, sample_sparsity_mask};
pub(crate) use observe::{corrupt_with, mask_with};
pub use solvers::{integrate_vorticity, solve_darcy, solve_forward, CgStats, CG_TOLERANCE, NS_SUBSTEPS};

use crate::error::{Error, Result};
use crate::field::{Field, GrfSpec};
use crate::pde::{Equation, PdeSpec};

/// A set of samples with channels `[a, u]`. For Navier–Stokes `a` is `ω_t`
/// and `u` is `ω_{t+Δt}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub equation: Equation,
    pub fields: Field,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.fields.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn size(&self) -> usize {
        self.fields.size()
    }

    pub fn coefficients(&self) -> Field {
        self.fields.channel(0)
    }

    pub fn solutions(&self) -> Field {
        self.fields.channel(1)
    }

    /// Samples at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Field> {
        let parts: Vec<Field> = indices
            .iter()
            .map(|&i| {
                if i < self.len() {
                    Ok(self.fields.sample(i))
                } else {
                    Err(Error::invalid(format!("sample {i} out of range for {} samples", self.len())))
                }
            })
            .collect::<Result<_>>()?;
        Field::stack(&parts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSpec {
    pub pde: PdeSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub resolution: usize,
    pub seed: u64,
    pub grf: GrfSpec,
}

impl DatasetSpec {
    /// Desk-scale defaults: 32×32, 2048 train and 256 test samples.
    pub fn new(equation: Equation) -> Self {
        Self {
            pde: PdeSpec::new(equation),
            n_train: 2048,
            n_test: 256,
            resolution: 32,
            seed: 0,
            grf: default_coefficient_grf(equation),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pde.validate()?;
        self.grf.validate()?;
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::invalid("n_train and n_test must be at least 1"));
        }
        if self.resolution < 4 || !self.resolution.is_power_of_two() {
            return Err(Error::invalid(format!("resolution {} must be a power of two >= 4", self.resolution)));
        }
        Ok(())
    }

    /// Generates one split. Sample `i` of the test split has global index
    /// `n_train + i`, so the splits never share a seed.
    pub fn generate(&self, split: Split) -> Result<Dataset> {
        self.validate()?;
        let range = match split {
            Split::Train => 0..self.n_train,
            Split::Test => self.n_train..self.n_train + self.n_test,
        };
        let samples: Vec<Field> =
            range.into_par_iter().map(|i| self.generate_sample(i)).collect::<Result<_>>()?;
        Ok(Dataset { equation: self.pde.equation, fields: Field::stack(&samples)? })
    }

    /// The pair with global index `index`, as a `[1, 2, n, n]` field.
    pub fn generate_sample(&self, index: usize) -> Result<Field> {
        let seed = sample_seed(self.seed, index as u64);
        let a = sample_coefficient(self.pde.equation, &self.grf, self.resolution, seed)?;
        let u = solve_forward(&a, &self.pde)?;
        Field::concat_channels(&[&a, &u])
    }
}

/// SplitMix64 finalizer over `(dataset_seed, index)`.
pub fn sample_seed(dataset_seed: u64, index: u64) -> u64 {
    let mut z = dataset_seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Upper bound on `‖R(a, u)‖∞` for generated pairs at resolutions up to 64.
pub fn residual_tolerance(eq: Equation) -> f64 {
    match eq {
        Equation::Poisson | Equation::Helmholtz => 1e-8,
        Equation::Darcy => 1e-7,
        Equation::NavierStokes => 1.0,
    }
}
