//! Conditional diffusion neural operator for PDE forward and inverse
//! problems, with PDE residuals injected into the denoiser through spectral
//! residual attention.

#[macro_use]
mod macros;

pub mod error;
pub mod autodiff;
pub mod datagen;
pub mod denoiser;
pub mod diffusion;
pub mod field;
pub mod metrics;
pub mod pde;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/fields.md")]
    mod fields {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/pde.md")]
    mod pde {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/denoiser.md")]
    mod denoiser {}
    #[doc = include_str!("../../../book/src/diffusion.md")]
    mod diffusion {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
