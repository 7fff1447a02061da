//! The conditional U-shaped neural operator `D_θ` with spectral residual
//! attention (SRA), wrapped in EDM preconditioning.
//!
//! The network is written against [`Graph`](crate::autodiff::Graph), so the
//! same code trains on a tape and samples on a value-only graph.

mod checkpoint;
mod config;
mod layers;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, TensorDtype};
pub use config::{AttentionMode, DenoiserConfig, GateMode, ResidualLift, SraMode, INPUT_CHANNELS};
pub use layers::{
    embedding_frequencies, guidance_gate, network, noise_embedding, residual_average, sra_block, uno_layer,
    ForwardCtx, GateOverride, GateParams, GateRecord, ParamVars, SraOutput, SraParams, SraSettings, UnoOutput,
};
pub use params::{init_params, layer_specs, LayerSpec};

use crate::autodiff::{Eval, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::field::Field;

/// Residuals are clamped to `±RESIDUAL_CLAMP` after standardization.
pub const RESIDUAL_CLAMP: f64 = 100.0;

/// Noise levels accepted by [`Denoiser::denoise`].
pub const SIGMA_RANGE: (f64, f64) = (2e-4, 800.0);

/// Observations, masks and the guided residual for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    /// `[B,2,H,W]`, channels `[a, u]`.
    pub obs: Field,
    /// Binary `[B,2,H,W]`, channels `[M_a, M_u]`.
    pub masks: Field,
    /// Raw (unstandardized) residual `[B,1,H,W]`.
    pub residual: Field,
}

impl Conditioning {
    /// No observations and a zero residual.
    pub fn unconditional(batch: usize, size: usize) -> Result<Self> {
        Ok(Self {
            obs: Field::zeros(batch, 2, size)?,
            masks: Field::zeros(batch, 2, size)?,
            residual: Field::zeros(batch, 1, size)?,
        })
    }

    fn validate(&self, state: &Field) -> Result<()> {
        state.require_same_shape(&self.obs, "observations")?;
        state.require_same_shape(&self.masks, "masks")?;
        let [b, _, n, _] = state.shape();
        if self.residual.shape() != [b, 1, n, n] {
            return Err(Error::shape(format!("residual {:?} for state {:?}", self.residual.shape(), state.shape())));
        }
        if let Some(v) = self.masks.data().iter().find(|&&m| m != 0.0 && m != 1.0) {
            return Err(Error::invalid(format!("mask entries must be 0 or 1, found {v}")));
        }
        Ok(())
    }
}

/// `[a_σ, u_σ, M_a⊙a_obs, M_u⊙u_obs, M_a, M_u, r]`.
pub fn assemble_input(x_noisy: &Field, cond: &Conditioning) -> Result<Field> {
    if x_noisy.channels() != 2 {
        return Err(Error::shape(format!("state must have channels [a, u], got {}", x_noisy.channels())));
    }
    cond.validate(x_noisy)?;
    let observed = cond.obs.zip_map(&cond.masks, |o, m| o * m)?;
    Field::concat_channels(&[x_noisy, &observed, &cond.masks, &cond.residual])
}

/// EDM preconditioning coefficients at one noise level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Precond {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

impl Precond {
    pub fn new(sigma: f64, sigma_data: f64) -> Self {
        let (s2, d2) = (sigma * sigma, sigma_data * sigma_data);
        Self {
            c_skip: d2 / (s2 + d2),
            c_out: sigma * sigma_data / (s2 + d2).sqrt(),
            c_in: 1.0 / (s2 + d2).sqrt(),
            c_noise: sigma.ln() / 4.0,
        }
    }
}

/// EDM loss weight `(σ² + σ_d²) / (σ σ_d)²`.
pub fn loss_weight(sigma: f64, sigma_data: f64) -> f64 {
    (sigma * sigma + sigma_data * sigma_data) / (sigma * sigma_data).powi(2)
}

/// Parameters plus the scalars the forward pass depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: ParamStore,
    pub sigma_data: f64,
    /// Residuals are divided by this before entering the network.
    pub residual_scale: f64,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate(None)?;
        let params = init_params(&config, seed);
        Ok(Self { config, params, sigma_data: 1.0, residual_scale: 1.0 })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// `clamp(r / scale, ±R)` as a `[B,1,H,W]` tensor; zero when the
    /// residual is disabled.
    pub fn standardize_residual(&self, r: &Field) -> Tensor {
        let mut t = Tensor::from_field(r);
        let off = self.config.sra_mode == SraMode::Off;
        let inv = 1.0 / self.residual_scale;
        for v in t.data_mut() {
            *v = if off { 0.0 } else { (*v * inv).clamp(-RESIDUAL_CLAMP, RESIDUAL_CLAMP) };
        }
        t
    }

    /// `x̂₀ = c_skip x + c_out F(c_in x, cond, c_noise)` on `g`, with
    /// parameters taken from `vars`. `sigma` holds one level per batch item.
    pub fn forward<'a>(
        &self,
        g: &mut dyn Graph<'a>,
        vars: &ParamVars,
        x_noisy: &Field,
        sigma: &[f64],
        cond: &Conditioning,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let [b, _, n, _] = x_noisy.shape();
        if sigma.len() != b {
            return Err(Error::shape(format!("{} noise levels for a batch of {b}", sigma.len())));
        }
        if let Some(&s) = sigma.iter().find(|&&s| !(SIGMA_RANGE.0..=SIGMA_RANGE.1).contains(&s)) {
            return Err(Error::invalid(format!(
                "noise level {s} outside [{}, {}]",
                SIGMA_RANGE.0, SIGMA_RANGE.1
            )));
        }
        self.config.check_resolution(n)?;
        let mut input = Tensor::from_field(&assemble_input(x_noisy, cond)?);
        let r = self.standardize_residual(&cond.residual);
        let plane = n * n;
        let pre: Vec<Precond> = sigma.iter().map(|&s| Precond::new(s, self.sigma_data)).collect();
        {
            let data = input.data_mut();
            for (i, p) in pre.iter().enumerate() {
                let base = i * INPUT_CHANNELS * plane;
                data[base..base + 2 * plane].iter_mut().for_each(|v| *v *= p.c_in);
                data[base + 6 * plane..base + 7 * plane].copy_from_slice(&r.data()[i * plane..(i + 1) * plane]);
            }
        }
        let mut emb = Vec::with_capacity(b * self.config.embed_dim);
        for &s in sigma {
            emb.extend(noise_embedding(s, self.config.embed_dim)?);
        }
        let input = g.constant(input);
        let emb = g.constant(Tensor::new(vec![b, self.config.embed_dim], emb)?);
        let f = network(g, &self.config, vars, input, emb, &r, ctx)?;

        let per_item = |coef: fn(&Precond) -> f64| {
            Tensor::new(vec![b, 1, 1, 1], pre.iter().map(coef).collect()).expect("batch-sized")
        };
        let c_out = g.constant(per_item(|p| p.c_out));
        let c_skip = g.constant(per_item(|p| p.c_skip));
        let x = g.constant(Tensor::from_field(x_noisy));
        let skip = g.mul(c_skip, x)?;
        let out = g.mul(c_out, f)?;
        g.add(skip, out)
    }

    /// Inference without recording, dropout off.
    pub fn denoise(&self, x_noisy: &Field, sigma: &[f64], cond: &Conditioning) -> Result<Field> {
        self.denoise_with(x_noisy, sigma, cond, &mut ForwardCtx::default())
    }

    pub fn denoise_with(
        &self,
        x_noisy: &Field,
        sigma: &[f64],
        cond: &Conditioning,
        ctx: &mut ForwardCtx,
    ) -> Result<Field> {
        let mut g = Eval::new();
        let vars = ParamVars::bind(&mut g, &self.params);
        let out = self.forward(&mut g, &vars, x_noisy, sigma, cond, ctx)?;
        g.value(out).to_field()
    }
}
