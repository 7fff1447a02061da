use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{AttentionMode, DenoiserConfig, GateMode, SraMode};
use super::params::{layer_specs, LayerSpec};
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Parameters bound to graph leaves, by name.
#[derive(Clone, Debug, Default)]
pub struct ParamVars(BTreeMap<String, Var>);

impl ParamVars {
    /// Pushes every tensor of `store` as a named parameter leaf.
    pub fn bind<'a>(g: &mut dyn Graph<'a>, store: &'a ParamStore) -> Self {
        Self(store.iter().map(|(name, t)| (name.clone(), g.param(name, t))).collect())
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self(pairs.into_iter().collect())
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.0.get(name).copied().ok_or_else(|| Error::Malformed(format!("missing parameter {name}")))
    }

    pub fn find(&self, name: &str) -> Option<Var> {
        self.0.get(name).copied()
    }
}

/// Forces the guidance gate and/or the attention mask to fixed values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GateOverride {
    pub gate: Option<f64>,
    pub attention: Option<f64>,
}

/// Guidance strengths seen by one SRA block during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GateRecord {
    pub layer: String,
    /// One value per batch item.
    pub gate: Vec<f64>,
}

/// Per-call switches for a forward pass.
#[derive(Debug, Default)]
pub struct ForwardCtx {
    /// Source of dropout masks; `None` disables dropout.
    pub dropout_rng: Option<ChaCha8Rng>,
    pub gate_override: Option<GateOverride>,
    /// When set, every SRA block appends its gate values here.
    pub gates: Option<Vec<GateRecord>>,
}

impl ForwardCtx {
    pub fn training(rng: ChaCha8Rng) -> Self {
        Self { dropout_rng: Some(rng), ..Self::default() }
    }

    pub fn recording() -> Self {
        Self { gates: Some(Vec::new()), ..Self::default() }
    }
}

/// Sinusoidal features of `ln σ` at `dim/2` geometric frequencies from 2
/// down to 0.01: `[sin(ω_i ln σ)…, cos(ω_i ln σ)…]`.
pub fn noise_embedding(sigma: f64, dim: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise level {sigma} must be positive")));
    }
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::invalid(format!("embedding width {dim} must be even")));
    }
    let t = sigma.ln();
    let freqs = embedding_frequencies(dim / 2);
    let mut out: Vec<f64> = freqs.iter().map(|w| (w * t).sin()).collect();
    out.extend(freqs.iter().map(|w| (w * t).cos()));
    Ok(out)
}

pub fn embedding_frequencies(count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![2.0];
    }
    let ratio: f64 = 0.01 / 2.0;
    (0..count).map(|i| 2.0 * ratio.powf(i as f64 / (count - 1) as f64)).collect()
}

/// Weights of one SRA block.
#[derive(Clone, Copy, Debug)]
pub struct SraParams {
    pub w_gain: Var,
    /// `[C,1,1,1]` residual lift; `None` broadcasts the residual.
    pub lift: Option<Var>,
    pub gate: GateParams,
}

#[derive(Clone, Copy, Debug)]
pub struct GateParams {
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

impl GateParams {
    pub fn lookup(vars: &ParamVars, prefix: &str) -> Result<Self> {
        Ok(Self {
            fc1_w: vars.get(&format!("{prefix}.fc1.w"))?,
            fc1_b: vars.get(&format!("{prefix}.fc1.b"))?,
            fc2_w: vars.get(&format!("{prefix}.fc2.w"))?,
            fc2_b: vars.get(&format!("{prefix}.fc2.b"))?,
        })
    }
}

impl SraParams {
    pub fn lookup(vars: &ParamVars, prefix: &str) -> Result<Self> {
        Ok(Self {
            w_gain: vars.get(&format!("{prefix}.w_gain"))?,
            lift: vars.find(&format!("{prefix}.lift.w")),
            gate: GateParams::lookup(vars, &format!("{prefix}.gate"))?,
        })
    }
}

/// `sigmoid(Linear(relu(Linear([r_avg, c_σ]))))`, one value per batch item.
///
/// `r_avg` is `[B,1]`, `c` is `[B,E]`; the result is `[B,1]`.
pub fn guidance_gate<'a>(g: &mut dyn Graph<'a>, r_avg: Var, c: Var, p: &GateParams) -> Result<Var> {
    let z = g.concat(&[r_avg, c])?;
    let h = g.linear(z, p.fc1_w, Some(p.fc1_b))?;
    let h = g.relu(h);
    let o = g.linear(h, p.fc2_w, Some(p.fc2_b))?;
    Ok(g.sigmoid(o))
}

/// Root mean square of each batch item of a one-channel field, `[B,1]`.
pub fn residual_average(r: &Tensor) -> Result<Tensor> {
    let &[b, 1, h, w] = r.shape() else {
        return Err(Error::shape(format!("residual must be [B,1,H,W], got {:?}", r.shape())));
    };
    let plane = h * w;
    let data = r.data().chunks(plane).map(|p| (p.iter().map(|v| v * v).sum::<f64>() / plane as f64).sqrt()).collect();
    Tensor::new(vec![b, 1], data)
}

pub struct SraSettings {
    pub modes: usize,
    pub gate_mode: GateMode,
    pub attention_mode: AttentionMode,
}

/// Intermediate values of one SRA application.
pub struct SraOutput {
    pub out: Var,
    /// Compatibility score `[B,1,H,W/2+1,1]`.
    pub score: Var,
    /// Attention mask `[B,1,H,W/2+1,1]` (or the override constant).
    pub attention: Var,
    /// Guidance strength `[B,1]` (or the override constant).
    pub gate: Var,
    /// Per-mode spectral multiplier `[B,1,H,W/2+1,1]`, one off the retained set.
    pub multiplier: Var,
}

/// Modes with `|ky| < m` and `kx < m`. The spectral-mix block also holds
/// the `ky = -m` row; it is left out here so the modulated set is closed
/// under `k → -k` and unretained modes stay untouched after the real
/// inverse transform.
fn retained_indicator<'a>(g: &mut dyn Graph<'a>, m: usize, h: usize, wh: usize) -> Result<Var> {
    let mut ones = Tensor::full(&[2, m, m], 1.0);
    ones.data_mut()[m * m..m * m + m].iter_mut().for_each(|v| *v = 0.0);
    let ones = g.constant(ones);
    let grid = g.embed_modes(ones, h, wh)?;
    g.reshape(grid, &[1, 1, h, wh, 1])
}

/// Spectral residual attention on `x: [B,C,H,W]` given the standardized
/// residual `r: [B,1,H,W]` at the same resolution and `c: [B,E]`.
pub fn sra_block<'a>(
    g: &mut dyn Graph<'a>,
    x: Var,
    r: &Tensor,
    c: Var,
    p: &SraParams,
    s: &SraSettings,
    ov: Option<GateOverride>,
) -> Result<SraOutput> {
    let &[b, ch, h, w] = g.value(x).shape() else {
        return Err(Error::shape(format!("SRA input must be [B,C,H,W], got {:?}", g.shape(x))));
    };
    if r.shape() != [b, 1, h, w] {
        return Err(Error::shape(format!("SRA residual {:?} does not match features {:?}", r.shape(), [b, ch, h, w])));
    }
    let wh = w / 2 + 1;
    let norm = 1.0 / (h * w) as f64;

    let xs = g.rfft2(x)?;
    let rv = g.constant(r.clone());
    let rl = match p.lift {
        Some(lift) => g.conv2d(rv, lift, None)?,
        None => rv,
    };
    let rs = g.rfft2(rl)?;
    let score = match s.attention_mode {
        AttentionMode::PhaseAware => {
            let prod = g.complex_mul(xs, rs, true)?;
            let sum = g.sum_axes(prod, &[1])?;
            g.complex_abs(sum)?
        }
        AttentionMode::MagnitudeOnly => {
            let xa = g.complex_abs(xs)?;
            let ra = g.complex_abs(rs)?;
            let prod = g.mul(xa, ra)?;
            g.sum_axes(prod, &[1])?
        }
    };
    let score = g.scale(score, norm * norm / (ch as f64).sqrt());

    let attention = match ov.and_then(|o| o.attention) {
        Some(a) => g.constant(Tensor::full(&[b, 1, h, wh, 1], a)),
        None => {
            let gain = g.embed_modes(p.w_gain, h, wh)?;
            let gain = g.reshape(gain, &[1, 1, h, wh, 1])?;
            let logits = g.mul(gain, score)?;
            g.sigmoid(logits)
        }
    };
    let gate = match ov.and_then(|o| o.gate) {
        Some(v) => g.constant(Tensor::full(&[b, 1], v)),
        None => {
            let r_avg = g.constant(residual_average(r)?);
            guidance_gate(g, r_avg, c, &p.gate)?
        }
    };
    let gate5 = g.reshape(gate, &[b, 1, 1, 1, 1])?;

    // D = M - 1, so the applied multiplier is 1 + R⊙D
    let deviation = match s.gate_mode {
        GateMode::SkipGate => {
            let a1 = g.add_scalar(attention, -1.0);
            g.mul(gate5, a1)?
        }
        GateMode::Multiplicative => {
            let ga = g.mul(gate5, attention)?;
            g.add_scalar(ga, -1.0)
        }
        GateMode::None => g.add_scalar(attention, -1.0),
    };
    let retained = retained_indicator(g, s.modes, h, wh)?;
    let masked = g.mul(retained, deviation)?;
    let multiplier = g.add_scalar(masked, 1.0);
    let modulated = g.mul(xs, multiplier)?;
    let out = g.irfft2(modulated)?;
    Ok(SraOutput { out, score, attention, gate, multiplier })
}

/// Output of one UNO layer with its two paths kept for inspection.
pub struct UnoOutput {
    pub out: Var,
    pub spectral: Var,
    pub local: Var,
}

fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, p: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
}

/// `gelu(F⁻¹(W ⊙ F(sra(x))) + ψ(x) + bias(c_σ))` for one level.
///
/// `r` is the standardized residual at this layer's resolution.
pub fn uno_layer<'a>(
    g: &mut dyn Graph<'a>,
    x: Var,
    r: &Tensor,
    c: Var,
    vars: &ParamVars,
    spec: &LayerSpec,
    cfg: &DenoiserConfig,
    ctx: &mut ForwardCtx,
) -> Result<UnoOutput> {
    let p = &spec.prefix;
    let x_sra = if cfg.sra_mode == SraMode::Sra {
        let sp = SraParams::lookup(vars, &format!("{p}.sra"))?;
        let settings = SraSettings { modes: spec.modes, gate_mode: cfg.gate_mode, attention_mode: cfg.attention_mode };
        let sra = sra_block(g, x, r, c, &sp, &settings, ctx.gate_override)?;
        if let Some(records) = ctx.gates.as_mut() {
            records.push(GateRecord { layer: p.clone(), gate: g.value(sra.gate).data().to_vec() });
        }
        sra.out
    } else {
        x
    };

    let xs = g.rfft2(x_sra)?;
    let mixed = g.spectral_mix(xs, vars.get(&format!("{p}.spectral.w"))?)?;
    let spectral = g.irfft2(mixed)?;

    let co = spec.out_channels;
    let h = g.conv2d(x, vars.get(&format!("{p}.local.conv1.w"))?, Some(vars.get(&format!("{p}.local.conv1.b"))?))?;
    let h = g.group_norm(
        h,
        vars.get(&format!("{p}.local.norm.gamma"))?,
        vars.get(&format!("{p}.local.norm.beta"))?,
        DenoiserConfig::groups(co),
    )?;
    let mut h = g.gelu(h);
    if let Some(rng) = ctx.dropout_rng.as_mut() {
        if cfg.dropout > 0.0 {
            let mask = dropout_mask(rng, g.value(h).numel(), cfg.dropout);
            h = g.dropout(h, mask)?;
        }
    }
    let h = g.conv2d(h, vars.get(&format!("{p}.local.conv2.w"))?, Some(vars.get(&format!("{p}.local.conv2.b"))?))?;
    let shortcut = match vars.find(&format!("{p}.local.shortcut.w")) {
        Some(w) => g.conv2d(x, w, None)?,
        None => x,
    };
    let local = g.add(h, shortcut)?;

    let bias = g.linear(c, vars.get(&format!("{p}.noise.w"))?, Some(vars.get(&format!("{p}.noise.b"))?))?;
    let batch = g.shape(c)[0];
    let bias = g.reshape(bias, &[batch, co, 1, 1])?;
    let sum = g.add(spectral, local)?;
    let sum = g.add(sum, bias)?;
    Ok(UnoOutput { out: g.gelu(sum), spectral, local })
}

/// The raw network `F_θ(input, c_noise)`.
///
/// `input` is the preconditioned `[B,7,H,W]` stack, `emb` the `[B,E]`
/// noise embedding and `r` the standardized residual `[B,1,H,W]`.
pub fn network<'a>(
    g: &mut dyn Graph<'a>,
    cfg: &DenoiserConfig,
    vars: &ParamVars,
    input: Var,
    emb: Var,
    r: &Tensor,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let levels = cfg.levels();
    let mut residuals = vec![r.clone()];
    for _ in 1..levels {
        residuals.push(crate::autodiff::kernels::avg_pool(residuals.last().unwrap(), 2)?);
    }

    let c = g.linear(emb, vars.get("embed.w")?, Some(vars.get("embed.b")?))?;
    let c = g.gelu(c);
    let mut x = g.conv2d(input, vars.get("lift.w")?, Some(vars.get("lift.b")?))?;

    let specs = layer_specs(cfg);
    let mut skips = Vec::with_capacity(levels);
    for spec in &specs[..levels] {
        if spec.level > 0 {
            x = g.avg_pool(x, 2)?;
        }
        x = uno_layer(g, x, &residuals[spec.level], c, vars, spec, cfg, ctx)?.out;
        skips.push(x);
    }
    for spec in &specs[levels..] {
        let up = g.upsample(x, 2)?;
        let cat = g.concat(&[up, skips[spec.level]])?;
        x = uno_layer(g, cat, &residuals[spec.level], c, vars, spec, cfg, ctx)?.out;
    }
    g.conv2d(x, vars.get("proj.w")?, Some(vars.get("proj.b")?))
}
