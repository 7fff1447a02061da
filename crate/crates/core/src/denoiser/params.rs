use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{DenoiserConfig, ResidualLift, SraMode, INPUT_CHANNELS};
use crate::autodiff::{ParamKind, ParamStore, Tensor};

/// One UNO layer of the U shape.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    /// Parameter name prefix, e.g. `level1` or `level1.dec`.
    pub prefix: String,
    pub level: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub modes: usize,
}

/// Encoder layers for levels `0..L` (the last is the bottom), then decoder
/// layers for levels `L-2..=0`. Decoder inputs concatenate the upsampled
/// features with the encoder skip at the same level.
pub fn layer_specs(cfg: &DenoiserConfig) -> Vec<LayerSpec> {
    let levels = cfg.levels();
    let mut specs = Vec::with_capacity(2 * levels - 1);
    for l in 0..levels {
        let cin = if l == 0 { cfg.channels[0] } else { cfg.channels[l - 1] };
        specs.push(LayerSpec {
            prefix: format!("level{l}"),
            level: l,
            in_channels: cin,
            out_channels: cfg.channels[l],
            modes: cfg.modes[l],
        });
    }
    for l in (0..levels - 1).rev() {
        specs.push(LayerSpec {
            prefix: format!("level{l}.dec"),
            level: l,
            in_channels: cfg.channels[l + 1] + cfg.channels[l],
            out_channels: cfg.channels[l],
            modes: cfg.modes[l],
        });
    }
    specs
}

struct Init {
    rng: ChaCha8Rng,
    store: ParamStore,
}

impl Init {
    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, kind: ParamKind) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.store.insert(name, Tensor::new(shape.to_vec(), data).unwrap(), kind);
    }

    fn fill(&mut self, name: &str, shape: &[usize], value: f64) {
        self.store.insert(name, Tensor::full(shape, value), ParamKind::Real);
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize, bias: bool) {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        self.uniform(&format!("{name}.w"), &[cout, cin, k, k], bound, ParamKind::Real);
        if bias {
            self.uniform(&format!("{name}.b"), &[cout], bound, ParamKind::Real);
        }
    }

    fn linear(&mut self, name: &str, out: usize, inp: usize) {
        let bound = 1.0 / (inp as f64).sqrt();
        self.uniform(&format!("{name}.w"), &[out, inp], bound, ParamKind::Real);
        self.uniform(&format!("{name}.b"), &[out], bound, ParamKind::Real);
    }
}

/// Fresh parameters. SRA gains start at zero (so `A = 1/2`) and the final
/// gate bias at −2 (so `g ≈ 0.12`).
pub fn init_params(cfg: &DenoiserConfig, seed: u64) -> ParamStore {
    let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed), store: ParamStore::new() };
    let e = cfg.embed_dim;
    init.conv("lift", cfg.channels[0], INPUT_CHANNELS, 1, true);
    init.linear("embed", e, e);
    for spec in layer_specs(cfg) {
        let p = &spec.prefix;
        let (ci, co, m) = (spec.in_channels, spec.out_channels, spec.modes);
        let scale = 1.0 / (ci * co) as f64;
        init.uniform(&format!("{p}.spectral.w"), &[2, ci, co, m, m, 2], scale, ParamKind::Complex);
        init.conv(&format!("{p}.local.conv1"), co, ci, 3, true);
        init.fill(&format!("{p}.local.norm.gamma"), &[co], 1.0);
        init.fill(&format!("{p}.local.norm.beta"), &[co], 0.0);
        init.conv(&format!("{p}.local.conv2"), co, co, 3, true);
        if ci != co {
            init.conv(&format!("{p}.local.shortcut"), co, ci, 1, false);
        }
        init.linear(&format!("{p}.noise"), co, e);
        if cfg.sra_mode == SraMode::Sra {
            init.fill(&format!("{p}.sra.w_gain"), &[2, m, m], 0.0);
            if cfg.residual_lift == ResidualLift::Conv {
                init.conv(&format!("{p}.sra.lift"), ci, 1, 1, false);
            }
            init.linear(&format!("{p}.sra.gate.fc1"), e, e + 1);
            init.linear(&format!("{p}.sra.gate.fc2"), 1, e);
            init.fill(&format!("{p}.sra.gate.fc2.b"), &[1], -2.0);
        }
    }
    init.conv("proj", 2, cfg.channels[0], 1, true);
    init.store
}
