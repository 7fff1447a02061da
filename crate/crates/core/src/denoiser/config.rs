use crate::error::{Error, Result};

named_enum!(
    /// How the residual reaches the network.
    SraMode {
        Off => "off" = 0,
        Concat => "concat" = 1,
        Sra => "sra" = 2,
    }
);

named_enum!(
    /// How the guidance gate `g` combines with the attention mask `A`.
    GateMode {
        SkipGate => "skip_gate" = 0,
        Multiplicative => "multiplicative" = 1,
        None => "none" = 2,
    }
);

named_enum!(
    /// How the compatibility score compares feature and residual spectra.
    AttentionMode {
        PhaseAware => "phase_aware" = 0,
        MagnitudeOnly => "magnitude_only" = 1,
    }
);

named_enum!(
    /// How the one-channel residual is spread over `C` feature channels.
    ResidualLift {
        Conv => "conv" = 0,
        Broadcast => "broadcast" = 1,
    }
);

/// Number of input channels: `[a_σ, u_σ, M_a⊙a_obs, M_u⊙u_obs, M_a, M_u, r]`.
pub const INPUT_CHANNELS: usize = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserConfig {
    /// Feature width per level; the number of levels is its length.
    pub channels: Vec<usize>,
    /// Retained Fourier modes per axis, per level.
    pub modes: Vec<usize>,
    pub embed_dim: usize,
    pub dropout: f64,
    pub sra_mode: SraMode,
    pub gate_mode: GateMode,
    pub attention_mode: AttentionMode,
    pub residual_lift: ResidualLift,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            channels: vec![32, 64, 64],
            modes: vec![12, 8, 4],
            embed_dim: 256,
            dropout: 0.13,
            sra_mode: SraMode::Sra,
            gate_mode: GateMode::SkipGate,
            attention_mode: AttentionMode::PhaseAware,
            residual_lift: ResidualLift::Conv,
        }
    }
}

impl DenoiserConfig {
    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    /// Checks internal consistency and, if given, fit to a grid resolution.
    pub fn validate(&self, resolution: Option<usize>) -> Result<()> {
        let levels = self.levels();
        if levels == 0 || self.modes.len() != levels {
            return Err(Error::Config(format!(
                "{} channel entries but {} mode entries",
                self.channels.len(),
                self.modes.len()
            )));
        }
        if self.channels.iter().any(|&c| c == 0) || self.modes.iter().any(|&m| m == 0) {
            return Err(Error::Config("channels and modes must be at least 1".into()));
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return Err(Error::Config(format!("embedding width {} must be even", self.embed_dim)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if let Some(n) = resolution {
            self.check_resolution(n)?;
        }
        Ok(())
    }

    /// Whether the network can run on an `n × n` grid.
    pub fn check_resolution(&self, n: usize) -> Result<()> {
        for (l, &m) in self.modes.iter().enumerate() {
            let res = n >> l;
            if res << l != n || res < 2 {
                return Err(Error::Config(format!("resolution {n} cannot be halved {l} times")));
            }
            if m > res / 2 {
                return Err(Error::Config(format!("level {l}: {m} modes exceed {res}/2")));
            }
        }
        Ok(())
    }

    /// Group count for a group norm over `c` channels.
    pub(crate) fn groups(c: usize) -> usize {
        [8, 4, 2, 1].into_iter().find(|g| c % g == 0).unwrap()
    }
}
