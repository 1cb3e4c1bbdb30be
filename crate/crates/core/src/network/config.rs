use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmim::{ChannelScale, FourierMask};

/// Ablation variants of the dual-branch design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Spatial branch only, fed PAN ⊕ LrMSI↑ ⊕ x_t.
    V1,
    /// Spectral branch only, fed PAN ⊕ LrMSI↑ ⊕ x_t.
    V2,
    /// Both branches with decoupled inputs; head on the concatenated outputs,
    /// no inter-branch interaction.
    V3,
    /// Both branches; each fusion site adds spatial features to spectral
    /// ones (no FMIM, no APFM).
    V4,
    /// Full model: FMIM transfer plus APFM at every fusion site.
    V5,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::V1, Variant::V2, Variant::V3, Variant::V4, Variant::V5];

    pub fn has_spatial(self) -> bool {
        !matches!(self, Variant::V2)
    }

    pub fn has_spectral(self) -> bool {
        !matches!(self, Variant::V1)
    }

    pub fn coupled_input(self) -> bool {
        matches!(self, Variant::V1 | Variant::V2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::V1 => "V1",
            Variant::V2 => "V2",
            Variant::V3 => "V3",
            Variant::V4 => "V4",
            Variant::V5 => "V5",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config {
                key: "network.variant".into(),
                reason: format!("unknown variant {s:?}, expected V1..V5"),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FmimConfig {
    pub enabled: bool,
    pub mask: FourierMask,
    pub scale: ChannelScale,
}

impl Default for FmimConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            mask: FourierMask::default(),
            scale: ChannelScale::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub bands: usize,
    pub base_channels: usize,
    /// Width multipliers of the two encoder levels and the bottleneck.
    pub level_multipliers: Vec<usize>,
    /// Residual blocks at encoder levels 0 and 1.
    pub enc_blocks: Vec<usize>,
    pub mid_blocks: usize,
    /// Residual blocks at decoder levels 0 and 1.
    pub dec_blocks: Vec<usize>,
    /// Width of the sinusoidal timestep features.
    pub time_freq_dim: usize,
    /// Width of the shared timestep embedding after its MLP.
    pub time_embed_dim: usize,
    /// Attention width per level; `None` uses the level's channel count.
    pub s_prime_per_level: Option<Vec<usize>>,
    pub fmim: FmimConfig,
    pub variant: Variant,
    /// Zero the last head layer so the first prediction is exactly LrMSI↑.
    pub zero_init_head: bool,
    /// The diffusion runs on `residual_scale · (HrMSI − LrMSI↑)`. Residuals
    /// of normalized imagery are small next to unit-variance noise; a larger
    /// scale raises their signal-to-noise ratio and keeps the head's target
    /// near unit magnitude.
    pub residual_scale: f64,
    /// Standardize PAN and LrMSI↑ per sample and channel before they enter
    /// the branches.
    pub normalize_conditions: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            bands: 8,
            base_channels: 32,
            level_multipliers: vec![1, 2, 4],
            enc_blocks: vec![1, 2],
            mid_blocks: 0,
            dec_blocks: vec![1, 2],
            time_freq_dim: 32,
            time_embed_dim: 128,
            s_prime_per_level: None,
            fmim: FmimConfig::default(),
            variant: Variant::V5,
            zero_init_head: true,
            residual_scale: 1.0,
            normalize_conditions: false,
        }
    }
}

impl NetworkConfig {
    pub fn widths(&self) -> [usize; 3] {
        let m = &self.level_multipliers;
        [self.base_channels * m[0], self.base_channels * m[1], self.base_channels * m[2]]
    }

    pub fn s_prime(&self, level: usize) -> usize {
        match &self.s_prime_per_level {
            Some(v) => v[level],
            None => self.widths()[level],
        }
    }

    /// Total downsampling factor; spatial sizes must be multiples of it.
    pub fn size_multiple(&self) -> usize {
        4
    }

    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, reason: String| {
            Err(Error::Config {
                key: format!("network.{key}"),
                reason,
            })
        };
        if !matches!(self.bands, 4 | 8) {
            return err("bands", format!("{} unsupported (4 or 8)", self.bands));
        }
        if self.base_channels == 0 {
            return err("base_channels", "must be positive".into());
        }
        if self.level_multipliers.len() != 3 || self.level_multipliers.contains(&0) {
            return err("level_multipliers", "need three positive entries".into());
        }
        if self.enc_blocks.len() != 2 {
            return err("enc_blocks", "need two entries".into());
        }
        if self.dec_blocks.len() != 2 || self.dec_blocks.contains(&0) {
            return err("dec_blocks", "need two positive entries".into());
        }
        if self.time_freq_dim == 0 || self.time_freq_dim % 2 != 0 {
            return err("time_freq_dim", format!("{} must be even and positive", self.time_freq_dim));
        }
        if !(self.residual_scale > 0.0 && self.residual_scale.is_finite()) {
            return err("residual_scale", format!("{} must be positive", self.residual_scale));
        }
        if self.time_embed_dim == 0 {
            return err("time_embed_dim", "must be positive".into());
        }
        if let Some(s) = &self.s_prime_per_level {
            if s.len() != 3 || s.contains(&0) {
                return err("s_prime_per_level", "need three positive entries".into());
            }
        }
        if self.fmim.enabled {
            if self.fmim.scale.scale_by_level.len() != 3 {
                return err("fmim.scale.scale_by_level", "need three entries".into());
            }
            if self.widths().iter().any(|&w| w < 2) {
                return err("base_channels", "FMIM needs at least 2 channels per level".into());
            }
            self.fmim.mask.validate().map_err(|e| Error::Config {
                key: "network.fmim.mask".into(),
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }
}
