use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geom::DEFAULT_TAU;

/// Image channels produced by the synthetic renderer: five finger groups
/// plus depth.
pub const DEFAULT_IN_CHANNELS: usize = 6;
/// Predicted camera scale is `K_UNIT · softplus(raw)`, so an untrained head
/// starts near the typical crop-normalized scale.
pub const DEFAULT_K_UNIT: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub crop_h: usize,
    pub crop_w: usize,
    pub in_channels: usize,
    pub patch: usize,
    /// Token width `C`; the fused width is `2C`.
    pub dim: usize,
    pub heads: usize,
    pub enc_blocks: usize,
    pub spatial_blocks: usize,
    pub temporal_blocks: usize,
    pub mlp_ratio: usize,
    /// Longest sequence the temporal embedding covers.
    pub seq_len: usize,
    pub bias: bool,
    pub temporal_pos: bool,
    /// When false, attention never mixes the two hands' tokens.
    pub cross_hand_attention: bool,
    pub tau: f64,
    pub k_unit: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl NetConfig {
    /// 64×48 crops, 8×6 tokens of width 64.
    pub fn desk() -> Self {
        Self {
            crop_h: 64,
            crop_w: 48,
            in_channels: DEFAULT_IN_CHANNELS,
            patch: 8,
            dim: 64,
            heads: 4,
            enc_blocks: 2,
            spatial_blocks: 2,
            temporal_blocks: 2,
            mlp_ratio: 2,
            seq_len: 9,
            bias: true,
            temporal_pos: true,
            cross_hand_attention: true,
            tau: DEFAULT_TAU,
            k_unit: DEFAULT_K_UNIT,
        }
    }

    /// 32×24 crops, 4×3 tokens of width 32, one block per stage.
    pub fn compact() -> Self {
        Self {
            crop_h: 32,
            crop_w: 24,
            dim: 32,
            heads: 2,
            enc_blocks: 1,
            spatial_blocks: 1,
            temporal_blocks: 1,
            ..Self::desk()
        }
    }

    /// 2×2 tokens of width 8 over two frames, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            crop_h: 8,
            crop_w: 8,
            patch: 4,
            dim: 8,
            heads: 2,
            enc_blocks: 1,
            spatial_blocks: 1,
            temporal_blocks: 1,
            seq_len: 2,
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "compact" => Ok(Self::compact()),
            "tiny" => Ok(Self::tiny()),
            _ => Err(invalid(format!("unknown network profile {name:?}; expected desk, compact or tiny"))),
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.crop_h / self.patch, self.crop_w / self.patch)
    }

    pub fn tokens_per_hand(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    /// Width of fused tokens and global features.
    pub fn fused_dim(&self) -> usize {
        2 * self.dim
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.in_channels
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("crop_h", self.crop_h),
            ("crop_w", self.crop_w),
            ("in_channels", self.in_channels),
            ("patch", self.patch),
            ("dim", self.dim),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("seq_len", self.seq_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("network {name} must be positive")));
        }
        if self.crop_h % self.patch != 0 || self.crop_w % self.patch != 0 {
            return Err(invalid(format!(
                "crop {}x{} is not divisible by patch {}",
                self.crop_h, self.crop_w, self.patch
            )));
        }
        if self.dim % self.heads != 0 {
            return Err(invalid(format!("dim {} is not divisible by {} heads", self.dim, self.heads)));
        }
        if !(self.tau > 0.0 && self.k_unit > 0.0) {
            return Err(invalid("tau and k_unit must be positive"));
        }
        Ok(())
    }
}

/// Ablation variants, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Per-hand pipelines with no cross-hand path and independent roots.
    Baseline,
    /// One holistic crop containing both hands.
    CrossH,
    /// Separate crops and spatial fusion, relation map replaced by zeros.
    CrossSNoRat,
    /// Separate crops, spatial fusion and relation-aware tokens.
    CrossS,
    /// `CrossS` plus temporal fusion.
    CrossSSeq,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::CrossH,
        Variant::CrossSNoRat,
        Variant::CrossS,
        Variant::CrossSSeq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::CrossH => "cross_h",
            Variant::CrossSNoRat => "cross_s_no_rat",
            Variant::CrossS => "cross_s",
            Variant::CrossSSeq => "cross_s_seq",
        }
    }

    pub fn uses_relation(self) -> bool {
        matches!(self, Variant::CrossS | Variant::CrossSSeq)
    }

    pub fn uses_temporal(self) -> bool {
        self == Variant::CrossSSeq
    }

    pub fn holistic(self) -> bool {
        self == Variant::CrossH
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid(format!("unknown variant {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_grid_is_eight_by_six() {
        let c = NetConfig::desk();
        assert_eq!(c.grid(), (8, 6));
        assert_eq!(c.fused_dim(), 128);
        assert_eq!(2 * c.tokens_per_hand(), 96);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("cross_x".parse::<Variant>().is_err());
    }
}
