//! Dual-attention transformer towers and the keystroke + IMU composite.
//!
//! All forward functions take batched inputs `[B, N, M]` and read their
//! parameters from a [`ParamStore`] under a name prefix.

mod attention;
mod behaveformer;
mod block;
mod gre;
mod stdat;

use serde::{Deserialize, Serialize};

use crate::numerics::NumericsError;

pub use attention::{init_attention, multi_head_self_attention, AttentionOutput, QUERY_KEY_INIT_GAIN};
pub use behaveformer::{BehaveFormer, BehaveFormerConfig, ModelInput};
pub use block::{dual_attention_block, init_block, M2D_KERNELS};
pub use gre::{gaussian_range_encode, init_gre};
pub use stdat::{init_stdat, stdat_forward};

pub const EMBED_DIM: usize = 64;
pub const DEFAULT_GAUSSIANS: usize = 20;
pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_DROPOUT: f64 = 0.3;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("modality mismatch: {0}")]
    Modality(String),
    #[error("input shape {got:?} does not match tower {tower} (expected [B, {n}, {m}])")]
    InputShape {
        tower: String,
        got: Vec<usize>,
        n: usize,
        m: usize,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Hyperparameters of one STDAT tower.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StdatConfig {
    /// Sequence length N.
    pub seq_len: usize,
    /// Feature channels M.
    pub channels: usize,
    pub gaussians: usize,
    pub blocks: usize,
    pub temporal_heads: usize,
    pub channel_heads: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub dropout: f64,
}

impl StdatConfig {
    fn base(seq_len: usize, channels: usize, blocks: usize, temporal_heads: usize, channel_heads: usize) -> Self {
        Self {
            seq_len,
            channels,
            gaussians: DEFAULT_GAUSSIANS,
            blocks,
            temporal_heads,
            channel_heads,
            hidden: DEFAULT_HIDDEN,
            embed_dim: EMBED_DIM,
            dropout: DEFAULT_DROPOUT,
        }
    }

    /// Keystroke tower for Aalto-style data: 6 blocks, 5 temporal / 10 channel heads.
    pub fn keystroke_aalto(seq_len: usize) -> Self {
        Self::base(seq_len, 10, 6, 5, 10)
    }

    /// Keystroke tower for HMOG-style data: 5 blocks, 5 / 10 heads.
    pub fn keystroke_hmog(seq_len: usize) -> Self {
        Self::base(seq_len, 10, 5, 5, 10)
    }

    /// Keystroke tower for HuMIdb-style data (3 channels): 5 blocks, 3 / 10 heads.
    pub fn keystroke_humidb(seq_len: usize) -> Self {
        Self::base(seq_len, 3, 5, 3, 10)
    }

    /// IMU tower: 100 steps, 5 blocks, 6 / 10 heads.
    pub fn imu(channels: usize) -> Self {
        Self::base(crate::features::IMU_BINS, channels, 5, 6, 10)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.seq_len == 0 || self.channels == 0 {
            return err(format!("empty input shape {}×{}", self.seq_len, self.channels));
        }
        if self.gaussians == 0 {
            return err("need at least one Gaussian".into());
        }
        if self.blocks == 0 {
            return err("need at least one dual attention block".into());
        }
        if self.temporal_heads == 0 || !self.channels.is_multiple_of(self.temporal_heads) {
            return err(format!("temporal heads {} must divide M={}", self.temporal_heads, self.channels));
        }
        if self.channel_heads == 0 || !self.seq_len.is_multiple_of(self.channel_heads) {
            return err(format!("channel heads {} must divide N={}", self.channel_heads, self.seq_len));
        }
        if self.hidden == 0 || self.embed_dim == 0 {
            return err("FNN widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
