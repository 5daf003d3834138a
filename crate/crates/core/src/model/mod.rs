//! The attention-based multi-label predictor.
//!
//! A classification token and `N` embedded history addresses (plus position
//! and optional context embeddings) pass through `L` post-norm transformer
//! layers; a linear head on the classification token's final state gives
//! one sigmoid confidence per delta-bitmap bit.
//!
//! Gradients are derived by hand layer by layer and checked against
//! central finite differences in [`gradcheck`].

mod attention;
mod gradcheck;
mod latency;
mod loss;
mod network;
mod params;
mod train;

pub use attention::{attention, feed_forward, multi_head_attention, AttentionOutput};
pub use gradcheck::{compare_gradients, gradient_check, GradCheckReport};
pub use latency::{estimate_latency, LatencyCosts};
pub use loss::{bce_loss, BCE_EPSILON};
pub use network::{Model, SampleGradient};
pub use params::{LayerParams, ModelParams};
pub use train::{train, Adam, EpochLog, TrainConfig, TrainOutcome};

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which context features are added to the history tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    None,
    Pc,
    PageDistance,
    #[default]
    Both,
}

impl ContextMode {
    /// Multipliers for the `(c_pc, c_pd)` columns.
    pub fn mask(self) -> [f64; 2] {
        match self {
            ContextMode::None => [0.0, 0.0],
            ContextMode::Pc => [1.0, 0.0],
            ContextMode::PageDistance => [0.0, 1.0],
            ContextMode::Both => [1.0, 1.0],
        }
    }

    pub fn is_enabled(self) -> bool {
        self != ContextMode::None
    }

    pub fn label(self) -> &'static str {
        match self {
            ContextMode::None => "basic",
            ContextMode::Pc => "pc",
            ContextMode::PageDistance => "pd",
            ContextMode::Both => "pc+pd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden dimension `D`.
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Output width `B`.
    pub outputs: usize,
    /// History length `N`.
    pub history: usize,
    /// Input row width `S`.
    pub input_width: usize,
    /// FFN inner width is `ffn_mult · D`.
    pub ffn_mult: usize,
    pub context: ContextMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            heads: 4,
            layers: 2,
            outputs: 256,
            history: 9,
            input_width: 10,
            ffn_mult: 2,
            context: ContextMode::Both,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("dim", self.dim),
            ("heads", self.heads),
            ("outputs", self.outputs),
            ("history", self.history),
            ("input_width", self.input_width),
            ("ffn_mult", self.ffn_mult),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be at least 1")));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.dim * self.ffn_mult
    }

    /// Sequence length including the classification token.
    pub fn tokens(&self) -> usize {
        self.history + 1
    }
}
