use serde::{Deserialize, Serialize};

use super::ModelConfig;

/// Per-primitive cycle costs of a fully parallel inference pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyCosts {
    pub mm_embed: f64,
    pub add: f64,
    pub mm_head: f64,
    /// Activation, mask and scale.
    pub activation: f64,
    pub mm_attention: f64,
    pub mm_ffn: f64,
    pub norm: f64,
}

impl LatencyCosts {
    /// Log-depth adder trees: every matrix multiply costs `1 + log2(dim)`
    /// cycles, additions and table-lookup activations one cycle, and a
    /// layer norm five.
    pub fn log_tree(dim: usize) -> Self {
        let mm = 1.0 + libm::ceil(libm::log2(dim.max(1) as f64));
        Self {
            mm_embed: mm,
            add: 1.0,
            mm_head: mm,
            activation: 1.0,
            mm_attention: mm,
            mm_ffn: mm,
            norm: 5.0,
        }
    }

    pub fn zero() -> Self {
        Self {
            mm_embed: 0.0,
            add: 0.0,
            mm_head: 0.0,
            activation: 0.0,
            mm_attention: 0.0,
            mm_ffn: 0.0,
            norm: 0.0,
        }
    }

    /// Cost of one transformer layer.
    pub fn per_layer(&self) -> f64 {
        4.0 * self.mm_attention
            + 3.0 * self.activation
            + self.mm_ffn
            + 2.0 * (self.add + self.norm)
    }
}

/// Inference latency in cycles: embeddings, output head and `L` layers.
pub fn estimate_latency(costs: &LatencyCosts, cfg: &ModelConfig) -> f64 {
    let embeddings = costs.mm_embed + costs.add;
    let head = costs.mm_head + costs.activation;
    embeddings + head + cfg.layers as f64 * costs.per_layer()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dim: usize, layers: usize) -> ModelConfig {
        ModelConfig {
            dim,
            layers,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn examples() {
        let c = LatencyCosts::log_tree(64);
        assert_eq!(c.mm_attention, 7.0);
        assert_eq!(
            estimate_latency(&c, &cfg(64, 0)),
            c.mm_embed + c.add + c.mm_head + c.activation
        );
        assert_eq!(estimate_latency(&LatencyCosts::zero(), &cfg(64, 2)), 0.0);
        // 8 + 8 + 2 * (28 + 3 + 7 + 12)
        assert_eq!(estimate_latency(&c, &cfg(64, 2)), 116.0);
    }

    #[test]
    fn linear_in_layers() {
        let c = LatencyCosts::log_tree(64);
        let at = |l| estimate_latency(&c, &cfg(64, l));
        assert_eq!(at(2) - at(1), c.per_layer());
        assert_eq!(at(3) - at(2), c.per_layer());
        assert_eq!(c.per_layer(), 4.0 * 7.0 + 3.0 + 7.0 + 2.0 * 6.0);
    }
}
