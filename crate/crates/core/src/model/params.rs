use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// One transformer layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

const LAYER_TENSORS: [&str; 12] = [
    "wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2", "ln1_gain", "ln1_bias", "ln2_gain",
    "ln2_bias",
];

impl LayerParams {
    fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        let f = cfg.ffn_dim();
        Self {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            w1: Matrix::zeros(d, f),
            b1: Matrix::zeros(1, f),
            w2: Matrix::zeros(f, d),
            b2: Matrix::zeros(1, d),
            ln1_gain: Matrix::zeros(1, d),
            ln1_bias: Matrix::zeros(1, d),
            ln2_gain: Matrix::zeros(1, d),
            ln2_bias: Matrix::zeros(1, d),
        }
    }

    pub(crate) fn tensors(&self) -> [&Matrix; 12] {
        [
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.ln2_gain,
            &self.ln2_bias,
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }
}

/// Every learnable tensor of the predictor. Gradients and optimizer moments
/// reuse the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Shared input embedding, S×D.
    pub embed: Matrix,
    /// Classification token, 1×D.
    pub cls: Matrix,
    /// Position embedding, (N+1)×D.
    pub pos: Matrix,
    /// Context embedding, 2×D.
    pub context: Matrix,
    pub layers: Vec<LayerParams>,
    /// Output head, D×B.
    pub head_w: Matrix,
    pub head_b: Matrix,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        Self {
            embed: Matrix::zeros(cfg.input_width, d),
            cls: Matrix::zeros(1, d),
            pos: Matrix::zeros(cfg.tokens(), d),
            context: Matrix::zeros(2, d),
            layers: (0..cfg.layers).map(|_| LayerParams::zeros(cfg)).collect(),
            head_w: Matrix::zeros(d, cfg.outputs),
            head_b: Matrix::zeros(1, cfg.outputs),
        }
    }

    /// Uniform `±sqrt(1 / fan_in)` for linear maps; zero biases, class token
    /// and position embedding; unit layer-norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(cfg);
        let mut uniform = |m: &mut Matrix| {
            let limit = libm::sqrt(1.0 / m.rows() as f64);
            for v in m.as_mut_slice() {
                *v = rng.gen_range(-limit..limit);
            }
        };
        uniform(&mut p.embed);
        uniform(&mut p.context);
        for layer in &mut p.layers {
            uniform(&mut layer.wq);
            uniform(&mut layer.wk);
            uniform(&mut layer.wv);
            uniform(&mut layer.wo);
            uniform(&mut layer.w1);
            uniform(&mut layer.w2);
            layer.ln1_gain.fill(1.0);
            layer.ln2_gain.fill(1.0);
        }
        uniform(&mut p.head_w);
        p
    }

    /// Tensors in declaration order: embed, cls, pos, context, each layer's
    /// twelve tensors, head_w, head_b.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.embed, &self.cls, &self.pos, &self.context];
        for layer in &self.layers {
            out.extend(layer.tensors());
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![
            &mut self.embed,
            &mut self.cls,
            &mut self.pos,
            &mut self.context,
        ];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out: Vec<String> = ["embed", "cls", "pos", "context"]
            .iter()
            .map(|s| String::from(*s))
            .collect();
        for l in 0..self.layers.len() {
            out.extend(LAYER_TENSORS.iter().map(|n| format!("layer{l}.{n}")));
        }
        out.push("head_w".into());
        out.push("head_b".into());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Accumulates `other` into `self` elementwise.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.scale(k);
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_squares()).sum()
    }

    /// Shapes must match `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expect = ModelParams::zeros(cfg);
        let ours = self.tensors();
        let theirs = expect.tensors();
        if ours.len() != theirs.len() {
            return Err(Error::Shape(format!(
                "{} tensors, expected {}",
                ours.len(),
                theirs.len()
            )));
        }
        for ((a, b), name) in ours.iter().zip(&theirs).zip(expect.tensor_names()) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!(
                    "{name} is {:?}, expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// FNV-1a over the little-endian bytes of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t.as_slice() {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_consistent() {
        let cfg = ModelConfig {
            dim: 8,
            heads: 2,
            layers: 2,
            outputs: 16,
            history: 4,
            input_width: 10,
            ffn_mult: 2,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(&cfg, 3);
        assert_eq!(p.tensors().len(), p.tensor_names().len());
        assert_eq!(p.tensors().len(), 4 + 12 * 2 + 2);
        assert!(p.check_shapes(&cfg).is_ok());
        assert_eq!(p.cls.sum_squares(), 0.0);
        assert_eq!(p.pos.sum_squares(), 0.0);
        let limit = libm::sqrt(1.0 / 10.0);
        assert!(p.embed.as_slice().iter().all(|v| v.abs() <= limit));
        assert_eq!(ModelParams::init(&cfg, 3).checksum(), p.checksum());
        assert_ne!(ModelParams::init(&cfg, 4).checksum(), p.checksum());
    }
}
