use alloc::format;
use alloc::vec::Vec;

use super::attention::{
    ffn_backward, ffn_forward, layer_norm, layer_norm_backward, mha_backward, mha_forward,
    FfnCache, MhaCache, NormCache,
};
use super::loss::bce_with_logits;
use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::features::ModelInput;
use crate::labeling::DeltaBitmap;
use crate::tensor::{sigmoid, Matrix};

/// Predictor configuration plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

pub struct SampleGradient {
    pub loss: f64,
    pub grads: ModelParams,
}

struct LayerCache {
    mha: MhaCache,
    norm1: NormCache,
    ffn: FfnCache,
    norm2: NormCache,
}

struct ForwardCache {
    context: Matrix,
    layers: Vec<LayerCache>,
    cls_state: Matrix,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: ModelParams::init(&config, seed),
            config,
        })
    }

    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let cfg = &self.config;
        if input.history.shape() != (cfg.history, cfg.input_width)
            || input.context.shape() != (cfg.history, 2)
        {
            return Err(Error::Shape(format!(
                "input {:?} / context {:?}, model expects {}x{}",
                input.history.shape(),
                input.context.shape(),
                cfg.history,
                cfg.input_width
            )));
        }
        Ok(())
    }

    /// `z0'`: class token and embedded history plus position and context
    /// embeddings.
    fn embed(&self, input: &ModelInput) -> (Matrix, Matrix) {
        let p = &self.params;
        let n = self.config.history;
        let dim = self.config.dim;
        let mut context = input.context.clone();
        let mask = self.config.context.mask();
        for r in 0..n {
            context[(r, 0)] *= mask[0];
            context[(r, 1)] *= mask[1];
        }
        let mut tokens = Matrix::zeros(n + 1, dim);
        tokens.row_mut(0).copy_from_slice(p.cls.as_slice());
        let embedded = input.history.matmul(&p.embed);
        let ctx = context.matmul(&p.context);
        for r in 0..n {
            let row = tokens.row_mut(r + 1);
            for c in 0..dim {
                row[c] = embedded[(r, c)] + ctx[(r, c)];
            }
        }
        tokens.add_assign(&p.pos);
        (tokens, context)
    }

    fn forward_cached(&self, input: &ModelInput) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(input)?;
        let (mut x, context) = self.embed(input);
        if !x.is_finite() {
            return Err(Error::Numeric("embedding".into()));
        }
        let mut layers = Vec::with_capacity(self.config.layers);
        for (l, layer) in self.params.layers.iter().enumerate() {
            let (mut r1, mha) = mha_forward(&x, layer, self.config.heads)
                .map_err(|_| Error::Numeric(format!("layer {l} attention")))?;
            r1.add_assign(&x);
            let (y1, norm1) = layer_norm(&r1, &layer.ln1_gain, &layer.ln1_bias);
            let (mut r2, ffn) = ffn_forward(&y1, layer);
            r2.add_assign(&y1);
            let (out, norm2) = layer_norm(&r2, &layer.ln2_gain, &layer.ln2_bias);
            if !out.is_finite() {
                return Err(Error::Numeric(format!("layer {l}")));
            }
            layers.push(LayerCache {
                mha,
                norm1,
                ffn,
                norm2,
            });
            x = out;
        }
        let cls_state = Matrix::from_vec(1, self.config.dim, x.row(0).to_vec());
        let mut logits = cls_state.matmul(&self.params.head_w);
        logits.add_assign(&self.params.head_b);
        if !logits.is_finite() {
            return Err(Error::Numeric("output head".into()));
        }
        let probs = logits.as_slice().iter().map(|&z| sigmoid(z)).collect();
        Ok((
            probs,
            ForwardCache {
                context,
                layers,
                cls_state,
            },
        ))
    }

    /// One confidence in `[0, 1]` per bitmap bit.
    pub fn forward(&self, input: &ModelInput) -> Result<Vec<f64>> {
        self.forward_cached(input).map(|(p, _)| p)
    }

    pub fn loss(&self, input: &ModelInput, label: &DeltaBitmap) -> Result<f64> {
        let probs = self.forward(input)?;
        Ok(bce_with_logits(&probs, label).0)
    }

    /// Adds this sample's parameter gradient into `grads`; returns the loss.
    pub fn accumulate_gradient(
        &self,
        input: &ModelInput,
        label: &DeltaBitmap,
        grads: &mut ModelParams,
    ) -> Result<f64> {
        let (probs, cache) = self.forward_cached(input)?;
        if label.len() != probs.len() {
            return Err(Error::Shape(format!(
                "label has {} bits, model outputs {}",
                label.len(),
                probs.len()
            )));
        }
        let (loss, dlogits) = bce_with_logits(&probs, label);
        let dlogits = Matrix::from_vec(1, probs.len(), dlogits);
        let p = &self.params;

        grads.head_w.add_assign(&cache.cls_state.t_matmul(&dlogits));
        grads.head_b.add_assign(&dlogits);
        let dcls = dlogits.matmul_t(&p.head_w);
        let mut dx = Matrix::zeros(self.config.tokens(), self.config.dim);
        dx.row_mut(0).copy_from_slice(dcls.as_slice());

        for (l, lc) in cache.layers.iter().enumerate().rev() {
            let layer = &p.layers[l];
            let g = &mut grads.layers[l];
            let dr2 = layer_norm_backward(
                &dx,
                &lc.norm2,
                &layer.ln2_gain,
                &mut g.ln2_gain,
                &mut g.ln2_bias,
            );
            let mut dy1 = ffn_backward(&dr2, &lc.ffn, layer, g);
            dy1.add_assign(&dr2);
            let dr1 = layer_norm_backward(
                &dy1,
                &lc.norm1,
                &layer.ln1_gain,
                &mut g.ln1_gain,
                &mut g.ln1_bias,
            );
            let mut dprev = mha_backward(&dr1, &lc.mha, layer, g, self.config.heads);
            dprev.add_assign(&dr1);
            dx = dprev;
        }

        grads.pos.add_assign(&dx);
        for (g, d) in grads.cls.as_mut_slice().iter_mut().zip(dx.row(0)) {
            *g += d;
        }
        let n = self.config.history;
        let mut dtokens = Matrix::zeros(n, self.config.dim);
        for r in 0..n {
            dtokens.row_mut(r).copy_from_slice(dx.row(r + 1));
        }
        grads.embed.add_assign(&input.history.t_matmul(&dtokens));
        grads.context.add_assign(&cache.context.t_matmul(&dtokens));
        Ok(loss)
    }

    pub fn gradient(&self, input: &ModelInput, label: &DeltaBitmap) -> Result<SampleGradient> {
        let mut grads = ModelParams::zeros(&self.config);
        let loss = self.accumulate_gradient(input, label, &mut grads)?;
        Ok(SampleGradient { loss, grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ContextMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            dim: 8,
            heads: 2,
            layers: 2,
            outputs: 16,
            history: 4,
            input_width: 5,
            ffn_mult: 2,
            context: ContextMode::Both,
        }
    }

    fn random_input(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ModelInput {
        let h = (0..cfg.history * cfg.input_width)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let c = (0..cfg.history * 2).map(|_| rng.gen_range(0.0..1.0)).collect();
        ModelInput {
            history: Matrix::from_vec(cfg.history, cfg.input_width, h),
            context: Matrix::from_vec(cfg.history, 2, c),
        }
    }

    #[test]
    fn outputs_are_probabilities() {
        let cfg = small();
        let model = Model::new(cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = model.forward(&random_input(&cfg, &mut rng)).unwrap();
            assert_eq!(p.len(), 16);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn context_ignored_when_disabled() {
        let cfg = ModelConfig {
            context: ContextMode::None,
            ..small()
        };
        let model = Model::new(cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_input(&cfg, &mut rng);
        let mut b = a.clone();
        b.context = random_input(&cfg, &mut rng).context;
        assert_eq!(model.forward(&a).unwrap(), model.forward(&b).unwrap());

        let with = Model::from_params(small(), model.params.clone()).unwrap();
        assert_ne!(with.forward(&a).unwrap(), with.forward(&b).unwrap());
    }

    #[test]
    fn rejects_wrong_shape() {
        let cfg = small();
        let model = Model::new(cfg, 1).unwrap();
        let bad = ModelInput {
            history: Matrix::zeros(3, 5),
            context: Matrix::zeros(3, 2),
        };
        assert!(matches!(model.forward(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_parameters_are_reported() {
        let cfg = small();
        let mut model = Model::new(cfg, 1).unwrap();
        model.params.layers[1].w1.as_mut_slice()[0] = f64::INFINITY;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = model.forward(&random_input(&cfg, &mut rng)).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref s) if s.contains("layer 1")));
    }
}
