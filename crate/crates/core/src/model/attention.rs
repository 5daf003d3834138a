//! Attention, feed-forward and layer-norm blocks with their backward passes.

use alloc::format;
use alloc::vec::Vec;

use super::params::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::{softmax_rows, Matrix};

pub(crate) const NORM_EPSILON: f64 = 1e-5;

pub struct AttentionOutput {
    pub output: Matrix,
    /// Row-stochastic attention weights.
    pub weights: Matrix,
}

/// Scaled dot-product attention `softmax(Q Kᵀ / sqrt(d_k)) V`.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<AttentionOutput> {
    if q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(Error::Shape(format!(
            "attention Q {:?}, K {:?}, V {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if !(q.is_finite() && k.is_finite() && v.is_finite()) {
        return Err(Error::Numeric("attention input".into()));
    }
    let mut weights = q.matmul_t(k);
    weights.scale(1.0 / libm::sqrt(q.cols() as f64));
    softmax_rows(&mut weights);
    let output = weights.matmul(v);
    Ok(AttentionOutput { output, weights })
}

pub(crate) struct MhaCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    weights: Vec<Matrix>,
    concat: Matrix,
}

pub(crate) fn mha_forward(
    x: &Matrix,
    layer: &LayerParams,
    heads: usize,
) -> Result<(Matrix, MhaCache)> {
    let dim = x.cols();
    let dk = dim / heads;
    let q = x.matmul(&layer.wq);
    let k = x.matmul(&layer.wk);
    let v = x.matmul(&layer.wv);
    let mut concat = Matrix::zeros(x.rows(), dim);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.col_block(h * dk, dk);
        let kh = k.col_block(h * dk, dk);
        let vh = v.col_block(h * dk, dk);
        let out = attention(&qh, &kh, &vh)?;
        concat.set_col_block(h * dk, &out.output);
        weights.push(out.weights);
    }
    let y = concat.matmul(&layer.wo);
    let cache = MhaCache {
        x: x.clone(),
        q,
        k,
        v,
        weights,
        concat,
    };
    Ok((y, cache))
}

/// `Concat(head_1, …, head_H) W^O` over the rows of `x`.
pub fn multi_head_attention(x: &Matrix, layer: &LayerParams, heads: usize) -> Result<Matrix> {
    if heads == 0 || x.cols() % heads != 0 {
        return Err(Error::Shape(format!(
            "{} columns cannot split into {heads} heads",
            x.cols()
        )));
    }
    mha_forward(x, layer, heads).map(|(y, _)| y)
}

/// Returns `dL/dx` and accumulates weight gradients into `grads`.
pub(crate) fn mha_backward(
    dy: &Matrix,
    cache: &MhaCache,
    layer: &LayerParams,
    grads: &mut LayerParams,
    heads: usize,
) -> Matrix {
    let dim = cache.x.cols();
    let dk = dim / heads;
    let scale = 1.0 / libm::sqrt(dk as f64);
    grads.wo.add_assign(&cache.concat.t_matmul(dy));
    let dconcat = dy.matmul_t(&layer.wo);

    let mut dq = Matrix::zeros(cache.q.rows(), dim);
    let mut dk_all = Matrix::zeros(cache.k.rows(), dim);
    let mut dv = Matrix::zeros(cache.v.rows(), dim);
    for h in 0..heads {
        let a = &cache.weights[h];
        let qh = cache.q.col_block(h * dk, dk);
        let kh = cache.k.col_block(h * dk, dk);
        let vh = cache.v.col_block(h * dk, dk);
        let doh = dconcat.col_block(h * dk, dk);

        let da = doh.matmul_t(&vh);
        let dvh = a.t_matmul(&doh);
        // softmax backward, row by row
        let mut ds = Matrix::zeros(a.rows(), a.cols());
        for r in 0..a.rows() {
            let ar = a.row(r);
            let dar = da.row(r);
            let inner: f64 = ar.iter().zip(dar).map(|(p, g)| p * g).sum();
            for ((o, p), g) in ds.row_mut(r).iter_mut().zip(ar).zip(dar) {
                *o = p * (g - inner) * scale;
            }
        }
        dq.set_col_block(h * dk, &ds.matmul(&kh));
        dk_all.set_col_block(h * dk, &ds.t_matmul(&qh));
        dv.set_col_block(h * dk, &dvh);
    }
    grads.wq.add_assign(&cache.x.t_matmul(&dq));
    grads.wk.add_assign(&cache.x.t_matmul(&dk_all));
    grads.wv.add_assign(&cache.x.t_matmul(&dv));
    let mut dx = dq.matmul_t(&layer.wq);
    dx.add_assign(&dk_all.matmul_t(&layer.wk));
    dx.add_assign(&dv.matmul_t(&layer.wv));
    dx
}

pub(crate) struct FfnCache {
    x: Matrix,
    pre: Matrix,
    hidden: Matrix,
}

pub(crate) fn ffn_forward(x: &Matrix, layer: &LayerParams) -> (Matrix, FfnCache) {
    let mut pre = x.matmul(&layer.w1);
    pre.add_row_assign(layer.b1.as_slice());
    let mut hidden = pre.clone();
    hidden.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    let mut y = hidden.matmul(&layer.w2);
    y.add_row_assign(layer.b2.as_slice());
    let cache = FfnCache {
        x: x.clone(),
        pre,
        hidden,
    };
    (y, cache)
}

/// `max(0, x W1 + b1) W2 + b2`, row-wise.
pub fn feed_forward(x: &Matrix, layer: &LayerParams) -> Matrix {
    ffn_forward(x, layer).0
}

pub(crate) fn ffn_backward(
    dy: &Matrix,
    cache: &FfnCache,
    layer: &LayerParams,
    grads: &mut LayerParams,
) -> Matrix {
    grads.w2.add_assign(&cache.hidden.t_matmul(dy));
    grads.b2.add_assign(&dy.sum_rows());
    let mut dpre = dy.matmul_t(&layer.w2);
    for (g, p) in dpre.as_mut_slice().iter_mut().zip(cache.pre.as_slice()) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
    grads.w1.add_assign(&cache.x.t_matmul(&dpre));
    grads.b1.add_assign(&dpre.sum_rows());
    dpre.matmul_t(&layer.w1)
}

pub(crate) struct NormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

pub(crate) fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, NormCache) {
    let d = x.cols();
    let mut xhat = Matrix::zeros(x.rows(), d);
    let mut y = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / libm::sqrt(var + NORM_EPSILON);
        inv_std.push(inv);
        for c in 0..d {
            let h = (row[c] - mean) * inv;
            xhat[(r, c)] = h;
            y[(r, c)] = h * gain.as_slice()[c] + bias.as_slice()[c];
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    dy: &Matrix,
    cache: &NormCache,
    gain: &Matrix,
    dgain: &mut Matrix,
    dbias: &mut Matrix,
) -> Matrix {
    let d = dy.cols();
    let mut dx = Matrix::zeros(dy.rows(), d);
    for r in 0..dy.rows() {
        let g = dy.row(r);
        let h = cache.xhat.row(r);
        let mut mean_dh = 0.0;
        let mut mean_dh_h = 0.0;
        for c in 0..d {
            dgain.as_mut_slice()[c] += g[c] * h[c];
            dbias.as_mut_slice()[c] += g[c];
            let dh = g[c] * gain.as_slice()[c];
            mean_dh += dh;
            mean_dh_h += dh * h[c];
        }
        mean_dh /= d as f64;
        mean_dh_h /= d as f64;
        let inv = cache.inv_std[r];
        for c in 0..d {
            let dh = g[c] * gain.as_slice()[c];
            dx[(r, c)] = inv * (dh - mean_dh - h[c] * mean_dh_h);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
    }

    #[test]
    fn singleton_attention_returns_value() {
        let one = |v| Matrix::from_vec(1, 1, vec![v]);
        let out = attention(&one(2.0), &one(2.0), &one(7.0)).unwrap();
        assert_eq!(out.output.as_slice(), &[7.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let q = Matrix::from_vec(1, 2, vec![0.3, -1.0]);
        let k = Matrix::from_vec(2, 2, vec![1.0, 2.0, 1.0, 2.0]);
        let v = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 5.0, 6.0, 7.0]);
        let out = attention(&q, &k, &v).unwrap();
        for (o, e) in out.output.as_slice().iter().zip([3.0, 4.0, 5.0]) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_weights_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let q = random(3, 4, &mut rng);
            let k = random(3, 4, &mut rng);
            let v = random(3, 4, &mut rng);
            let out = attention(&q, &k, &v).unwrap();
            for r in 0..3 {
                let s: f64 = out.weights.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn attention_rejects_bad_input() {
        let m = Matrix::from_vec(1, 1, vec![f64::NAN]);
        let ok = Matrix::from_vec(1, 1, vec![1.0]);
        assert!(matches!(attention(&m, &ok, &ok), Err(Error::Numeric(_))));
        let wide = Matrix::zeros(1, 2);
        assert!(matches!(attention(&wide, &ok, &ok), Err(Error::Shape(_))));
    }

    fn layer(dim: usize, ffn_mult: usize, seed: u64) -> LayerParams {
        let cfg = ModelConfig {
            dim,
            heads: 1,
            layers: 1,
            ffn_mult,
            ..ModelConfig::default()
        };
        ModelParams::init(&cfg, seed).layers.remove(0)
    }

    #[test]
    fn single_head_identity_output_matches_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = layer(4, 1, 1);
        l.wo = Matrix::identity(4);
        let x = random(5, 4, &mut rng);
        let y = multi_head_attention(&x, &l, 1).unwrap();
        let direct = attention(&x.matmul(&l.wq), &x.matmul(&l.wk), &x.matmul(&l.wv)).unwrap();
        assert_eq!(y, direct.output);
        assert_eq!(multi_head_attention(&x, &l, 1).unwrap().shape(), (5, 4));
        assert!(multi_head_attention(&x, &l, 3).is_err());
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let mut l = layer(4, 1, 2);
        for m in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo] {
            *m = Matrix::identity(4);
        }
        let x = Matrix::from_vec(3, 4, [0.5, -1.0, 2.0, 0.25].repeat(3));
        let y = multi_head_attention(&x, &l, 2).unwrap();
        for r in 1..3 {
            assert_eq!(y.row(r), y.row(0));
        }
    }

    #[test]
    fn feed_forward_examples() {
        let mut l = layer(2, 1, 3);
        l.w1 = Matrix::identity(2);
        l.w2 = Matrix::identity(2);
        l.b1.fill(0.0);
        l.b2.fill(0.0);
        let x = Matrix::from_vec(1, 2, vec![-1.0, 2.0]);
        assert_eq!(feed_forward(&x, &l).as_slice(), &[0.0, 2.0]);
        l.w1.fill(0.0);
        l.w2.fill(0.0);
        l.b2 = Matrix::from_vec(1, 2, vec![0.5, -0.5]);
        assert_eq!(feed_forward(&x, &l).as_slice(), &[0.5, -0.5]);
    }

    // Finite-difference oracle for the FFN: loss = sum(y ⊙ probe).
    #[test]
    fn feed_forward_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = layer(4, 2, 4);
        let x = random(3, 4, &mut rng);
        let probe = random(3, 4, &mut rng);
        let loss = |l: &LayerParams, x: &Matrix| -> f64 {
            let y = feed_forward(x, l);
            y.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = ffn_forward(&x, &l);
        let mut grads = layer(4, 2, 4);
        for t in grads.tensors_mut() {
            t.fill(0.0);
        }
        let dx = ffn_backward(&probe, &cache, &l, &mut grads);
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            let n = (loss(&l, &xp) - loss(&l, &xm)) / (2.0 * h);
            assert!(rel(dx.as_slice()[i], n) < 1e-4);
        }
        for i in 0..l.w1.len() {
            let mut lp = l.clone();
            lp.w1.as_mut_slice()[i] += h;
            let mut lm = l.clone();
            lm.w1.as_mut_slice()[i] -= h;
            let n = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * h);
            assert!(rel(grads.w1.as_slice()[i], n) < 1e-4, "w1[{i}]");
        }
    }
}
