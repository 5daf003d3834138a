use alloc::vec::Vec;

use crate::labeling::DeltaBitmap;

/// Probability clamp inside the logarithms.
pub const BCE_EPSILON: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON)
}

/// Mean binary cross-entropy over the bitmap and its gradient with respect
/// to `pred`. Probabilities are clamped to `[ε, 1 − ε]`; the gradient is
/// that of the clamped expression (zero where the clamp is active).
pub fn bce_loss(pred: &[f64], label: &DeltaBitmap) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), label.len(), "prediction / label width");
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (i, &p) in pred.iter().enumerate() {
        let pc = clamp(p);
        let y = if label.get(i) { 1.0 } else { 0.0 };
        loss -= y * libm::log(pc) + (1.0 - y) * libm::log(1.0 - pc);
        let active = p > BCE_EPSILON && p < 1.0 - BCE_EPSILON;
        grad.push(if active {
            (-y / pc + (1.0 - y) / (1.0 - pc)) / n
        } else {
            0.0
        });
    }
    (loss / n, grad)
}

/// Loss and `dL/dlogit` when `pred = sigmoid(logit)`.
pub(crate) fn bce_with_logits(pred: &[f64], label: &DeltaBitmap) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (i, &p) in pred.iter().enumerate() {
        let pc = clamp(p);
        let y = if label.get(i) { 1.0 } else { 0.0 };
        loss -= y * libm::log(pc) + (1.0 - y) * libm::log(1.0 - pc);
        let active = p > BCE_EPSILON && p < 1.0 - BCE_EPSILON;
        grad.push(if active { (p - y) / n } else { 0.0 });
    }
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn bits(v: &[bool]) -> DeltaBitmap {
        let mut b = DeltaBitmap::new(v.len());
        for (i, &x) in v.iter().enumerate() {
            b.set(i, x);
        }
        b
    }

    #[test]
    fn examples() {
        let (l, _) = bce_loss(&[1.0 - BCE_EPSILON], &bits(&[true]));
        assert!(l < 1e-6);
        let (l, g) = bce_loss(&[0.5, 0.5], &bits(&[true, false]));
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(g, vec![-1.0, 1.0]);
        // clamp keeps log finite
        let (l, g) = bce_loss(&[0.0, 1.0], &bits(&[true, false]));
        assert!(l.is_finite());
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn loss_decreases_with_confidence_in_truth() {
        let y = bits(&[true]);
        let mut last = f64::INFINITY;
        for k in 1..100 {
            let (l, _) = bce_loss(&[k as f64 / 100.0], &y);
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let y = bits(&[true, false, true]);
        let p = [0.3, 0.8, 0.6];
        let (_, g) = bce_loss(&p, &y);
        let h = 1e-6;
        for i in 0..3 {
            let mut a = p;
            a[i] += h;
            let mut b = p;
            b[i] -= h;
            let n = (bce_loss(&a, &y).0 - bce_loss(&b, &y).0) / (2.0 * h);
            assert!((n - g[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn logit_form_agrees_with_chain_rule() {
        let y = bits(&[true, false]);
        let p = [0.2, 0.7];
        let (l1, gp) = bce_loss(&p, &y);
        let (l2, gz) = bce_with_logits(&p, &y);
        assert_eq!(l1, l2);
        for i in 0..2 {
            assert!((gp[i] * p[i] * (1.0 - p[i]) - gz[i]).abs() < 1e-12);
        }
    }
}
