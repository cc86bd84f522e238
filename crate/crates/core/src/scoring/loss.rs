/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Cross-entropy against a soft target: returns the loss and its gradient
/// with respect to the logits (`softmax(logits) - target`).
pub fn soft_cross_entropy(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    debug_assert_eq!(logits.len(), target.len());
    let logp = log_softmax(logits);
    let loss = -target.iter().zip(&logp).map(|(t, l)| if *t == 0.0 { 0.0 } else { t * l }).sum::<f64>();
    let grad = logp.iter().zip(target).map(|(l, t)| l.exp() - t).collect();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_one_hot_target() {
        let (loss, _) = soft_cross_entropy(&[0.3, 0.3, 0.3], &[0.0, 1.0, 0.0]);
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_matching_target() {
        let logits = [1.0, -2.0, 0.5, 3.0];
        let target = softmax(&logits);
        let (_, grad) = soft_cross_entropy(&logits, &target);
        assert!(grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let (loss, grad) = soft_cross_entropy(&[1e300, -1e300, 0.0], &[0.0, 0.0, 1.0]);
        assert!(loss.is_finite() && grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let raw: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let target: Vec<f64> = raw.iter().map(|r| r / s).collect();
            let (_, grad) = soft_cross_entropy(&logits, &target);
            let h = 1e-5;
            for i in 0..10 {
                let mut up = logits.clone();
                let mut dn = logits.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (soft_cross_entropy(&up, &target).0 - soft_cross_entropy(&dn, &target).0) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
                assert!(rel < 1e-4, "component {i}: analytic {} vs numeric {fd}", grad[i]);
            }
        }
    }
}
