use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{ensure, Result};

/// Probability clamp used by every log-loss.
pub const PROB_EPS: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Mean binary cross-entropy, `-[t log p + (1-t) log(1-p)]` averaged over all
/// elements, with predictions clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    assert_eq!(pred.dim(), target.dim(), "bce_loss shape mismatch");
    let n = pred.len().max(1) as f64;
    let mut total = 0.0;
    Zip::from(&pred).and(&target).for_each(|&p, &t| {
        let p = clamp_prob(p);
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    });
    total / n
}

/// `d bce_loss / d pred`, zero where the clamp is active.
pub fn bce_grad(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Array2<f64> {
    assert_eq!(pred.dim(), target.dim(), "bce_grad shape mismatch");
    let n = pred.len().max(1) as f64;
    Zip::from(&pred).and(&target).map_collect(|&p, &t| {
        if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
            0.0
        } else {
            (p - t) / (p * (1.0 - p)) / n
        }
    })
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|v| v - lse).collect()
}

/// `-log softmax(logits)[label]`, stabilized by max-subtraction.
pub fn softmax_ce_loss(logits: &[f64], label: usize) -> Result<f64> {
    ensure!(
        label < logits.len(),
        ContractViolation,
        "label {label} outside {} classes",
        logits.len()
    );
    Ok(-log_softmax(logits)[label])
}

/// Batched cross-entropy: mean loss over rows and `d loss / d logits`.
pub fn softmax_ce_batch(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    ensure!(
        logits.nrows() == labels.len(),
        ContractViolation,
        "{} label(s) for {} row(s)",
        labels.len(),
        logits.nrows()
    );
    let n = labels.len().max(1) as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    for (i, (row, &label)) in logits.rows().into_iter().zip(labels).enumerate() {
        let row = row.to_vec();
        ensure!(
            label < row.len(),
            ContractViolation,
            "label {label} outside {} classes",
            row.len()
        );
        let logp = log_softmax(&row);
        total -= logp[label];
        for (j, lp) in logp.iter().enumerate() {
            grad[[i, j]] = (lp.exp() - if j == label { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn bce_floor_and_half() {
        let t = array![[1.0, 0.0, 1.0]];
        assert!(bce_loss(t.view(), t.view()) < 1e-6);
        let half = Array2::from_elem((2, 3), 0.5);
        let tgt = array![[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
        assert!((bce_loss(half.view(), tgt.view()) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn ce_uniform_and_shift() {
        let k = 5;
        let uniform = vec![0.3; k];
        assert!((softmax_ce_loss(&uniform, 2).unwrap() - (k as f64).ln()).abs() < 1e-12);
        let logits = [0.1, -2.0, 3.5];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 100.0).collect();
        let a = softmax_ce_loss(&logits, 0).unwrap();
        let b = softmax_ce_loss(&shifted, 0).unwrap();
        assert!((a - b).abs() < 1e-10);
        assert!(softmax_ce_loss(&logits, 3).is_err());
    }
}
