//! Differentiable sampling: Gaussian reparameterization and straight-through
//! Gumbel-softmax.

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};
use crate::nn::dense::{softmax_backward_inplace, softmax_rows_inplace};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// `h + exp(log_var / 2) ⊙ eps` together with what the backward pass needs.
#[derive(Clone, Debug)]
pub struct Reparam {
    pub output: Array2<f64>,
    eps: Array2<f64>,
    std: Array2<f64>,
    clamped: Array2<bool>,
}

pub fn standard_normal<R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample::<f64, _>(StandardNormal))
}

pub fn reparameterize<R: Rng + ?Sized>(
    h: &Array2<f64>,
    log_var: &Array2<f64>,
    rng: &mut R,
) -> Result<Reparam> {
    let eps = standard_normal(h.dim(), rng);
    reparameterize_with_noise(h, log_var, eps)
}

/// Reparameterization with caller-supplied noise; log-variance is clamped to
/// `[-10, 10]`.
pub fn reparameterize_with_noise(
    h: &Array2<f64>,
    log_var: &Array2<f64>,
    eps: Array2<f64>,
) -> Result<Reparam> {
    ensure!(
        h.dim() == log_var.dim() && h.dim() == eps.dim(),
        ContractViolation,
        "reparameterize shapes differ: h {:?}, log_var {:?}, eps {:?}",
        h.dim(),
        log_var.dim(),
        eps.dim()
    );
    let clamped = log_var.mapv(|v| !(LOG_VAR_MIN..=LOG_VAR_MAX).contains(&v));
    let std = log_var.mapv(|v| (0.5 * v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).exp());
    let mut output = &std * &eps;
    output += h;
    Ok(Reparam {
        output,
        eps,
        std,
        clamped,
    })
}

impl Reparam {
    /// Returns `(d/dh, d/dlog_var)`. No gradient flows to the noise.
    pub fn backward(&self, grad: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let grad_h = grad.clone();
        let mut grad_lv = Array2::zeros(grad.dim());
        Zip::from(&mut grad_lv)
            .and(grad)
            .and(&self.eps)
            .and(&self.std)
            .and(&self.clamped)
            .for_each(|out, &g, &e, &s, &c| {
                *out = if c { 0.0 } else { 0.5 * g * e * s };
            });
        (grad_h, grad_lv)
    }

    pub fn std(&self) -> &Array2<f64> {
        &self.std
    }
}

/// One straight-through Gumbel-softmax draw per row.
#[derive(Clone, Debug)]
pub struct GumbelSample {
    /// Exact one-hot rows (forward value).
    pub hard: Array2<f64>,
    /// Relaxed sample used for the backward pass.
    pub soft: Array2<f64>,
    pub indices: Vec<usize>,
    temperature: f64,
}

pub fn st_gumbel_softmax<R: Rng + ?Sized>(
    logits: &Array2<f64>,
    temperature: f64,
    rng: &mut R,
) -> Result<GumbelSample> {
    let gumbel = Array2::from_shape_simple_fn(logits.dim(), || {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        -(-u.ln()).ln()
    });
    st_gumbel_softmax_with_noise(logits, temperature, &gumbel)
}

pub fn st_gumbel_softmax_with_noise(
    logits: &Array2<f64>,
    temperature: f64,
    gumbel: &Array2<f64>,
) -> Result<GumbelSample> {
    ensure!(
        temperature > 0.0,
        ContractViolation,
        "temperature must be positive, got {temperature}"
    );
    ensure!(
        logits.dim() == gumbel.dim(),
        ContractViolation,
        "gumbel noise shape mismatch"
    );
    let mut soft = (logits + gumbel) / temperature;
    let mut indices = Vec::with_capacity(soft.nrows());
    for row in soft.rows() {
        let (idx, _) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            });
        indices.push(idx);
    }
    softmax_rows_inplace(&mut soft);
    let mut hard = Array2::zeros(soft.dim());
    for (r, &c) in indices.iter().enumerate() {
        hard[[r, c]] = 1.0;
    }
    Ok(GumbelSample {
        hard,
        soft,
        indices,
        temperature,
    })
}

impl GumbelSample {
    /// Straight-through: the gradient w.r.t. the hard sample is routed through
    /// the soft sample's Jacobian.
    pub fn backward(&self, grad_hard: &Array2<f64>) -> Array2<f64> {
        let mut g = grad_hard.clone();
        softmax_backward_inplace(&self.soft, &mut g);
        g / self.temperature
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reparam_limits() {
        let h = array![[0.25, -1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = reparameterize(&h, &array![[-80.0, -80.0]], &mut rng).unwrap();
        for (a, b) in out.output.iter().zip(h.iter()) {
            assert!((a - b).abs() < 0.05);
        }
        let unit =
            reparameterize_with_noise(&array![[0.0]], &array![[0.0]], array![[1.0]]).unwrap();
        assert_eq!(unit.output[[0, 0]], 1.0);
        assert!(
            reparameterize_with_noise(&array![[0.0]], &array![[0.0, 1.0]], array![[1.0]]).is_err()
        );
    }

    #[test]
    fn gumbel_is_one_hot_and_follows_dominant_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = array![[0.0, 20.0, 0.0, 0.0]];
        for _ in 0..200 {
            let s = st_gumbel_softmax(&logits, 1.0, &mut rng).unwrap();
            assert_eq!(s.hard.sum(), 1.0);
            assert_eq!(s.hard.iter().filter(|v| **v != 0.0).count(), 1);
            assert_eq!(s.indices[0], 1);
        }
        assert!(st_gumbel_softmax(&logits, 0.0, &mut rng).is_err());
    }
}
