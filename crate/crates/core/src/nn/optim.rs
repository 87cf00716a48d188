use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::dense::{DenseNet, Gradients};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coefficient of the l2 decay term added to gradients before the update.
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adaptive-moment optimizer state for one parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|s| (Array2::zeros(s), Array2::zeros(s)))
            .unzip();
        Self {
            config,
            step: 0,
            m,
            v,
        }
    }

    pub fn for_net(config: AdamConfig, net: &DenseNet) -> Self {
        Self::new(config, net.params().iter().map(|p| p.dim()))
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Fails without touching any parameter if a
    /// gradient is non-finite.
    pub fn step(
        &mut self,
        params: Vec<&mut Array2<f64>>,
        grads: &[Array2<f64>],
        names: &[String],
    ) -> Result<()> {
        ensure!(
            params.len() == self.m.len() && grads.len() == self.m.len(),
            ContractViolation,
            "optimizer tracks {} parameters, got {} params / {} grads",
            self.m.len(),
            params.len(),
            grads.len()
        );
        for (i, g) in grads.iter().enumerate() {
            ensure!(
                g.dim() == self.m[i].dim() && params[i].dim() == g.dim(),
                ContractViolation,
                "shape mismatch for {}",
                names.get(i).map(String::as_str).unwrap_or("?")
            );
            let finite = match g.as_slice() {
                Some(sl) => sl.iter().fold(true, |ok, v| ok & v.is_finite()),
                None => g.iter().all(|v| v.is_finite()),
            };
            if !finite {
                return Err(Error::Training(format!(
                    "non-finite gradient for parameter {}",
                    names.get(i).map(String::as_str).unwrap_or("?")
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            l2,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        // p -= lr · (m / bc1) / (sqrt(v / bc2) + eps), folded into two scalars
        let step_size = lr / bc1;
        let inv_sqrt_bc2 = 1.0 / bc2.sqrt();
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            match (
                p.as_slice_mut(),
                g.as_slice(),
                m.as_slice_mut(),
                v.as_slice_mut(),
            ) {
                (Some(p), Some(g), Some(m), Some(v)) => {
                    let n = p.len();
                    let (g, m, v) = (&g[..n], &mut m[..n], &mut v[..n]);
                    for i in 0..n {
                        adam_update(
                            &mut p[i],
                            g[i],
                            &mut m[i],
                            &mut v[i],
                            beta1,
                            beta2,
                            l2,
                            step_size,
                            inv_sqrt_bc2,
                            eps,
                        );
                    }
                }
                _ => Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                    adam_update(p, g, m, v, beta1, beta2, l2, step_size, inv_sqrt_bc2, eps);
                }),
            }
        }
        Ok(())
    }

    pub fn step_net(&mut self, net: &mut DenseNet, grads: &Gradients, prefix: &str) -> Result<()> {
        let names = net.param_names(prefix);
        self.step(net.params_mut(), &grads.0, &names)
    }
}

const MOMENT_FLOOR: f64 = 1e-150;

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn adam_update(
    p: &mut f64,
    g: f64,
    m: &mut f64,
    v: &mut f64,
    beta1: f64,
    beta2: f64,
    l2: f64,
    step_size: f64,
    inv_sqrt_bc2: f64,
    eps: f64,
) {
    let g = g + l2 * *p;
    // moments of parameters whose gradient stays zero decay geometrically;
    // flushing them before they turn subnormal keeps the update fast
    let m_new = beta1 * *m + (1.0 - beta1) * g;
    let v_new = beta2 * *v + (1.0 - beta2) * g * g;
    *m = m_new * ((m_new.abs() >= MOMENT_FLOOR) as u8 as f64);
    *v = v_new * ((v_new >= MOMENT_FLOOR) as u8 as f64);
    *p -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = array![[1.0, -2.0]];
        let mut adam = Adam::new(AdamConfig::default(), [(1, 2)]);
        for _ in 0..10 {
            adam.step(vec![&mut p], &[Array2::zeros((1, 2))], &["p".into()])
                .unwrap();
        }
        assert_eq!(p, array![[1.0, -2.0]]);
    }

    #[test]
    fn first_step_is_learning_rate() {
        let mut p = array![[0.0]];
        let mut adam = Adam::new(AdamConfig::with_lr(0.01), [(1, 1)]);
        adam.step(vec![&mut p], &[array![[3.7]]], &["p".into()])
            .unwrap();
        assert!((p[[0, 0]] + 0.01).abs() < 1e-8);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = array![[0.0]];
        let mut adam = Adam::new(AdamConfig::default(), [(1, 1)]);
        let err = adam
            .step(vec![&mut p], &[array![[f64::NAN]]], &["enc.w0".into()])
            .unwrap_err();
        assert!(err.to_string().contains("enc.w0"));
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut w = array![[5.0]];
        let mut adam = Adam::new(AdamConfig::with_lr(1e-2), [(1, 1)]);
        let mut losses = Vec::new();
        let mut reached = None;
        for step in 0..2000 {
            let grad = array![[2.0 * w[[0, 0]]]];
            adam.step(vec![&mut w], &[grad], &["w".into()]).unwrap();
            losses.push(w[[0, 0]] * w[[0, 0]]);
            if reached.is_none() && w[[0, 0]].abs() < 0.01 {
                reached = Some(step);
            }
        }
        assert!(reached.is_some(), "|w| never dropped below 0.01");
        // Monotone descent during the approach phase (momentum may overshoot later).
        let approach = &losses[10..400];
        assert!(approach.windows(2).all(|p| p[1] <= p[0]));
    }
}
