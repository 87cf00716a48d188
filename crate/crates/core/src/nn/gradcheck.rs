//! Central-difference gradient checks for the hand-written backward passes.
//!
//! Each module that owns a differentiable computation exposes a
//! `gradient_checks(seed)` built on [`check`]; tests and the acceptance
//! suite collect them.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nn::dense::{Activation, DenseNet};
use crate::nn::loss::{bce_grad, bce_loss, softmax_ce_batch};
use crate::nn::sample::{reparameterize_with_noise, st_gumbel_softmax_with_noise, standard_normal};

/// Outcome of one check: the worst relative error over the probed entries.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.probes > 0 && self.max_rel_error < tol
    }
}

/// `|a - n| / max(|a| + |n|, 1e-6)`: relative where the gradient is
/// sizeable, absolute near zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Step used by every check. Small enough for the curvature of the
/// networks here, large enough that rounding in losses of order 100 stays
/// well under the tolerance.
pub const STEP: f64 = 1e-5;

/// Compares `analytic[p]` with central differences of `loss` at `per_param`
/// random entries of every parameter returned by `params`.
pub fn check<M>(
    name: &str,
    model: &mut M,
    params: impl Fn(&mut M) -> Vec<&mut Array2<f64>>,
    loss: impl Fn(&M) -> f64,
    analytic: &[Array2<f64>],
    per_param: usize,
    rng: &mut impl Rng,
) -> GradCheck {
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    for (p, grad) in analytic.iter().enumerate() {
        let (rows, cols) = grad.dim();
        if rows * cols == 0 {
            continue;
        }
        for _ in 0..per_param {
            let (i, j) = (rng.gen_range(0..rows), rng.gen_range(0..cols));
            let orig = params(model)[p][[i, j]];
            params(model)[p][[i, j]] = orig + STEP;
            let up = loss(model);
            params(model)[p][[i, j]] = orig - STEP;
            let down = loss(model);
            params(model)[p][[i, j]] = orig;
            worst = worst.max(relative_error(grad[[i, j]], (up - down) / (2.0 * STEP)));
            probes += 1;
        }
    }
    GradCheck {
        name: name.to_string(),
        probes,
        max_rel_error: worst,
    }
}

/// Moves every single-row parameter (the biases) off zero. With zero biases
/// an input row that silences a whole ReLU layer leaves the next layer's
/// pre-activations exactly at the kink, where central differences average
/// the two one-sided slopes.
pub fn offset_biases(params: Vec<&mut Array2<f64>>, rng: &mut impl Rng) {
    for p in params.into_iter().filter(|p| p.nrows() == 1) {
        p.mapv_inplace(|v| v + rng.gen_range(-0.2..0.2));
    }
}

/// Network plus a fixed input, so parameters and input are checked alike.
struct Probe {
    net: DenseNet,
    x: Array2<f64>,
}

fn all_params(p: &mut Probe) -> Vec<&mut Array2<f64>> {
    let mut v = p.net.params_mut();
    v.push(&mut p.x);
    v
}

/// Dense layers under every activation, both log-losses, the sparse input
/// path, the reparameterization and the relaxed Gumbel sample.
pub fn gradient_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let (n, din, dout) = (5, 6, 4);

    // weighted sum of the outputs: the output gradient is the weight matrix
    for (name, act) in [
        ("dense/identity", Activation::Identity),
        ("dense/relu", Activation::Relu),
        ("dense/sigmoid", Activation::Sigmoid),
        ("dense/softmax", Activation::Softmax),
    ] {
        let mut p = Probe {
            net: DenseNet::new(
                &[din, 7, 6, dout],
                &[Activation::Relu, Activation::Sigmoid, act],
                &mut rng,
            ),
            x: standard_normal((n, din), &mut rng),
        };
        offset_biases(p.net.params_mut(), &mut rng);
        let w = standard_normal((n, dout), &mut rng);
        let cache = p.net.forward(p.x.view())?;
        let (g, gx) = p.net.backward(&cache, &w);
        let mut analytic = g.0;
        analytic.push(gx);
        let loss = |p: &Probe| (p.net.predict(p.x.view()).unwrap() * &w).sum();
        out.push(check(
            name, &mut p, all_params, loss, &analytic, 6, &mut rng,
        ));
    }

    // sigmoid outputs with binary cross-entropy, through the activation
    let mut p = Probe {
        net: DenseNet::new(
            &[din, 7, dout],
            &[Activation::Relu, Activation::Sigmoid],
            &mut rng,
        ),
        x: standard_normal((n, din), &mut rng),
    };
    offset_biases(p.net.params_mut(), &mut rng);
    let target = Array2::from_shape_fn((n, dout), |_| f64::from(rng.gen_bool(0.5)));
    let cache = p.net.forward(p.x.view())?;
    let (g, gx) = p
        .net
        .backward(&cache, &bce_grad(cache.output().view(), target.view()));
    let mut analytic = g.0;
    analytic.push(gx);
    let loss = |p: &Probe| bce_loss(p.net.predict(p.x.view()).unwrap().view(), target.view());
    out.push(check(
        "loss/bce", &mut p, all_params, loss, &analytic, 6, &mut rng,
    ));

    // same loss, gradient taken at the logits
    let mut p = Probe {
        net: DenseNet::new(
            &[din, 7, dout],
            &[Activation::Relu, Activation::Sigmoid],
            &mut rng,
        ),
        x: standard_normal((n, din), &mut rng),
    };
    offset_biases(p.net.params_mut(), &mut rng);
    let cache = p.net.forward(p.x.view())?;
    let numel = (n * dout) as f64;
    let (g, gx) = p
        .net
        .backward_from_logits(&cache, &((cache.output() - &target) / numel));
    let mut analytic = g.0;
    analytic.push(gx);
    out.push(check(
        "loss/bce-logits",
        &mut p,
        all_params,
        loss,
        &analytic,
        6,
        &mut rng,
    ));

    // softmax cross-entropy at the logits
    let mut p = Probe {
        net: DenseNet::new(
            &[din, 7, dout],
            &[Activation::Relu, Activation::Identity],
            &mut rng,
        ),
        x: standard_normal((n, din), &mut rng),
    };
    offset_biases(p.net.params_mut(), &mut rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..dout)).collect();
    let cache = p.net.forward(p.x.view())?;
    let (_, g_logits) = softmax_ce_batch(cache.output(), &labels)?;
    let (g, gx) = p.net.backward(&cache, &g_logits);
    let mut analytic = g.0;
    analytic.push(gx);
    let loss = |p: &Probe| {
        softmax_ce_batch(&p.net.predict(p.x.view()).unwrap(), &labels)
            .unwrap()
            .0
    };
    out.push(check(
        "loss/softmax-ce",
        &mut p,
        all_params,
        loss,
        &analytic,
        6,
        &mut rng,
    ));

    // sparse first layer on 0/1 inputs, parameters only
    let mut net = DenseNet::new(
        &[12, 7, dout],
        &[Activation::Relu, Activation::Identity],
        &mut rng,
    );
    offset_biases(net.params_mut(), &mut rng);
    let bits = Array2::from_shape_fn((n, 12), |_| f64::from(rng.gen_bool(0.3)));
    let w = standard_normal((n, dout), &mut rng);
    let cache = net.forward_binary(bits.view())?;
    let analytic = net.param_gradients(&cache, &w).0;
    let loss = |net: &DenseNet| (net.predict(bits.view()).unwrap() * &w).sum();
    out.push(check(
        "dense/binary-input",
        &mut net,
        |n| n.params_mut(),
        loss,
        &analytic,
        6,
        &mut rng,
    ));

    // reparameterization, log-variance kept inside the clamp
    let mut hv = [
        standard_normal((n, dout), &mut rng),
        standard_normal((n, dout), &mut rng),
    ];
    let eps = standard_normal((n, dout), &mut rng);
    let w = standard_normal((n, dout), &mut rng);
    let r = reparameterize_with_noise(&hv[0], &hv[1], eps.clone())?;
    let (gh, glv) = r.backward(&w);
    let loss = |hv: &[Array2<f64>; 2]| {
        (reparameterize_with_noise(&hv[0], &hv[1], eps.clone())
            .unwrap()
            .output
            * &w)
            .sum()
    };
    out.push(check(
        "sample/reparameterize",
        &mut hv,
        |hv| hv.iter_mut().collect(),
        loss,
        &[gh, glv],
        10,
        &mut rng,
    ));

    // straight-through Gumbel: the backward pass is the relaxed sample's
    // Jacobian, so it is checked against the relaxed sample
    let mut logits = standard_normal((n, dout), &mut rng);
    let gumbel = standard_normal((n, dout), &mut rng);
    let w = standard_normal((n, dout), &mut rng);
    let temperature = 0.7;
    let s = st_gumbel_softmax_with_noise(&logits, temperature, &gumbel)?;
    let analytic = [s.backward(&w)];
    let loss = |l: &Array2<f64>| {
        (st_gumbel_softmax_with_noise(l, temperature, &gumbel)
            .unwrap()
            .soft
            * &w)
            .sum()
    };
    out.push(check(
        "sample/gumbel-relaxed",
        &mut logits,
        |l| vec![l],
        loss,
        &analytic,
        10,
        &mut rng,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn network_gradients_match_finite_differences() {
        for c in gradient_checks(0).unwrap() {
            assert!(c.passes(1e-4), "{c:?}");
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut x = Array2::from_elem((2, 2), 1.5);
        let wrong = [Array2::from_elem((2, 2), 2.0)];
        let c = check(
            "square",
            &mut x,
            |x| vec![x],
            |x| x.mapv(|v| v * v).sum(),
            &wrong,
            4,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(!c.passes(1e-4));
    }
}
