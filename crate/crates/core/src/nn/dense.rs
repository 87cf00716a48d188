use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            "softmax" => Activation::Softmax,
            _ => return None,
        })
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Softmax => softmax_rows_inplace(z),
        }
    }

    /// Turns `d loss / d output` into `d loss / d pre-activation`, given the
    /// activation output `y`.
    fn backward(self, y: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => Zip::from(grad).and(y).for_each(|g, &y| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Sigmoid => Zip::from(grad).and(y).for_each(|g, &y| *g *= y * (1.0 - y)),
            Activation::Softmax => softmax_backward_inplace(y, grad),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows_inplace(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// In-place vector-Jacobian product of a row-wise softmax with output `y`.
pub fn softmax_backward_inplace(y: &Array2<f64>, grad: &mut Array2<f64>) {
    for (mut g, y) in grad.rows_mut().into_iter().zip(y.rows()) {
        let dot: f64 = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        Zip::from(&mut g)
            .and(&y)
            .for_each(|g, &y| *g = y * (*g - dot));
    }
}

/// Fully connected layer: `activation(x · weight + bias)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub weight: Array2<f64>,
    /// `1 × out`
    pub bias: Array2<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Intermediates recorded by [`DenseNet::forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
    /// Set by the binary-input forward: indices of the ones in each row.
    active: Option<Vec<Vec<usize>>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("non-empty network")
    }
}

/// Gradients aligned with [`DenseNet::params`]: `w0, b0, w1, b1, ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Array2<f64>>);

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.0 {
            *g *= factor;
        }
    }
}

impl DenseNet {
    /// `sizes` lists every width including input and output; one activation
    /// per layer (`sizes.len() - 1`).
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "a network needs at least one layer");
        assert_eq!(
            activations.len(),
            sizes.len() - 1,
            "one activation per layer"
        );
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weight = match act {
                    Activation::Relu => {
                        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                        Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng))
                    }
                    _ => {
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        let uniform = Uniform::new_inclusive(-limit, limit);
                        Array2::from_shape_simple_fn((fan_in, fan_out), || uniform.sample(rng))
                    }
                };
                Dense {
                    weight,
                    bias: Array2::zeros((1, fan_out)),
                    activation: act,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        ensure!(
            !layers.is_empty(),
            ContractViolation,
            "network has no layers"
        );
        for (i, l) in layers.iter().enumerate() {
            ensure!(
                l.bias.dim() == (1, l.weight.ncols()),
                ContractViolation,
                "layer {i}: bias shape {:?} does not match weight {:?}",
                l.bias.dim(),
                l.weight.dim()
            );
        }
        for (i, pair) in layers.windows(2).enumerate() {
            ensure!(
                pair[0].weight.ncols() == pair[1].weight.nrows(),
                ContractViolation,
                "layers {i} and {} have incompatible widths",
                i + 1
            );
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        ensure!(
            x.ncols() == self.input_dim(),
            ContractViolation,
            "input width {} does not match network input {}",
            x.ncols(),
            self.input_dim()
        );
        Ok(())
    }

    /// Forward pass over a batch (one row per example), recording what
    /// [`backward`](Self::backward) needs.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for layer in &self.layers {
            let mut z = current.dot(&layer.weight);
            z += &layer.bias;
            layer.activation.apply(&mut z);
            inputs.push(current);
            current = z.clone();
            outputs.push(z);
        }
        Ok(ForwardCache {
            inputs,
            outputs,
            active: None,
        })
    }

    /// Forward pass for 0/1 inputs. The first layer sums the weight rows of
    /// the set bits instead of multiplying, which is much cheaper for sparse
    /// states; results match [`forward`](Self::forward) up to rounding.
    pub fn forward_binary(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let active = binary_rows(&x)?;
        let first = &self.layers[0];
        let mut z = Array2::zeros((x.nrows(), first.weight.ncols()));
        for (mut row, bits) in z.rows_mut().into_iter().zip(&active) {
            row.assign(&first.bias.row(0));
            for &i in bits {
                row += &first.weight.row(i);
            }
        }
        first.activation.apply(&mut z);
        let mut inputs = vec![x.to_owned()];
        let mut outputs = vec![z];
        for layer in &self.layers[1..] {
            let current = outputs.last().unwrap().clone();
            let mut z = current.dot(&layer.weight);
            z += &layer.bias;
            layer.activation.apply(&mut z);
            inputs.push(current);
            outputs.push(z);
        }
        Ok(ForwardCache {
            inputs,
            outputs,
            active: Some(active),
        })
    }

    /// Forward pass without recording intermediates.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut current: Option<Array2<f64>> = None;
        for layer in &self.layers {
            let mut z = match &current {
                None => x.dot(&layer.weight),
                Some(c) => c.dot(&layer.weight),
            };
            z += &layer.bias;
            layer.activation.apply(&mut z);
            current = Some(z);
        }
        Ok(current.unwrap())
    }

    /// Back-propagates `d loss / d output`; returns parameter gradients and
    /// `d loss / d input`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &Array2<f64>,
    ) -> (Gradients, Array2<f64>) {
        self.backward_impl(cache, grad_output.clone(), true)
    }

    /// Like [`backward`](Self::backward) but `grad` is taken w.r.t. the last
    /// layer's pre-activation. Pairs a sigmoid/softmax output with its
    /// log-loss without going through the saturating activation Jacobian.
    pub fn backward_from_logits(
        &self,
        cache: &ForwardCache,
        grad: &Array2<f64>,
    ) -> (Gradients, Array2<f64>) {
        self.backward_impl(cache, grad.clone(), false)
    }

    /// Parameter gradients only; skips the input gradient and uses the
    /// sparse first-layer product when the cache came from
    /// [`forward_binary`](Self::forward_binary).
    pub fn param_gradients(&self, cache: &ForwardCache, grad_output: &Array2<f64>) -> Gradients {
        self.backward_full(cache, grad_output.clone(), true, false)
            .0
    }

    /// [`param_gradients`](Self::param_gradients) with `grad` taken w.r.t.
    /// the last pre-activation, as in
    /// [`backward_from_logits`](Self::backward_from_logits).
    pub fn param_gradients_from_logits(
        &self,
        cache: &ForwardCache,
        grad: &Array2<f64>,
    ) -> Gradients {
        self.backward_full(cache, grad.clone(), false, false).0
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        grad: Array2<f64>,
        through_last: bool,
    ) -> (Gradients, Array2<f64>) {
        self.backward_full(cache, grad, through_last, true)
    }

    fn backward_full(
        &self,
        cache: &ForwardCache,
        mut grad: Array2<f64>,
        through_last: bool,
        input_grad: bool,
    ) -> (Gradients, Array2<f64>) {
        let mut grads = vec![Array2::zeros((0, 0)); 2 * self.layers.len()];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i != last || through_last {
                layer.activation.backward(&cache.outputs[i], &mut grad);
            }
            grads[2 * i] = match (&cache.active, i) {
                (Some(active), 0) => {
                    let mut gw = Array2::zeros(layer.weight.dim());
                    for (g, bits) in grad.rows().into_iter().zip(active) {
                        for &b in bits {
                            let mut row = gw.row_mut(b);
                            row += &g;
                        }
                    }
                    gw
                }
                _ => cache.inputs[i].t().dot(&grad),
            };
            grads[2 * i + 1] = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
            if i > 0 || input_grad {
                grad = grad.dot(&layer.weight.t());
            }
        }
        if !input_grad {
            grad = Array2::zeros((0, 0));
        }
        (Gradients(grads), grad)
    }

    /// Like [`predict`](Self::predict) for 0/1 inputs, via the sparse first
    /// layer.
    pub fn predict_binary(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let first = &self.layers[0];
        let mut z = Array2::zeros((x.nrows(), first.weight.ncols()));
        for (mut row, xr) in z.rows_mut().into_iter().zip(x.rows()) {
            row.assign(&first.bias.row(0));
            for (i, &v) in xr.iter().enumerate() {
                if v == 1.0 {
                    row += &first.weight.row(i);
                } else {
                    ensure!(
                        v == 0.0,
                        ContractViolation,
                        "binary forward got input value {v}"
                    );
                }
            }
        }
        first.activation.apply(&mut z);
        for layer in &self.layers[1..] {
            let mut next = z.dot(&layer.weight);
            next += &layer.bias;
            layer.activation.apply(&mut next);
            z = next;
        }
        Ok(z)
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}.w{i}"), format!("{prefix}.b{i}")])
            .collect()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients(
            self.params()
                .iter()
                .map(|p| Array2::zeros(p.dim()))
                .collect(),
        )
    }

    /// Sum of squared weights (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// Gradient of `0.5 · coeff · ‖W‖²` added onto `grads`.
    pub fn add_l2_gradient(&self, coeff: f64, grads: &mut Gradients) {
        for (i, layer) in self.layers.iter().enumerate() {
            grads.0[2 * i].scaled_add(coeff, &layer.weight);
        }
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }
}

fn binary_rows(x: &ArrayView2<f64>) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::with_capacity(x.nrows());
    for row in x.rows() {
        let mut bits = Vec::new();
        for (i, &v) in row.iter().enumerate() {
            if v == 1.0 {
                bits.push(i);
            } else {
                ensure!(
                    v == 0.0,
                    ContractViolation,
                    "binary forward got input value {v}"
                );
            }
        }
        out.push(bits);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let layer = Dense {
            weight: Array2::zeros((3, 2)),
            bias: Array2::zeros((1, 2)),
            activation: Activation::Identity,
        };
        let net = DenseNet::from_layers(vec![layer]).unwrap();
        let y = net.predict(array![[1.0, -2.0, 3.0]].view()).unwrap();
        assert_eq!(y, Array2::<f64>::zeros((1, 2)));
    }

    #[test]
    fn single_relu_unit() {
        let net = DenseNet::from_layers(vec![Dense {
            weight: array![[1.5]],
            bias: array![[0.0]],
            activation: Activation::Relu,
        }])
        .unwrap();
        assert_eq!(net.predict(array![[2.0]].view()).unwrap()[[0, 0]], 3.0);
        assert_eq!(net.predict(array![[-2.0]].view()).unwrap()[[0, 0]], 0.0);
    }

    #[test]
    fn shape_mismatch_is_contract_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = DenseNet::new(&[4, 3], &[Activation::Identity], &mut rng);
        let err = net.predict(Array2::zeros((1, 5)).view()).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
        let bad = DenseNet::from_layers(vec![
            Dense {
                weight: Array2::zeros((2, 3)),
                bias: Array2::zeros((1, 3)),
                activation: Activation::Relu,
            },
            Dense {
                weight: Array2::zeros((4, 1)),
                bias: Array2::zeros((1, 1)),
                activation: Activation::Identity,
            },
        ]);
        assert!(bad.is_err());
    }

    #[test]
    fn forward_matches_predict_and_softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(
            &[5, 7, 4],
            &[Activation::Relu, Activation::Softmax],
            &mut rng,
        );
        let x = Array2::from_shape_fn((6, 5), |(i, j)| (i as f64 - j as f64) * 0.3);
        let cache = net.forward(x.view()).unwrap();
        let y = net.predict(x.view()).unwrap();
        assert_eq!(cache.output(), &y);
        for row in y.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_path_matches_dense_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = DenseNet::new(
            &[12, 9, 5],
            &[Activation::Relu, Activation::Identity],
            &mut rng,
        );
        let x = Array2::from_shape_fn((7, 12), |(i, j)| ((i * 5 + j * 3) % 4 == 0) as u8 as f64);
        let dense = net.forward(x.view()).unwrap();
        let sparse = net.forward_binary(x.view()).unwrap();
        let close =
            |a: &Array2<f64>, b: &Array2<f64>| a.iter().zip(b).all(|(p, q)| (p - q).abs() < 1e-12);
        assert!(close(dense.output(), sparse.output()));
        assert!(close(
            &net.predict_binary(x.view()).unwrap(),
            dense.output()
        ));
        let g = Array2::from_shape_fn((7, 5), |(i, j)| (i as f64 - j as f64) * 0.1);
        let (full, _) = net.backward(&dense, &g);
        let fast = net.param_gradients(&sparse, &g);
        for (a, b) in full.0.iter().zip(&fast.0) {
            assert!(close(a, b));
        }
        let half = x.mapv(|v| v * 0.5);
        assert!(matches!(
            net.forward_binary(half.view()),
            Err(Error::ContractViolation(_))
        ));
    }
}
