//! A small feedforward network with a two-logit output head.
//!
//! The network never applies the output sigmoid itself. It returns the raw
//! logits `(z0, z1)`, and the class-1 probability is `logistic(z1 - z0)`,
//! the two-way softmax. All of the uncertainty machinery works on the logit
//! difference `Δ = z1 - z0`.

mod io;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::seed;

pub use train::{gradient, loss, train, train_with_report, Gradients, Optimizer, TrainConfig, TrainReport};

/// Logistic function with `logistic(-x) == 1 - logistic(x)` bit-exactly, so
/// probabilities over a support symmetric about zero average to exactly 0.5.
#[inline]
pub fn logistic(x: f64) -> f64 {
    let upper = 1.0 / (1.0 + (-x.abs()).exp());
    // `upper` lies in [0.5, 1], so the subtraction is exact.
    if x >= 0.0 {
        upper
    } else {
        1.0 - upper
    }
}

/// `ln(e^a + e^b)` without overflow.
#[inline]
pub(crate) fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Relu => a.max(0.0),
            Activation::Tanh => a.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `a` and output `h`.
    #[inline]
    fn derivative(self, a: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NetworkSpec {
    /// ReLU network with hidden layers `[32, 16]` and no dropout.
    pub fn new(input_dim: usize) -> Self {
        NetworkSpec {
            input_dim,
            hidden_layers: vec![32, 16],
            activation: Activation::Relu,
            dropout_rate: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("network input_dim must be positive".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// `(inputs, outputs)` of every layer, output layer last.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_layers);
        dims.push(2);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One affine layer; `weights` is `outputs × inputs`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Pre-sigmoid output of the two-node head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LogitPair {
    pub z0: f64,
    pub z1: f64,
}

impl LogitPair {
    pub fn delta(&self) -> f64 {
        self.z1 - self.z0
    }

    pub fn p1(&self) -> f64 {
        logistic(self.delta())
    }

    /// `(p0, p1)`.
    pub fn proba(&self) -> (f64, f64) {
        let p1 = self.p1();
        (1.0 - p1, p1)
    }
}

/// Per-hidden-unit multipliers: `0` for dropped units and `1/(1-rate)` for
/// survivors.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    layers: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

impl Network {
    /// Randomly initialized network. Weights and biases are drawn uniformly
    /// from `±1/sqrt(fan_in)` using `spec.seed`.
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::rng(seed::derive_named(spec.seed, "init"));
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| {
                let bound = 1.0 / (i as f64).sqrt();
                let mut l = Layer::zeros(i, o);
                for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                    *w = rng.random_range(-bound..bound);
                }
                l
            })
            .collect();
        Ok(Network { spec, layers })
    }

    /// Network with every weight and bias set to zero.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Layer::zeros(i, o))
            .collect();
        Ok(Network { spec, layers })
    }

    /// Network from explicit parameters, checked against `spec`.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::Dimension {
                expected: shapes.len(),
                got: layers.len(),
            });
        }
        for (&(i, o), l) in shapes.iter().zip(&layers) {
            if l.inputs != i || l.outputs != o {
                return Err(Error::Data(format!(
                    "layer shape {}x{} does not match spec {}x{}",
                    l.outputs, l.inputs, o, i
                )));
            }
            if l.weights.len() != i * o || l.bias.len() != o {
                return Err(Error::Dimension {
                    expected: i * o + o,
                    got: l.weights.len() + l.bias.len(),
                });
            }
            ensure_finite(&l.weights, "network weights")?;
            ensure_finite(&l.bias, "network biases")?;
        }
        Ok(Network { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::Dimension {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        ensure_finite(x, "network input")
    }

    /// Deterministic forward pass (dropout disabled).
    pub fn forward_logits(&self, x: &[f64]) -> Result<LogitPair> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x, None))
    }

    /// Forward pass with fresh dropout masks drawn from `rng`. With a zero
    /// dropout rate this is identical to [`Network::forward_logits`] and
    /// consumes no randomness.
    pub fn forward_logits_dropout<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<LogitPair> {
        self.check_input(x)?;
        if self.spec.dropout_rate == 0.0 {
            return Ok(self.forward_unchecked(x, None));
        }
        let mask = self.sample_mask(rng);
        Ok(self.forward_unchecked(x, Some(&mask)))
    }

    /// Forward pass with a given dropout mask.
    pub fn forward_logits_masked(&self, x: &[f64], mask: &DropoutMask) -> Result<LogitPair> {
        self.check_input(x)?;
        let expected: Vec<usize> = self.spec.hidden_layers.clone();
        let got: Vec<usize> = mask.layers.iter().map(Vec::len).collect();
        if expected != got {
            return Err(Error::Data("dropout mask does not match hidden layers".into()));
        }
        Ok(self.forward_unchecked(x, Some(mask)))
    }

    /// Draw a dropout mask: each hidden unit is zeroed with probability
    /// `dropout_rate`, survivors are scaled by `1/(1 - dropout_rate)`.
    pub fn sample_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> DropoutMask {
        let rate = self.spec.dropout_rate;
        let keep = 1.0 / (1.0 - rate);
        let layers = self
            .spec
            .hidden_layers
            .iter()
            .map(|&w| {
                (0..w)
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                    .collect()
            })
            .collect();
        DropoutMask { layers }
    }

    fn forward_unchecked(&self, x: &[f64], mask: Option<&DropoutMask>) -> LogitPair {
        let act = self.spec.activation;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            next.clear();
            next.resize(layer.outputs, 0.0);
            layer.affine(&cur, &mut next);
            if k < last {
                for v in next.iter_mut() {
                    *v = act.apply(*v);
                }
                if let Some(m) = mask {
                    for (v, s) in next.iter_mut().zip(&m.layers[k]) {
                        *v *= s;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        LogitPair {
            z0: cur[0],
            z1: cur[1],
        }
    }

    /// `(p0, p1)` with `p1 = logistic(z1 - z0)`.
    pub fn predict_proba(&self, x: &[f64]) -> Result<(f64, f64)> {
        Ok(self.forward_logits(x)?.proba())
    }

    /// Argmax class; a tie at `p1 = 0.5` goes to class 1.
    pub fn predict_class(&self, x: &[f64]) -> Result<u8> {
        Ok(class_of(self.predict_proba(x)?.1))
    }
}

/// Argmax of a binary distribution given `p1`; ties go to class 1.
#[inline]
pub fn class_of(p1: f64) -> u8 {
    u8::from(p1 >= 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear_spec(input_dim: usize) -> NetworkSpec {
        NetworkSpec {
            hidden_layers: vec![],
            ..NetworkSpec::new(input_dim)
        }
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let net = Network::zeros(NetworkSpec::new(3)).unwrap();
        let z = net.forward_logits(&[1.0, -2.0, 7.5]).unwrap();
        assert_eq!(z, LogitPair { z0: 0.0, z1: 0.0 });
        assert_eq!(net.predict_proba(&[0.0, 0.0, 0.0]).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn linear_layer_matches_hand_product() {
        // W = [[2, -1], [0.5, 3]], b = [0.25, -1]
        let layer = Layer {
            inputs: 2,
            outputs: 2,
            weights: vec![2.0, -1.0, 0.5, 3.0],
            bias: vec![0.25, -1.0],
        };
        let net = Network::from_layers(linear_spec(2), vec![layer]).unwrap();
        // x = (1, 0) picks out the first column plus bias.
        let z = net.forward_logits(&[1.0, 0.0]).unwrap();
        assert_eq!((z.z0, z.z1), (2.25, -0.5));
        let z = net.forward_logits(&[0.5, 2.0]).unwrap();
        assert_eq!((z.z0, z.z1), (2.0 * 0.5 - 2.0 + 0.25, 0.25 + 6.0 - 1.0));
    }

    #[test]
    fn dropout_rate_zero_is_a_no_op() {
        let net = Network::new(NetworkSpec { seed: 3, ..NetworkSpec::new(4) }).unwrap();
        let x = [0.3, -1.0, 2.0, 0.0];
        let mut rng = seed::rng(1);
        assert_eq!(
            net.forward_logits(&x).unwrap(),
            net.forward_logits_dropout(&x, &mut rng).unwrap()
        );
    }

    #[test]
    fn dropout_zeroes_and_rescales() {
        let spec = NetworkSpec {
            dropout_rate: 0.25,
            hidden_layers: vec![2000],
            ..NetworkSpec::new(1)
        };
        let net = Network::new(spec).unwrap();
        let mask = net.sample_mask(&mut seed::rng(9));
        let m = &mask.layers[0];
        assert!(m.iter().all(|&s| s == 0.0 || s == 1.0 / 0.75));
        let dropped = m.iter().filter(|&&s| s == 0.0).count() as f64 / m.len() as f64;
        assert!((dropped - 0.25).abs() < 0.04, "{dropped}");
    }

    #[test]
    fn predict_proba_values() {
        let layer = Layer {
            inputs: 1,
            outputs: 2,
            weights: vec![0.0, 0.0],
            bias: vec![0.0, 2.0],
        };
        let net = Network::from_layers(linear_spec(1), vec![layer]).unwrap();
        let (p0, p1) = net.predict_proba(&[0.0]).unwrap();
        assert_relative_eq!(p1, 0.880_797_077_977_882_3, epsilon = 1e-15);
        assert_relative_eq!(p0 + p1, 1.0, epsilon = 1e-12);

        let saturated = LogitPair { z0: 1000.0, z1: -1000.0 };
        let (p0, p1) = saturated.proba();
        assert_eq!(p1, 0.0);
        assert_eq!(p0, 1.0);
        assert_eq!(LogitPair { z0: -1000.0, z1: 1000.0 }.p1(), 1.0);
    }

    #[test]
    fn errors_on_bad_input() {
        let net = Network::zeros(NetworkSpec::new(2)).unwrap();
        assert!(matches!(
            net.forward_logits(&[1.0]),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
        assert!(matches!(
            net.forward_logits(&[1.0, f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn rejects_invalid_spec() {
        let mut s = NetworkSpec::new(2);
        s.dropout_rate = 1.0;
        assert!(Network::new(s).is_err());
        let mut s = NetworkSpec::new(2);
        s.hidden_layers = vec![4, 0];
        assert!(Network::new(s).is_err());
    }

    #[test]
    fn tie_goes_to_class_one() {
        assert_eq!(class_of(0.5), 1);
        assert_eq!(class_of(0.5 - 1e-16), 0);
    }

    #[test]
    fn sigmoid_derivative_identities() {
        // d/dΔ σ = σ(1-σ), d²/dΔ² σ = σ(1-σ)(1-2σ), by fourth-order central
        // differences.
        let f = logistic;
        for k in 0..20 {
            let d = -6.0 + 12.0 * k as f64 / 19.0;
            let h = 1e-3;
            let first = (-f(d + 2.0 * h) + 8.0 * f(d + h) - 8.0 * f(d - h) + f(d - 2.0 * h)) / (12.0 * h);
            let h = 2e-3;
            let second = (-f(d + 2.0 * h) + 16.0 * f(d + h) - 30.0 * f(d) + 16.0 * f(d - h)
                - f(d - 2.0 * h))
                / (12.0 * h * h);
            let s = f(d);
            let want1 = s * (1.0 - s);
            let want2 = s * (1.0 - s) * (1.0 - 2.0 * s);
            assert!(((first - want1) / want1).abs() <= 1e-6, "{d}: {first} vs {want1}");
            assert!(((second - want2) / want2).abs() <= 1e-6, "{d}: {second} vs {want2}");
        }
    }

    proptest::proptest! {
        #[test]
        fn logistic_is_antisymmetric(x in -50.0f64..50.0) {
            proptest::prop_assert_eq!(logistic(-x), 1.0 - logistic(x));
            proptest::prop_assert_eq!(0.5 * logistic(x) + 0.5 * logistic(-x), 0.5);
        }
    }
}
