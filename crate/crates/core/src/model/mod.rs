//! A small differentiable predictor from feature vectors to per-verb
//! outputs: either a single affine layer or one tanh hidden layer followed
//! by an affine output layer.

mod checkpoint;
mod loss;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use loss::{loss_euclidean, loss_logistic_onehot, EPS_NORM};
pub use train::{train, LossKind, TrainConfig, TrainOutcome};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Hidden { units: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Logistic sigmoid, outputs in (0, 1).
    BoundedUnit,
    /// Raw affine outputs; clamped to [0, 1] only by [`predict_matrix`].
    LinearClamped,
}

impl OutputActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::BoundedUnit => sigmoid(z),
            OutputActivation::LinearClamped => z,
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weights are stored `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn affine(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub output_dim: usize,
    pub output_activation: OutputActivation,
    pub layers: Vec<Layer>,
}

/// Gradient with the same layout as [`ModelParameters::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub layers: Vec<Layer>,
}

impl ModelGradient {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
        .collect()
}

impl ModelParameters {
    pub fn zeros(
        architecture: Architecture,
        input_dim: usize,
        output_dim: usize,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        let layers = match architecture {
            Architecture::Linear => vec![Layer::zeros(input_dim, output_dim)],
            Architecture::Hidden { units: 0 } => {
                return Err(Error::InvalidConfig("hidden layer needs at least one unit".into()))
            }
            Architecture::Hidden { units } => vec![Layer::zeros(input_dim, units), Layer::zeros(units, output_dim)],
        };
        Ok(Self {
            architecture,
            input_dim,
            output_dim,
            output_activation,
            layers,
        })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(
        architecture: Architecture,
        input_dim: usize,
        output_dim: usize,
        output_activation: OutputActivation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut params = Self::zeros(architecture, input_dim, output_dim, output_activation)?;
        for layer in &mut params.layers {
            let bound = 1.0 / (layer.weights.ncols() as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            layer.weights.mapv_inplace(|_| dist.sample(rng));
        }
        Ok(params)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// Parameters in layer order, each layer as row-major weights then bias.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                found: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        Ok(self.forward_batch(batch)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass over rows of `x`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut z = self.pre_activations(x).output;
        z.mapv_inplace(|v| self.output_activation.apply(v));
        Ok(z)
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.ncols(),
            });
        }
        Ok(())
    }

    fn pre_activations(&self, x: ArrayView2<f64>) -> Activations {
        match self.layers.as_slice() {
            [out] => Activations {
                hidden: None,
                output: out.affine(x),
            },
            [first, out] => {
                let h = first.affine(x).mapv(f64::tanh);
                let output = out.affine(h.view());
                Activations {
                    hidden: Some(h),
                    output,
                }
            }
            _ => unreachable!("architectures have one or two layers"),
        }
    }

    /// Mean data loss over the batch plus `weight_decay / 2 * |params|^2`.
    pub fn objective(&self, x: ArrayView2<f64>, y: ArrayView2<f64>, loss: LossKind, weight_decay: f64) -> Result<f64> {
        let data = self.data_loss(x, y, loss)?;
        let norm2: f64 = self.flatten().iter().map(|v| v * v).sum();
        Ok(data + 0.5 * weight_decay * norm2)
    }

    /// Mean data loss over the batch. The logistic loss is evaluated from
    /// the logits so saturated sigmoids stay finite.
    pub fn data_loss(&self, x: ArrayView2<f64>, y: ArrayView2<f64>, loss: LossKind) -> Result<f64> {
        self.check_batch(x, y, loss)?;
        let z = self.pre_activations(x).output;
        Ok(match loss {
            LossKind::LogisticOneHot => loss::logistic_from_logits(z.view(), y),
            LossKind::Euclidean => {
                let pred = z.mapv(|v| self.output_activation.apply(v));
                loss::euclidean_unchecked(pred.view(), y)
            }
        })
    }

    fn check_batch(&self, x: ArrayView2<f64>, y: ArrayView2<f64>, loss: LossKind) -> Result<()> {
        self.check_input(x)?;
        if x.nrows() == 0 {
            return Err(Error::Empty("batch"));
        }
        if y.nrows() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: y.nrows(),
            });
        }
        if y.ncols() != self.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim,
                found: y.ncols(),
            });
        }
        if loss == LossKind::LogisticOneHot && self.output_activation != OutputActivation::BoundedUnit {
            return Err(Error::InvalidConfig(
                "logistic loss requires the bounded-unit output activation".into(),
            ));
        }
        Ok(())
    }

    /// Analytic gradient of [`ModelParameters::objective`] with respect to
    /// every parameter. Returns the mean data loss alongside.
    ///
    /// Under the Euclidean loss a sample whose residual norm is below
    /// [`EPS_NORM`] contributes zero gradient.
    pub fn gradient(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        loss: LossKind,
        weight_decay: f64,
    ) -> Result<(f64, ModelGradient)> {
        self.check_batch(x, y, loss)?;
        let batch = x.nrows() as f64;
        let acts = self.pre_activations(x);
        let z = acts.output;

        let (data_loss, dz) = match loss {
            LossKind::LogisticOneHot => {
                // d/dz of mean-over-verbs BCE through the sigmoid.
                let c = self.output_dim as f64;
                let pred = z.mapv(sigmoid);
                let dz = (&pred - &y) / (c * batch);
                (loss::logistic_from_logits(z.view(), y), dz)
            }
            LossKind::Euclidean => {
                let pred = z.mapv(|v| self.output_activation.apply(v));
                let residual = &pred - &y;
                let mut dpred = residual.clone();
                for mut row in dpred.rows_mut() {
                    let norm = row.dot(&row).sqrt();
                    if norm < EPS_NORM {
                        row.fill(0.0);
                    } else {
                        row /= norm * batch;
                    }
                }
                if self.output_activation == OutputActivation::BoundedUnit {
                    Zip::from(&mut dpred).and(&pred).for_each(|d, &p| *d *= p * (1.0 - p));
                }
                (loss::euclidean_unchecked(pred.view(), y), dpred)
            }
        };

        let mut grads = Vec::with_capacity(self.layers.len());
        match (&acts.hidden, self.layers.as_slice()) {
            (None, [_]) => grads.push(layer_grad(dz.view(), x)),
            (Some(h), [_, out]) => {
                let out_grad = layer_grad(dz.view(), h.view());
                let mut dh = dz.dot(&out.weights);
                Zip::from(&mut dh).and(h).for_each(|d, &hv| *d *= 1.0 - hv * hv);
                grads.push(layer_grad(dh.view(), x));
                grads.push(out_grad);
            }
            _ => unreachable!("architectures have one or two layers"),
        }
        if weight_decay != 0.0 {
            for (g, p) in grads.iter_mut().zip(&self.layers) {
                g.weights.scaled_add(weight_decay, &p.weights);
                g.bias.scaled_add(weight_decay, &p.bias);
            }
        }
        Ok((data_loss, ModelGradient { layers: grads }))
    }
}

struct Activations {
    hidden: Option<Array2<f64>>,
    output: Array2<f64>,
}

fn layer_grad(delta: ArrayView2<f64>, input: ArrayView2<f64>) -> Layer {
    Layer {
        weights: delta.t().dot(&input),
        bias: delta.sum_axis(Axis(0)),
    }
}

/// Stacked forward outputs clamped elementwise to [0, 1].
pub fn predict_matrix(params: &ModelParameters, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = params.forward_batch(x)?;
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

/// Convenience for a single row.
pub fn predict_row(params: &ModelParameters, x: ArrayView1<f64>) -> Result<Vec<f64>> {
    let x = x.to_vec();
    Ok(params.forward(&x)?.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Plain-loop forward pass used as an independent reference.
    fn reference_forward(p: &ModelParameters, x: &[f64]) -> Vec<f64> {
        let affine = |layer: &Layer, input: &[f64]| -> Vec<f64> {
            (0..layer.weights.nrows())
                .map(|o| {
                    let mut s = layer.bias[o];
                    for (i, v) in input.iter().enumerate() {
                        s += layer.weights[(o, i)] * v;
                    }
                    s
                })
                .collect()
        };
        let mut h = x.to_vec();
        for (n, layer) in p.layers.iter().enumerate() {
            h = affine(layer, &h);
            if n + 1 < p.layers.len() {
                h = h.into_iter().map(f64::tanh).collect();
            }
        }
        match p.output_activation {
            OutputActivation::BoundedUnit => h.into_iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect(),
            OutputActivation::LinearClamped => h,
        }
    }

    #[test]
    fn zero_parameters() {
        let p = ModelParameters::zeros(Architecture::Linear, 3, 4, OutputActivation::LinearClamped).unwrap();
        assert_eq!(p.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0; 4]);
        let p = ModelParameters::zeros(Architecture::Hidden { units: 2 }, 3, 4, OutputActivation::BoundedUnit).unwrap();
        assert_eq!(p.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.5; 4]);
    }

    #[test]
    fn forward_matches_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for arch in [Architecture::Linear, Architecture::Hidden { units: 4 }] {
            for act in [OutputActivation::BoundedUnit, OutputActivation::LinearClamped] {
                let mut p = ModelParameters::init(arch, 6, 5, act, &mut rng).unwrap();
                for layer in &mut p.layers {
                    layer.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
                }
                let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
                let got = p.forward(&x).unwrap();
                let want = reference_forward(&p, &x);
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = ModelParameters::zeros(Architecture::Linear, 3, 2, OutputActivation::LinearClamped).unwrap();
        assert!(matches!(
            p.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParameters::init(
            Architecture::Hidden { units: 8 },
            16,
            4,
            OutputActivation::BoundedUnit,
            &mut rng,
        )
        .unwrap();
        assert!(p.layers[0].weights.iter().all(|w| w.abs() <= 0.25));
        assert!(p.layers[1].weights.iter().all(|w| w.abs() <= 1.0 / 8f64.sqrt()));
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ModelParameters::init(
            Architecture::Hidden { units: 3 },
            5,
            4,
            OutputActivation::LinearClamped,
            &mut rng,
        )
        .unwrap();
        let mut q = ModelParameters::zeros(p.architecture, 5, 4, p.output_activation).unwrap();
        q.set_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.n_params(), 5 * 3 + 3 + 3 * 4 + 4);
        assert!(q.set_flat(&[0.0]).is_err());
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ModelParameters::init(
            Architecture::Hidden { units: 3 },
            4,
            3,
            OutputActivation::LinearClamped,
            &mut rng,
        )
        .unwrap();
        let x = Array2::from_shape_fn((2, 4), |(i, j)| (i + j) as f64 * 0.1);
        let y = p.forward_batch(x.view()).unwrap();
        let (loss, g) = p.gradient(x.view(), y.view(), LossKind::Euclidean, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weight_decay_gradient_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = ModelParameters::init(Architecture::Linear, 3, 2, OutputActivation::LinearClamped, &mut rng).unwrap();
        let x = Array2::from_shape_fn((1, 3), |(_, j)| j as f64);
        let y = p.forward_batch(x.view()).unwrap();
        let (_, g) = p.gradient(x.view(), y.view(), LossKind::Euclidean, 0.3).unwrap();
        for (gv, pv) in g.flatten().iter().zip(p.flatten()) {
            assert!((gv - 0.3 * pv).abs() < 1e-15);
        }
    }

    #[test]
    fn logistic_needs_bounded_output() {
        let p = ModelParameters::zeros(Architecture::Linear, 2, 2, OutputActivation::LinearClamped).unwrap();
        let x = Array2::zeros((1, 2));
        let y = ndarray::array![[1.0, 0.0]];
        assert!(p.gradient(x.view(), y.view(), LossKind::LogisticOneHot, 0.0).is_err());
    }

    #[test]
    fn clamp_behaviour() {
        let mut p = ModelParameters::zeros(Architecture::Linear, 1, 3, OutputActivation::LinearClamped).unwrap();
        p.layers[0].bias = ndarray::array![-0.3, 1.7, 0.4];
        let x = Array2::zeros((2, 1));
        let out = predict_matrix(&p, x.view()).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![0.0, 1.0, 0.4]);

        let mut s = ModelParameters::zeros(Architecture::Linear, 1, 3, OutputActivation::BoundedUnit).unwrap();
        s.layers[0].bias = ndarray::array![-3.0, 2.0, 0.0];
        let raw = s.forward_batch(x.view()).unwrap();
        assert_eq!(predict_matrix(&s, x.view()).unwrap(), raw);
    }
}
