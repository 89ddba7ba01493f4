use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{argmax, check_distribution, log_softmax_rows, softmax_rows};
use crate::error::{Error, Result};

/// One affine layer. `weights` is `out x in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Dense feed-forward classifier: ReLU hidden layers, raw logits out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Gradients mirroring the layout of an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Descend,
    Ascend,
}

/// Layer inputs recorded by [`Mlp::forward_cached`], consumed by [`Mlp::backward`].
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::Shape(format!(
            "need at least input and output dims, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::Shape(format!(
            "layer dims must be positive, got {layer_dims:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. Deterministic in `seed`.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                        dist.sample(&mut rng)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| Dense {
                weights: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("model needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.in_dim() == 0 || layer.out_dim() == 0 {
                return Err(Error::Shape(format!("layer {k} has a zero dimension")));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Shape(format!(
                    "layer {k}: bias length {} != output dim {}",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if k > 0 && layers[k - 1].out_dim() != layer.in_dim() {
                return Err(Error::Shape(format!(
                    "layer {k} expects {} inputs but layer {} emits {}",
                    layer.in_dim(),
                    k - 1,
                    layers[k - 1].out_dim()
                )));
            }
        }
        let model = Mlp { layers };
        if !model.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "features have {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights.t());
            z += &layer.bias;
            inputs.push(current);
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            current = z;
        }
        Ok(ForwardCache {
            inputs,
            logits: current,
        })
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.logits)
    }

    /// Softmax posteriors, one row per sample.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(self.logits(x)?.view()))
    }

    /// Backpropagates `d loss / d logits` through the cached pass.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Array2<f64>) -> Gradients {
        let n_layers = self.layers.len();
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        let mut delta = dlogits.clone();
        for k in (0..n_layers).rev() {
            let input = &cache.inputs[k];
            weights.push(delta.t().dot(input));
            biases.push(delta.sum_axis(Axis(0)));
            if k > 0 {
                let mut upstream = delta.dot(&self.layers[k].weights);
                Zip::from(&mut upstream).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = upstream;
            }
        }
        weights.reverse();
        biases.reverse();
        Gradients { weights, biases }
    }

    /// Mean softmax cross-entropy and its exact gradient.
    ///
    /// With `soft_targets`, each row is a target distribution and the hard
    /// labels only need to be in range.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<f64>,
        labels: &[usize],
        soft_targets: Option<ArrayView2<f64>>,
    ) -> Result<(f64, Gradients)> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Empty("loss over an empty batch".into()));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} label(s) for {} feature row(s)",
                labels.len(),
                n
            )));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("NaN in features".into()));
        }
        let classes = self.num_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Label(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let targets = match soft_targets {
            Some(t) => {
                if t.dim() != (n, classes) {
                    return Err(Error::Shape(format!(
                        "soft targets are {:?}, expected {:?}",
                        t.dim(),
                        (n, classes)
                    )));
                }
                for row in t.axis_iter(Axis(0)) {
                    check_distribution(&row.to_vec(), "soft target")?;
                }
                t.to_owned()
            }
            None => one_hot(labels, classes),
        };

        let cache = self.forward_cached(x)?;
        let log_p = log_softmax_rows(cache.logits.view());
        let loss = -(&targets * &log_p).sum() / n as f64;
        let mut dlogits = log_p.mapv(f64::exp);
        dlogits -= &targets;
        dlogits /= n as f64;
        Ok((loss, self.backward(&cache, &dlogits)))
    }

    /// `params -= lr * grad` (descend) or `params += lr * grad` (ascend).
    pub fn apply_step(
        &mut self,
        grads: &Gradients,
        learning_rate: f64,
        direction: Direction,
    ) -> Result<()> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {learning_rate}"
            )));
        }
        grads.check_congruent(self)?;
        let scale = match direction {
            Direction::Descend => -learning_rate,
            Direction::Ascend => learning_rate,
        };
        for (layer, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grads.weights.iter().zip(&grads.biases))
        {
            layer.weights.scaled_add(scale, gw);
            layer.bias.scaled_add(scale, gb);
        }
        if !self.is_finite() {
            return Err(Error::NonFinite(
                "parameters diverged after an update step".into(),
            ));
        }
        Ok(())
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(logits.axis_iter(Axis(0)).map(argmax).collect())
    }

    /// Fraction of rows whose argmax posterior equals the label.
    pub fn accuracy(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
        if x.nrows() == 0 {
            return Err(Error::Empty("accuracy over zero samples".into()));
        }
        if labels.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "{} label(s) for {} feature row(s)",
                labels.len(),
                x.nrows()
            )));
        }
        let hits = self
            .predict(x)?
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

pub(crate) fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (i, &y) in labels.iter().enumerate() {
        out[[i, y]] = 1.0;
    }
    out
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Gradients {
            weights: model
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
        }
    }

    pub fn check_congruent(&self, model: &Mlp) -> Result<()> {
        let ok = self.weights.len() == model.layers.len()
            && self.biases.len() == model.layers.len()
            && model.layers.iter().enumerate().all(|(k, l)| {
                self.weights[k].dim() == l.weights.dim() && self.biases[k].dim() == l.bias.dim()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(
                "gradient shapes do not match the model".into(),
            ))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Flattened view in layer order, weights before bias.
    pub fn to_flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

impl Mlp {
    /// Flattened parameters in the same order as [`Gradients::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    /// Mutable access to the parameter at flat position `index`.
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            if index < nw {
                return layer.weights.as_slice_mut().map(|s| &mut s[index]);
            }
            index -= nw;
            let nb = layer.bias.len();
            if index < nb {
                return Some(&mut layer.bias[index]);
            }
            index -= nb;
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn init_shapes_and_counts() {
        let m = Mlp::new(&[4, 8, 3], 7).unwrap();
        assert_eq!(m.num_parameters(), 4 * 8 + 8 + 8 * 3 + 3);
        assert_eq!(m.layer_dims(), vec![4, 8, 3]);
        assert!(m.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));

        let purchase = Mlp::new(&[600, 128, 100], 0).unwrap();
        assert_eq!(purchase.layers()[0].weights.dim(), (128, 600));
        assert_eq!(purchase.layers()[1].weights.dim(), (100, 128));
        let limit = (6.0f64 / 728.0).sqrt();
        assert!(purchase.layers()[0]
            .weights
            .iter()
            .all(|w| w.abs() <= limit));
    }

    #[test]
    fn init_is_deterministic() {
        let a = Mlp::new(&[5, 7, 2], 11).unwrap();
        let b = Mlp::new(&[5, 7, 2], 11).unwrap();
        let bits = |m: &Mlp| m.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&Mlp::new(&[5, 7, 2], 12).unwrap()));
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(matches!(Mlp::new(&[], 0), Err(Error::Shape(_))));
        assert!(matches!(Mlp::new(&[3], 0), Err(Error::Shape(_))));
        assert!(matches!(Mlp::new(&[3, 0, 2], 0), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = Mlp::zeros(&[6, 4, 10]).unwrap();
        let x = Array2::from_shape_fn((3, 6), |(i, j)| (i * 7 + j) as f64 - 4.0);
        let p = m.forward(x.view()).unwrap();
        assert!(p.iter().all(|&v| (v - 0.1).abs() < 1e-12));
    }

    #[test]
    fn crafted_logits_give_closed_form_posteriors() {
        let m = Mlp::from_layers(vec![Dense {
            weights: array![[3f64.ln()], [0.0]],
            bias: array![0.0, 0.0],
        }])
        .unwrap();
        let p = m.forward(array![[1.0]].view()).unwrap();
        assert!((p[[0, 0]] - 0.75).abs() < 1e-12);
        assert!((p[[0, 1]] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = Mlp::new(&[4, 3], 0).unwrap();
        assert!(matches!(
            m.forward(Array2::zeros((2, 5)).view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_model_loss_is_ln_classes() {
        let m = Mlp::zeros(&[2, 3]).unwrap();
        let x = array![[1.0, 2.0], [-1.0, 0.5]];
        let (loss, _) = m.loss_and_grad(x.view(), &[0, 2], None).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_bad_labels_and_nan() {
        let m = Mlp::zeros(&[2, 3]).unwrap();
        let x = array![[1.0, 2.0]];
        assert!(matches!(
            m.loss_and_grad(x.view(), &[3], None),
            Err(Error::Label(_))
        ));
        let nan = array![[f64::NAN, 2.0]];
        assert!(matches!(
            m.loss_and_grad(nan.view(), &[0], None),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn self_targets_give_entropy() {
        let m = Mlp::new(&[3, 5, 4], 3).unwrap();
        let x = array![[0.2, -1.0, 0.7], [1.5, 0.3, -0.4]];
        let p = m.forward(x.view()).unwrap();
        let (loss, _) = m.loss_and_grad(x.view(), &[0, 0], Some(p.view())).unwrap();
        let entropy: f64 = -p.iter().map(|v| v * v.ln()).sum::<f64>() / 2.0;
        assert!((loss - entropy).abs() < 1e-12);
    }

    #[test]
    fn step_arithmetic() {
        let mut m = Mlp::from_layers(vec![Dense {
            weights: array![[1.0]],
            bias: array![0.0],
        }])
        .unwrap();
        let g = Gradients {
            weights: vec![array![[0.5]]],
            biases: vec![array![0.0]],
        };
        m.apply_step(&g, 0.1, Direction::Ascend).unwrap();
        assert!((m.layers()[0].weights[[0, 0]] - 1.05).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_step_is_bit_exact_identity() {
        let mut m = Mlp::new(&[4, 6, 3], 5).unwrap();
        let before = m.clone();
        m.apply_step(&Gradients::zeros_like(&m), 1e-12, Direction::Descend)
            .unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn step_rejects_mismatch_and_bad_rate() {
        let mut m = Mlp::new(&[4, 6, 3], 5).unwrap();
        let other = Gradients::zeros_like(&Mlp::new(&[4, 3], 0).unwrap());
        assert!(matches!(
            m.apply_step(&other, 0.1, Direction::Descend),
            Err(Error::Shape(_))
        ));
        let g = Gradients::zeros_like(&m);
        assert!(m.apply_step(&g, 0.0, Direction::Descend).is_err());
    }

    #[test]
    fn accuracy_ties_and_empty() {
        let m = Mlp::zeros(&[2, 10]).unwrap();
        let x = Array2::zeros((20, 2));
        let labels: Vec<usize> = (0..20).map(|i| i % 10).collect();
        assert!((m.accuracy(x.view(), &labels).unwrap() - 0.1).abs() < 1e-12);
        assert!(matches!(
            m.accuracy(Array2::zeros((0, 2)).view(), &[]),
            Err(Error::Empty(_))
        ));
    }
}
