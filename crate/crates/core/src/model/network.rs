//! Dense feedforward network with sigmoid outputs, masked MSE loss and Adam.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub output_dim: usize,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn check(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_layers.contains(&0) {
            return Err(ModelError::InvalidSpec("layer widths must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidSpec(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden_layers);
        w.push(self.output_dim);
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in x out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: NetworkSpec,
    pub layers: Vec<Dense>,
}

pub(crate) type Gradients = Vec<(Array2<f64>, Array1<f64>)>;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    /// Glorot-uniform weights and zero biases drawn from `spec.seed`.
    pub fn new(spec: NetworkSpec) -> Result<Self, ModelError> {
        spec.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let widths = spec.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-limit..limit)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// All-zero parameters (every output is 0.5).
    pub fn zeros(spec: NetworkSpec) -> Result<Self, ModelError> {
        spec.check()?;
        let widths = spec.widths();
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self { spec, layers })
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), ModelError> {
        if x.ncols() != self.spec.input_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    /// Deterministic forward pass (dropout off); outputs in `[0, 1]`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights) + &layer.bias;
            if l == last {
                z.mapv_inplace(sigmoid);
            } else {
                let act = self.spec.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            a = z;
        }
        Ok(a)
    }

    /// Masked mean squared error against `y` (`NaN` cells are ignored).
    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64, ModelError> {
        let p = self.forward(x)?;
        Ok(masked_mse(&p, &y))
    }

    /// Loss and parameter gradients on a batch. Dropout is active when `rng`
    /// is given and the rate is positive.
    pub(crate) fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (f64, Gradients) {
        let last = self.layers.len() - 1;
        let act = self.spec.activation;
        let rate = self.spec.dropout_rate;
        let keep = 1.0 - rate;
        // inputs to each layer, pre-activations and dropout masks of hidden layers
        let mut inputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(last);
        let mut masks: Vec<Option<Array2<f64>>> = Vec::with_capacity(last);
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weights) + &layer.bias;
            inputs.push(a);
            if l == last {
                a = z.mapv(sigmoid);
            } else {
                let mut h = z.mapv(|v| act.apply(v));
                let mask = match rng.as_deref_mut() {
                    Some(r) if rate > 0.0 => {
                        let m = Array2::from_shape_simple_fn(h.raw_dim(), || {
                            if r.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        h *= &m;
                        Some(m)
                    }
                    _ => None,
                };
                pre.push(z);
                masks.push(mask);
                a = h;
            }
        }
        let p = a;
        let count = y.iter().filter(|v| v.is_finite()).count();
        let mut loss = 0.0;
        let mut delta = Array2::<f64>::zeros(p.raw_dim());
        if count > 0 {
            let scale = 2.0 / count as f64;
            Zip::from(&mut delta).and(&p).and(&y).for_each(|d, &pv, &yv| {
                if yv.is_finite() {
                    let r = pv - yv;
                    loss += r * r;
                    *d = scale * r * pv * (1.0 - pv);
                }
            });
            loss /= count as f64;
        }
        let mut grads: Gradients = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let gw = inputs[l].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            grads.push((gw, gb));
            if l > 0 {
                let mut da = delta.dot(&self.layers[l].weights.t());
                if let Some(m) = &masks[l - 1] {
                    da *= m;
                }
                Zip::from(&mut da).and(&pre[l - 1]).for_each(|d, &z| *d *= act.derivative(z));
                delta = da;
            }
        }
        grads.reverse();
        (loss, grads)
    }

    /// Loss and `(weights, bias)` gradients per layer with dropout disabled.
    pub fn loss_gradients(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
    ) -> Result<(f64, Vec<(Array2<f64>, Array1<f64>)>), ModelError> {
        self.check_input(&x)?;
        if y.dim() != (x.nrows(), self.spec.output_dim) {
            return Err(ModelError::ShapeMismatch(format!("targets {:?}", y.dim())));
        }
        Ok(self.loss_and_gradients(x, y, None))
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}

pub(crate) fn masked_mse(p: &Array2<f64>, y: &ArrayView2<f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    Zip::from(p).and(y).for_each(|&pv, &yv| {
        if yv.is_finite() {
            sum += (pv - yv) * (pv - yv);
            count += 1;
        }
    });
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Adam optimizer state for an [`Mlp`].
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Gradients = net
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
            .collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = self.lr;
        for (((layer, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(&mut layer.weights)
                .and(&g.0)
                .and(&mut m.0)
                .and(&mut v.0)
                .for_each(|w, &gr, mi, vi| {
                    *mi = b1 * *mi + (1.0 - b1) * gr;
                    *vi = b2 * *vi + (1.0 - b2) * gr * gr;
                    *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                });
            Zip::from(&mut layer.bias)
                .and(&g.1)
                .and(&mut m.1)
                .and(&mut v.1)
                .for_each(|w, &gr, mi, vi| {
                    *mi = b1 * *mi + (1.0 - b1) * gr;
                    *vi = b2 * *vi + (1.0 - b2) * gr * gr;
                    *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                });
        }
    }
}
