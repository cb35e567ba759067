//! Small dense networks with hand-written backpropagation, Adam, and the
//! warmup/inverse-sqrt learning-rate schedule.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("expected {expected} input columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cache does not belong to this network")]
    CacheMismatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid network: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

/// Affine map `x W + b` with `W` of shape in × out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Uniform init in ±sqrt(6 / (in + out)).
    pub fn glorot(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Linear {
            weight: Array2::from_shape_simple_fn((input, output), || dist.sample(rng)),
            bias: Array1::zeros(output),
        }
    }
}

/// Linear layers with an activation and dropout after every hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub dropout: f64,
}

/// Intermediate values kept from a forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

/// Parameter gradients laid out like [`Mlp::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Linear>,
}

impl MlpGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("contiguous"),
                    l.bias.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }
}

impl Mlp {
    /// `dims` lists the input width, each hidden width, and the output width.
    pub fn new(
        dims: &[usize],
        activation: Activation,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::Invalid(format!("bad layer sizes {dims:?}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(NnError::Invalid(format!(
                "dropout {dropout} outside [0, 1)"
            )));
        }
        let layers = dims
            .windows(2)
            .map(|w| Linear::glorot(w[0], w[1], rng))
            .collect();
        Ok(Mlp {
            layers,
            activation,
            dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .last()
            .expect("at least one layer")
            .weight
            .ncols()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.layers.is_empty() {
            return Err(NnError::Invalid("no layers".into()));
        }
        for w in self.layers.windows(2) {
            if w[0].weight.ncols() != w[1].weight.nrows() {
                return Err(NnError::Invalid("layer sizes do not chain".into()));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.weight.ncols() {
                return Err(NnError::Invalid("bias size mismatch".into()));
            }
            if !l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(NnError::Invalid("non-finite parameter".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Invalid("dropout outside [0, 1)".into()));
        }
        Ok(())
    }

    /// Inference-mode output.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        self.forward(x, false, &mut rng).map(|r| r.0)
    }

    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<(Array2<f64>, Cache), NnError> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut cache = Cache {
            inputs: Vec::new(),
            pre_activations: Vec::new(),
            masks: Vec::new(),
        };
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight) + &layer.bias;
            cache.inputs.push(h);
            if k == last {
                cache.pre_activations.push(Array2::zeros((0, 0)));
                cache.masks.push(None);
                h = z;
            } else {
                let mut a = z.mapv(|v| self.activation.apply(v));
                let mask = if train && self.dropout > 0.0 {
                    let keep = 1.0 - self.dropout;
                    let m = Array2::from_shape_simple_fn(a.dim(), || {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    a *= &m;
                    Some(m)
                } else {
                    None
                };
                cache.pre_activations.push(z);
                cache.masks.push(mask);
                h = a;
            }
        }
        Ok((h, cache))
    }

    /// Gradients of the parameters and of the input, given `dL/d output`.
    pub fn backward(
        &self,
        cache: &Cache,
        grad_out: ArrayView2<f64>,
    ) -> Result<(MlpGrads, Array2<f64>), NnError> {
        if cache.inputs.len() != self.layers.len() {
            return Err(NnError::CacheMismatch);
        }
        let mut grads = vec![Linear::zeros(0, 0); self.layers.len()];
        let mut g = grad_out.to_owned();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if k != self.layers.len() - 1 {
                if let Some(mask) = &cache.masks[k] {
                    g *= mask;
                }
                let act = self.activation;
                Zip::from(&mut g)
                    .and(&cache.pre_activations[k])
                    .for_each(|g, &z| *g *= act.derivative(z));
            }
            let input = &cache.inputs[k];
            if input.ncols() != layer.weight.nrows() || g.ncols() != layer.weight.ncols() {
                return Err(NnError::CacheMismatch);
            }
            grads[k] = Linear {
                weight: input.t().dot(&g).as_standard_layout().into_owned(),
                bias: g.sum_axis(Axis(0)),
            };
            g = g.dot(&layer.weight.t());
        }
        Ok((MlpGrads { layers: grads }, g))
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("contiguous"),
                    l.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }
}

/// Adam with bias correction over a fixed list of parameter buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(params: &[&mut [f64]]) -> Self {
        Self::new(&params.iter().map(|p| p.len()).collect::<Vec<_>>())
    }

    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count changed");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.len(), g.len(), "gradient shape mismatch");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Linear warmup to `peak` then inverse square-root decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: u64) -> Self {
        LrSchedule {
            peak,
            warmup_steps: (warmup_fraction * total_steps as f64).round() as u64,
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return if step == 0 {
                0.0
            } else {
                self.peak / (step as f64).sqrt()
            };
        }
        let (s, w) = (step as f64, self.warmup_steps as f64);
        if step <= self.warmup_steps {
            self.peak * s / w
        } else {
            self.peak * (w / s).sqrt()
        }
    }
}

/// Mean label-smoothed softmax cross entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(
    logits: ArrayView2<f64>,
    labels: &[usize],
    smoothing: f64,
) -> Result<(f64, Array2<f64>), NnError> {
    let (n, k) = logits.dim();
    if labels.len() != n {
        return Err(NnError::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(NnError::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    let mut grad = Array2::zeros((n, k));
    let mut loss = 0.0;
    let off = smoothing / k as f64;
    for (b, row) in logits.rows().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for (c, &v) in row.iter().enumerate() {
            let q = off + if c == labels[b] { 1.0 - smoothing } else { 0.0 };
            let logp = v - lse;
            loss -= q * logp;
            grad[[b, c]] = (logp.exp() - q) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Mean binary cross entropy on raw logits and its gradient.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), targets.len(), "logit/target length mismatch");
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &y) in logits.iter().zip(targets) {
        loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        grad.push((sigmoid(x) - y) / n);
    }
    (loss / n, grad)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_forward(mlp: &Mlp, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for (k, l) in mlp.layers.iter().enumerate() {
            let mut out = Array2::zeros((h.nrows(), l.weight.ncols()));
            for b in 0..h.nrows() {
                for j in 0..l.weight.ncols() {
                    let mut acc = l.bias[j];
                    for i in 0..h.ncols() {
                        acc += h[[b, i]] * l.weight[[i, j]];
                    }
                    out[[b, j]] = if k + 1 < mlp.layers.len() {
                        mlp.activation.apply(acc)
                    } else {
                        acc
                    };
                }
            }
            h = out;
        }
        h
    }

    fn random_input(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_and_identity_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zero = Mlp {
            layers: vec![Linear::zeros(3, 2)],
            activation: Activation::Relu,
            dropout: 0.0,
        };
        let x = random_input(&mut rng, 4, 3);
        assert!(zero.predict(x.view()).unwrap().iter().all(|&v| v == 0.0));
        let id = Mlp {
            layers: vec![
                Linear {
                    weight: Array2::eye(3),
                    bias: Array1::zeros(3),
                },
                Linear {
                    weight: Array2::eye(3),
                    bias: Array1::zeros(3),
                },
            ],
            activation: Activation::Relu,
            dropout: 0.0,
        };
        let pos = x.mapv(f64::abs);
        assert_eq!(id.predict(pos.view()).unwrap(), pos);
        assert!(matches!(
            id.predict(Array2::zeros((1, 2)).view()),
            Err(NnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn forward_matches_naive_evaluator() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(
            &[5, 7, 3],
            Activation::LeakyRelu { slope: 0.01 },
            0.0,
            &mut rng,
        )
        .unwrap();
        let x = random_input(&mut rng, 4, 5);
        let got = mlp.predict(x.view()).unwrap();
        let want = naive_forward(&mlp, &x);
        assert!(got
            .iter()
            .zip(want.iter())
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn one_dimensional_gradient_is_input_times_upstream() {
        let mlp = Mlp {
            layers: vec![Linear {
                weight: Array2::from_elem((1, 1), 0.3),
                bias: Array1::zeros(1),
            }],
            activation: Activation::Relu,
            dropout: 0.0,
        };
        let x = Array2::from_elem((1, 1), 2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, cache) = mlp.forward(x.view(), false, &mut rng).unwrap();
        let (g, gin) = mlp
            .backward(&cache, Array2::from_elem((1, 1), 4.0).view())
            .unwrap();
        assert_eq!(g.layers[0].weight[[0, 0]], 10.0);
        assert_eq!(g.layers[0].bias[0], 4.0);
        assert!((gin[[0, 0]] - 1.2).abs() < 1e-15);
        let (z, _) = mlp.backward(&cache, Array2::zeros((1, 1)).view()).unwrap();
        assert!(z.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..10 {
            let act = if trial % 2 == 0 {
                Activation::Relu
            } else {
                Activation::LeakyRelu { slope: 0.01 }
            };
            let mut mlp = Mlp::new(&[4, 6, 3], act, 0.0, &mut rng).unwrap();
            let x = random_input(&mut rng, 3, 4);
            let labels = [0, 2, 1];
            let loss = |m: &Mlp| {
                softmax_cross_entropy(m.predict(x.view()).unwrap().view(), &labels, 0.1)
                    .unwrap()
                    .0
            };
            let (out, cache) = mlp.forward(x.view(), false, &mut rng).unwrap();
            let (_, gout) = softmax_cross_entropy(out.view(), &labels, 0.1).unwrap();
            let (grads, _) = mlp.backward(&cache, gout.view()).unwrap();
            let analytic: Vec<f64> = grads.slices().concat();
            let h = 1e-6;
            let mut idx = 0;
            for p in 0..mlp.param_slices_mut().len() {
                for i in 0..mlp.param_slices_mut()[p].len() {
                    let orig = mlp.param_slices_mut()[p][i];
                    mlp.param_slices_mut()[p][i] = orig + h;
                    let up = loss(&mlp);
                    mlp.param_slices_mut()[p][i] = orig - h;
                    let down = loss(&mlp);
                    mlp.param_slices_mut()[p][i] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let err =
                        (fd - analytic[idx]).abs() / fd.abs().max(analytic[idx].abs()).max(1e-8);
                    assert!(
                        err < 1e-4 || (fd - analytic[idx]).abs() < 1e-9,
                        "trial {trial} param {p}[{i}]: {fd} vs {}",
                        analytic[idx]
                    );
                    idx += 1;
                }
            }
        }
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&[2, 4, 1], Activation::Relu, 0.5, &mut rng).unwrap();
        let x = Array2::from_shape_vec((1, 2), vec![0.7, -0.4]).unwrap();
        let eval = mlp.predict(x.view()).unwrap()[[0, 0]];
        let draws = 20_000;
        let samples: Vec<f64> = (0..draws)
            .map(|_| mlp.forward(x.view(), true, &mut rng).unwrap().0[[0, 0]])
            .collect();
        let mean = samples.iter().sum::<f64>() / draws as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!(
            (mean - eval).abs() <= 3.0 * se + 1e-12,
            "{mean} vs {eval} (se {se})"
        );
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = [0.3, -4.0, 0.0];
        let mut adam = Adam::new(&[3]);
        adam.update(&mut [p.as_mut_slice()], &[&g], 0.01);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 1.99).abs() < 1e-9);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn adam_matches_scalar_reference() {
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.05);
        let grads = [0.4, -0.1];
        let (mut x, mut m, mut v) = (1.0f64, 0.0, 0.0);
        for (t, g) in grads.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = vec![1.0];
        let mut adam = Adam::new(&[1]);
        for g in grads {
            adam.update(&mut [p.as_mut_slice()], &[&[g]], lr);
        }
        assert_eq!(p[0], x);
    }

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::new(1e-3, 0.1, 1000);
        assert_eq!(s.warmup_steps, 100);
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(100), 1e-3);
        assert!((s.lr_at(400) - 5e-4).abs() < 1e-18);
        assert!((s.lr_at(50) - 5e-4).abs() < 1e-18);
    }

    #[test]
    fn cross_entropy_limits() {
        let k = 7;
        let (loss, _) = softmax_cross_entropy(Array2::zeros((2, k)).view(), &[0, 3], 0.0).unwrap();
        assert!((loss - (k as f64).ln()).abs() < 1e-12);
        let mut logits = Array2::zeros((1, 3));
        logits[[0, 1]] = 20.0;
        assert!(softmax_cross_entropy(logits.view(), &[1], 0.0).unwrap().0 < 1e-3);
        assert!(matches!(
            softmax_cross_entropy(logits.view(), &[3], 0.0),
            Err(NnError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn bce_at_zero_is_ln2() {
        let (loss, grad) = bce_with_logits(&[0.0, 0.0], &[0.0, 1.0]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(grad, vec![0.25, -0.25]);
    }
}
