use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, invalid, Error, Result};

/// Network shape. Weights are stored row-major per layer, weights before
/// biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    /// `outputs` linear units; softmax regression, or linear regression
    /// with one output.
    Softmax { input: usize, outputs: usize },
    /// One tanh hidden layer.
    Mlp {
        input: usize,
        hidden: usize,
        outputs: usize,
    },
    /// `tanh(Wx + b)` embedding of width `edim`.
    Encoder { input: usize, edim: usize },
}

impl Arch {
    pub fn input(&self) -> usize {
        match *self {
            Arch::Softmax { input, .. } | Arch::Mlp { input, .. } | Arch::Encoder { input, .. } => {
                input
            }
        }
    }

    pub fn outputs(&self) -> usize {
        match *self {
            Arch::Softmax { outputs, .. } | Arch::Mlp { outputs, .. } => outputs,
            Arch::Encoder { edim, .. } => edim,
        }
    }

    pub fn num_params(&self) -> usize {
        match *self {
            Arch::Softmax { input, outputs } => outputs * (input + 1),
            Arch::Mlp {
                input,
                hidden,
                outputs,
            } => hidden * (input + 1) + outputs * (hidden + 1),
            Arch::Encoder { input, edim } => edim * (input + 1),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Arch::Softmax { input, outputs } => input > 0 && outputs > 0,
            Arch::Mlp {
                input,
                hidden,
                outputs,
            } => input > 0 && hidden > 0 && outputs > 0,
            Arch::Encoder { input, edim } => input > 0 && edim > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("degenerate architecture {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    arch: Arch,
    weights: Vec<f64>,
}

/// y = W x + b for a row-major `rows x cols` block followed by `rows` biases.
fn affine(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let (mat, bias) = w.split_at(rows * cols);
    (0..rows)
        .map(|r| {
            mat[r * cols..(r + 1) * cols]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + bias[r]
        })
        .collect()
}

/// Accumulates the gradient of an affine block; returns dL/dx when asked.
fn affine_back(
    w: &[f64],
    g: &mut [f64],
    rows: usize,
    cols: usize,
    x: &[f64],
    dy: &[f64],
    want_dx: bool,
) -> Vec<f64> {
    let (gm, gb) = g.split_at_mut(rows * cols);
    let mut dx = if want_dx { vec![0.0; cols] } else { Vec::new() };
    for r in 0..rows {
        if dy[r] == 0.0 {
            continue;
        }
        gb[r] += dy[r];
        for c in 0..cols {
            gm[r * cols + c] += dy[r] * x[c];
            if want_dx {
                dx[c] += dy[r] * w[r * cols + c];
            }
        }
    }
    dx
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    hidden: Vec<f64>,
    pub(crate) out: Vec<f64>,
}

impl ModelParams {
    pub fn new(arch: Arch, weights: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        ensure_len(arch.num_params(), weights.len())?;
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::Numeric(format!("weight {i} is {}", weights[i])));
        }
        Ok(Self { arch, weights })
    }

    pub fn zeros(arch: Arch) -> Result<Self> {
        Self::new(arch, vec![0.0; arch.num_params()])
    }

    /// Weights drawn from N(0, 1/fan_in), biases zero.
    pub fn init<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut w = Vec::with_capacity(arch.num_params());
        let mut layer = |rows: usize, cols: usize, w: &mut Vec<f64>| {
            let scale = 1.0 / (cols as f64).sqrt();
            for _ in 0..rows * cols {
                let z: f64 = StandardNormal.sample(rng);
                w.push(z * scale);
            }
            w.extend(std::iter::repeat_n(0.0, rows));
        };
        match arch {
            Arch::Softmax { input, outputs } => layer(outputs, input, &mut w),
            Arch::Mlp {
                input,
                hidden,
                outputs,
            } => {
                layer(hidden, input, &mut w);
                layer(outputs, hidden, &mut w);
            }
            Arch::Encoder { input, edim } => layer(edim, input, &mut w),
        }
        Self::new(arch, w)
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Replaces the weights, keeping the architecture.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.arch, weights)
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Trace {
        match self.arch {
            Arch::Softmax { input, outputs } => Trace {
                hidden: Vec::new(),
                out: affine(&self.weights, outputs, input, x),
            },
            Arch::Mlp {
                input,
                hidden,
                outputs,
            } => {
                let split = hidden * (input + 1);
                let h: Vec<f64> = affine(&self.weights[..split], hidden, input, x)
                    .into_iter()
                    .map(f64::tanh)
                    .collect();
                let out = affine(&self.weights[split..], outputs, hidden, &h);
                Trace { hidden: h, out }
            }
            Arch::Encoder { input, edim } => {
                let out = affine(&self.weights, edim, input, x)
                    .into_iter()
                    .map(f64::tanh)
                    .collect();
                Trace {
                    hidden: Vec::new(),
                    out,
                }
            }
        }
    }

    pub(crate) fn backward(&self, x: &[f64], trace: &Trace, d_out: &[f64], grad: &mut [f64]) {
        match self.arch {
            Arch::Softmax { input, outputs } => {
                affine_back(&self.weights, grad, outputs, input, x, d_out, false);
            }
            Arch::Mlp {
                input,
                hidden,
                outputs,
            } => {
                let split = hidden * (input + 1);
                let (g1, g2) = grad.split_at_mut(split);
                let dh = affine_back(
                    &self.weights[split..],
                    g2,
                    outputs,
                    hidden,
                    &trace.hidden,
                    d_out,
                    true,
                );
                let da: Vec<f64> = dh
                    .iter()
                    .zip(&trace.hidden)
                    .map(|(d, h)| d * (1.0 - h * h))
                    .collect();
                affine_back(&self.weights[..split], g1, hidden, input, x, &da, false);
            }
            Arch::Encoder { input, edim } => {
                let da: Vec<f64> = d_out
                    .iter()
                    .zip(&trace.out)
                    .map(|(d, y)| d * (1.0 - y * y))
                    .collect();
                affine_back(&self.weights, grad, edim, input, x, &da, false);
            }
        }
    }

    /// Raw network output (logits, regression value or embedding).
    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).out
    }

    /// Index of the largest output; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.output(x))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Training objective for one minibatch `x`.
#[derive(Debug, Clone, Copy)]
pub enum Loss<'a> {
    CrossEntropy {
        labels: &'a [usize],
    },
    /// Mean squared error of a single-output model.
    Mse {
        targets: &'a [f64],
    },
    /// Cross entropy plus `mu/2 * |w - global|^2`.
    CrossEntropyProx {
        labels: &'a [usize],
        global: &'a ModelParams,
        mu: f64,
    },
    /// `max(|f(x) - f(pos)| - |f(x) - f(neg)| + margin, 0)` per anchor.
    Triplet {
        positives: &'a [Vec<f64>],
        negatives: &'a [Vec<f64>],
        margin: f64,
    },
}

/// Mean loss over the batch and its gradient.
pub fn loss_and_grad(model: &ModelParams, x: &[Vec<f64>], loss: &Loss) -> Result<(f64, Vec<f64>)> {
    if x.is_empty() {
        return Err(invalid("empty batch"));
    }
    for row in x {
        ensure_len(model.arch.input(), row.len())?;
    }
    let scale = 1.0 / x.len() as f64;
    let mut grad = vec![0.0; model.weights.len()];
    let mut total = 0.0;
    match *loss {
        Loss::CrossEntropy { labels } | Loss::CrossEntropyProx { labels, .. } => {
            ensure_len(x.len(), labels.len())?;
            let k = model.arch.outputs();
            for (row, &y) in x.iter().zip(labels) {
                if y >= k {
                    return Err(invalid(format!("label {y} outside {k} outputs")));
                }
                let t = model.forward(row);
                let lp = log_softmax(&t.out);
                total -= lp[y];
                let mut d: Vec<f64> = lp.iter().map(|v| v.exp() * scale).collect();
                d[y] -= scale;
                model.backward(row, &t, &d, &mut grad);
            }
        }
        Loss::Mse { targets } => {
            ensure_len(x.len(), targets.len())?;
            ensure_len(1, model.arch.outputs())?;
            for (row, &y) in x.iter().zip(targets) {
                let t = model.forward(row);
                let e = t.out[0] - y;
                total += e * e;
                model.backward(row, &t, &[2.0 * e * scale], &mut grad);
            }
        }
        Loss::Triplet {
            positives,
            negatives,
            margin,
        } => {
            ensure_len(x.len(), positives.len())?;
            ensure_len(x.len(), negatives.len())?;
            for ((a, p), n) in x.iter().zip(positives).zip(negatives) {
                let (ta, tp, tn) = (model.forward(a), model.forward(p), model.forward(n));
                let dap: Vec<f64> = ta.out.iter().zip(&tp.out).map(|(u, v)| u - v).collect();
                let dan: Vec<f64> = ta.out.iter().zip(&tn.out).map(|(u, v)| u - v).collect();
                let np = dap.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nn = dan.iter().map(|v| v * v).sum::<f64>().sqrt();
                let value = np - nn + margin;
                if value <= 0.0 {
                    continue;
                }
                total += value;
                // zero distances contribute a zero subgradient
                let up: Vec<f64> = dap
                    .iter()
                    .map(|v| if np > 0.0 { v / np * scale } else { 0.0 })
                    .collect();
                let un: Vec<f64> = dan
                    .iter()
                    .map(|v| if nn > 0.0 { v / nn * scale } else { 0.0 })
                    .collect();
                let da: Vec<f64> = up.iter().zip(&un).map(|(u, v)| u - v).collect();
                let dp: Vec<f64> = up.iter().map(|v| -v).collect();
                model.backward(a, &ta, &da, &mut grad);
                model.backward(p, &tp, &dp, &mut grad);
                model.backward(n, &tn, &un, &mut grad);
            }
        }
    }
    let mut value = total * scale;
    if let Loss::CrossEntropyProx { global, mu, .. } = *loss {
        ensure_len(model.weights.len(), global.weights.len())?;
        if mu != 0.0 {
            let mut sq = 0.0;
            for ((g, w), w0) in grad.iter_mut().zip(&model.weights).zip(&global.weights) {
                *g += mu * (w - w0);
                sq += (w - w0) * (w - w0);
            }
            value += 0.5 * mu * sq;
        }
    }
    if !value.is_finite() {
        let max_w = model.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        return Err(Error::Numeric(format!(
            "loss is {value} on a batch of {} (max |w| = {max_w:.3e})",
            x.len()
        )));
    }
    Ok((value, grad))
}

/// One SGD step.
pub fn local_step(
    model: &ModelParams,
    x: &[Vec<f64>],
    loss: &Loss,
    lr: f64,
) -> Result<ModelParams> {
    if !(lr >= 0.0) {
        return Err(invalid("learning rate must be nonnegative"));
    }
    let (_, grad) = loss_and_grad(model, x, loss)?;
    let weights: Vec<f64> = model
        .weights
        .iter()
        .zip(&grad)
        .map(|(w, g)| w - lr * g)
        .collect();
    model.with_weights(weights)
}

/// Positives are noisy copies of each anchor, negatives a different random
/// point of the batch (the anchor itself when the batch has one point).
#[allow(clippy::type_complexity)]
pub fn make_triplets<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    sigma_aug: f64,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let noise =
        Normal::new(0.0, sigma_aug).map_err(|e| invalid(format!("augmentation noise: {e}")))?;
    let positives = x
        .iter()
        .map(|row| row.iter().map(|v| v + noise.sample(rng)).collect())
        .collect();
    let negatives = (0..x.len())
        .map(|i| {
            if x.len() == 1 {
                return x[0].clone();
            }
            let mut j = rng.random_range(0..x.len() - 1);
            if j >= i {
                j += 1;
            }
            x[j].clone()
        })
        .collect();
    Ok((positives, negatives))
}
