//! Finite-difference verification of the analytic gradients.
//!
//! The numerical side never touches the `f32` kernels in [`crate::ops`]: each
//! primitive has a naive `f64` forward here, and central differences are taken
//! on that. The analytic side runs the real forward and backward through a
//! [`Tape`]. Both contract the output with the same random cotangent `u`, so
//! the checked quantity is the gradient of `sum(u * op(inputs))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ops::{BatchNormParams, Mode, Padding, DEFAULT_EPSILON, LOG_CLAMP};
use crate::tape::{Graph, Tape};
use crate::tensor::Tensor;

/// Primitive under test, with the sizes of its random instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CheckedOp {
    Conv2d {
        batch: usize,
        in_channels: usize,
        out_channels: usize,
        size: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Depthwise {
        batch: usize,
        channels: usize,
        size: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    BatchNorm {
        batch: usize,
        channels: usize,
        size: usize,
        mode: Mode,
    },
    Dense {
        batch: usize,
        inputs: usize,
        outputs: usize,
    },
    Relu {
        len: usize,
    },
    GlobalAvgPool {
        batch: usize,
        channels: usize,
        size: usize,
    },
    Softmax {
        batch: usize,
        classes: usize,
    },
    SoftmaxCrossEntropy {
        batch: usize,
        classes: usize,
    },
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Multiplier applied to the analytic gradients. Anything other than 1 is a
    /// deliberate corruption for negative controls.
    pub analytic_scale: f32,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            analytic_scale: 1.0,
        }
    }
}

/// Worst relative error per checked tensor.
///
/// For a tensor with analytic gradient `a` and numerical gradient `n` the
/// error is `max_i |a_i - n_i| / max(max_i |n_i|, 1e-8)`.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op: String,
    pub tolerance: f64,
    pub errors: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.errors.iter().all(|(_, e)| *e <= self.tolerance)
    }

    pub fn max_error(&self) -> f64 {
        self.errors.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:", self.op)?;
        for (name, err) in &self.errors {
            write!(f, " {name}={err:.2e}")?;
        }
        write!(
            f,
            " ({} at tol {:.0e})",
            if self.passed() { "pass" } else { "FAIL" },
            self.tolerance
        )
    }
}

pub fn grad_check(op: CheckedOp, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    grad_check_with(op, tolerance, seed, GradCheckOptions::default())
}

pub fn grad_check_with(
    op: CheckedOp,
    tolerance: f64,
    seed: u64,
    options: GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case = Case::sample(op, &mut rng);

    // Analytic side: real kernels on the tape.
    let mut tape = Tape::new();
    let vars: Vec<_> = case
        .inputs
        .iter()
        .map(|(_, t)| tape.leaf(t.clone()))
        .collect();
    let out = case.record(&mut tape, &vars)?;
    let out_shape = tape.value(&out).shape().to_vec();
    let cotangent = Tensor::from_fn(&out_shape, |_| rng.gen_range(-1.0..1.0));
    let grads = if case.scalar_output {
        tape.backward(out)?
    } else {
        tape.backward_with(out, cotangent.clone())?
    };

    // Numerical side: f64 reference forward.
    let inputs64: Vec<Vec<f64>> = case
        .inputs
        .iter()
        .map(|(_, t)| t.data().iter().map(|&v| v as f64).collect())
        .collect();
    let u: Vec<f64> = cotangent.data().iter().map(|&v| v as f64).collect();
    let objective = |inputs: &[Vec<f64>]| -> f64 {
        let y = case.reference(inputs);
        if case.scalar_output {
            y[0]
        } else {
            y.iter().zip(&u).map(|(a, b)| a * b).sum()
        }
    };

    let mut errors = Vec::new();
    for (k, (name, _)) in case.inputs.iter().enumerate() {
        if !case.differentiable[k] {
            continue;
        }
        let analytic: Vec<f64> = match grads.get(vars[k]) {
            Some(g) => g
                .data()
                .iter()
                .map(|&v| (v * options.analytic_scale) as f64)
                .collect(),
            None => vec![0.0; inputs64[k].len()],
        };
        let mut inputs = inputs64.clone();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..inputs[k].len() {
            let orig = inputs[k][i];
            inputs[k][i] = orig + options.step;
            let plus = objective(&inputs);
            inputs[k][i] = orig - options.step;
            let minus = objective(&inputs);
            inputs[k][i] = orig;
            numeric.push((plus - minus) / (2.0 * options.step));
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        let worst = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        errors.push((name.clone(), worst / scale));
    }
    Ok(GradCheckReport {
        op: case.label,
        tolerance,
        errors,
    })
}

struct Case {
    op: CheckedOp,
    label: String,
    inputs: Vec<(String, Tensor)>,
    differentiable: Vec<bool>,
    labels: Vec<usize>,
    scalar_output: bool,
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Uniform values kept at least `margin` away from zero.
fn uniform_away_from_zero(shape: &[usize], margin: f32, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let v: f32 = rng.gen_range(-1.0..1.0);
        if v.abs() >= margin {
            break v;
        }
    })
}

impl Case {
    fn sample(op: CheckedOp, rng: &mut ChaCha8Rng) -> Case {
        let mut labels = Vec::new();
        let mut scalar_output = false;
        let (label, inputs): (String, Vec<(&str, Tensor)>) = match op {
            CheckedOp::Conv2d {
                batch,
                in_channels,
                out_channels,
                size,
                kernel,
                stride,
                padding,
            } => (
                format!(
                    "conv2d {kernel}x{kernel} {in_channels}->{out_channels} s{stride} {}",
                    padding.as_str()
                ),
                vec![
                    ("input", uniform(&[batch, in_channels, size, size], rng)),
                    ("kernel", uniform(&[out_channels, in_channels, kernel, kernel], rng)),
                    ("bias", uniform(&[out_channels], rng)),
                ],
            ),
            CheckedOp::Depthwise {
                batch,
                channels,
                size,
                kernel,
                stride,
                padding,
            } => (
                format!("depthwise {kernel}x{kernel} c{channels} s{stride} {}", padding.as_str()),
                vec![
                    ("input", uniform(&[batch, channels, size, size], rng)),
                    ("kernel", uniform(&[channels, 1, kernel, kernel], rng)),
                    ("bias", uniform(&[channels], rng)),
                ],
            ),
            CheckedOp::BatchNorm {
                batch,
                channels,
                size,
                mode,
            } => {
                let mut inputs = vec![
                    ("input", uniform(&[batch, channels, size, size], rng)),
                    ("gamma", Tensor::from_fn(&[channels], |_| rng.gen_range(0.5..1.5))),
                    ("beta", uniform(&[channels], rng)),
                ];
                if mode == Mode::Eval {
                    inputs.push(("running_mean", uniform(&[channels], rng)));
                    inputs.push((
                        "running_var",
                        Tensor::from_fn(&[channels], |_| rng.gen_range(0.5..2.0)),
                    ));
                }
                (format!("batch_norm {mode:?} c{channels}"), inputs)
            }
            CheckedOp::Dense {
                batch,
                inputs,
                outputs,
            } => (
                format!("dense {inputs}->{outputs}"),
                vec![
                    ("input", uniform(&[batch, inputs], rng)),
                    ("weights", uniform(&[outputs, inputs], rng)),
                    ("bias", uniform(&[outputs], rng)),
                ],
            ),
            CheckedOp::Relu { len } => (
                format!("relu n{len}"),
                // The step is 1e-3, so inputs closer than that to the kink
                // would straddle it.
                vec![("input", uniform_away_from_zero(&[len], 1e-2, rng))],
            ),
            CheckedOp::GlobalAvgPool {
                batch,
                channels,
                size,
            } => (
                format!("global_avg_pool c{channels}"),
                vec![("input", uniform(&[batch, channels, size, size], rng))],
            ),
            CheckedOp::Softmax { batch, classes } => (
                format!("softmax k{classes}"),
                vec![("logits", uniform(&[batch, classes], rng))],
            ),
            CheckedOp::SoftmaxCrossEntropy { batch, classes } => {
                labels = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
                scalar_output = true;
                (
                    format!("softmax+cross_entropy k{classes}"),
                    vec![("logits", uniform(&[batch, classes], rng))],
                )
            }
        };
        let differentiable = inputs
            .iter()
            .map(|(n, _)| !n.starts_with("running_"))
            .collect();
        Case {
            op,
            label,
            inputs: inputs
                .into_iter()
                .map(|(n, t)| (n.to_string(), t))
                .collect(),
            differentiable,
            labels,
            scalar_output,
        }
    }

    fn record(&self, tape: &mut Tape, v: &[crate::tape::Var]) -> Result<crate::tape::Var> {
        match self.op {
            CheckedOp::Conv2d {
                stride, padding, ..
            } => tape.conv2d(&v[0], &v[1], &v[2], stride, padding),
            CheckedOp::Depthwise {
                stride, padding, ..
            } => tape.depthwise_conv2d(&v[0], &v[1], &v[2], stride, padding),
            CheckedOp::BatchNorm { channels, mode, .. } => {
                let params = match mode {
                    Mode::Train => BatchNormParams::new(channels),
                    Mode::Eval => BatchNormParams::with_running_stats(
                        self.inputs[1].1.clone(),
                        self.inputs[2].1.clone(),
                        self.inputs[3].1.clone(),
                        self.inputs[4].1.clone(),
                        DEFAULT_EPSILON,
                    )?,
                };
                Ok(tape.batch_norm(&v[0], &v[1], &v[2], &params, mode)?.0)
            }
            CheckedOp::Dense { .. } => tape.dense(&v[0], &v[1], &v[2]),
            CheckedOp::Relu { .. } => tape.relu(&v[0]),
            CheckedOp::GlobalAvgPool { .. } => tape.global_avg_pool(&v[0]),
            CheckedOp::Softmax { .. } => tape.softmax(&v[0]),
            CheckedOp::SoftmaxCrossEntropy { .. } => tape.softmax_cross_entropy(v[0], &self.labels),
        }
    }

    fn reference(&self, x: &[Vec<f64>]) -> Vec<f64> {
        match self.op {
            CheckedOp::Conv2d {
                batch,
                in_channels,
                out_channels,
                size,
                kernel,
                stride,
                padding,
            } => reference::conv2d(
                &x[0], &x[1], &x[2], batch, in_channels, out_channels, size, kernel, stride,
                padding, false,
            ),
            CheckedOp::Depthwise {
                batch,
                channels,
                size,
                kernel,
                stride,
                padding,
            } => reference::conv2d(
                &x[0], &x[1], &x[2], batch, channels, channels, size, kernel, stride, padding,
                true,
            ),
            CheckedOp::BatchNorm {
                batch,
                channels,
                size,
                mode,
            } => match mode {
                Mode::Train => reference::batch_norm_train(
                    &x[0],
                    &x[1],
                    &x[2],
                    batch,
                    channels,
                    size * size,
                    DEFAULT_EPSILON as f64,
                ),
                Mode::Eval => reference::batch_norm_eval(
                    &x[0],
                    &x[1],
                    &x[2],
                    &x[3],
                    &x[4],
                    channels,
                    size * size,
                    DEFAULT_EPSILON as f64,
                ),
            },
            CheckedOp::Dense { inputs, outputs, .. } => {
                reference::dense(&x[0], &x[1], &x[2], inputs, outputs)
            }
            CheckedOp::Relu { .. } => x[0].iter().map(|&v| v.max(0.0)).collect(),
            CheckedOp::GlobalAvgPool { size, .. } => x[0]
                .chunks(size * size)
                .map(|p| p.iter().sum::<f64>() / p.len() as f64)
                .collect(),
            CheckedOp::Softmax { classes, .. } => reference::softmax(&x[0], classes),
            CheckedOp::SoftmaxCrossEntropy { classes, .. } => {
                let p = reference::softmax(&x[0], classes);
                let n = self.labels.len() as f64;
                let loss = self
                    .labels
                    .iter()
                    .enumerate()
                    .map(|(r, &l)| -p[r * classes + l].max(LOG_CLAMP).ln())
                    .sum::<f64>()
                    / n;
                vec![loss]
            }
        }
    }
}

/// Naive `f64` forward passes used only as finite-difference targets.
mod reference {
    use crate::ops::Padding;

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        x: &[f64],
        k: &[f64],
        b: &[f64],
        n: usize,
        c: usize,
        oc: usize,
        size: usize,
        ks: usize,
        stride: usize,
        padding: Padding,
        depthwise: bool,
    ) -> Vec<f64> {
        let (out, pad) = match padding {
            Padding::Same => {
                let out = size.div_ceil(stride);
                (out, ((out - 1) * stride + ks).saturating_sub(size) / 2)
            }
            Padding::Valid => ((size - ks) / stride + 1, 0),
        };
        let at = |bi: usize, ci: usize, y: isize, xx: isize| {
            if y < 0 || xx < 0 || y >= size as isize || xx >= size as isize {
                0.0
            } else {
                x[((bi * c + ci) * size + y as usize) * size + xx as usize]
            }
        };
        let mut y = Vec::with_capacity(n * oc * out * out);
        for bi in 0..n {
            for o in 0..oc {
                for oy in 0..out {
                    for ox in 0..out {
                        let mut s = b[o];
                        let channels: Vec<usize> = if depthwise { vec![o] } else { (0..c).collect() };
                        for ci in channels {
                            let kc = if depthwise { 0 } else { ci };
                            let kin = if depthwise { 1 } else { c };
                            for i in 0..ks {
                                for j in 0..ks {
                                    let sy = (oy * stride + i) as isize - pad as isize;
                                    let sx = (ox * stride + j) as isize - pad as isize;
                                    s += k[((o * kin + kc) * ks + i) * ks + j] * at(bi, ci, sy, sx);
                                }
                            }
                        }
                        y.push(s);
                    }
                }
            }
        }
        y
    }

    pub fn batch_norm_train(
        x: &[f64],
        gamma: &[f64],
        beta: &[f64],
        n: usize,
        c: usize,
        plane: usize,
        eps: f64,
    ) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for ch in 0..c {
            let idx: Vec<usize> = (0..n)
                .flat_map(|b| ((b * c + ch) * plane)..((b * c + ch + 1) * plane))
                .collect();
            let m = idx.len() as f64;
            let mean = idx.iter().map(|&i| x[i]).sum::<f64>() / m;
            let var = idx.iter().map(|&i| (x[i] - mean).powi(2)).sum::<f64>() / m;
            for &i in &idx {
                y[i] = gamma[ch] * (x[i] - mean) / (var + eps).sqrt() + beta[ch];
            }
        }
        y
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_eval(
        x: &[f64],
        gamma: &[f64],
        beta: &[f64],
        mean: &[f64],
        var: &[f64],
        c: usize,
        plane: usize,
        eps: f64,
    ) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / plane) % c;
                gamma[ch] * (v - mean[ch]) / (var[ch] + eps).sqrt() + beta[ch]
            })
            .collect()
    }

    pub fn dense(x: &[f64], w: &[f64], b: &[f64], d: usize, k: usize) -> Vec<f64> {
        x.chunks(d)
            .flat_map(|row| {
                (0..k).map(move |o| b[o] + (0..d).map(|i| w[o * d + i] * row[i]).sum::<f64>())
            })
            .collect()
    }

    pub fn softmax(z: &[f64], k: usize) -> Vec<f64> {
        z.chunks(k)
            .flat_map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(move |v| v / s)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_layer_passes() {
        let op = CheckedOp::Dense {
            batch: 2,
            inputs: 4,
            outputs: 3,
        };
        let report = grad_check(op, 1e-4, 1).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn conv_three_by_three_passes() {
        let op = CheckedOp::Conv2d {
            batch: 1,
            in_channels: 2,
            out_channels: 2,
            size: 6,
            kernel: 3,
            stride: 1,
            padding: Padding::Same,
        };
        let report = grad_check(op, 1e-4, 2).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let op = CheckedOp::Dense {
            batch: 2,
            inputs: 4,
            outputs: 3,
        };
        let opts = GradCheckOptions {
            analytic_scale: 1.01,
            ..Default::default()
        };
        let report = grad_check_with(op, 1e-4, 1, opts).unwrap();
        assert!(!report.passed());
        assert!(report.max_error() > 5e-3);
    }

    #[test]
    fn remaining_primitives_pass() {
        let ops = [
            CheckedOp::Relu { len: 20 },
            CheckedOp::GlobalAvgPool {
                batch: 2,
                channels: 3,
                size: 3,
            },
            CheckedOp::Softmax {
                batch: 3,
                classes: 3,
            },
            CheckedOp::BatchNorm {
                batch: 2,
                channels: 2,
                size: 3,
                mode: Mode::Eval,
            },
        ];
        for (seed, op) in ops.into_iter().enumerate() {
            let report = grad_check(op, 1e-4, seed as u64).unwrap();
            assert!(report.passed(), "{report}");
        }
    }
}
