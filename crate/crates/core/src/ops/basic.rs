//! Activation, pooling, dense, softmax and loss primitives.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to probabilities before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.require_same_shape(grad_out)?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Mean over the spatial axes: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let plane = h * w;
    let data = input
        .data()
        .chunks(plane)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
        .collect();
    Tensor::new(vec![n, c], data)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input_shape[..] else {
        return Err(Error::shape(format!("expected rank-4 shape, got {input_shape:?}")));
    };
    if grad_out.shape() != [n, c] {
        return Err(Error::shape(format!(
            "pool cotangent shape {:?} does not match [{n}, {c}]",
            grad_out.shape()
        )));
    }
    let plane = h * w;
    let scale = 1.0 / plane as f64;
    let mut data = Vec::with_capacity(n * c * plane);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n((g as f64 * scale) as f32, plane));
    }
    Tensor::new(input_shape.to_vec(), data)
}

/// Fully connected layer: `y[n] = W x[n] + b` with `W` of shape `[K, D]`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d) = input.dims2()?;
    let (k, wd) = weights.dims2()?;
    if wd != d || bias.shape() != [k] {
        return Err(Error::shape(format!(
            "dense weights {:?} / bias {:?} incompatible with input {:?}",
            weights.shape(),
            bias.shape(),
            input.shape()
        )));
    }
    let (x, wt, b) = (input.data(), weights.data(), bias.data());
    let mut out = Vec::with_capacity(n * k);
    for row in x.chunks(d) {
        for o in 0..k {
            let dot: f64 = wt[o * d..(o + 1) * d]
                .iter()
                .zip(row)
                .map(|(&a, &v)| a as f64 * v as f64)
                .sum();
            out.push((dot + b[o] as f64) as f32);
        }
    }
    Tensor::new(vec![n, k], out)?.ensure_finite("dense")
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
    let (n, d) = input.dims2()?;
    let (k, _) = weights.dims2()?;
    if grad_out.shape() != [n, k] {
        return Err(Error::shape(format!(
            "dense cotangent shape {:?} does not match [{n}, {k}]",
            grad_out.shape()
        )));
    }
    let (x, wt, g) = (input.data(), weights.data(), grad_out.data());
    let mut dx = vec![0.0f32; n * d];
    for r in 0..n {
        for c in 0..d {
            let s: f64 = (0..k).map(|o| g[r * k + o] as f64 * wt[o * d + c] as f64).sum();
            dx[r * d + c] = s as f32;
        }
    }
    let mut dw = vec![0.0f32; k * d];
    for o in 0..k {
        for c in 0..d {
            let s: f64 = (0..n).map(|r| g[r * k + o] as f64 * x[r * d + c] as f64).sum();
            dw[o * d + c] = s as f32;
        }
    }
    let db = (0..k)
        .map(|o| (0..n).map(|r| g[r * k + o] as f64).sum::<f64>() as f32)
        .collect();
    Ok(DenseGrads {
        input: Tensor::new(vec![n, d], dx)?,
        weights: Tensor::new(vec![k, d], dw)?,
        bias: Tensor::new(vec![k], db)?,
    })
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = logits.dims2()?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / total) as f32));
    }
    Tensor::new(logits.shape().to_vec(), out)?.ensure_finite("softmax")
}

pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    probs.require_same_shape(grad_out)?;
    let (_, k) = probs.dims2()?;
    let mut out = Vec::with_capacity(probs.len());
    for (p, g) in probs.data().chunks(k).zip(grad_out.data().chunks(k)) {
        let dot: f64 = p.iter().zip(g).map(|(&a, &b)| a as f64 * b as f64).sum();
        out.extend(
            p.iter()
                .zip(g)
                .map(|(&pi, &gi)| (pi as f64 * (gi as f64 - dot)) as f32),
        );
    }
    Tensor::new(probs.shape().to_vec(), out)
}

fn check_labels(n: usize, k: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::shape(format!("label {bad} outside [0, {k})")));
    }
    Ok(())
}

/// Mean negative log-likelihood of the labelled class, with probabilities
/// clamped to [`LOG_CLAMP`] before the log.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, k) = probs.dims2()?;
    check_labels(n, k, labels)?;
    let p = probs.data();
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &l)| -(p[r * k + l] as f64).max(LOG_CLAMP).ln())
        .sum();
    Ok(total / n as f64)
}

/// Gradient of [`cross_entropy`] with respect to the probabilities.
pub fn cross_entropy_backward(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, k) = probs.dims2()?;
    check_labels(n, k, labels)?;
    let mut grad = Tensor::zeros(&[n, k]);
    for (r, &l) in labels.iter().enumerate() {
        let p = probs.data()[r * k + l] as f64;
        if p > LOG_CLAMP {
            grad.data_mut()[r * k + l] = (-1.0 / (n as f64 * p)) as f32;
        }
    }
    Ok(grad)
}

/// Fused softmax and cross-entropy. Returns `(loss, probabilities)`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let probs = softmax(logits)?;
    let loss = cross_entropy(&probs, labels)?;
    Ok((loss, probs))
}

/// Gradient of the fused loss with respect to the logits: `(p - onehot) / N`.
pub fn softmax_cross_entropy_backward(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, k) = probs.dims2()?;
    check_labels(n, k, labels)?;
    let mut grad = Vec::with_capacity(n * k);
    for (r, row) in probs.data().chunks(k).enumerate() {
        for (c, &p) in row.iter().enumerate() {
            let onehot = if c == labels[r] { 1.0 } else { 0.0 };
            grad.push(((p as f64 - onehot) / n as f64) as f32);
        }
    }
    Tensor::new(vec![n, k], grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, v: &[f32]) -> Tensor {
        Tensor::new(vec![rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&relu(&x)), relu(&x));
        let g = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let at = Tensor::new(vec![2], vec![2.0, -2.0]).unwrap();
        assert_eq!(relu_backward(&at, &g).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn pooling() {
        let x = Tensor::full(&[2, 3, 4, 5], 7.0);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| v == 7.0));
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
    }

    #[test]
    fn dense_cases() {
        let x = t2(1, 2, &[1.0, 1.0]);
        let w = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[4.0, 6.0]);

        let x = t2(2, 2, &[0.5, -3.0, 2.0, 9.0]);
        let eye = t2(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[2])).unwrap(), x);
        let y = dense(&x, &Tensor::zeros(&[2, 2]), &b).unwrap();
        assert_eq!(y.data(), &[1.0, -1.0, 1.0, -1.0]);
        assert!(dense(&x, &Tensor::zeros(&[2, 3]), &b).is_err());
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&t2(1, 3, &[0.0, 0.0, 0.0])).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let p = softmax(&t2(1, 2, &[0.0, 2f32.ln()])).unwrap();
        assert!((p.data()[0] - 1.0 / 3.0).abs() < 1e-7);
        assert!((p.data()[1] - 2.0 / 3.0).abs() < 1e-7);
        // Saturating logits stay finite.
        let p = softmax(&t2(1, 2, &[1000.0, -1000.0])).unwrap();
        assert_eq!(p.data(), &[1.0, 0.0]);
    }

    #[test]
    fn cross_entropy_cases() {
        let u = t2(1, 3, &[1.0 / 3.0; 3]);
        assert!((cross_entropy(&u, &[2]).unwrap() - 3f64.ln()).abs() < 1e-6);
        let exact = t2(1, 3, &[0.0, 1.0, 0.0]);
        assert_eq!(cross_entropy(&exact, &[1]).unwrap(), 0.0);
        let p = t2(1, 3, &[0.5, 0.25, 0.25]);
        assert!((cross_entropy(&p, &[1]).unwrap() - 4f64.ln()).abs() < 1e-7);
        // Zero probability hits the clamp instead of infinity.
        let loss = cross_entropy(&exact, &[0]).unwrap();
        assert!((loss - (-LOG_CLAMP.ln())).abs() < 1e-9);
        assert!(cross_entropy(&p, &[3]).is_err());
    }

    #[test]
    fn fused_gradient_closed_form() {
        let (_, p) = softmax_cross_entropy(&t2(1, 3, &[0.0, 0.0, 0.0]), &[0]).unwrap();
        let g = softmax_cross_entropy_backward(&p, &[0]).unwrap();
        let expect = [-2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in g.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}
