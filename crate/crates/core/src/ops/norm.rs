//! Batch normalization over the (n, h, w) axes of a 4-D tensor.

use crate::error::{Error, Result};
use crate::par::for_each_chunk_mut;
use crate::tensor::Tensor;

fn check_channels(name: &str, v: &[f64], c: usize) -> Result<()> {
    if v.len() != c {
        return Err(Error::Shape(format!(
            "batchnorm {name} length {} does not match channel count {c}",
            v.len()
        )));
    }
    Ok(())
}

/// Inference-mode normalization with running statistics.
pub fn batchnorm_infer(
    input: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<Tensor> {
    let (_, c, h, w) = input.dims();
    if eps <= 0.0 {
        return Err(Error::Config(format!("batchnorm eps must be positive, got {eps}")));
    }
    for (name, v) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ] {
        check_channels(name, v, c)?;
    }
    if running_var.iter().any(|&v| v < 0.0) {
        return Err(Error::Config("batchnorm running_var must be non-negative".into()));
    }
    let mut out = input.clone();
    let plane = h * w;
    let in_data = input.data();
    for_each_chunk_mut(out.data_mut(), plane, |chunk_idx, out_plane| {
        let ch = chunk_idx % c;
        let scale = gamma[ch] / (running_var[ch] + eps).sqrt();
        let shift = beta[ch] - running_mean[ch] * scale;
        let base = chunk_idx * plane;
        for (o, &v) in out_plane.iter_mut().zip(&in_data[base..base + plane]) {
            *o = v * scale + shift;
        }
    });
    Ok(out)
}

/// Values saved by the training-mode forward pass for reuse in backward.
#[derive(Debug, Clone)]
pub struct BnSaved {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub x_hat: Tensor,
}

/// Training-mode normalization with batch statistics (population variance).
pub fn batchnorm_train(
    input: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Tensor, BnSaved)> {
    let (n, c, h, w) = input.dims();
    if eps <= 0.0 {
        return Err(Error::Config(format!("batchnorm eps must be positive, got {eps}")));
    }
    check_channels("gamma", gamma, c)?;
    check_channels("beta", beta, c)?;
    let m = (n * h * w) as f64;
    let plane = h * w;
    let in_data = input.data();

    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut acc = 0.0;
        for bn in 0..n {
            let base = (bn * c + ch) * plane;
            for &v in &in_data[base..base + plane] {
                acc += v;
            }
        }
        let mu = acc / m;
        let mut acc2 = 0.0;
        for bn in 0..n {
            let base = (bn * c + ch) * plane;
            for &v in &in_data[base..base + plane] {
                let d = v - mu;
                acc2 += d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = acc2 / m;
    }

    let mut x_hat = input.clone();
    for_each_chunk_mut(x_hat.data_mut(), plane, |chunk_idx, plane_data| {
        let ch = chunk_idx % c;
        let inv = 1.0 / (var[ch] + eps).sqrt();
        let mu = mean[ch];
        for v in plane_data.iter_mut() {
            *v = (*v - mu) * inv;
        }
    });
    let mut out = x_hat.clone();
    for_each_chunk_mut(out.data_mut(), plane, |chunk_idx, plane_data| {
        let ch = chunk_idx % c;
        for v in plane_data.iter_mut() {
            *v = *v * gamma[ch] + beta[ch];
        }
    });
    Ok((out, BnSaved { mean, var, x_hat }))
}

/// Gradients of the training-mode forward.
/// Returns (d_input, d_gamma, d_beta).
pub fn batchnorm_train_backward(
    saved: &BnSaved,
    gamma: &[f64],
    eps: f64,
    grad_out: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = saved.x_hat.dims();
    let m = (n * h * w) as f64;
    let plane = h * w;
    let gy = grad_out.data();
    let xh = saved.x_hat.data();

    let mut d_gamma = vec![0.0; c];
    let mut d_beta = vec![0.0; c];
    for ch in 0..c {
        let mut s_gy = 0.0;
        let mut s_gy_xh = 0.0;
        for bn in 0..n {
            let base = (bn * c + ch) * plane;
            for i in base..base + plane {
                s_gy += gy[i];
                s_gy_xh += gy[i] * xh[i];
            }
        }
        d_beta[ch] = s_gy;
        d_gamma[ch] = s_gy_xh;
    }

    let mut grad_in = Tensor::zeros((n, c, h, w));
    for_each_chunk_mut(grad_in.data_mut(), plane, |chunk_idx, gi_plane| {
        let ch = chunk_idx % c;
        let inv = 1.0 / (saved.var[ch] + eps).sqrt();
        let k = gamma[ch] * inv;
        let mean_gy = d_beta[ch] / m;
        let mean_gy_xh = d_gamma[ch] / m;
        let base = chunk_idx * plane;
        for (j, g) in gi_plane.iter_mut().enumerate() {
            let i = base + j;
            *g = k * (gy[i] - mean_gy - xh[i] * mean_gy_xh);
        }
    });
    (grad_in, d_gamma, d_beta)
}

/// Gradients of the inference-mode forward (running stats are constants).
pub fn batchnorm_infer_backward(
    input: &Tensor,
    gamma: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
    grad_out: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = input.dims();
    let plane = h * w;
    let gy = grad_out.data();
    let x = input.data();
    let mut d_gamma = vec![0.0; c];
    let mut d_beta = vec![0.0; c];
    for ch in 0..c {
        let inv = 1.0 / (running_var[ch] + eps).sqrt();
        for bn in 0..n {
            let base = (bn * c + ch) * plane;
            for i in base..base + plane {
                d_beta[ch] += gy[i];
                d_gamma[ch] += gy[i] * (x[i] - running_mean[ch]) * inv;
            }
        }
    }
    let mut grad_in = Tensor::zeros((n, c, h, w));
    for_each_chunk_mut(grad_in.data_mut(), plane, |chunk_idx, gi_plane| {
        let ch = chunk_idx % c;
        let k = gamma[ch] / (running_var[ch] + eps).sqrt();
        let base = chunk_idx * plane;
        for (j, g) in gi_plane.iter_mut().enumerate() {
            *g = k * gy[base + j];
        }
    });
    (grad_in, d_gamma, d_beta)
}
