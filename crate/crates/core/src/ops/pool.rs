//! Max pooling with implicit -inf padding.

use crate::error::{Error, Result};
use crate::par::for_each_chunk_mut;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPoolCfg {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl MaxPoolCfg {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::Config("maxpool kernel and stride must be positive".into()));
        }
        // Padding is -inf; a window must always see at least one real element.
        if 2 * padding >= kernel {
            return Err(Error::Config(format!(
                "maxpool padding {padding} too large for kernel {kernel}"
            )));
        }
        Ok(MaxPoolCfg { kernel, stride, padding })
    }

    /// Stride-1 pooling that preserves spatial dims; kernel must be odd.
    pub fn same(kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "same-size maxpool requires an odd kernel, got {kernel}"
            )));
        }
        MaxPoolCfg::new(kernel, 1, (kernel - 1) / 2)
    }

    pub fn out_len(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.kernel > padded {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

/// Window maxima plus the flat input index of each winner (first maximum in
/// scan order), used by the backward pass.
pub fn maxpool2d(input: &Tensor, cfg: &MaxPoolCfg) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = input.dims();
    let (out_h, out_w) = match (cfg.out_len(h), cfg.out_len(w)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Shape(format!(
                "maxpool kernel {} larger than padded input {h}x{w} (padding {})",
                cfg.kernel, cfg.padding
            )))
        }
    };
    let plane = out_h * out_w;
    let mut argmax = vec![0usize; n * c * plane];
    let in_data = input.data();
    for_each_chunk_mut(&mut argmax, plane, |chunk_idx, arg_plane| {
        let in_base = chunk_idx * h * w;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = in_base;
                for ky in 0..cfg.kernel {
                    let iy = (oy * cfg.stride + ky) as isize - cfg.padding as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..cfg.kernel {
                        let ix = (ox * cfg.stride + kx) as isize - cfg.padding as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let idx = in_base + iy as usize * w + ix as usize;
                        let v = in_data[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                arg_plane[oy * out_w + ox] = best_idx;
            }
        }
    });
    let data: Vec<f64> = argmax.iter().map(|&i| in_data[i]).collect();
    let out = Tensor::new((n, c, out_h, out_w), data)?;
    Ok((out, argmax))
}

pub fn maxpool2d_backward(
    input_dims: (usize, usize, usize, usize),
    argmax: &[usize],
    grad_out: &Tensor,
) -> Tensor {
    let mut grad_in = Tensor::zeros(input_dims);
    let gi = grad_in.data_mut();
    for (g, &idx) in grad_out.data().iter().zip(argmax.iter()) {
        gi[idx] += g;
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_maximum() {
        let x = Tensor::new((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let cfg = MaxPoolCfg::new(2, 1, 0).unwrap();
        let (y, arg) = maxpool2d(&x, &cfg).unwrap();
        assert_eq!(y.dims(), (1, 1, 1, 1));
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn kernel_one_is_identity() {
        let x = Tensor::from_fn((1, 2, 3, 3), |_, c, y, x| (c * 9 + y * 3 + x) as f64 - 4.0);
        let cfg = MaxPoolCfg::new(1, 1, 0).unwrap();
        let (y, _) = maxpool2d(&x, &cfg).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn even_kernel_same_mode_rejected() {
        assert!(matches!(MaxPoolCfg::same(4), Err(Error::Config(_))));
        assert!(MaxPoolCfg::same(5).is_ok());
    }

    #[test]
    fn padding_never_wins() {
        // all-negative input: -inf padding must not be selected
        let x = Tensor::full((1, 1, 3, 3), -5.0);
        let cfg = MaxPoolCfg::same(3).unwrap();
        let (y, _) = maxpool2d(&x, &cfg).unwrap();
        assert!(y.data().iter().all(|&v| v == -5.0));
    }

    #[test]
    fn stride_two_downsamples() {
        let x = Tensor::from_fn((1, 1, 4, 4), |_, _, y, x| (y * 4 + x) as f64);
        let cfg = MaxPoolCfg::new(2, 2, 0).unwrap();
        let (y, _) = maxpool2d(&x, &cfg).unwrap();
        assert_eq!(y.dims(), (1, 1, 2, 2));
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn backward_routes_to_argmax() {
        let x = Tensor::new((1, 1, 2, 2), vec![1.0, 9.0, 3.0, 4.0]).unwrap();
        let cfg = MaxPoolCfg::new(2, 1, 0).unwrap();
        let (_, arg) = maxpool2d(&x, &cfg).unwrap();
        let g = maxpool2d_backward((1, 1, 2, 2), &arg, &Tensor::scalar(2.5));
        assert_eq!(g.data(), &[0.0, 2.5, 0.0, 0.0]);
    }
}
