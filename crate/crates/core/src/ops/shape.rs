//! Structural operators: channel concat/slice, nearest-neighbor upsampling,
//! and flat-index gather.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Concatenates along the channel axis. All inputs must share (n, h, w).
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
    let (n, _, h, w) = first.dims();
    let mut c_total = 0;
    for (i, t) in inputs.iter().enumerate() {
        let (tn, tc, th, tw) = t.dims();
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::Shape(format!(
                "concat input {i} has dims {:?}, expected (n={n}, h={h}, w={w})",
                t.dims()
            )));
        }
        c_total += tc;
    }
    let mut out = Tensor::zeros((n, c_total, h, w));
    let plane = h * w;
    for bn in 0..n {
        let mut c_off = 0;
        for t in inputs {
            let tc = t.dims().1;
            let src = &t.data()[bn * tc * plane..(bn + 1) * tc * plane];
            let dst_base = (bn * c_total + c_off) * plane;
            out.data_mut()[dst_base..dst_base + tc * plane].copy_from_slice(src);
            c_off += tc;
        }
    }
    Ok(out)
}

/// Extracts channels [start, start+len).
pub fn slice_channels(input: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims();
    if start + len > c || len == 0 {
        return Err(Error::Shape(format!(
            "channel slice [{start}, {}) out of range for {c} channels",
            start + len
        )));
    }
    let plane = h * w;
    let mut out = Tensor::zeros((n, len, h, w));
    for bn in 0..n {
        let src_base = (bn * c + start) * plane;
        let dst_base = bn * len * plane;
        out.data_mut()[dst_base..dst_base + len * plane]
            .copy_from_slice(&input.data()[src_base..src_base + len * plane]);
    }
    Ok(out)
}

/// Doubles h and w by nearest-neighbor replication.
pub fn upsample_nearest_2x(input: &Tensor) -> Tensor {
    let (n, c, h, w) = input.dims();
    let mut out = Tensor::zeros((n, c, 2 * h, 2 * w));
    for plane_idx in 0..n * c {
        let src_base = plane_idx * h * w;
        let dst_base = plane_idx * 4 * h * w;
        for y in 0..h {
            for x in 0..w {
                let v = input.data()[src_base + y * w + x];
                for dy in 0..2 {
                    let row = dst_base + (2 * y + dy) * 2 * w + 2 * x;
                    out.data_mut()[row] = v;
                    out.data_mut()[row + 1] = v;
                }
            }
        }
    }
    out
}

pub fn upsample_nearest_2x_backward(
    input_dims: (usize, usize, usize, usize),
    grad_out: &Tensor,
) -> Tensor {
    let (n, c, h, w) = input_dims;
    let mut grad_in = Tensor::zeros(input_dims);
    let g = grad_out.data();
    for plane_idx in 0..n * c {
        let src_base = plane_idx * 4 * h * w;
        let dst_base = plane_idx * h * w;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in 0..2 {
                    let row = src_base + (2 * y + dy) * 2 * w + 2 * x;
                    acc += g[row] + g[row + 1];
                }
                grad_in.data_mut()[dst_base + y * w + x] = acc;
            }
        }
    }
    grad_in
}

/// Gathers flat data indices into a (1, len, 1, 1) tensor.
pub fn gather(input: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= input.len() {
            return Err(Error::Shape(format!(
                "gather index {i} out of range for tensor of {} elements",
                input.len()
            )));
        }
        data.push(input.data()[i]);
    }
    Tensor::new((1, indices.len(), 1, 1), data)
}
