//! Direct 2-D cross-correlation with stride, zero padding, dilation, and
//! groups, plus its reverse-mode kernels.

use crate::error::{Error, Result};
use crate::par::for_each_chunk_mut;
use crate::tensor::{Conv2dCfg, Tensor};

/// Output spatial size for one axis.
pub fn conv_out_len(input: usize, kernel: usize, cfg: &Conv2dCfg) -> Option<usize> {
    let span = cfg.dilation * (kernel - 1) + 1;
    let padded = input + 2 * cfg.padding;
    if span > padded {
        return None;
    }
    Some((padded - span) / cfg.stride + 1)
}

fn validate(input: &Tensor, weight: &Tensor, bias: Option<&[f64]>, cfg: &Conv2dCfg) -> Result<(usize, usize)> {
    let (_, c_in, h, w) = input.dims();
    let (c_out, c_in_g, k_h, k_w) = weight.dims();
    if cfg.groups == 0 || cfg.stride == 0 || cfg.dilation == 0 {
        return Err(Error::Config(
            "conv groups, stride, and dilation must be positive".into(),
        ));
    }
    if c_out % cfg.groups != 0 {
        return Err(Error::Config(format!(
            "conv output channels {c_out} not divisible by groups {}",
            cfg.groups
        )));
    }
    let declared_in = c_in_g * cfg.groups;
    if declared_in != c_in {
        return Err(Error::Shape(format!(
            "conv channel mismatch: input has {c_in} channels but weight \
             ({c_out}x{c_in_g}x{k_h}x{k_w}, groups={}) declares {declared_in}",
            cfg.groups
        )));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::Shape(format!(
                "conv bias length {} does not match output channels {c_out}",
                b.len()
            )));
        }
    }
    let out_h = conv_out_len(h, k_h, cfg);
    let out_w = conv_out_len(w, k_w, cfg);
    match (out_h, out_w) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(Error::Shape(format!(
            "conv kernel {k_h}x{k_w} (dilation {}) larger than padded input {}x{} (padding {})",
            cfg.dilation, h, w, cfg.padding
        ))),
    }
}

/// Dilated, strided, grouped cross-correlation plus optional per-channel bias.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f64]>,
    cfg: &Conv2dCfg,
) -> Result<Tensor> {
    let (out_h, out_w) = validate(input, weight, bias, cfg)?;
    let (n, _c_in, in_h, in_w) = input.dims();
    let (c_out, c_in_g, k_h, k_w) = weight.dims();
    let co_per_group = c_out / cfg.groups;
    let (stride, dilation, padding) = (cfg.stride, cfg.dilation, cfg.padding);

    let mut out = Tensor::zeros((n, c_out, out_h, out_w));
    let in_data = input.data();
    let w_data = weight.data();
    let plane = out_h * out_w;

    // Pointwise fast path: plain channel mixing over whole planes.
    if k_h == 1 && k_w == 1 && stride == 1 && padding == 0 {
        for_each_chunk_mut(out.data_mut(), plane, |chunk_idx, out_plane| {
            let bn = chunk_idx / c_out;
            let co = chunk_idx % c_out;
            let group = co / co_per_group;
            let ci_base = group * c_in_g;
            for cig in 0..c_in_g {
                let wv = w_data[co * c_in_g + cig];
                if wv == 0.0 {
                    continue;
                }
                let in_base = (bn * (c_in_g * cfg.groups) + ci_base + cig) * plane;
                let in_plane = &in_data[in_base..in_base + plane];
                for (o, &x) in out_plane.iter_mut().zip(in_plane) {
                    *o += wv * x;
                }
            }
            if let Some(b) = bias {
                let bv = b[co];
                if bv != 0.0 {
                    for o in out_plane.iter_mut() {
                        *o += bv;
                    }
                }
            }
        });
        return Ok(out);
    }

    // One output plane (n, co) per task; inner loops are fixed-order.
    for_each_chunk_mut(out.data_mut(), plane, |chunk_idx, out_plane| {
        let bn = chunk_idx / c_out;
        let co = chunk_idx % c_out;
        let group = co / co_per_group;
        let ci_base = group * c_in_g;
        for oy in 0..out_h {
            let out_row = &mut out_plane[oy * out_w..(oy + 1) * out_w];
            for ky in 0..k_h {
                let iy = (oy * stride + ky * dilation) as isize - padding as isize;
                if iy < 0 || iy as usize >= in_h {
                    continue;
                }
                let iy = iy as usize;
                for cig in 0..c_in_g {
                    let in_row_base = ((bn * (c_in_g * cfg.groups) + ci_base + cig) * in_h + iy) * in_w;
                    let w_base = ((co * c_in_g + cig) * k_h + ky) * k_w;
                    for kx in 0..k_w {
                        let wv = w_data[w_base + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let off = kx * dilation;
                        // ox range with 0 <= ox*stride + off - padding < in_w
                        let lo = padding.saturating_sub(off).div_ceil(stride).min(out_w);
                        let hi = if in_w + padding > off {
                            (((in_w + padding - off - 1) / stride) + 1).min(out_w)
                        } else {
                            0
                        };
                        let in_row = &in_data[in_row_base..in_row_base + in_w];
                        for ox in lo..hi {
                            let ix = ox * stride + off - padding;
                            out_row[ox] += wv * in_row[ix];
                        }
                    }
                }
            }
            if let Some(b) = bias {
                let bv = b[co];
                if bv != 0.0 {
                    for v in out_row.iter_mut() {
                        *v += bv;
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Gradients of `conv2d` with respect to input, weight, and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    cfg: &Conv2dCfg,
    grad_out: &Tensor,
    want_bias: bool,
) -> Result<(Tensor, Tensor, Option<Vec<f64>>)> {
    let (n, c_in, in_h, in_w) = input.dims();
    let (c_out, c_in_g, k_h, k_w) = weight.dims();
    let (gn, gc, out_h, out_w) = grad_out.dims();
    if gn != n || gc != c_out {
        return Err(Error::Shape(format!(
            "conv backward: grad dims ({gn},{gc},..) do not match output ({n},{c_out},..)"
        )));
    }
    let co_per_group = c_out / cfg.groups;
    let (stride, dilation, padding) = (cfg.stride, cfg.dilation, cfg.padding);
    let g_data = grad_out.data();
    let in_data = input.data();
    let w_data = weight.data();

    // Pointwise fast path mirrors the forward one.
    if k_h == 1 && k_w == 1 && stride == 1 && padding == 0 {
        let plane = out_h * out_w;
        let mut grad_in = Tensor::zeros((n, c_in, in_h, in_w));
        for_each_chunk_mut(grad_in.data_mut(), plane, |chunk_idx, gi_plane| {
            let bn = chunk_idx / c_in;
            let ci = chunk_idx % c_in;
            let group = ci / c_in_g;
            let cig = ci % c_in_g;
            for co_local in 0..co_per_group {
                let co = group * co_per_group + co_local;
                let wv = w_data[co * c_in_g + cig];
                if wv == 0.0 {
                    continue;
                }
                let g_base = (bn * c_out + co) * plane;
                let g_plane = &g_data[g_base..g_base + plane];
                for (gi, &g) in gi_plane.iter_mut().zip(g_plane) {
                    *gi += wv * g;
                }
            }
        });
        let mut grad_w = Tensor::zeros((c_out, c_in_g, 1, 1));
        for_each_chunk_mut(grad_w.data_mut(), c_in_g, |co, gw_row| {
            let group = co / co_per_group;
            let ci_base = group * c_in_g;
            for bn in 0..n {
                let g_base = (bn * c_out + co) * plane;
                let g_plane = &g_data[g_base..g_base + plane];
                for (cig, gw) in gw_row.iter_mut().enumerate() {
                    let in_base = (bn * c_in + ci_base + cig) * plane;
                    let in_plane = &in_data[in_base..in_base + plane];
                    let mut acc = 0.0;
                    for (&g, &x) in g_plane.iter().zip(in_plane) {
                        acc += g * x;
                    }
                    *gw += acc;
                }
            }
        });
        let grad_bias = if want_bias {
            let mut gb = vec![0.0; c_out];
            for bn in 0..n {
                for co in 0..c_out {
                    let base = (bn * c_out + co) * plane;
                    gb[co] += g_data[base..base + plane].iter().sum::<f64>();
                }
            }
            Some(gb)
        } else {
            None
        };
        return Ok((grad_in, grad_w, grad_bias));
    }

    // d/d(input): one input plane (n, ci) per task.
    let mut grad_in = Tensor::zeros((n, c_in, in_h, in_w));
    for_each_chunk_mut(grad_in.data_mut(), in_h * in_w, |chunk_idx, gi_plane| {
        let bn = chunk_idx / c_in;
        let ci = chunk_idx % c_in;
        let group = ci / c_in_g;
        let cig = ci % c_in_g;
        for co_local in 0..co_per_group {
            let co = group * co_per_group + co_local;
            let g_base = (bn * c_out + co) * out_h * out_w;
            for ky in 0..k_h {
                for oy in 0..out_h {
                    let iy = (oy * stride + ky * dilation) as isize - padding as isize;
                    if iy < 0 || iy as usize >= in_h {
                        continue;
                    }
                    let iy = iy as usize;
                    let g_row = &g_data[g_base + oy * out_w..g_base + (oy + 1) * out_w];
                    let gi_row = &mut gi_plane[iy * in_w..(iy + 1) * in_w];
                    let w_base = ((co * c_in_g + cig) * k_h + ky) * k_w;
                    for kx in 0..k_w {
                        let wv = w_data[w_base + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let off = kx * dilation;
                        let lo = padding.saturating_sub(off).div_ceil(stride).min(out_w);
                        let hi = if in_w + padding > off {
                            (((in_w + padding - off - 1) / stride) + 1).min(out_w)
                        } else {
                            0
                        };
                        for ox in lo..hi {
                            let ix = ox * stride + off - padding;
                            gi_row[ix] += wv * g_row[ox];
                        }
                    }
                }
            }
        }
    });

    // d/d(weight): one filter (co) per task.
    let mut grad_w = Tensor::zeros((c_out, c_in_g, k_h, k_w));
    for_each_chunk_mut(grad_w.data_mut(), c_in_g * k_h * k_w, |co, gw_filter| {
        let group = co / co_per_group;
        let ci_base = group * c_in_g;
        for bn in 0..n {
            let g_base = (bn * c_out + co) * out_h * out_w;
            for cig in 0..c_in_g {
                let in_base = (bn * c_in + ci_base + cig) * in_h * in_w;
                for ky in 0..k_h {
                    for kx in 0..k_w {
                        let off = kx * dilation;
                        let lo = padding.saturating_sub(off).div_ceil(stride).min(out_w);
                        let hi = if in_w + padding > off {
                            (((in_w + padding - off - 1) / stride) + 1).min(out_w)
                        } else {
                            0
                        };
                        let mut acc = 0.0;
                        for oy in 0..out_h {
                            let iy =
                                (oy * stride + ky * dilation) as isize - padding as isize;
                            if iy < 0 || iy as usize >= in_h {
                                continue;
                            }
                            let iy = iy as usize;
                            let g_row = &g_data[g_base + oy * out_w..g_base + (oy + 1) * out_w];
                            let in_row =
                                &in_data[in_base + iy * in_w..in_base + (iy + 1) * in_w];
                            for ox in lo..hi {
                                acc += g_row[ox] * in_row[ox * stride + off - padding];
                            }
                        }
                        gw_filter[(cig * k_h + ky) * k_w + kx] += acc;
                    }
                }
            }
        }
    });

    let grad_bias = if want_bias {
        let mut gb = vec![0.0; c_out];
        for bn in 0..n {
            for co in 0..c_out {
                let base = (bn * c_out + co) * out_h * out_w;
                let mut acc = 0.0;
                for v in &g_data[base..base + out_h * out_w] {
                    acc += v;
                }
                gb[co] += acc;
            }
        }
        Some(gb)
    } else {
        None
    };

    Ok((grad_in, grad_w, grad_bias))
}
