//! Brute-force reference implementations shared by the integration tests.
//! These stay deliberately naive (plain nested loops over the definition)
//! and never call into the library's kernels.
//!
//! Not every test binary uses every helper.
#![allow(dead_code)]

use lf_yolo_core::tensor::{Conv2dCfg, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Direct-summation convolution: six nested loops over the definition of a
/// dilated, strided, grouped cross-correlation with zero padding.
pub fn conv2d_oracle(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f64]>,
    cfg: &Conv2dCfg,
) -> Tensor {
    let (n, _c_in, h, w) = input.dims();
    let (c_out, c_in_g, k_h, k_w) = weight.dims();
    let out_h = (h + 2 * cfg.padding - cfg.dilation * (k_h - 1) - 1) / cfg.stride + 1;
    let out_w = (w + 2 * cfg.padding - cfg.dilation * (k_w - 1) - 1) / cfg.stride + 1;
    let co_per_group = c_out / cfg.groups;
    let mut out = Tensor::zeros((n, c_out, out_h, out_w));
    for bn in 0..n {
        for co in 0..c_out {
            let group = co / co_per_group;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = bias.map_or(0.0, |b| b[co]);
                    for cig in 0..c_in_g {
                        let ci = group * c_in_g + cig;
                        for ky in 0..k_h {
                            for kx in 0..k_w {
                                let iy = oy as isize * cfg.stride as isize
                                    + ky as isize * cfg.dilation as isize
                                    - cfg.padding as isize;
                                let ix = ox as isize * cfg.stride as isize
                                    + kx as isize * cfg.dilation as isize
                                    - cfg.padding as isize;
                                if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                    acc += input.get(bn, ci, iy as usize, ix as usize)
                                        * weight.get(co, cig, ky, kx);
                                }
                            }
                        }
                    }
                    out.set(bn, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Sliding-window maximum with -inf padding.
pub fn maxpool_oracle(input: &Tensor, kernel: usize, stride: usize, padding: usize) -> Tensor {
    let (n, c, h, w) = input.dims();
    let out_h = (h + 2 * padding - kernel) / stride + 1;
    let out_w = (w + 2 * padding - kernel) / stride + 1;
    let mut out = Tensor::zeros((n, c, out_h, out_w));
    for bn in 0..n {
        for ch in 0..c {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let iy = oy as isize * stride as isize + ky as isize - padding as isize;
                            let ix = ox as isize * stride as isize + kx as isize - padding as isize;
                            if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                best = best.max(input.get(bn, ch, iy as usize, ix as usize));
                            }
                        }
                    }
                    out.set(bn, ch, oy, ox, best);
                }
            }
        }
    }
    out
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, dims: (usize, usize, usize, usize)) -> Tensor {
    let mut t = Tensor::zeros(dims);
    for v in t.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    t
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Max relative element-wise deviation.
pub fn max_rel_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// One synthetic training image: a bright class-dependent shape on a dark
/// background, written as binary PGM next to its annotation file.
pub fn write_synthetic_sample(
    dir: &std::path::Path,
    name: &str,
    size: usize,
    class_id: usize,
    center: (f64, f64),
    box_wh: (f64, f64),
) -> std::path::PathBuf {
    let (cx, cy) = center;
    let (bw, bh) = box_wh;
    let mut pixels = vec![30u8; size * size];
    let x0 = ((cx - bw / 2.0) * size as f64).round() as isize;
    let x1 = ((cx + bw / 2.0) * size as f64).round() as isize;
    let y0 = ((cy - bh / 2.0) * size as f64).round() as isize;
    let y1 = ((cy + bh / 2.0) * size as f64).round() as isize;
    for y in y0.max(0)..y1.min(size as isize) {
        for x in x0.max(0)..x1.min(size as isize) {
            let inside = match class_id {
                // class 0: filled bright square
                0 => true,
                // class 1: bright diamond (L1 ball)
                _ => {
                    let fx = (x as f64 - (x0 + x1) as f64 / 2.0).abs() / ((x1 - x0) as f64 / 2.0);
                    let fy = (y as f64 - (y0 + y1) as f64 / 2.0).abs() / ((y1 - y0) as f64 / 2.0);
                    fx + fy <= 1.0
                }
            };
            if inside {
                pixels[y as usize * size + x as usize] = if class_id == 0 { 230 } else { 170 };
            }
        }
    }
    let img_path = dir.join(format!("{name}.pgm"));
    let mut bytes = format!("P5\n{size} {size}\n255\n").into_bytes();
    bytes.extend_from_slice(&pixels);
    std::fs::write(&img_path, bytes).unwrap();
    let ann = format!("{class_id} {cx} {cy} {bw} {bh}\n");
    std::fs::write(dir.join(format!("{name}.txt")), ann).unwrap();
    img_path
}

/// Writes a manifest referencing the given image paths (relative names).
pub fn write_manifest(dir: &std::path::Path, names: &[&str]) -> std::path::PathBuf {
    let manifest = dir.join("train.txt");
    let body: String = names.iter().map(|n| format!("{n}.pgm\n")).collect();
    std::fs::write(&manifest, body).unwrap();
    manifest
}
