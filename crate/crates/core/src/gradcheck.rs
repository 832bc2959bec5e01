//! Central finite-difference verification of analytic gradients, plus the
//! named per-block check suite behind the `gradcheck` command.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Cbl, Efe, EfeSpec, GhostConv, GhostSpec, Rmf, RmfSpec};
use crate::error::{Error, Result};
use crate::exec::Recorder;
use crate::graph::{Graph, ValueId};
use crate::io::annot::GtBox;
use crate::loss::{assign_targets, total_loss};
use crate::model::{default_anchors, ModelConfig};
use crate::ops::{Activation, MaxPoolCfg};
use crate::params::{Initializer, ParamStore};
use crate::tensor::{Conv2dCfg, Tensor};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

fn run_check<F>(f: F, input: &Tensor, step: f64, grad_bias: f64, floor_frac: f64) -> Result<f64>
where
    F: Fn(&mut Graph, ValueId) -> Result<ValueId>,
{
    if step <= 0.0 {
        return Err(Error::Contract(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let eval = |t: &Tensor, requires_grad: bool| -> Result<(Graph, ValueId, ValueId)> {
        let mut g = Graph::new();
        let x = g.leaf(t.clone(), requires_grad);
        let loss = f(&mut g, x)?;
        if !g.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "finite_diff_check requires a scalar-valued map, got dims {:?}",
                g.value(loss).dims()
            )));
        }
        Ok((g, x, loss))
    };

    let (graph, x_id, loss_id) = eval(input, true)?;
    let base = graph.value(loss_id).value()?;
    let (graph2, _, loss2) = eval(input, true)?;
    if graph2.value(loss2).value()?.to_bits() != base.to_bits() {
        return Err(Error::Contract(
            "non-deterministic map: repeated evaluation produced different values".into(),
        ));
    }
    let grads = graph.backward(loss_id)?;
    let mut analytic = grads.of(&graph, x_id);
    if grad_bias != 0.0 {
        analytic.data_mut()[0] += grad_bias;
    }
    // Tiny denominator floor: 0 keeps the exact spec formula; the block
    // suite scales it to the gradient magnitude so sub-noise coordinates
    // (absolute error orders below the signal) cannot dominate the max.
    let grad_scale = analytic.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let denom_floor = (floor_frac * grad_scale).max(1e-12);

    let mut max_rel = 0.0f64;
    let mut probe = input.clone();
    for i in 0..input.len() {
        let orig = probe.data()[i];
        let mut rel_at = |h: f64| -> Result<f64> {
            probe.data_mut()[i] = orig + h;
            let (gp, _, lp) = eval(&probe, false)?;
            let plus = gp.value(lp).value()?;
            probe.data_mut()[i] = orig - h;
            let (gm, _, lm) = eval(&probe, false)?;
            let minus = gm.value(lm).value()?;
            probe.data_mut()[i] = orig;
            let cd = (plus - minus) / (2.0 * h);
            let an = analytic.data()[i];
            Ok((an - cd).abs() / an.abs().max(cd.abs()).max(denom_floor))
        };
        let mut rel = rel_at(step)?;
        // A large mismatch is either a genuine gradient error (persists at
        // every step) or the probe straddling a piecewise kink (vanishes as
        // the step shrinks); take the smallest over a short step ladder.
        if rel > 1e-8 {
            for h in [step / 10.0, step / 100.0] {
                if rel <= 1e-8 {
                    break;
                }
                rel = rel.min(rel_at(h)?);
            }
        }
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

/// Compares the analytic gradient of a tensor-to-scalar map against central
/// finite differences, returning the maximum relative error over all input
/// coordinates.
///
/// `f` must be deterministic; this is checked by evaluating the base point
/// twice and requiring bit-identical results.
pub fn finite_diff_check<F>(f: F, input: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, ValueId) -> Result<ValueId>,
{
    run_check(f, input, step, 0.0, 0.0)
}

/// Result of one named block check.
#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl BlockCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, dims: (usize, usize, usize, usize)) -> Tensor {
    let mut t = Tensor::zeros(dims);
    for v in t.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    t
}

/// Weighted sum so gradients are non-uniform: sum(y * r).
fn weighted_sum(g: &mut Graph, y: ValueId, r: &Tensor) -> Result<ValueId> {
    let rc = g.constant(r.clone());
    let prod = g.mul(y, rc)?;
    Ok(g.sum(prod))
}

const SINGLE_OP_THRESHOLD: f64 = 1e-6;
const BLOCK_THRESHOLD: f64 = 1e-5;

pub const ALL_BLOCKS: &[&str] = &[
    "conv2d",
    "conv2d_grouped",
    "depthwise_dilated",
    "maxpool",
    "batchnorm_train",
    "batchnorm_infer",
    "leaky_relu",
    "sigmoid",
    "structural",
    "cbl",
    "ghost_conv",
    "gd_conv",
    "efe",
    "rmf",
    "total_loss",
];

/// Runs the named checks (or all of them), returning one result per block.
/// `grad_bias`, when non-zero, perturbs the analytic gradient so the
/// negative control can demonstrate that corrupted gradients are caught.
pub fn run_suite(seed: u64, blocks: Option<&[String]>, grad_bias: f64) -> Result<Vec<BlockCheck>> {
    let selected: Vec<&str> = match blocks {
        None => ALL_BLOCKS.to_vec(),
        Some(list) => {
            let mut v = Vec::new();
            for b in list {
                let name = ALL_BLOCKS
                    .iter()
                    .find(|n| **n == b.as_str())
                    .ok_or_else(|| {
                        Error::Validation(format!(
                            "unknown gradcheck block {b:?}; valid: {}",
                            ALL_BLOCKS.join(", ")
                        ))
                    })?;
                v.push(*name);
            }
            v
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    for name in selected {
        let check = run_one(name, &mut rng, grad_bias)?;
        results.push(check);
    }
    Ok(results)
}

fn block_store(
    rng: &mut ChaCha8Rng,
    plans: &[crate::blocks::LayerPlan],
) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(rng.random());
    crate::blocks::init_layers(plans, &mut store, &mut init)?;
    // Random rather than fresh-identity batch norms exercise the affine path.
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        if name.ends_with(".gamma") || name.ends_with(".running_var") {
            for v in store.get_mut(&name)?.data_mut() {
                *v = rng.random_range(0.5..1.5);
            }
        } else if name.ends_with(".beta") || name.ends_with(".running_mean") {
            for v in store.get_mut(&name)?.data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    Ok(store)
}

fn run_one(name: &'static str, rng: &mut ChaCha8Rng, grad_bias: f64) -> Result<BlockCheck> {
    let done = |max_rel_err: f64, threshold: f64| -> BlockCheck {
        BlockCheck {
            name,
            max_rel_err,
            threshold,
        }
    };
    let check = match name {
        "conv2d" => {
            let x = rand_tensor(rng, (1, 3, 6, 6));
            let w = rand_tensor(rng, (4, 3, 3, 3));
            let b = rand_tensor(rng, (4, 1, 1, 1));
            let r = rand_tensor(rng, (1, 4, 6, 6));
            let cfg = Conv2dCfg::same(3, 1);
            let e_in = run_check(
                |g, x| {
                    let w = g.constant(w.clone());
                    let b = g.constant(b.clone());
                    let y = g.conv2d(x, w, Some(b), cfg)?;
                    weighted_sum(g, y, &r)
                },
                &x,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            let e_w = run_check(
                |g, wv| {
                    let xc = g.constant(x.clone());
                    let b = g.constant(b.clone());
                    let y = g.conv2d(xc, wv, Some(b), cfg)?;
                    weighted_sum(g, y, &r)
                },
                &w,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            let e_b = run_check(
                |g, bv| {
                    let xc = g.constant(x.clone());
                    let w = g.constant(w.clone());
                    let y = g.conv2d(xc, w, Some(bv), cfg)?;
                    weighted_sum(g, y, &r)
                },
                &b,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            done(e_in.max(e_w).max(e_b), SINGLE_OP_THRESHOLD)
        }
        "conv2d_grouped" => {
            let x = rand_tensor(rng, (2, 4, 7, 7));
            let w = rand_tensor(rng, (6, 2, 3, 3));
            let r = rand_tensor(rng, (2, 6, 4, 4));
            let cfg = Conv2dCfg {
                groups: 2,
                stride: 2,
                dilation: 1,
                padding: 1,
            };
            let e_in = run_check(
                |g, x| {
                    let w = g.constant(w.clone());
                    let y = g.conv2d(x, w, None, cfg)?;
                    weighted_sum(g, y, &r)
                },
                &x,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            let e_w = run_check(
                |g, wv| {
                    let xc = g.constant(x.clone());
                    let y = g.conv2d(xc, wv, None, cfg)?;
                    weighted_sum(g, y, &r)
                },
                &w,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            done(e_in.max(e_w), SINGLE_OP_THRESHOLD)
        }
        "depthwise_dilated" => {
            let x = rand_tensor(rng, (1, 4, 12, 12));
            let w = rand_tensor(rng, (4, 1, 3, 3));
            let r = rand_tensor(rng, (1, 4, 12, 12));
            let cfg = Conv2dCfg::same(3, 5).with_groups(4);
            let e_in = run_check(
                |g, x| {
                    let w = g.constant(w.clone());
                    let y = g.conv2d(x, w, None, cfg)?;
                    weighted_sum(g, y, &r)
                },
                &x,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            let e_w = run_check(
                |g, wv| {
                    let xc = g.constant(x.clone());
                    let y = g.conv2d(xc, wv, None, cfg)?;
                    weighted_sum(g, y, &r)
                },
                &w,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            done(e_in.max(e_w), SINGLE_OP_THRESHOLD)
        }
        "maxpool" => {
            let x = rand_tensor(rng, (1, 2, 6, 6));
            let r = rand_tensor(rng, (1, 2, 6, 6));
            let err = run_check(
                |g, x| {
                    let y = g.maxpool2d(x, MaxPoolCfg::same(3)?)?;
                    weighted_sum(g, y, &r)
                },
                &x,
                // keep the probe far from argmax ties
                1e-6,
                grad_bias,
                1e-3,
            )?;
            done(err, SINGLE_OP_THRESHOLD)
        }
        "batchnorm_train" => {
            let x = rand_tensor(rng, (2, 3, 4, 4));
            let gamma = rand_tensor(rng, (3, 1, 1, 1));
            let beta = rand_tensor(rng, (3, 1, 1, 1));
            let r = rand_tensor(rng, (2, 3, 4, 4));
            let e_in = run_check(
                |g, x| {
                    let ga = g.constant(gamma.clone());
                    let be = g.constant(beta.clone());
                    let (y, _, _) = g.batchnorm_train(x, ga, be, 1e-5)?;
                    weighted_sum(g, y, &r)
                },
                &x,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            let e_gamma = run_check(
                |g, ga| {
                    let xc = g.constant(x.clone());
                    let be = g.constant(beta.clone());
                    let (y, _, _) = g.batchnorm_train(xc, ga, be, 1e-5)?;
                    weighted_sum(g, y, &r)
                },
                &gamma,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            done(e_in.max(e_gamma), SINGLE_OP_THRESHOLD)
        }
        "batchnorm_infer" => {
            let x = rand_tensor(rng, (1, 3, 4, 4));
            let gamma = rand_tensor(rng, (3, 1, 1, 1));
            let beta = rand_tensor(rng, (3, 1, 1, 1));
            let rm = vec![0.1, -0.2, 0.05];
            let rv = vec![1.2, 0.7, 0.9];
            let r = rand_tensor(rng, (1, 3, 4, 4));
            let e_in = run_check(
                |g, x| {
                    let ga = g.constant(gamma.clone());
                    let be = g.constant(beta.clone());
                    let y = g.batchnorm_infer(x, ga, be, &rm, &rv, 1e-5)?;
                    weighted_sum(g, y, &r)
                },
                &x,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            let e_gamma = run_check(
                |g, ga| {
                    let xc = g.constant(x.clone());
                    let be = g.constant(beta.clone());
                    let y = g.batchnorm_infer(xc, ga, be, &rm, &rv, 1e-5)?;
                    weighted_sum(g, y, &r)
                },
                &gamma,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            done(e_in.max(e_gamma), SINGLE_OP_THRESHOLD)
        }
        "leaky_relu" => {
            let x = rand_tensor(rng, (1, 2, 5, 5));
            let r = rand_tensor(rng, (1, 2, 5, 5));
            let err = run_check(
                |g, x| {
                    let y = g.activation(x, Activation::LeakyRelu { slope: 0.1 })?;
                    weighted_sum(g, y, &r)
                },
                &x,
                1e-6,
                grad_bias,
                1e-3,
            )?;
            done(err, SINGLE_OP_THRESHOLD)
        }
        "sigmoid" => {
            let x = rand_tensor(rng, (1, 2, 5, 5));
            let r = rand_tensor(rng, (1, 2, 5, 5));
            let err = run_check(
                |g, x| {
                    let y = g.activation(x, Activation::Sigmoid)?;
                    weighted_sum(g, y, &r)
                },
                &x,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            done(err, SINGLE_OP_THRESHOLD)
        }
        "structural" => {
            // upsample -> concat with slice -> add
            let x = rand_tensor(rng, (1, 4, 3, 3));
            let r = rand_tensor(rng, (1, 6, 6, 6));
            let err = run_check(
                |g, x| {
                    let up = g.upsample2x(x);
                    let a = g.slice_channels(up, 0, 2)?;
                    let b = g.slice_channels(up, 2, 2)?;
                    let s = g.add(a, b)?;
                    let cat = g.concat(&[up, s])?;
                    // cat: 4 + 2 channels at 6x6
                    weighted_sum(g, cat, &r)
                },
                &x,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            done(err, SINGLE_OP_THRESHOLD)
        }
        "cbl" => {
            let cbl = Cbl::new("t.cbl", 3, 6, 3, 1)?;
            let store = block_store(rng, &cbl.plan())?;
            let x = rand_tensor(rng, (1, 3, 6, 6));
            let r = rand_tensor(rng, (1, 6, 6, 6));
            let err = run_check(
                |g, x| {
                    let mut rec = Recorder::new(g, &store, true);
                    let y = cbl.forward(&mut rec, &x)?;
                    weighted_sum(g, y, &r)
                },
                &x,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            done(err, BLOCK_THRESHOLD)
        }
        "ghost_conv" => {
            let gc = GhostConv::new("t.gc", GhostSpec::new(6, 8))?;
            let store = block_store(rng, &gc.plan())?;
            let x = rand_tensor(rng, (1, 6, 6, 6));
            let r = rand_tensor(rng, (1, 8, 6, 6));
            let w0 = store.get("t.gc.primary.weight")?.clone();
            let e_in = run_check(
                |g, x| {
                    let mut rec = Recorder::new(g, &store, true);
                    let y = gc.forward(&mut rec, &x)?;
                    weighted_sum(g, y, &r)
                },
                &x,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            let xc = rand_tensor(rng, (1, 6, 6, 6));
            let e_w = run_check(
                |g, wv| {
                    let mut rec = Recorder::new(g, &store, true);
                    rec.bind_param("t.gc.primary.weight", wv);
                    let x = rec.graph.leaf(xc.clone(), false);
                    let y = gc.forward(&mut rec, &x)?;
                    weighted_sum(g, y, &r)
                },
                &w0,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            done(e_in.max(e_w), BLOCK_THRESHOLD)
        }
        "gd_conv" => {
            let gc = GhostConv::new("t.gd", GhostSpec::new(6, 8).with_dilation(5))?;
            let store = block_store(rng, &gc.plan())?;
            let x = rand_tensor(rng, (1, 6, 12, 12));
            let r = rand_tensor(rng, (1, 8, 12, 12));
            let err = run_check(
                |g, x| {
                    let mut rec = Recorder::new(g, &store, true);
                    let y = gc.forward(&mut rec, &x)?;
                    weighted_sum(g, y, &r)
                },
                &x,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            done(err, BLOCK_THRESHOLD)
        }
        "efe" => {
            let efe = Efe::new("t.efe", EfeSpec::new(8, 8))?;
            let store = block_store(rng, &efe.plan())?;
            let x = rand_tensor(rng, (1, 8, 6, 6));
            let r = rand_tensor(rng, (1, 8, 6, 6));
            let w0 = store.get("t.efe.gc1.primary.weight")?.clone();
            let e_in = run_check(
                |g, x| {
                    let mut rec = Recorder::new(g, &store, true);
                    let y = efe.forward(&mut rec, &x)?;
                    weighted_sum(g, y, &r)
                },
                &x,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            let xc = rand_tensor(rng, (1, 8, 6, 6));
            let e_w = run_check(
                |g, wv| {
                    let mut rec = Recorder::new(g, &store, true);
                    rec.bind_param("t.efe.gc1.primary.weight", wv);
                    let x = rec.graph.leaf(xc.clone(), false);
                    let y = efe.forward(&mut rec, &x)?;
                    weighted_sum(g, y, &r)
                },
                &w0,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            done(e_in.max(e_w), BLOCK_THRESHOLD)
        }
        "rmf" => {
            let rmf = Rmf::new("t.rmf", RmfSpec::new(8))?;
            let store = block_store(rng, &rmf.plan())?;
            let x = rand_tensor(rng, (1, 8, 8, 8));
            let r = rand_tensor(rng, (1, 48, 8, 8));
            let err = run_check(
                |g, x| {
                    let mut rec = Recorder::new(g, &store, true);
                    let y = rmf.forward(&mut rec, &x)?;
                    weighted_sum(g, y, &r)
                },
                &x,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            done(err, BLOCK_THRESHOLD)
        }
        "total_loss" => {
            let cfg = ModelConfig {
                width_c: 8,
                num_classes: 3,
                input_size: (64, 64),
                anchors: default_anchors((64, 64)),
                ..ModelConfig::default()
            };
            let gts = [
                GtBox { class_id: 1, cx: 0.4, cy: 0.45, w: 0.3, h: 0.25 },
                GtBox { class_id: 0, cx: 0.75, cy: 0.7, w: 0.12, h: 0.2 },
            ];
            let targets = assign_targets(&gts, &cfg)?;
            // one flat raw vector reshaped into the three heads
            let per = cfg.head_out_channels();
            let sizes = [(64 / 8), (64 / 16), (64 / 32)];
            let total: usize = sizes.iter().map(|s| per * s * s).sum();
            let flat = rand_tensor(rng, (1, total, 1, 1));
            let err = run_check(
                |g, flat_id| {
                    let mut raws = Vec::new();
                    let mut off = 0;
                    for &s in &sizes {
                        let len = per * s * s;
                        let idx: Vec<usize> = (off..off + len).collect();
                        let gathered = g.gather(flat_id, idx)?;
                        // reinterpret the gathered (1, len, 1, 1) as (1, per, s, s)
                        let raw = g.reshape(gathered, (1, per, s, s))?;
                        raws.push(raw);
                        off += len;
                    }
                    let lv = total_loss(g, [raws[0], raws[1], raws[2]], &targets, &cfg)?;
                    Ok(lv.total_id)
                },
                &flat,
                DEFAULT_FD_STEP,
                grad_bias,
                1e-3,
            )?;
            done(err, SINGLE_OP_THRESHOLD)
        }
        other => {
            return Err(Error::Validation(format!("unknown gradcheck block {other:?}")));
        }
    };
    Ok(check)
}
