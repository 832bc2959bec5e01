//! SGD with momentum and weight decay, and the file-dataset training loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::{Executor, Recorder};
use crate::graph::Graph;
use crate::io::annot::AnnotatedSample;
use crate::io::image::load_image;
use crate::loss::{assign_targets_batch, total_loss, TargetMap};
use crate::model::Model;
use crate::params::{is_trainable, ParamStore, BN_MOMENTUM};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct OptimState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl OptimState {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimState {
            lr,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    pub fn velocity_of(&self, name: &str) -> Option<&[f64]> {
        self.velocity.get(name).map(Vec::as_slice)
    }
}

/// v <- momentum * v + (g + weight_decay * w); w <- w - lr * v.
/// Running statistics never receive gradients and are skipped.
pub fn sgd_step(
    store: &mut ParamStore,
    grads: &[(String, Tensor)],
    state: &mut OptimState,
) -> Result<()> {
    for (name, grad) in grads {
        if !grad.all_finite() {
            return Err(Error::Contract(format!(
                "non-finite gradient for parameter {name}; aborting step"
            )));
        }
        if !is_trainable(name) {
            continue;
        }
        let w = store.get_mut(name)?;
        if w.len() != grad.len() {
            return Err(Error::Shape(format!(
                "gradient length {} does not match parameter {name} ({})",
                grad.len(),
                w.len()
            )));
        }
        let v = state
            .velocity
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        for ((wv, vv), g) in w.data_mut().iter_mut().zip(v.iter_mut()).zip(grad.data()) {
            *vv = state.momentum * *vv + (g + state.weight_decay * *wv);
            *wv -= state.lr * *vv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Images per gradient step; batch statistics are computed jointly.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            seed: 0,
            batch_size: 1,
        }
    }
}

/// Stacks (1, c, h, w) tensors into one (k, c, h, w) batch.
pub fn stack_images(images: &[&Tensor]) -> Result<Tensor> {
    let (_, c, h, w) = images
        .first()
        .ok_or_else(|| Error::Validation("empty batch".into()))?
        .dims();
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if img.dims() != (1, c, h, w) {
            return Err(Error::Shape(format!(
                "batch stacking: image dims {:?} do not match (1, {c}, {h}, {w})",
                img.dims()
            )));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::new((images.len(), c, h, w), data)
}

/// Constant learning rate with x0.1 decay at 80% and 90% of total epochs.
pub fn lr_at(base: f64, epoch: usize, total_epochs: usize) -> f64 {
    let mut lr = base;
    if total_epochs > 0 {
        if epoch * 10 >= total_epochs * 8 {
            lr *= 0.1;
        }
        if epoch * 10 >= total_epochs * 9 {
            lr *= 0.1;
        }
    }
    lr
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub l_obj: f64,
    pub l_cls: f64,
    pub l_box: f64,
    pub l_total: f64,
    pub lr: f64,
}

/// Loss log CSV: `epoch,step,l_obj,l_cls,l_box,l_total,lr`.
pub fn format_loss_log(rows: &[LogRow]) -> String {
    let mut s = String::from("epoch,step,l_obj,l_cls,l_box,l_total,lr\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.epoch, r.step, r.l_obj, r.l_cls, r.l_box, r.l_total, r.lr
        );
    }
    s
}

pub struct TrainResult {
    pub rows: Vec<LogRow>,
    /// Snapshot of the epoch with the lowest mean total loss.
    pub best: ParamStore,
    pub best_epoch: usize,
    pub skipped_samples: usize,
    pub warnings: Vec<String>,
}

/// One gradient step on a single prepared sample; returns the loss row
/// fields and applies parameter and running-statistic updates.
pub fn train_step(
    model: &Model,
    store: &mut ParamStore,
    image: &Tensor,
    targets: &TargetMap,
    optim: &mut OptimState,
) -> Result<(f64, f64, f64, f64)> {
    let mut graph = Graph::new();
    let mut rec = Recorder::new(&mut graph, store, true);
    let img_id = rec.input(image.clone());
    let raws = model.forward(&mut rec, &img_id)?;
    let batch_stats = std::mem::take(&mut rec.batch_stats);
    let param_ids = rec.into_param_ids();

    let losses = total_loss(&mut graph, [raws.p8, raws.p16, raws.p32], targets, &model.cfg)?;
    let grads = graph.backward(losses.total_id)?;

    let grad_list: Vec<(String, Tensor)> = param_ids
        .iter()
        .filter(|(name, _)| is_trainable(name))
        .map(|(name, id)| (name.clone(), grads.of(&graph, *id)))
        .collect();
    sgd_step(store, &grad_list, optim)?;

    // Fold observed batch statistics into the running buffers.
    for bs in batch_stats {
        let rm = store.get_mut(&format!("{}.running_mean", bs.prefix))?;
        for (r, m) in rm.data_mut().iter_mut().zip(&bs.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let rv = store.get_mut(&format!("{}.running_var", bs.prefix))?;
        for (r, v) in rv.data_mut().iter_mut().zip(&bs.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
    Ok((losses.obj, losses.cls, losses.bbox, losses.total))
}

/// Rewrites every batch-norm running statistic with exact statistics
/// observed over the given images (training-mode forwards in batches,
/// moments combined across batches). This closes the gap between small-batch
/// training statistics and the momentum-averaged buffers inference uses;
/// with a single batch the replacement is exact.
pub fn recalibrate_bn(model: &Model, store: &mut ParamStore, images: &[Tensor]) -> Result<()> {
    if images.is_empty() {
        return Ok(());
    }
    const RECAL_BATCH: usize = 8;
    // accumulated (weight, sum of w*mean, sum of w*(var + mean^2)) per prefix
    let mut acc: BTreeMap<String, (f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for chunk in images.chunks(RECAL_BATCH) {
        let refs: Vec<&Tensor> = chunk.iter().collect();
        let batch = stack_images(&refs)?;
        let weight = chunk.len() as f64;
        let mut graph = Graph::new();
        let mut rec = Recorder::new(&mut graph, store, true);
        let img = rec.input(batch);
        model.forward(&mut rec, &img)?;
        for bs in rec.batch_stats {
            let entry = acc
                .entry(bs.prefix)
                .or_insert_with(|| (0.0, vec![0.0; bs.mean.len()], vec![0.0; bs.var.len()]));
            entry.0 += weight;
            for (a, m) in entry.1.iter_mut().zip(&bs.mean) {
                *a += weight * m;
            }
            for ((a, v), m) in entry.2.iter_mut().zip(&bs.var).zip(&bs.mean) {
                *a += weight * (v + m * m);
            }
        }
    }
    for (prefix, (total, mean_sum, sq_sum)) in acc {
        let means: Vec<f64> = mean_sum.iter().map(|s| s / total).collect();
        let rm = store.get_mut(&format!("{prefix}.running_mean"))?;
        rm.data_mut().copy_from_slice(&means);
        let rv = store.get_mut(&format!("{prefix}.running_var"))?;
        for ((r, s), m) in rv.data_mut().iter_mut().zip(&sq_sum).zip(&means) {
            *r = (s / total - m * m).max(0.0);
        }
    }
    Ok(())
}

/// Full training loop over a manifest's samples. Deterministic for a fixed
/// seed: sample order, initialization, and arithmetic are all fixed.
pub fn train(
    model: &Model,
    store: &mut ParamStore,
    samples: &[AnnotatedSample],
    tc: &TrainConfig,
) -> Result<TrainResult> {
    if samples.is_empty() {
        return Err(Error::Validation("training manifest is empty".into()));
    }
    if tc.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut warnings = Vec::new();
    let mut prepared: Vec<(Tensor, Vec<crate::io::annot::GtBox>)> = Vec::new();
    for s in samples {
        match load_image(&s.image, model.cfg.input_size) {
            Ok(img) => prepared.push((img, s.boxes.clone())),
            Err(e) => warnings.push(format!("skipping {}: {e}", s.image.display())),
        }
    }
    let skipped = samples.len() - prepared.len();
    if prepared.is_empty() {
        return Err(Error::Validation(format!(
            "all {} samples unreadable; aborting",
            samples.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut optim = OptimState::new(tc.lr, tc.momentum, tc.weight_decay);
    let mut rows = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut step = 0usize;

    for epoch in 0..tc.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut rng);
        optim.lr = lr_at(tc.lr, epoch, tc.epochs);
        let mut epoch_total = 0.0;
        let mut epoch_steps = 0usize;
        for chunk in order.chunks(tc.batch_size) {
            let images: Vec<&Tensor> = chunk.iter().map(|&i| &prepared[i].0).collect();
            let boxes: Vec<Vec<crate::io::annot::GtBox>> =
                chunk.iter().map(|&i| prepared[i].1.clone()).collect();
            let batch = stack_images(&images)?;
            let targets = assign_targets_batch(&boxes, &model.cfg)?;
            let (l_obj, l_cls, l_box, l_total) =
                train_step(model, store, &batch, &targets, &mut optim)?;
            rows.push(LogRow {
                epoch,
                step,
                l_obj,
                l_cls,
                l_box,
                l_total,
                lr: optim.lr,
            });
            epoch_total += l_total;
            epoch_steps += 1;
            step += 1;
        }
        let mean = epoch_total / epoch_steps as f64;
        if best.as_ref().is_none_or(|(b, _, _)| mean < *b) {
            best = Some((mean, epoch, store.clone()));
        }
    }
    let (_, best_epoch, mut best_store) = best.expect("at least one epoch");
    let images: Vec<Tensor> = prepared.iter().map(|(img, _)| img.clone()).collect();
    recalibrate_bn(model, store, &images)?;
    recalibrate_bn(model, &mut best_store, &images)?;
    Ok(TrainResult {
        rows,
        best: best_store,
        best_epoch,
        skipped_samples: skipped,
        warnings,
    })
}
