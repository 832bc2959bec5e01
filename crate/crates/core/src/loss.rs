//! Training losses: binary cross entropy for objectness/class maps, IoU for
//! box regression, anchor target assignment, and the combined total.

use crate::error::{Error, Result};
use crate::graph::{Graph, ValueId};
use crate::io::annot::GtBox;
use crate::model::{iou, ModelConfig, PixelBox};
use crate::ops::Activation;
use crate::tensor::Tensor;

/// Probability clamp for the log terms.
pub const BCE_EPS: f64 = 1e-7;

/// Mean of -[y ln x + (1-y) ln(1-x)] over unmasked elements, with
/// predictions clamped to [BCE_EPS, 1-BCE_EPS]. An all-masked input is 0.
pub fn bce_loss(pred: &Tensor, target: &Tensor, mask: Option<&Tensor>) -> Result<f64> {
    if !pred.same_dims(target) {
        return Err(Error::Shape(format!(
            "bce: prediction dims {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    if let Some(m) = mask {
        if !m.same_dims(pred) {
            return Err(Error::Shape("bce: mask dims differ from prediction".into()));
        }
    }
    let mut total = 0.0;
    let mut count = 0.0;
    for i in 0..pred.len() {
        let w = mask.map_or(1.0, |m| m.data()[i]);
        if w == 0.0 {
            continue;
        }
        let x = pred.data()[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
        let y = target.data()[i];
        total += w * -(y * x.ln() + (1.0 - y) * (1.0 - x).ln());
        count += w;
    }
    if count == 0.0 {
        Ok(0.0)
    } else {
        Ok(total / count)
    }
}

/// 1 - IoU, in [0, 1].
pub fn iou_loss(pred: &PixelBox, gt: &PixelBox) -> f64 {
    1.0 - iou(pred, gt)
}

/// One positive assignment: the raw-map location responsible for a box.
#[derive(Debug, Clone)]
pub struct Positive {
    /// Batch image index.
    pub image: usize,
    /// Anchor slot within the head (0..3).
    pub anchor: usize,
    /// (row, col) grid cell.
    pub cell: (usize, usize),
    pub class_id: usize,
    /// Ground truth in input pixels.
    pub gt: PixelBox,
}

/// Targets for one head over a whole batch.
#[derive(Debug, Clone)]
pub struct HeadTargets {
    pub grid: (usize, usize),
    pub positives: Vec<Positive>,
    /// 1.0 objectness targets per (image, anchor, row, col), flattened.
    pub obj_target: Vec<f64>,
    /// 0.0 where the cell is ignored for objectness, 1.0 otherwise.
    pub obj_mask: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TargetMap {
    pub batch: usize,
    pub heads: [HeadTargets; 3],
}

impl TargetMap {
    pub fn total_positives(&self) -> usize {
        self.heads.iter().map(|h| h.positives.len()).sum()
    }
}

/// IoU of two co-centered (w, h) shapes.
fn shape_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    let union = a.0 * a.1 + b.0 * b.1 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

const IGNORE_SHAPE_IOU: f64 = 0.5;

/// Assigns every ground-truth box to the (head, cell, best-shape anchor)
/// triple; anchors whose shape-IoU exceeds 0.5 without being best are
/// ignored for objectness at the box's cell on their own head.
pub fn assign_targets(annotations: &[GtBox], cfg: &ModelConfig) -> Result<TargetMap> {
    assign_targets_batch(&[annotations.to_vec()], cfg)
}

/// Batched target assignment: one annotation list per image in the batch.
pub fn assign_targets_batch(per_image: &[Vec<GtBox>], cfg: &ModelConfig) -> Result<TargetMap> {
    let (ih, iw) = cfg.input_size;
    let batch = per_image.len();
    let mut heads: Vec<HeadTargets> = cfg
        .strides
        .iter()
        .map(|s| {
            let grid = (ih / s, iw / s);
            HeadTargets {
                grid,
                positives: Vec::new(),
                obj_target: vec![0.0; batch * 3 * grid.0 * grid.1],
                obj_mask: vec![1.0; batch * 3 * grid.0 * grid.1],
            }
        })
        .collect();

    let flat = |grid: (usize, usize), img: usize, a: usize, i: usize, j: usize| {
        ((img * 3 + a) * grid.0 + i) * grid.1 + j
    };
    let cell_of = |v: f64, extent: usize, stride: usize, cells: usize| -> usize {
        (((v * extent as f64) / stride as f64) as usize).min(cells - 1)
    };

    let mut ignores: Vec<(usize, usize)> = Vec::new(); // (head, flat index)
    for (img, annotations) in per_image.iter().enumerate() {
        for (gi, gt) in annotations.iter().enumerate() {
            if !(0.0..=1.0).contains(&gt.cx) || !(0.0..=1.0).contains(&gt.cy) {
                return Err(Error::Validation(format!(
                    "box {gi}: center ({}, {}) outside the image",
                    gt.cx, gt.cy
                )));
            }
            let gw = gt.w * iw as f64;
            let gh = gt.h * ih as f64;
            let mut best = 0usize;
            let mut best_iou = -1.0;
            for (k, &anchor) in cfg.anchors.iter().enumerate() {
                let si = shape_iou((gw, gh), anchor);
                if si > best_iou {
                    best_iou = si;
                    best = k;
                }
            }
            let head = best / 3;
            let a = best % 3;
            let stride = cfg.strides[head];
            let grid = heads[head].grid;
            let i = cell_of(gt.cy, ih, stride, grid.0);
            let j = cell_of(gt.cx, iw, stride, grid.1);
            let idx = flat(grid, img, a, i, j);
            heads[head].obj_target[idx] = 1.0;
            heads[head].positives.push(Positive {
                image: img,
                anchor: a,
                cell: (i, j),
                class_id: gt.class_id,
                gt: gt.to_pixels((ih, iw)),
            });

            for (k, &anchor) in cfg.anchors.iter().enumerate() {
                if k == best {
                    continue;
                }
                if shape_iou((gw, gh), anchor) > IGNORE_SHAPE_IOU {
                    let h2 = k / 3;
                    let a2 = k % 3;
                    let stride2 = cfg.strides[h2];
                    let grid2 = heads[h2].grid;
                    let i2 = cell_of(gt.cy, ih, stride2, grid2.0);
                    let j2 = cell_of(gt.cx, iw, stride2, grid2.1);
                    ignores.push((h2, flat(grid2, img, a2, i2, j2)));
                }
            }
        }
    }
    // Positives always win over ignores, regardless of annotation order.
    for (h, idx) in ignores {
        if heads[h].obj_target[idx] == 0.0 {
            heads[h].obj_mask[idx] = 0.0;
        }
    }
    let mut it = heads.into_iter();
    Ok(TargetMap {
        batch,
        heads: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
    })
}

/// Loss components; `total` stays on the tape for backward.
pub struct LossValues {
    pub total_id: ValueId,
    pub obj: f64,
    pub cls: f64,
    pub bbox: f64,
    pub total: f64,
}

struct MaskedBceSums {
    /// Sum over unmasked elements of -[y ln x + (1-y) ln(1-x)].
    neg_sum: ValueId,
    count: f64,
}

/// Builds sum(mask * [y ln x + (1-y) ln(1-x)]) on the graph; the caller
/// negates and normalizes.
fn bce_sum_on_graph(
    g: &mut Graph,
    logits: ValueId,
    target: &Tensor,
    mask: Option<&Tensor>,
) -> Result<MaskedBceSums> {
    let p = g.activation(logits, Activation::Sigmoid)?;
    let p = g.clamp(p, BCE_EPS, 1.0 - BCE_EPS);
    let ln_p = g.ln(p);
    let one_minus_p = g.affine(p, -1.0, 1.0);
    let ln_1mp = g.ln(one_minus_p);
    let t = g.constant(target.clone());
    let not_t = g.affine(t, -1.0, 1.0);
    let pos_term = g.mul(t, ln_p)?;
    let neg_term = g.mul(not_t, ln_1mp)?;
    let mut term = g.add(pos_term, neg_term)?;
    let count = match mask {
        Some(m) => {
            let mc = g.constant(m.clone());
            term = g.mul(term, mc)?;
            m.data().iter().sum()
        }
        None => target.len() as f64,
    };
    let neg_sum = g.sum(term);
    Ok(MaskedBceSums { neg_sum, count })
}

/// Assembles L_total = L_obj + L_cls + L_box from raw head outputs
/// (objectness/class terms pooled across heads, box IoU over positives).
pub fn total_loss(
    g: &mut Graph,
    raws: [ValueId; 3],
    targets: &TargetMap,
    cfg: &ModelConfig,
) -> Result<LossValues> {
    let per_anchor = 5 + cfg.num_classes;
    let zero = g.constant(Tensor::scalar(0.0));

    // Objectness: balanced BCE so a handful of positive slots is not washed
    // out by the sea of negatives — the positive-slot mean and the
    // non-ignored-negative mean each contribute with unit weight.
    let mut pos_sums: Vec<MaskedBceSums> = Vec::new();
    let mut neg_sums: Vec<MaskedBceSums> = Vec::new();
    for (h, &raw) in raws.iter().enumerate() {
        let ht = &targets.heads[h];
        let (gh, gw) = ht.grid;
        let mut slices = Vec::new();
        for a in 0..3 {
            slices.push(g.slice_channels(raw, a * per_anchor + 4, 1)?);
        }
        let obj_logits = g.concat(&slices)?;
        let n = targets.batch;
        let t = Tensor::new((n, 3, gh, gw), ht.obj_target.clone())?;
        let pos_mask = Tensor::new((n, 3, gh, gw), ht.obj_target.clone())?;
        let neg_mask_vals: Vec<f64> = ht
            .obj_target
            .iter()
            .zip(&ht.obj_mask)
            .map(|(t, m)| (1.0 - t) * m)
            .collect();
        let neg_mask = Tensor::new((n, 3, gh, gw), neg_mask_vals)?;
        pos_sums.push(bce_sum_on_graph(g, obj_logits, &t, Some(&pos_mask))?);
        neg_sums.push(bce_sum_on_graph(g, obj_logits, &t, Some(&neg_mask))?);
    }
    let mut l_obj = zero;
    for sums in [pos_sums, neg_sums] {
        let count: f64 = sums.iter().map(|s| s.count).sum();
        if count == 0.0 {
            continue;
        }
        let mut total = zero;
        for s in &sums {
            total = g.add(total, s.neg_sum)?;
        }
        let mean = g.affine(total, -1.0 / count, 0.0);
        l_obj = g.add(l_obj, mean)?;
    }

    // Class: BCE over gathered one-hot vectors at positive cells.
    let mut cls_sum = None;
    let mut cls_count = 0.0;
    for (h, &raw) in raws.iter().enumerate() {
        let ht = &targets.heads[h];
        if ht.positives.is_empty() {
            continue;
        }
        let raw_tensor = g.value(raw).clone();
        let mut indices = Vec::new();
        let mut one_hot = Vec::new();
        for p in &ht.positives {
            for cls in 0..cfg.num_classes {
                indices.push(raw_tensor.index(p.image, p.anchor * per_anchor + 5 + cls, p.cell.0, p.cell.1));
                one_hot.push(if cls == p.class_id { 1.0 } else { 0.0 });
            }
        }
        let gathered = g.gather(raw, indices)?;
        let t = Tensor::new((1, one_hot.len(), 1, 1), one_hot.clone())?;
        let sums = bce_sum_on_graph(g, gathered, &t, None)?;
        cls_count += sums.count;
        cls_sum = Some(match cls_sum {
            None => sums.neg_sum,
            Some(acc) => g.add(acc, sums.neg_sum)?,
        });
    }
    let l_cls = match cls_sum {
        Some(s) => g.affine(s, -1.0 / cls_count, 0.0),
        None => zero,
    };

    // Box: mean (1 - IoU) over positives, differentiable through decode.
    let mut iou_vecs = Vec::new();
    let mut total_pos = 0usize;
    for (h, &raw) in raws.iter().enumerate() {
        let ht = &targets.heads[h];
        if ht.positives.is_empty() {
            continue;
        }
        total_pos += ht.positives.len();
        let stride = cfg.strides[h] as f64;
        let anchors = cfg.head_anchors(h);
        let raw_tensor = g.value(raw).clone();
        let p_count = ht.positives.len();
        let idx = |off: usize| -> Vec<usize> {
            ht.positives
                .iter()
                .map(|p| raw_tensor.index(p.image, p.anchor * per_anchor + off, p.cell.0, p.cell.1))
                .collect()
        };
        let (ix, iy, iw_, ih_) = (idx(0), idx(1), idx(2), idx(3));
        let chan = |vals: Vec<f64>| Tensor::new((1, p_count, 1, 1), vals).unwrap();
        let jv = chan(ht.positives.iter().map(|p| p.cell.1 as f64).collect());
        let iv = chan(ht.positives.iter().map(|p| p.cell.0 as f64).collect());
        let aw = chan(ht.positives.iter().map(|p| anchors[p.anchor].0).collect());
        let ah = chan(ht.positives.iter().map(|p| anchors[p.anchor].1).collect());
        let gx1 = chan(ht.positives.iter().map(|p| p.gt.x_min).collect());
        let gy1 = chan(ht.positives.iter().map(|p| p.gt.y_min).collect());
        let gx2 = chan(ht.positives.iter().map(|p| p.gt.x_max).collect());
        let gy2 = chan(ht.positives.iter().map(|p| p.gt.y_max).collect());
        let garea = chan(ht.positives.iter().map(|p| p.gt.area()).collect());
        let zeros = chan(vec![0.0; p_count]);

        let tx = g.gather(raw, ix)?;
        let ty = g.gather(raw, iy)?;
        let tw = g.gather(raw, iw_)?;
        let th = g.gather(raw, ih_)?;
        let sx = g.activation(tx, Activation::Sigmoid)?;
        let sy = g.activation(ty, Activation::Sigmoid)?;
        let jc = g.constant(jv);
        let ic = g.constant(iv);
        let cxs = g.add(sx, jc)?;
        let cx = g.affine(cxs, stride, 0.0);
        let cys = g.add(sy, ic)?;
        let cy = g.affine(cys, stride, 0.0);
        let ew = g.exp(tw);
        let eh = g.exp(th);
        let awc = g.constant(aw);
        let ahc = g.constant(ah);
        let bw = g.mul(awc, ew)?;
        let bh = g.mul(ahc, eh)?;
        let hw = g.affine(bw, 0.5, 0.0);
        let hh = g.affine(bh, 0.5, 0.0);
        let x1 = g.sub(cx, hw)?;
        let x2 = g.add(cx, hw)?;
        let y1 = g.sub(cy, hh)?;
        let y2 = g.add(cy, hh)?;

        let gx1c = g.constant(gx1);
        let gy1c = g.constant(gy1);
        let gx2c = g.constant(gx2);
        let gy2c = g.constant(gy2);
        let ix1 = g.max(x1, gx1c)?;
        let iy1 = g.max(y1, gy1c)?;
        let ix2 = g.min(x2, gx2c)?;
        let iy2 = g.min(y2, gy2c)?;
        let iw_len = g.sub(ix2, ix1)?;
        let ih_len = g.sub(iy2, iy1)?;
        let zc = g.constant(zeros);
        let iw_pos = g.max(iw_len, zc)?;
        let ih_pos = g.max(ih_len, zc)?;
        let inter = g.mul(iw_pos, ih_pos)?;
        let pw = g.sub(x2, x1)?;
        let ph = g.sub(y2, y1)?;
        let parea = g.mul(pw, ph)?;
        let gareac = g.constant(garea);
        let both = g.add(parea, gareac)?;
        let union = g.sub(both, inter)?;
        let iou_v = g.div(inter, union)?;
        iou_vecs.push(iou_v);
    }
    let l_box = if iou_vecs.is_empty() {
        zero
    } else {
        let all = if iou_vecs.len() == 1 {
            iou_vecs[0]
        } else {
            g.concat(&iou_vecs)?
        };
        let one_minus = g.affine(all, -1.0, 1.0);
        let s = g.sum(one_minus);
        g.affine(s, 1.0 / total_pos as f64, 0.0)
    };

    let oc = g.add(l_obj, l_cls)?;
    let total_id = g.add(oc, l_box)?;
    Ok(LossValues {
        total_id,
        obj: g.value(l_obj).value()?,
        cls: g.value(l_cls).value()?,
        bbox: g.value(l_box).value()?,
        total: g.value(total_id).value()?,
    })
}
