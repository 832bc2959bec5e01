//! AP50 / mAP50 evaluation: greedy per-image matching at IoU >= 0.5,
//! class-pooled precision/recall curves, all-point interpolated area.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{iou, Detection, PixelBox};

/// Detections and ground truths for one image.
#[derive(Debug, Clone, Default)]
pub struct EvalRecord {
    pub detections: Vec<Detection>,
    /// (class_id, box) pairs.
    pub ground_truths: Vec<(usize, PixelBox)>,
}

pub const MATCH_IOU: f64 = 0.5;

/// Greedy matching for one class on one image: detections in descending
/// score order are TP iff their best-IoU unmatched ground truth reaches the
/// threshold (inclusive). Returns (score, is_tp) per detection.
pub fn match_detections(
    dets: &[Detection],
    gts: &[PixelBox],
    iou_threshold: f64,
) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(dets.len());
    for idx in order {
        let det = &dets[idx];
        let mut best_iou = 0.0;
        let mut best_gt = None;
        for (gi, gt) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let v = iou(&det.bbox, gt);
            if v > best_iou {
                best_iou = v;
                best_gt = Some(gi);
            }
        }
        let is_tp = best_iou >= iou_threshold && best_gt.is_some();
        if is_tp {
            taken[best_gt.unwrap()] = true;
        }
        out.push((det.score, is_tp));
    }
    out
}

/// All-point interpolated area under the precision/recall curve given
/// ranked TP flags and the ground-truth count.
pub fn ap_from_flags(flags: &[(f64, bool)], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut recalls = Vec::with_capacity(flags.len());
    let mut precisions = Vec::with_capacity(flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, is_tp) in flags {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recalls.push(tp as f64 / num_gt as f64);
        precisions.push(tp as f64 / (tp + fp) as f64);
    }
    // monotone non-increasing precision envelope
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        if precisions[i] < precisions[i + 1] {
            precisions[i] = precisions[i + 1];
        }
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..recalls.len() {
        if recalls[i] > prev_recall {
            ap += (recalls[i] - prev_recall) * precisions[i];
            prev_recall = recalls[i];
        }
    }
    ap
}

/// AP50 of one class over a record set, or `None` when the class has no
/// ground truths (excluded from the mean).
pub fn ap50(records: &[EvalRecord], class_id: usize) -> Option<f64> {
    let mut flags: Vec<(f64, bool)> = Vec::new();
    let mut num_gt = 0usize;
    for rec in records {
        let dets: Vec<Detection> = rec
            .detections
            .iter()
            .filter(|d| d.class_id == class_id)
            .copied()
            .collect();
        let gts: Vec<PixelBox> = rec
            .ground_truths
            .iter()
            .filter(|(c, _)| *c == class_id)
            .map(|(_, b)| *b)
            .collect();
        num_gt += gts.len();
        flags.extend(match_detections(&dets, &gts, MATCH_IOU));
    }
    if num_gt == 0 {
        return None;
    }
    // pooled ranking across images (stable under score ties)
    flags.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    Some(ap_from_flags(&flags, num_gt))
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// (class_id, AP50); classes without ground truths carry `None`.
    pub per_class: Vec<(usize, Option<f64>)>,
    pub map50: f64,
}

/// Unweighted mean AP50 over classes that have ground truths.
pub fn map50(records: &[EvalRecord], num_classes: usize) -> Result<EvalReport> {
    let mut per_class = Vec::with_capacity(num_classes);
    let mut sum = 0.0;
    let mut evaluable = 0usize;
    for cls in 0..num_classes {
        let ap = ap50(records, cls);
        if let Some(v) = ap {
            sum += v;
            evaluable += 1;
        }
        per_class.push((cls, ap));
    }
    if evaluable == 0 {
        return Err(Error::Validation(
            "no class has ground truths; mAP undefined".into(),
        ));
    }
    Ok(EvalReport {
        per_class,
        map50: sum / evaluable as f64,
    })
}

impl EvalReport {
    pub fn render_text(&self) -> String {
        let mut s = String::from("class,AP50\n");
        for (cls, ap) in &self.per_class {
            match ap {
                Some(v) => {
                    let _ = writeln!(s, "{cls},{v:.6}");
                }
                None => {
                    let _ = writeln!(s, "{cls},skipped (no ground truths)");
                }
            }
        }
        let _ = writeln!(s, "mAP50,{:.6}", self.map50);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,ap50\n");
        for (cls, ap) in &self.per_class {
            match ap {
                Some(v) => {
                    let _ = writeln!(s, "{cls},{v}");
                }
                None => {
                    let _ = writeln!(s, "{cls},");
                }
            }
        }
        let _ = writeln!(s, "map50,{}", self.map50);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxp(x: f64, y: f64, s: f64) -> PixelBox {
        PixelBox { x_min: x, y_min: y, x_max: x + s, y_max: y + s }
    }

    fn det(class_id: usize, score: f64, b: PixelBox) -> Detection {
        Detection { class_id, score, bbox: b }
    }

    #[test]
    fn single_overlap_is_tp() {
        let gt = boxp(0.0, 0.0, 10.0);
        let d = det(0, 0.9, boxp(2.0, 0.0, 10.0)); // IoU = 8/12 > 0.5
        let flags = match_detections(&[d], &[gt], MATCH_IOU);
        assert_eq!(flags, vec![(0.9, true)]);
    }

    #[test]
    fn single_match_rule() {
        let gt = boxp(0.0, 0.0, 10.0);
        let d1 = det(0, 0.9, boxp(0.0, 0.0, 10.0));
        let d2 = det(0, 0.8, boxp(1.0, 1.0, 10.0));
        let flags = match_detections(&[d2, d1], &[gt], MATCH_IOU);
        // ordered by rank: higher score first
        assert_eq!(flags[0], (0.9, true));
        assert!(!flags[1].1);
    }

    #[test]
    fn iou_exactly_half_is_inclusive() {
        // 3x3 boxes shifted by 1: inter 6, union 12, IoU exactly 0.5
        let gt = boxp(0.0, 0.0, 3.0);
        let d = det(0, 0.9, boxp(1.0, 0.0, 3.0));
        assert_eq!(iou(&d.bbox, &gt), 0.5);
        let flags = match_detections(&[d], &[gt], MATCH_IOU);
        assert!(flags[0].1);
    }

    #[test]
    fn perfect_single_detection_ap_one() {
        let rec = EvalRecord {
            detections: vec![det(0, 0.9, boxp(0.0, 0.0, 10.0))],
            ground_truths: vec![(0, boxp(0.0, 0.0, 10.0))],
        };
        assert_eq!(ap50(&[rec], 0), Some(1.0));
    }

    #[test]
    fn no_detections_ap_zero() {
        let rec = EvalRecord {
            detections: vec![],
            ground_truths: vec![(0, boxp(0.0, 0.0, 10.0))],
        };
        assert_eq!(ap50(&[rec], 0), Some(0.0));
    }

    #[test]
    fn hand_case_tp_fp_tp_is_five_sixths() {
        // 2 GTs; ranked flags (TP, FP, TP) -> AP = 5/6
        let g1 = boxp(0.0, 0.0, 10.0);
        let g2 = boxp(100.0, 100.0, 10.0);
        let rec = EvalRecord {
            detections: vec![
                det(0, 0.9, g1),
                det(0, 0.8, boxp(50.0, 50.0, 10.0)),
                det(0, 0.7, g2),
            ],
            ground_truths: vec![(0, g1), (0, g2)],
        };
        let ap = ap50(&[rec], 0).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12, "ap = {ap}");
    }

    #[test]
    fn map_is_unweighted_mean() {
        let g1 = boxp(0.0, 0.0, 10.0);
        let g2 = boxp(100.0, 100.0, 10.0);
        // class 0 perfect (AP 1.0); class 1: FP above TP -> AP 0.5
        let rec = EvalRecord {
            detections: vec![
                det(0, 0.9, g1),
                det(1, 0.9, boxp(40.0, 40.0, 10.0)),
                det(1, 0.8, g2),
            ],
            ground_truths: vec![(0, g1), (1, g2)],
        };
        let report = map50(&[rec.clone()], 2).unwrap();
        assert!((report.map50 - 0.75).abs() < 1e-12);
        // class without GTs is skipped, not averaged as zero
        let report3 = map50(&[rec], 3).unwrap();
        assert!((report3.map50 - 0.75).abs() < 1e-12);
        assert!(report3.per_class[2].1.is_none());
    }

    #[test]
    fn no_ground_truths_anywhere_is_error() {
        let rec = EvalRecord::default();
        assert!(map50(&[rec], 2).is_err());
    }
}
