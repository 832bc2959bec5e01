//! Full detector: stem, five pooled stages of feature blocks, the multiscale
//! neck, three prediction heads, and raw-output decoding into detections.

use crate::blocks::{Cbl, Efe, EfeSpec, GhostConv, GhostSpec, LayerKind, LayerPlan, Rmf, RmfSpec};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::ops::{sigmoid, MaxPoolCfg};
use crate::params::{Initializer, ParamStore};
use crate::tensor::{Conv2dCfg, Tensor};

/// Canonical nine-anchor prior set, defined at a 416x416 reference
/// resolution and rescaled to the configured input size.
const BASE_ANCHORS: [(f64, f64); 9] = [
    (10.0, 13.0),
    (16.0, 30.0),
    (33.0, 23.0),
    (30.0, 61.0),
    (62.0, 45.0),
    (59.0, 119.0),
    (116.0, 90.0),
    (156.0, 198.0),
    (373.0, 326.0),
];
const ANCHOR_REFERENCE_SIZE: f64 = 416.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Width constant C; stage widths are multiples of it.
    pub width_c: usize,
    pub num_classes: usize,
    /// (height, width); both must be divisible by 32.
    pub input_size: (usize, usize),
    /// Nine (w, h) anchor priors in input pixels, ascending by area;
    /// chunks of three go to the stride-8/16/32 heads in that order.
    pub anchors: Vec<(f64, f64)>,
    pub strides: [usize; 3],
    pub conf_threshold: f64,
    pub nms_iou: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let mut cfg = ModelConfig {
            width_c: 32,
            num_classes: 3,
            input_size: (320, 320),
            anchors: Vec::new(),
            strides: [8, 16, 32],
            conf_threshold: 0.25,
            nms_iou: 0.45,
        };
        cfg.anchors = default_anchors(cfg.input_size);
        cfg
    }
}

/// The base anchor set rescaled to an input size.
pub fn default_anchors(input_size: (usize, usize)) -> Vec<(f64, f64)> {
    let sy = input_size.0 as f64 / ANCHOR_REFERENCE_SIZE;
    let sx = input_size.1 as f64 / ANCHOR_REFERENCE_SIZE;
    BASE_ANCHORS.iter().map(|&(w, h)| (w * sx, h * sy)).collect()
}

impl ModelConfig {
    /// Applies the width multiplier n (n = 1 means C = 32).
    pub fn with_multiplier(mut self, n: f64) -> Result<Self> {
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Config(format!("width multiplier must be positive, got {n}")));
        }
        let c = (n * 32.0).round() as usize;
        self.width_c = c;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be positive and divisible by 32"
            )));
        }
        if self.width_c < 2 || self.width_c % 2 != 0 {
            return Err(Error::Config(format!(
                "width C = {} must be an even count >= 2",
                self.width_c
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        if self.anchors.len() != 9 {
            return Err(Error::Config(format!(
                "expected 9 anchors, got {}",
                self.anchors.len()
            )));
        }
        if self.anchors.iter().any(|&(w, h)| w <= 0.0 || h <= 0.0) {
            return Err(Error::Config("anchors must have positive extents".into()));
        }
        if self.strides != [8, 16, 32] {
            return Err(Error::Config(format!(
                "strides {:?} unsupported; the head pyramid runs at (8, 16, 32)",
                self.strides
            )));
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return Err(Error::Config(format!(
                "conf_threshold {} outside [0, 1]",
                self.conf_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::Config(format!("nms_iou {} outside [0, 1]", self.nms_iou)));
        }
        Ok(())
    }

    /// Sorts anchors ascending by area (stable), as the heads expect.
    pub fn normalize_anchors(&mut self) {
        self.anchors
            .sort_by(|a, b| (a.0 * a.1).partial_cmp(&(b.0 * b.1)).unwrap());
    }

    /// Anchor triple for one head (0 -> stride 8, 1 -> 16, 2 -> 32).
    pub fn head_anchors(&self, head: usize) -> [(f64, f64); 3] {
        [
            self.anchors[head * 3],
            self.anchors[head * 3 + 1],
            self.anchors[head * 3 + 2],
        ]
    }

    pub fn head_out_channels(&self) -> usize {
        3 * (5 + self.num_classes)
    }
}

/// Axis-aligned box in input-image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl PixelBox {
    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }
}

/// Intersection over union; degenerate unions yield 0.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub score: f64,
    pub bbox: PixelBox,
}

enum Stage {
    Cbl(Cbl),
    Pool,
    Efe(Efe),
    Rmf(Rmf),
}

struct Head {
    reduce: Cbl,
    ghost: GhostConv,
    out_name: String,
    out_kind: LayerKind,
}

impl Head {
    fn new(name: &str, c_in: usize, width: usize, c_out: usize) -> Result<Self> {
        Ok(Head {
            reduce: Cbl::new(format!("{name}.reduce"), c_in, width, 1, 1)?,
            ghost: GhostConv::new(
                format!("{name}.ghost"),
                GhostSpec::new(width, width).with_primary_kernel(3),
            )?,
            out_name: format!("{name}.out"),
            out_kind: LayerKind::Conv {
                c_in: width,
                c_out,
                kernel: 1,
                stride: 1,
                dilation: 1,
                groups: 1,
                bias: true,
                zero_init: true,
            },
        })
    }

    fn plan(&self) -> Vec<LayerPlan> {
        let mut plans = self.reduce.plan();
        plans.extend(self.ghost.plan());
        plans.push(LayerPlan {
            name: self.out_name.clone(),
            kind: self.out_kind,
        });
        plans
    }

    /// Trunk features after the reduce step (route point) and raw output.
    fn forward<E: Executor>(&self, ex: &mut E, x: &E::Val) -> Result<(E::Val, E::Val)> {
        let trunk = self.reduce.forward(ex, x)?;
        let g = self.ghost.forward(ex, &trunk)?;
        let raw = ex.conv2d(
            &g,
            &format!("{}.weight", self.out_name),
            Some(&format!("{}.bias", self.out_name)),
            Conv2dCfg::default(),
        )?;
        Ok((trunk, raw))
    }
}

/// Raw pre-sigmoid head outputs at strides 8, 16, and 32.
pub struct RawHeads<V> {
    pub p8: V,
    pub p16: V,
    pub p32: V,
}

pub struct Model {
    pub cfg: ModelConfig,
    stages: Vec<(String, Stage)>,
    route1: Cbl,
    route2: Cbl,
    head32: Head,
    head16: Head,
    head8: Head,
}

impl Model {
    pub fn new(mut cfg: ModelConfig) -> Result<Self> {
        cfg.normalize_anchors();
        cfg.validate()?;
        let c = cfg.width_c;
        let out_ch = cfg.head_out_channels();

        let efe = |idx: usize, c_in: usize, m: usize| -> Result<(String, Stage)> {
            let name = format!("s{idx}");
            let block = Efe::new(format!("backbone.{name}"), EfeSpec::new(c_in, m))?;
            Ok((name, Stage::Efe(block)))
        };

        let stages = vec![
            ("s1".into(), Stage::Cbl(Cbl::new("backbone.s1", 3, c / 2, 3, 1)?)),
            ("s2".into(), Stage::Pool),
            efe(3, c / 2, 2 * c)?,
            ("s4".into(), Stage::Pool),
            efe(5, 2 * c, 4 * c)?,
            efe(6, 4 * c, 4 * c)?,
            ("s7".into(), Stage::Pool),
            efe(8, 4 * c, 8 * c)?,
            efe(9, 8 * c, 8 * c)?,
            efe(10, 8 * c, 8 * c)?,
            efe(11, 8 * c, 8 * c)?,
            ("s12".into(), Stage::Pool),
            efe(13, 8 * c, 16 * c)?,
            efe(14, 16 * c, 16 * c)?,
            efe(15, 16 * c, 16 * c)?,
            efe(16, 16 * c, 16 * c)?,
            ("s17".into(), Stage::Pool),
            efe(18, 16 * c, 32 * c)?,
            efe(19, 32 * c, 32 * c)?,
            (
                "s20".into(),
                Stage::Rmf(Rmf::new("backbone.s20", RmfSpec::new(32 * c))?),
            ),
        ];

        // Head widths (2C, 4C, 8C) for strides (8, 16, 32); each route halves
        // the width of the head it leaves before upsampling.
        let head32 = Head::new("head32", 6 * 32 * c, 8 * c, out_ch)?;
        let route1 = Cbl::new("route1", 8 * c, 4 * c, 1, 1)?;
        let head16 = Head::new("head16", 4 * c + 16 * c, 4 * c, out_ch)?;
        let route2 = Cbl::new("route2", 4 * c, 2 * c, 1, 1)?;
        let head8 = Head::new("head8", 2 * c + 8 * c, 2 * c, out_ch)?;

        Ok(Model {
            cfg,
            stages,
            route1,
            route2,
            head32,
            head16,
            head8,
        })
    }

    /// All parameterized layers in network order (backbone, then heads from
    /// coarse to fine with their route layers).
    pub fn plan(&self) -> Vec<LayerPlan> {
        let mut plans = Vec::new();
        for (_, stage) in &self.stages {
            match stage {
                Stage::Cbl(b) => plans.extend(b.plan()),
                Stage::Pool => {}
                Stage::Efe(b) => plans.extend(b.plan()),
                Stage::Rmf(b) => plans.extend(b.plan()),
            }
        }
        plans.extend(self.head32.plan());
        plans.extend(self.route1.plan());
        plans.extend(self.head16.plan());
        plans.extend(self.route2.plan());
        plans.extend(self.head8.plan());
        plans
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        crate::blocks::init_layers(&self.plan(), &mut store, &mut init)?;
        Ok(store)
    }

    /// (channels, h, w) after every stage s1..s20 for the configured input.
    pub fn stage_shapes(&self) -> Vec<(String, (usize, usize, usize))> {
        let (mut h, mut w) = self.cfg.input_size;
        let mut c = 3usize;
        let mut out = Vec::new();
        for (name, stage) in &self.stages {
            match stage {
                Stage::Cbl(b) => c = b.c_out,
                Stage::Pool => {
                    h /= 2;
                    w /= 2;
                }
                Stage::Efe(b) => c = b.spec.m,
                Stage::Rmf(b) => c = b.spec.out_channels(),
            }
            out.push((name.clone(), (c, h, w)));
        }
        out
    }

    pub fn stage_names(&self) -> Vec<String> {
        self.stages.iter().map(|(n, _)| n.clone()).collect()
    }

    fn check_image<E: Executor>(&self, ex: &E, image: &E::Val) -> Result<()> {
        let (_, c, h, w) = ex.dims(image);
        if c != 3 || (h, w) != self.cfg.input_size {
            return Err(Error::Shape(format!(
                "model input must be (n, 3, {}, {}), got {:?}",
                self.cfg.input_size.0,
                self.cfg.input_size.1,
                ex.dims(image)
            )));
        }
        Ok(())
    }

    /// Runs the network, invoking `tap` with every backbone stage output.
    pub fn forward_with<E: Executor>(
        &self,
        ex: &mut E,
        image: &E::Val,
        mut tap: impl FnMut(&str, &E::Val),
    ) -> Result<RawHeads<E::Val>> {
        self.check_image(ex, image)?;
        let pool = MaxPoolCfg::new(2, 2, 0)?;
        let mut x = image.clone();
        let mut s11 = None;
        let mut s16 = None;
        for (name, stage) in &self.stages {
            x = match stage {
                Stage::Cbl(b) => b.forward(ex, &x)?,
                Stage::Pool => ex.maxpool(&x, pool)?,
                Stage::Efe(b) => b.forward(ex, &x)?,
                Stage::Rmf(b) => b.forward(ex, &x)?,
            };
            tap(name, &x);
            if name == "s11" {
                s11 = Some(x.clone());
            } else if name == "s16" {
                s16 = Some(x.clone());
            }
        }
        let s11 = s11.expect("stage s11 present");
        let s16 = s16.expect("stage s16 present");

        let (trunk32, p32) = self.head32.forward(ex, &x)?;
        let r1 = self.route1.forward(ex, &trunk32)?;
        let r1 = ex.upsample2x(&r1)?;
        let cat16 = ex.concat(&[r1, s16])?;
        let (trunk16, p16) = self.head16.forward(ex, &cat16)?;
        let r2 = self.route2.forward(ex, &trunk16)?;
        let r2 = ex.upsample2x(&r2)?;
        let cat8 = ex.concat(&[r2, s11])?;
        let (_, p8) = self.head8.forward(ex, &cat8)?;
        Ok(RawHeads { p8, p16, p32 })
    }

    pub fn forward<E: Executor>(&self, ex: &mut E, image: &E::Val) -> Result<RawHeads<E::Val>> {
        self.forward_with(ex, image, |_, _| {})
    }
}

/// Full single-image detection: forward pass, per-head decoding at the
/// confidence threshold (strict), and per-class NMS.
pub fn detect(
    model: &Model,
    store: &crate::params::ParamStore,
    image: &Tensor,
    conf_threshold: f64,
    nms_iou: f64,
) -> Result<Vec<Detection>> {
    let mut ex = crate::exec::InferExec::new(store);
    let img = ex.input(image.clone());
    let raws = model.forward(&mut ex, &img)?;
    let mut dets = Vec::new();
    for (head, raw) in [raws.p8, raws.p16, raws.p32].into_iter().enumerate() {
        dets.extend(decode(
            &raw,
            &model.cfg.head_anchors(head),
            model.cfg.strides[head],
            model.cfg.num_classes,
            conf_threshold,
            model.cfg.input_size,
        )?);
    }
    Ok(nms(&dets, nms_iou))
}

/// Inverse of `decode` for one cell/anchor: raw values that decode back to
/// the given box center/size.
pub fn encode_box(
    center: (f64, f64),
    size: (f64, f64),
    cell: (usize, usize),
    anchor: (f64, f64),
    stride: usize,
) -> (f64, f64, f64, f64) {
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let tx = logit(center.0 / stride as f64 - cell.1 as f64);
    let ty = logit(center.1 / stride as f64 - cell.0 as f64);
    let tw = (size.0 / anchor.0).ln();
    let th = (size.1 / anchor.1).ln();
    (tx, ty, tw, th)
}

/// Decodes one raw head map into detections above the confidence threshold
/// (strict comparison), with boxes clipped to the image bounds.
pub fn decode(
    raw: &Tensor,
    anchors: &[(f64, f64); 3],
    stride: usize,
    num_classes: usize,
    conf_threshold: f64,
    image_size: (usize, usize),
) -> Result<Vec<Detection>> {
    let (n, c, gh, gw) = raw.dims();
    let per_anchor = 5 + num_classes;
    if n != 1 || c != 3 * per_anchor {
        return Err(Error::Shape(format!(
            "raw head dims {:?} do not match 3*(5+{num_classes}) channels at batch 1",
            raw.dims()
        )));
    }
    let (img_h, img_w) = (image_size.0 as f64, image_size.1 as f64);
    let mut out = Vec::new();
    for a in 0..3 {
        let base = a * per_anchor;
        for i in 0..gh {
            for j in 0..gw {
                let tx = raw.get(0, base, i, j);
                let ty = raw.get(0, base + 1, i, j);
                let tw = raw.get(0, base + 2, i, j);
                let th = raw.get(0, base + 3, i, j);
                let tobj = raw.get(0, base + 4, i, j);
                let mut best_cls = 0usize;
                let mut best_logit = f64::NEG_INFINITY;
                for cls in 0..num_classes {
                    let v = raw.get(0, base + 5 + cls, i, j);
                    if v > best_logit {
                        best_logit = v;
                        best_cls = cls;
                    }
                }
                let score = sigmoid(tobj) * sigmoid(best_logit);
                if !(score > conf_threshold) {
                    continue;
                }
                let cx = (sigmoid(tx) + j as f64) * stride as f64;
                let cy = (sigmoid(ty) + i as f64) * stride as f64;
                let bw = anchors[a].0 * tw.exp();
                let bh = anchors[a].1 * th.exp();
                let bbox = PixelBox {
                    x_min: (cx - bw / 2.0).clamp(0.0, img_w),
                    y_min: (cy - bh / 2.0).clamp(0.0, img_h),
                    x_max: (cx + bw / 2.0).clamp(0.0, img_w),
                    y_max: (cy + bh / 2.0).clamp(0.0, img_h),
                };
                if bbox.is_valid() {
                    out.push(Detection {
                        class_id: best_cls,
                        score,
                        bbox,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Greedy per-class non-maximum suppression; keeps a detection iff its IoU
/// with every kept same-class detection is below the threshold. The result
/// preserves descending-score order (stable under ties).
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<Detection> = Vec::new();
    for idx in order {
        let det = &detections[idx];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == det.class_id && iou(&k.bbox, &det.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(*det);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.head_out_channels(), 24);
        // anchors ascending by area
        let areas: Vec<f64> = cfg.anchors.iter().map(|a| a.0 * a.1).collect();
        assert!(areas.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn multiplier_scales_width() {
        let cfg = ModelConfig::default().with_multiplier(0.5).unwrap();
        assert_eq!(cfg.width_c, 16);
        assert!(ModelConfig::default().with_multiplier(-1.0).is_err());
    }

    #[test]
    fn indivisible_input_rejected() {
        let cfg = ModelConfig {
            input_size: (300, 320),
            ..ModelConfig::default()
        };
        assert!(matches!(Model::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn stage_shapes_follow_spatial_halving() {
        let model = Model::new(ModelConfig::default()).unwrap();
        let shapes = model.stage_shapes();
        let by_name = |n: &str| shapes.iter().find(|(s, _)| s == n).unwrap().1;
        assert_eq!(by_name("s1"), (16, 320, 320));
        assert_eq!(by_name("s3"), (64, 160, 160));
        assert_eq!(by_name("s11"), (256, 40, 40));
        assert_eq!(by_name("s16"), (512, 20, 20));
        assert_eq!(by_name("s20"), (6144, 10, 10));
    }

    #[test]
    fn decode_center_at_sigma_zero() {
        // t_x = t_y = 0 at cell (0,0), stride 32 -> center (16, 16)
        let raw = Tensor::zeros((1, 24, 1, 1));
        let anchors = [(10.0, 10.0), (20.0, 20.0), (40.0, 40.0)];
        let dets = decode(&raw, &anchors, 32, 3, 0.0, (320, 320)).unwrap();
        assert_eq!(dets.len(), 3);
        let d = &dets[0];
        assert!((d.bbox.x_min + d.bbox.x_max) / 2.0 == 16.0);
        assert!((d.bbox.y_min + d.bbox.y_max) / 2.0 == 16.0);
        // t_w = t_h = 0 -> size equals anchor
        assert!((d.bbox.x_max - d.bbox.x_min - 10.0).abs() < 1e-12);
    }

    #[test]
    fn decode_saturated_negative_is_empty() {
        let raw = Tensor::full((1, 24, 2, 2), -10.0);
        let anchors = [(10.0, 10.0), (20.0, 20.0), (40.0, 40.0)];
        let dets = decode(&raw, &anchors, 32, 3, 0.25, (64, 64)).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn decode_boundary_is_strict() {
        // zero raw outputs: score = 0.25 exactly; strict > keeps nothing
        let raw = Tensor::zeros((1, 24, 1, 1));
        let anchors = [(10.0, 10.0), (20.0, 20.0), (40.0, 40.0)];
        let dets = decode(&raw, &anchors, 32, 3, 0.25, (32, 32)).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn decode_channel_mismatch() {
        let raw = Tensor::zeros((1, 20, 1, 1));
        let anchors = [(10.0, 10.0), (20.0, 20.0), (40.0, 40.0)];
        assert!(decode(&raw, &anchors, 32, 3, 0.25, (32, 32)).is_err());
    }

    #[test]
    fn encode_decode_round_trip() {
        let anchor = (24.0, 36.0);
        let (cx, cy, w, h) = (100.4, 57.9, 31.0, 18.5);
        let (tx, ty, tw, th) = encode_box((cx, cy), (w, h), (3, 6), anchor, 16);
        let sig = |t: f64| 1.0 / (1.0 + (-t).exp());
        assert!(((sig(tx) + 6.0) * 16.0 - cx).abs() < 1e-9);
        assert!(((sig(ty) + 3.0) * 16.0 - cy).abs() < 1e-9);
        assert!((anchor.0 * tw.exp() - w).abs() < 1e-9);
        assert!((anchor.1 * th.exp() - h).abs() < 1e-9);
    }

    #[test]
    fn iou_hand_cases() {
        let a = PixelBox { x_min: 0.0, y_min: 0.0, x_max: 2.0, y_max: 2.0 };
        let b = PixelBox { x_min: 1.0, y_min: 1.0, x_max: 3.0, y_max: 3.0 };
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(iou(&a, &a), 1.0);
        let c = PixelBox { x_min: 5.0, y_min: 5.0, x_max: 6.0, y_max: 6.0 };
        assert_eq!(iou(&a, &c), 0.0);
    }

    #[test]
    fn nms_identical_boxes_keep_best() {
        let b = PixelBox { x_min: 0.0, y_min: 0.0, x_max: 2.0, y_max: 2.0 };
        let dets = vec![
            Detection { class_id: 0, score: 0.8, bbox: b },
            Detection { class_id: 0, score: 0.9, bbox: b },
        ];
        let kept = nms(&dets, 0.45);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_keeps_disjoint_and_other_classes() {
        let a = PixelBox { x_min: 0.0, y_min: 0.0, x_max: 2.0, y_max: 2.0 };
        let b = PixelBox { x_min: 10.0, y_min: 10.0, x_max: 12.0, y_max: 12.0 };
        let dets = vec![
            Detection { class_id: 0, score: 0.9, bbox: a },
            Detection { class_id: 0, score: 0.8, bbox: b },
            Detection { class_id: 1, score: 0.7, bbox: a },
        ];
        assert_eq!(nms(&dets, 0.45).len(), 3);
    }

    #[test]
    fn nms_three_box_hand_geometry() {
        // IoU(A,B) = 0.6, IoU(A,C) = 0.1, IoU(B,C) < 0.45, scores A > B > C,
        // threshold 0.45: B is suppressed by A, C survives.
        let a = PixelBox { x_min: 0.0, y_min: 0.0, x_max: 10.0, y_max: 10.0 };
        let b = PixelBox { x_min: 2.5, y_min: 0.0, x_max: 12.5, y_max: 10.0 };
        let c = PixelBox { x_min: 90.0 / 11.0, y_min: 0.0, x_max: 90.0 / 11.0 + 10.0, y_max: 10.0 };
        assert!((iou(&a, &b) - 0.6).abs() < 1e-12);
        assert!((iou(&a, &c) - 0.1).abs() < 1e-12);
        assert!(iou(&b, &c) < 0.45);
        let dets = vec![
            Detection { class_id: 0, score: 0.9, bbox: a },
            Detection { class_id: 0, score: 0.8, bbox: b },
            Detection { class_id: 0, score: 0.7, bbox: c },
        ];
        let kept = nms(&dets, 0.45);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].bbox, a);
        assert_eq!(kept[1].bbox, c);
    }

    #[test]
    fn nms_kept_are_pairwise_below_threshold() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let dets: Vec<Detection> = (0..30)
                .map(|_| {
                    let x = rng.random_range(0.0..50.0);
                    let y = rng.random_range(0.0..50.0);
                    Detection {
                        class_id: rng.random_range(0..2usize),
                        score: rng.random_range(0.0..1.0),
                        bbox: PixelBox {
                            x_min: x,
                            y_min: y,
                            x_max: x + rng.random_range(5.0..20.0),
                            y_max: y + rng.random_range(5.0..20.0),
                        },
                    }
                })
                .collect();
            let kept = nms(&dets, 0.45);
            for i in 0..kept.len() {
                for j in i + 1..kept.len() {
                    if kept[i].class_id == kept[j].class_id {
                        assert!(iou(&kept[i].bbox, &kept[j].bbox) < 0.45);
                    }
                }
            }
        }
    }
}
