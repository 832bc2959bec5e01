//! Layer-by-layer parameter and multiply-accumulate accounting.
//!
//! A convolution at output resolution HxW costs `weight_count * H * W`
//! multiply-accumulates; pooling, activations, and batch norm count zero.
//! Totals are printed with one-decimal M/G rounding to mirror the usual
//! complexity tables. "FLOPs" follows the MAC convention by default; the
//! multiply-add convention doubles it.

use std::fmt::Write as _;

use crate::blocks::{LayerKind, LayerPlan};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopsConvention {
    /// One multiply-accumulate per kernel weight per output position.
    Mac,
    /// Two operations (multiply + add) per MAC.
    Madd,
}

impl FlopsConvention {
    pub fn scale(&self) -> u64 {
        match self {
            FlopsConvention::Mac => 1,
            FlopsConvention::Madd => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerRow {
    pub name: String,
    pub kind: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    /// Convolution weight elements.
    pub weight_params: u64,
    pub bias_params: u64,
    /// Batch-norm gamma/beta.
    pub bn_affine_params: u64,
    /// Batch-norm running statistics (buffers).
    pub bn_stat_params: u64,
    pub macs: u64,
}

impl LayerRow {
    pub fn params(&self) -> u64 {
        self.weight_params + self.bias_params + self.bn_affine_params + self.bn_stat_params
    }
}

#[derive(Debug, Clone)]
pub struct ComplexityReport {
    pub rows: Vec<LayerRow>,
    pub resolution: (usize, usize),
}

impl ComplexityReport {
    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(LayerRow::params).sum()
    }

    pub fn conv_weight_params(&self) -> u64 {
        self.rows.iter().map(|r| r.weight_params).sum()
    }

    pub fn bias_params(&self) -> u64 {
        self.rows.iter().map(|r| r.bias_params).sum()
    }

    pub fn bn_affine_params(&self) -> u64 {
        self.rows.iter().map(|r| r.bn_affine_params).sum()
    }

    pub fn bn_stat_params(&self) -> u64 {
        self.rows.iter().map(|r| r.bn_stat_params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    /// Params in millions, rounded to one decimal as the tables print it.
    pub fn params_m(&self) -> f64 {
        round1(self.total_params() as f64 / 1e6)
    }

    pub fn flops_g(&self, conv: FlopsConvention) -> f64 {
        round1((self.total_macs() * conv.scale()) as f64 / 1e9)
    }

    pub fn render_text(&self, conv: FlopsConvention) -> String {
        let mut s = String::new();
        let flops_label = match conv {
            FlopsConvention::Mac => "FLOPs(G, MAC)",
            FlopsConvention::Madd => "FLOPs(G, MAdd)",
        };
        let _ = writeln!(
            s,
            "{:<28} {:<8} {:>6} {:>6} {:>6} {:>6} {:>8} {:>12} {:>14}",
            "layer", "type", "c_in", "c_out", "kernel", "stride", "dilation", "params", "macs"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<28} {:<8} {:>6} {:>6} {:>6} {:>6} {:>8} {:>12} {:>14}",
                r.name,
                r.kind,
                r.c_in,
                r.c_out,
                r.kernel,
                r.stride,
                r.dilation,
                r.params(),
                r.macs
            );
        }
        let _ = writeln!(s, "--");
        let _ = writeln!(
            s,
            "resolution: {}x{}   conv weights: {}   biases: {}   bn affine: {}   bn stats: {}",
            self.resolution.0,
            self.resolution.1,
            self.conv_weight_params(),
            self.bias_params(),
            self.bn_affine_params(),
            self.bn_stat_params()
        );
        let _ = writeln!(
            s,
            "totals: params {} ({:.1}M)   macs {} ({:.1}G)   Params(M) {:.1}   {} {:.1}",
            self.total_params(),
            self.total_params() as f64 / 1e6,
            self.total_macs(),
            self.total_macs() as f64 / 1e9,
            self.params_m(),
            flops_label,
            self.flops_g(conv)
        );
        s
    }

    /// CSV rows: `layer,type,c_in,c_out,kernel,stride,dilation,params,macs`.
    pub fn to_csv(&self, conv: FlopsConvention) -> String {
        let mut s = String::from("layer,type,c_in,c_out,kernel,stride,dilation,params,macs\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.name,
                r.kind,
                r.c_in,
                r.c_out,
                r.kernel,
                r.stride,
                r.dilation,
                r.params(),
                r.macs * conv.scale()
            );
        }
        let _ = writeln!(
            s,
            "total,,,,,,,{},{}",
            self.total_params(),
            self.total_macs() * conv.scale()
        );
        s
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn row_for(plan: &LayerPlan, input_hw: (usize, usize)) -> LayerRow {
    match plan.kind {
        LayerKind::Conv {
            c_in,
            c_out,
            kernel,
            stride,
            dilation,
            groups,
            ..
        } => {
            let out_h = input_hw.0 / stride;
            let out_w = input_hw.1 / stride;
            let weights = plan.kind.weight_params() as u64;
            LayerRow {
                name: plan.name.clone(),
                kind: if groups == c_in && groups > 1 {
                    "dwconv".into()
                } else {
                    "conv".into()
                },
                c_in,
                c_out,
                kernel,
                stride,
                dilation,
                weight_params: weights,
                bias_params: plan.kind.bias_params() as u64,
                bn_affine_params: 0,
                bn_stat_params: 0,
                macs: weights * out_h as u64 * out_w as u64,
            }
        }
        LayerKind::BatchNorm { channels } => LayerRow {
            name: plan.name.clone(),
            kind: "bn".into(),
            c_in: channels,
            c_out: channels,
            kernel: 0,
            stride: 0,
            dilation: 0,
            weight_params: 0,
            bias_params: 0,
            bn_affine_params: plan.kind.bn_affine_params() as u64,
            bn_stat_params: plan.kind.bn_stat_params() as u64,
            macs: 0,
        },
    }
}

/// Complexity of a standalone block whose layers all run at one resolution
/// (same-padding, stride-1 internals).
pub fn analyze_block(plans: &[LayerPlan], input_hw: (usize, usize)) -> ComplexityReport {
    ComplexityReport {
        rows: plans.iter().map(|p| row_for(p, input_hw)).collect(),
        resolution: input_hw,
    }
}

/// Whole-model complexity at the configured input resolution, rows in
/// network order.
pub fn analyze_model(model: &Model) -> ComplexityReport {
    let (h, w) = model.cfg.input_size;
    let mut rows = Vec::new();
    let mut push_all = |plans: Vec<LayerPlan>, hw: (usize, usize)| {
        for p in &plans {
            rows.push(row_for(p, hw));
        }
    };

    for (name, shape) in model.stage_shapes() {
        // A stage's own layers run at its output resolution (pools have no
        // layers; every parameterized layer is same-size stride 1).
        let hw = (shape.1, shape.2);
        let plans: Vec<LayerPlan> = model
            .plan()
            .into_iter()
            .filter(|p| p.name.starts_with(&format!("backbone.{name}.")))
            .collect();
        push_all(plans, hw);
    }
    let (hh, ww) = model.cfg.input_size;
    let s32 = (hh / 32, ww / 32);
    let s16 = (hh / 16, ww / 16);
    let s8 = (hh / 8, ww / 8);
    let by_prefix = |prefix: &str| -> Vec<LayerPlan> {
        model
            .plan()
            .into_iter()
            .filter(|p| p.name.starts_with(prefix))
            .collect()
    };
    push_all(by_prefix("head32."), s32);
    push_all(by_prefix("route1."), s32);
    push_all(by_prefix("head16."), s16);
    push_all(by_prefix("route2."), s16);
    push_all(by_prefix("head8."), s8);

    ComplexityReport {
        rows,
        resolution: (h, w),
    }
}
