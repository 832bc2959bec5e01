//! Network building blocks: CBL, Ghost convolution (with optional dilation),
//! the split-transform-merge feature-extraction block, the multiscale
//! pool/ghost pyramid block, and the plain residual reference block.

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::ops::MaxPoolCfg;
use crate::params::{Initializer, ParamStore};
use crate::tensor::Conv2dCfg;

pub const LEAKY_SLOPE: f64 = 0.1;

/// Identity-branch fraction of the expansion block's channel split.
pub const EFE_SPLIT_RATIO: f64 = 0.25;
/// Channel reduction of each dilated ghost branch in the multiscale block.
pub const RMF_BRANCH_RATIO: f64 = 0.5;

/// Static description of one parameterized layer; drives initialization and
/// the complexity analyzer so the two can never disagree.
#[derive(Debug, Clone)]
pub struct LayerPlan {
    /// Hierarchical path, e.g. `backbone.s3.gc1.primary`.
    pub name: String,
    pub kind: LayerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        groups: usize,
        bias: bool,
        /// Zero-initialized instead of He-initialized. Used by the head
        /// projections so freshly built detectors predict anchor-shaped
        /// boxes at cell centers; a plain IoU box loss has zero gradient on
        /// disjoint boxes, so starting from maximal generic overlap keeps
        /// every positive trainable.
        zero_init: bool,
    },
    BatchNorm {
        channels: usize,
    },
}

impl LayerKind {
    /// Convolution weight element count (zero for batch norm).
    pub fn weight_params(&self) -> usize {
        match *self {
            LayerKind::Conv {
                c_in,
                c_out,
                kernel,
                groups,
                ..
            } => c_out * (c_in / groups) * kernel * kernel,
            LayerKind::BatchNorm { .. } => 0,
        }
    }

    pub fn bias_params(&self) -> usize {
        match *self {
            LayerKind::Conv { c_out, bias, .. } => {
                if bias {
                    c_out
                } else {
                    0
                }
            }
            LayerKind::BatchNorm { .. } => 0,
        }
    }

    /// Trainable affine parameters of batch norm.
    pub fn bn_affine_params(&self) -> usize {
        match *self {
            LayerKind::BatchNorm { channels } => 2 * channels,
            _ => 0,
        }
    }

    /// Running-statistics buffers of batch norm.
    pub fn bn_stat_params(&self) -> usize {
        self.bn_affine_params()
    }

    pub fn total_params(&self) -> usize {
        self.weight_params() + self.bias_params() + self.bn_affine_params() + self.bn_stat_params()
    }
}

/// Creates store entries for a set of layer plans.
pub fn init_layers(plans: &[LayerPlan], store: &mut ParamStore, init: &mut Initializer) -> Result<()> {
    for p in plans {
        match p.kind {
            LayerKind::Conv {
                c_in,
                c_out,
                kernel,
                groups,
                bias,
                zero_init,
                ..
            } => {
                let dims = (c_out, c_in / groups, kernel, kernel);
                let weight = if zero_init {
                    crate::tensor::Tensor::zeros(dims)
                } else {
                    init.conv_weight(dims)
                };
                store.insert(format!("{}.weight", p.name), weight)?;
                if bias {
                    store.insert(format!("{}.bias", p.name), init.zeros_channel(c_out))?;
                }
            }
            LayerKind::BatchNorm { channels } => {
                store.insert(format!("{}.gamma", p.name), init.ones_channel(channels))?;
                store.insert(format!("{}.beta", p.name), init.zeros_channel(channels))?;
                store.insert(format!("{}.running_mean", p.name), init.zeros_channel(channels))?;
                store.insert(format!("{}.running_var", p.name), init.ones_channel(channels))?;
            }
        }
    }
    Ok(())
}

/// Conv -> BatchNorm -> LeakyReLU with same padding.
#[derive(Debug, Clone)]
pub struct Cbl {
    pub prefix: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Cbl {
    pub fn new(prefix: impl Into<String>, c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "CBL kernel must be odd for same padding, got {kernel}"
            )));
        }
        Ok(Cbl {
            prefix: prefix.into(),
            c_in,
            c_out,
            kernel,
            stride,
        })
    }

    pub fn plan(&self) -> Vec<LayerPlan> {
        vec![
            LayerPlan {
                name: format!("{}.conv", self.prefix),
                kind: LayerKind::Conv {
                    c_in: self.c_in,
                    c_out: self.c_out,
                    kernel: self.kernel,
                    stride: self.stride,
                    dilation: 1,
                    groups: 1,
                    bias: false,
                    zero_init: false,
                },
            },
            LayerPlan {
                name: format!("{}.bn", self.prefix),
                kind: LayerKind::BatchNorm {
                    channels: self.c_out,
                },
            },
        ]
    }

    pub fn forward<E: Executor>(&self, ex: &mut E, x: &E::Val) -> Result<E::Val> {
        let cfg = Conv2dCfg::same(self.kernel, 1).with_stride(self.stride);
        let y = ex.conv2d(x, &format!("{}.conv.weight", self.prefix), None, cfg)?;
        let y = ex.batchnorm(&y, &format!("{}.bn", self.prefix))?;
        ex.leaky_relu(&y, LEAKY_SLOPE)
    }
}

/// Ghost convolution: a primary convolution produces `c_out / ratio_s`
/// intrinsic channels, a cheap depthwise convolution generates the remaining
/// ghost channels, and the concatenation is normalized and activated.
/// `dilation > 1` on the cheap operation makes this the dilated variant;
/// `dilation == 1` is the plain form.
#[derive(Debug, Clone, Copy)]
pub struct GhostSpec {
    pub c_in: usize,
    pub c_out: usize,
    /// Feature maps per intrinsic map (incl. the intrinsic itself).
    pub ratio_s: usize,
    pub primary_kernel: usize,
    pub cheap_kernel: usize,
    pub dilation: usize,
}

impl GhostSpec {
    pub fn new(c_in: usize, c_out: usize) -> Self {
        GhostSpec {
            c_in,
            c_out,
            ratio_s: 2,
            primary_kernel: 1,
            cheap_kernel: 3,
            dilation: 1,
        }
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_primary_kernel(mut self, kernel: usize) -> Self {
        self.primary_kernel = kernel;
        self
    }

    pub fn with_ratio(mut self, s: usize) -> Self {
        self.ratio_s = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratio_s == 0 || self.c_in == 0 || self.c_out == 0 || self.dilation == 0 {
            return Err(Error::Config("ghost conv sizes must be positive".into()));
        }
        if self.c_out % self.ratio_s != 0 {
            return Err(Error::Config(format!(
                "ghost conv c_out {} not divisible by ratio s {}",
                self.c_out, self.ratio_s
            )));
        }
        if self.primary_kernel % 2 == 0 || self.cheap_kernel % 2 == 0 {
            return Err(Error::Config("ghost conv kernels must be odd for same padding".into()));
        }
        Ok(())
    }

    /// Intrinsic channel count b = c_out / s.
    pub fn intrinsic(&self) -> usize {
        self.c_out / self.ratio_s
    }

    pub fn ghost_channels(&self) -> usize {
        self.intrinsic() * (self.ratio_s - 1)
    }
}

#[derive(Debug, Clone)]
pub struct GhostConv {
    pub prefix: String,
    pub spec: GhostSpec,
}

impl GhostConv {
    pub fn new(prefix: impl Into<String>, spec: GhostSpec) -> Result<Self> {
        spec.validate()?;
        Ok(GhostConv {
            prefix: prefix.into(),
            spec,
        })
    }

    pub fn plan(&self) -> Vec<LayerPlan> {
        let s = &self.spec;
        let mut plans = vec![LayerPlan {
            name: format!("{}.primary", self.prefix),
            kind: LayerKind::Conv {
                c_in: s.c_in,
                c_out: s.intrinsic(),
                kernel: s.primary_kernel,
                stride: 1,
                dilation: 1,
                groups: 1,
                bias: false,
                zero_init: false,
            },
        }];
        if s.ratio_s > 1 {
            plans.push(LayerPlan {
                name: format!("{}.cheap", self.prefix),
                kind: LayerKind::Conv {
                    c_in: s.intrinsic(),
                    c_out: s.ghost_channels(),
                    kernel: s.cheap_kernel,
                    stride: 1,
                    dilation: s.dilation,
                    groups: s.intrinsic(),
                    bias: false,
                    zero_init: false,
                },
            });
        }
        plans.push(LayerPlan {
            name: format!("{}.bn", self.prefix),
            kind: LayerKind::BatchNorm { channels: s.c_out },
        });
        plans
    }

    pub fn forward<E: Executor>(&self, ex: &mut E, x: &E::Val) -> Result<E::Val> {
        let s = &self.spec;
        let primary_cfg = Conv2dCfg::same(s.primary_kernel, 1);
        let intrinsic = ex.conv2d(x, &format!("{}.primary.weight", self.prefix), None, primary_cfg)?;
        let merged = if s.ratio_s > 1 {
            let cheap_cfg =
                Conv2dCfg::same(s.cheap_kernel, s.dilation).with_groups(s.intrinsic());
            let ghosts =
                ex.conv2d(&intrinsic, &format!("{}.cheap.weight", self.prefix), None, cheap_cfg)?;
            ex.concat(&[intrinsic, ghosts])?
        } else {
            intrinsic
        };
        let y = ex.batchnorm(&merged, &format!("{}.bn", self.prefix))?;
        ex.leaky_relu(&y, LEAKY_SLOPE)
    }
}

/// Split-transform-merge feature block: 1x1 expansion to `m` channels, a
/// 25% identity / 75% transform channel split, a two-stage dense ghost
/// block, concatenation back to `2m`, 1x1 compression to `m`, and a
/// residual add with the expansion output.
#[derive(Debug, Clone, Copy)]
pub struct EfeSpec {
    pub c_in: usize,
    /// Expansion width; also the block's output channel count.
    pub m: usize,
}

impl EfeSpec {
    pub fn new(c_in: usize, m: usize) -> Self {
        EfeSpec { c_in, m }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.m == 0 {
            return Err(Error::Config("feature block sizes must be positive".into()));
        }
        // Needs integral m/4 (identity split) and an even m/2 (ghost s = 2).
        if self.m % 4 != 0 {
            return Err(Error::Config(format!(
                "feature block width m = {} must be divisible by 4",
                self.m
            )));
        }
        Ok(())
    }

    pub fn identity_channels(&self) -> usize {
        self.m / 4
    }

    pub fn transform_channels(&self) -> usize {
        self.m - self.m / 4
    }
}

#[derive(Debug, Clone)]
pub struct Efe {
    pub prefix: String,
    pub spec: EfeSpec,
    conv1: Cbl,
    gc1: GhostConv,
    gc2: GhostConv,
    conv2: Cbl,
}

impl Efe {
    pub fn new(prefix: impl Into<String>, spec: EfeSpec) -> Result<Self> {
        spec.validate()?;
        let prefix = prefix.into();
        let m = spec.m;
        let tr = spec.transform_channels();
        let conv1 = Cbl::new(format!("{prefix}.conv1"), spec.c_in, m, 1, 1)?;
        let gc1 = GhostConv::new(format!("{prefix}.gc1"), GhostSpec::new(tr, m / 2))?;
        let gc2 = GhostConv::new(format!("{prefix}.gc2"), GhostSpec::new(tr + m / 2, m / 2))?;
        let conv2 = Cbl::new(format!("{prefix}.conv2"), 2 * m, m, 1, 1)?;
        Ok(Efe {
            prefix,
            spec,
            conv1,
            gc1,
            gc2,
            conv2,
        })
    }

    pub fn plan(&self) -> Vec<LayerPlan> {
        let mut plans = self.conv1.plan();
        plans.extend(self.gc1.plan());
        plans.extend(self.gc2.plan());
        plans.extend(self.conv2.plan());
        plans
    }

    pub fn forward<E: Executor>(&self, ex: &mut E, x: &E::Val) -> Result<E::Val> {
        let expanded = self.conv1.forward(ex, x)?;
        let id_ch = self.spec.identity_channels();
        let identity = ex.slice_channels(&expanded, 0, id_ch)?;
        let transform = ex.slice_channels(&expanded, id_ch, self.spec.transform_channels())?;
        let g1 = self.gc1.forward(ex, &transform)?;
        let g2_in = ex.concat(&[transform.clone(), g1.clone()])?;
        let g2 = self.gc2.forward(ex, &g2_in)?;
        let branch = ex.concat(&[transform, g1, g2])?;
        let merged = ex.concat(&[identity, branch])?;
        let compressed = self.conv2.forward(ex, &merged)?;
        ex.add(&compressed, &expanded)
    }
}

/// Multiscale block: a pyramid of same-size maxpools (parameter-free stage),
/// each followed by parallel dilated ghost convolutions (parameter-based
/// stage); everything is concatenated. Output channels are
/// `pools * dilations * c_in/2`, i.e. 6x the input for the default shape.
#[derive(Debug, Clone)]
pub struct RmfSpec {
    pub c_in: usize,
    pub pool_kernels: Vec<usize>,
    pub dilations: Vec<usize>,
}

impl RmfSpec {
    pub fn new(c_in: usize) -> Self {
        RmfSpec {
            c_in,
            pool_kernels: vec![1, 5, 9, 13],
            dilations: vec![1, 5, 9],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_kernels.is_empty() || self.dilations.is_empty() {
            return Err(Error::Config("multiscale block needs pools and dilations".into()));
        }
        if self.c_in % 4 != 0 {
            // c_in/2 branch width must itself be even for ghost s = 2
            return Err(Error::Config(format!(
                "multiscale block input channels {} must be divisible by 4",
                self.c_in
            )));
        }
        for &k in &self.pool_kernels {
            if k % 2 == 0 {
                return Err(Error::Config(format!("pool kernel {k} must be odd")));
            }
        }
        Ok(())
    }

    pub fn branch_channels(&self) -> usize {
        self.c_in / 2
    }

    pub fn out_channels(&self) -> usize {
        self.pool_kernels.len() * self.dilations.len() * self.branch_channels()
    }
}

#[derive(Debug, Clone)]
pub struct Rmf {
    pub prefix: String,
    pub spec: RmfSpec,
    branches: Vec<Vec<GhostConv>>,
}

impl Rmf {
    pub fn new(prefix: impl Into<String>, spec: RmfSpec) -> Result<Self> {
        spec.validate()?;
        let prefix = prefix.into();
        let mut branches = Vec::new();
        for (bi, _) in spec.pool_kernels.iter().enumerate() {
            let mut convs = Vec::new();
            for &d in &spec.dilations {
                let gspec = GhostSpec::new(spec.c_in, spec.branch_channels()).with_dilation(d);
                convs.push(GhostConv::new(format!("{prefix}.b{}.d{d}", bi + 1), gspec)?);
            }
            branches.push(convs);
        }
        Ok(Rmf {
            prefix,
            spec,
            branches,
        })
    }

    pub fn plan(&self) -> Vec<LayerPlan> {
        self.branches
            .iter()
            .flat_map(|convs| convs.iter().flat_map(GhostConv::plan))
            .collect()
    }

    pub fn forward<E: Executor>(&self, ex: &mut E, x: &E::Val) -> Result<E::Val> {
        let mut branch_outs = Vec::new();
        for (bi, convs) in self.branches.iter().enumerate() {
            let pooled = ex.maxpool(x, MaxPoolCfg::same(self.spec.pool_kernels[bi])?)?;
            let mut dil_outs = Vec::new();
            for gc in convs {
                dil_outs.push(gc.forward(ex, &pooled)?);
            }
            branch_outs.push(ex.concat(&dil_outs)?);
        }
        ex.concat(&branch_outs)
    }
}

/// The conventional residual block used as the complexity baseline: a 3x3
/// stride-1 convolution into a {1x1 reduce, 3x3 expand, add} residual unit,
/// all in CBL form.
#[derive(Debug, Clone)]
pub struct ResidualRef {
    pub prefix: String,
    entry: Cbl,
    reduce: Cbl,
    expand: Cbl,
}

impl ResidualRef {
    pub fn new(prefix: impl Into<String>, c_in: usize, c_out: usize) -> Result<Self> {
        let prefix = prefix.into();
        Ok(ResidualRef {
            entry: Cbl::new(format!("{prefix}.conv1"), c_in, c_out, 3, 1)?,
            reduce: Cbl::new(format!("{prefix}.res1"), c_out, c_in, 1, 1)?,
            expand: Cbl::new(format!("{prefix}.res2"), c_in, c_out, 3, 1)?,
            prefix,
        })
    }

    pub fn plan(&self) -> Vec<LayerPlan> {
        let mut plans = self.entry.plan();
        plans.extend(self.reduce.plan());
        plans.extend(self.expand.plan());
        plans
    }

    pub fn forward<E: Executor>(&self, ex: &mut E, x: &E::Val) -> Result<E::Val> {
        let y = self.entry.forward(ex, x)?;
        let r = self.reduce.forward(ex, &y)?;
        let r = self.expand.forward(ex, &r)?;
        ex.add(&y, &r)
    }
}
