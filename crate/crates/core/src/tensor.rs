//! Dense 4-D tensor in (n, c, h, w) row-major layout, 64-bit values.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: (usize, usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let dims = [dims.0, dims.1, dims.2, dims.3];
        let expect: usize = dims.iter().product();
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match dims {:?} (expected {})",
                data.len(),
                dims,
                expect
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: (usize, usize, usize, usize)) -> Self {
        Tensor {
            dims: [dims.0, dims.1, dims.2, dims.3],
            data: vec![0.0; dims.0 * dims.1 * dims.2 * dims.3],
        }
    }

    pub fn full(dims: (usize, usize, usize, usize), value: f64) -> Self {
        Tensor {
            dims: [dims.0, dims.1, dims.2, dims.3],
            data: vec![value; dims.0 * dims.1 * dims.2 * dims.3],
        }
    }

    /// A 1x1x1x1 tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            dims: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    pub fn from_fn(
        dims: (usize, usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Tensor::zeros(dims);
        let [n, c, h, w] = t.dims;
        let mut i = 0;
        for bn in 0..n {
            for cc in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        t.data[i] = f(bn, cc, y, x);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    /// A (1, c, 1, 1) tensor from a per-channel vector.
    pub fn from_channels(values: &[f64]) -> Self {
        Tensor {
            dims: [1, values.len(), 1, 1],
            data: values.to_vec(),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let [n, c, h, w] = self.dims;
        (n, c, h, w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    /// The single value of a scalar tensor.
    pub fn value(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::Contract(format!(
                "expected scalar tensor, got dims {:?}",
                self.dims
            )));
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_dims(&self, other: &Tensor) -> bool {
        self.dims == other.dims
    }
}

/// Geometry of a convolution application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dCfg {
    pub groups: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Default for Conv2dCfg {
    fn default() -> Self {
        Conv2dCfg {
            groups: 1,
            stride: 1,
            dilation: 1,
            padding: 0,
        }
    }
}

impl Conv2dCfg {
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Conv2dCfg {
            groups: 1,
            stride: 1,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }
}

/// A convolution weight tensor of dims (c_out, c_in_per_group, k_h, k_w)
/// paired with its application geometry.
#[derive(Debug, Clone)]
pub struct ConvWeight {
    pub tensor: Tensor,
    pub cfg: Conv2dCfg,
}

impl ConvWeight {
    pub fn new(tensor: Tensor, cfg: Conv2dCfg) -> Result<Self> {
        let (c_out, _c_in_g, k_h, k_w) = tensor.dims();
        if cfg.groups == 0 || cfg.stride == 0 || cfg.dilation == 0 {
            return Err(Error::Config(
                "conv groups, stride, and dilation must be positive".into(),
            ));
        }
        if c_out % cfg.groups != 0 {
            return Err(Error::Config(format!(
                "conv output channels {} not divisible by groups {}",
                c_out, cfg.groups
            )));
        }
        if k_h == 0 || k_w == 0 {
            return Err(Error::Config("conv kernel must be non-empty".into()));
        }
        Ok(ConvWeight { tensor, cfg })
    }

    /// Declared input channel count: c_in_per_group * groups.
    pub fn in_channels(&self) -> usize {
        self.tensor.dims().1 * self.cfg.groups
    }

    pub fn out_channels(&self) -> usize {
        self.tensor.dims().0
    }

    pub fn is_depthwise(&self) -> bool {
        self.tensor.dims().1 == 1 && self.cfg.groups == self.in_channels()
    }
}
