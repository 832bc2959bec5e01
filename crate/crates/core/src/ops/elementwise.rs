//! Pointwise maps and same-shape binary operators.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Element-wise activation kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Sigmoid,
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        if let Activation::LeakyRelu { slope } = self {
            if !(*slope > 0.0 && *slope < 1.0) {
                return Err(Error::Config(format!(
                    "leaky_relu slope must be in (0, 1), got {slope}"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative in terms of the input x and the produced output y.
    #[inline]
    pub fn derivative(&self, x: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    1.0
                } else {
                    *slope
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn activation(input: &Tensor, kind: Activation) -> Result<Tensor> {
    kind.validate()?;
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = kind.apply(*v);
    }
    Ok(out)
}

pub fn map_unary(input: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = f(*v);
    }
    out
}

/// Same-shape binary operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

pub fn binary(a: &Tensor, b: &Tensor, kind: BinaryKind) -> Result<Tensor> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!(
            "binary {:?}: operand dims {:?} vs {:?} differ",
            kind,
            a.dims(),
            b.dims()
        )));
    }
    let mut out = a.clone();
    for (o, &rhs) in out.data_mut().iter_mut().zip(b.data()) {
        *o = match kind {
            BinaryKind::Add => *o + rhs,
            BinaryKind::Sub => *o - rhs,
            BinaryKind::Mul => *o * rhs,
            BinaryKind::Div => *o / rhs,
            BinaryKind::Min => {
                if rhs < *o {
                    rhs
                } else {
                    *o
                }
            }
            BinaryKind::Max => {
                if rhs > *o {
                    rhs
                } else {
                    *o
                }
            }
        };
    }
    Ok(out)
}
