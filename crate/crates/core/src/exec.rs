//! Execution contexts for network blocks.
//!
//! Blocks describe their dataflow once against [`Executor`]; the same wiring
//! then runs either immediately ([`InferExec`], temporaries freed by scope)
//! or onto a gradient tape ([`Recorder`]) for training and gradient checks.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::graph::{Graph, ValueId};
use crate::ops::{self, Activation, MaxPoolCfg};
use crate::params::{is_trainable, ParamStore, BN_EPS};
use crate::tensor::{Conv2dCfg, Tensor};

pub trait Executor {
    type Val: Clone;

    fn input(&mut self, t: Tensor) -> Self::Val;
    fn materialize(&self, v: &Self::Val) -> Tensor;
    fn dims(&self, v: &Self::Val) -> (usize, usize, usize, usize);

    /// Convolution with parameters looked up by name.
    fn conv2d(
        &mut self,
        x: &Self::Val,
        weight: &str,
        bias: Option<&str>,
        cfg: Conv2dCfg,
    ) -> Result<Self::Val>;

    /// Batch norm with `{prefix}.gamma/.beta/.running_mean/.running_var`.
    fn batchnorm(&mut self, x: &Self::Val, prefix: &str) -> Result<Self::Val>;
    fn leaky_relu(&mut self, x: &Self::Val, slope: f64) -> Result<Self::Val>;
    fn maxpool(&mut self, x: &Self::Val, cfg: MaxPoolCfg) -> Result<Self::Val>;
    fn concat(&mut self, xs: &[Self::Val]) -> Result<Self::Val>;
    fn slice_channels(&mut self, x: &Self::Val, start: usize, len: usize) -> Result<Self::Val>;
    fn add(&mut self, a: &Self::Val, b: &Self::Val) -> Result<Self::Val>;
    fn upsample2x(&mut self, x: &Self::Val) -> Result<Self::Val>;
}

fn named(layer: &str, e: Error) -> Error {
    match e {
        Error::Shape(m) => Error::Shape(format!("{layer}: {m}")),
        Error::Config(m) => Error::Config(format!("{layer}: {m}")),
        other => other,
    }
}

/// Immediate evaluation against a frozen parameter store.
pub struct InferExec<'s> {
    store: &'s ParamStore,
}

impl<'s> InferExec<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        InferExec { store }
    }
}

impl Executor for InferExec<'_> {
    type Val = Rc<Tensor>;

    fn input(&mut self, t: Tensor) -> Self::Val {
        Rc::new(t)
    }

    fn materialize(&self, v: &Self::Val) -> Tensor {
        (**v).clone()
    }

    fn dims(&self, v: &Self::Val) -> (usize, usize, usize, usize) {
        v.dims()
    }

    fn conv2d(
        &mut self,
        x: &Self::Val,
        weight: &str,
        bias: Option<&str>,
        cfg: Conv2dCfg,
    ) -> Result<Self::Val> {
        let w = self.store.get(weight)?;
        let b = match bias {
            Some(name) => Some(self.store.get(name)?.data().to_vec()),
            None => None,
        };
        let y = ops::conv2d(x, w, b.as_deref(), &cfg).map_err(|e| named(weight, e))?;
        Ok(Rc::new(y))
    }

    fn batchnorm(&mut self, x: &Self::Val, prefix: &str) -> Result<Self::Val> {
        let gamma = self.store.get(&format!("{prefix}.gamma"))?;
        let beta = self.store.get(&format!("{prefix}.beta"))?;
        let rm = self.store.get(&format!("{prefix}.running_mean"))?;
        let rv = self.store.get(&format!("{prefix}.running_var"))?;
        let y = ops::batchnorm_infer(x, gamma.data(), beta.data(), rm.data(), rv.data(), BN_EPS)
            .map_err(|e| named(prefix, e))?;
        Ok(Rc::new(y))
    }

    fn leaky_relu(&mut self, x: &Self::Val, slope: f64) -> Result<Self::Val> {
        Ok(Rc::new(ops::activation(x, Activation::LeakyRelu { slope })?))
    }

    fn maxpool(&mut self, x: &Self::Val, cfg: MaxPoolCfg) -> Result<Self::Val> {
        let (y, _) = ops::maxpool2d(x, &cfg)?;
        Ok(Rc::new(y))
    }

    fn concat(&mut self, xs: &[Self::Val]) -> Result<Self::Val> {
        let refs: Vec<&Tensor> = xs.iter().map(|v| &**v).collect();
        Ok(Rc::new(ops::concat_channels(&refs)?))
    }

    fn slice_channels(&mut self, x: &Self::Val, start: usize, len: usize) -> Result<Self::Val> {
        Ok(Rc::new(ops::slice_channels(x, start, len)?))
    }

    fn add(&mut self, a: &Self::Val, b: &Self::Val) -> Result<Self::Val> {
        Ok(Rc::new(ops::binary(a, b, ops::BinaryKind::Add)?))
    }

    fn upsample2x(&mut self, x: &Self::Val) -> Result<Self::Val> {
        Ok(Rc::new(ops::upsample_nearest_2x(x)))
    }
}

/// Batch statistics observed during a recorded training forward, to be folded
/// into running statistics by the caller.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Records the forward pass onto a [`Graph`].
pub struct Recorder<'g, 's> {
    pub graph: &'g mut Graph,
    store: &'s ParamStore,
    training: bool,
    param_ids: BTreeMap<String, ValueId>,
    pub batch_stats: Vec<BatchStats>,
}

impl<'g, 's> Recorder<'g, 's> {
    pub fn new(graph: &'g mut Graph, store: &'s ParamStore, training: bool) -> Self {
        Recorder {
            graph,
            store,
            training,
            param_ids: BTreeMap::new(),
            batch_stats: Vec::new(),
        }
    }

    /// Graph leaf for a named parameter (interned once per name).
    pub fn param_id(&mut self, name: &str) -> Result<ValueId> {
        if let Some(id) = self.param_ids.get(name) {
            return Ok(*id);
        }
        let tensor = self.store.get(name)?.clone();
        let id = self.graph.leaf(tensor, is_trainable(name));
        self.param_ids.insert(name.to_string(), id);
        Ok(id)
    }

    /// Pre-binds a parameter name to an existing graph value, overriding the
    /// store; gradient checks use this to differentiate w.r.t. one weight.
    pub fn bind_param(&mut self, name: &str, id: ValueId) {
        self.param_ids.insert(name.to_string(), id);
    }

    pub fn into_param_ids(self) -> BTreeMap<String, ValueId> {
        self.param_ids
    }

    pub fn param_ids(&self) -> &BTreeMap<String, ValueId> {
        &self.param_ids
    }
}

impl Executor for Recorder<'_, '_> {
    type Val = ValueId;

    fn input(&mut self, t: Tensor) -> Self::Val {
        self.graph.leaf(t, false)
    }

    fn materialize(&self, v: &Self::Val) -> Tensor {
        self.graph.value(*v).clone()
    }

    fn dims(&self, v: &Self::Val) -> (usize, usize, usize, usize) {
        self.graph.value(*v).dims()
    }

    fn conv2d(
        &mut self,
        x: &Self::Val,
        weight: &str,
        bias: Option<&str>,
        cfg: Conv2dCfg,
    ) -> Result<Self::Val> {
        let w = self.param_id(weight)?;
        let b = match bias {
            Some(name) => Some(self.param_id(name)?),
            None => None,
        };
        self.graph.conv2d(*x, w, b, cfg).map_err(|e| named(weight, e))
    }

    fn batchnorm(&mut self, x: &Self::Val, prefix: &str) -> Result<Self::Val> {
        let gamma = self.param_id(&format!("{prefix}.gamma"))?;
        let beta = self.param_id(&format!("{prefix}.beta"))?;
        if self.training {
            let (y, mean, var) = self
                .graph
                .batchnorm_train(*x, gamma, beta, BN_EPS)
                .map_err(|e| named(prefix, e))?;
            self.batch_stats.push(BatchStats {
                prefix: prefix.to_string(),
                mean,
                var,
            });
            Ok(y)
        } else {
            let rm = self.store.get(&format!("{prefix}.running_mean"))?.data().to_vec();
            let rv = self.store.get(&format!("{prefix}.running_var"))?.data().to_vec();
            self.graph
                .batchnorm_infer(*x, gamma, beta, &rm, &rv, BN_EPS)
                .map_err(|e| named(prefix, e))
        }
    }

    fn leaky_relu(&mut self, x: &Self::Val, slope: f64) -> Result<Self::Val> {
        self.graph.activation(*x, Activation::LeakyRelu { slope })
    }

    fn maxpool(&mut self, x: &Self::Val, cfg: MaxPoolCfg) -> Result<Self::Val> {
        self.graph.maxpool2d(*x, cfg)
    }

    fn concat(&mut self, xs: &[Self::Val]) -> Result<Self::Val> {
        self.graph.concat(xs)
    }

    fn slice_channels(&mut self, x: &Self::Val, start: usize, len: usize) -> Result<Self::Val> {
        self.graph.slice_channels(*x, start, len)
    }

    fn add(&mut self, a: &Self::Val, b: &Self::Val) -> Result<Self::Val> {
        self.graph.add(*a, *b)
    }

    fn upsample2x(&mut self, x: &Self::Val) -> Result<Self::Val> {
        Ok(self.graph.upsample2x(*x))
    }
}
