//! Contract shared by every adapter kind: a frozen base weight `W0` plus a
//! trainable transformation that yields an effective weight, a training-form
//! forward, exact gradients and a merge into a plain dense layer.

use crate::error::{HutError, Result};
use crate::hut::HutAdapterState;
use crate::lora::LoraAdapterState;
use crate::tensor::DenseMatrix;

/// A dense layer `h = x × W + bias` with no adapter attached.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedLayer {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
}

impl MergedLayer {
    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        x.matmul(&self.weight)?.add_row(&self.bias)
    }
}

/// Gradients for one adapter, ordered like [`WeightAdapter::params`].
#[derive(Debug, Clone)]
pub struct ParamGrads(pub Vec<DenseMatrix>);

pub trait WeightAdapter {
    fn base_weight(&self) -> &DenseMatrix;

    fn rank(&self) -> usize;

    /// Training-form forward pass.
    fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix>;

    /// Returns parameter gradients and the gradient with respect to `x` for
    /// the upstream gradient `upstream = ∂L/∂h`.
    fn backward(&self, x: &DenseMatrix, upstream: &DenseMatrix)
        -> Result<(ParamGrads, DenseMatrix)>;

    fn merge(&self) -> Result<MergedLayer>;

    /// Named trainable tensors, in a fixed order.
    fn params(&self) -> Vec<(&'static str, &DenseMatrix)>;

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix>;

    fn num_trainable(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Hut,
    Lora,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hut => "hut",
            Method::Lora => "lora",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = HutError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hut" => Ok(Method::Hut),
            "lora" => Ok(Method::Lora),
            other => Err(HutError::InvalidArgument(format!(
                "unknown method '{other}', expected hut or lora"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Either adapter kind, dispatching the shared contract.
#[derive(Debug, Clone, PartialEq)]
pub enum Adapter {
    Hut(HutAdapterState),
    Lora(LoraAdapterState),
}

impl Adapter {
    pub fn method(&self) -> Method {
        match self {
            Adapter::Hut(_) => Method::Hut,
            Adapter::Lora(_) => Method::Lora,
        }
    }

    fn inner(&self) -> &dyn WeightAdapter {
        match self {
            Adapter::Hut(a) => a,
            Adapter::Lora(a) => a,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn WeightAdapter {
        match self {
            Adapter::Hut(a) => a,
            Adapter::Lora(a) => a,
        }
    }
}

impl WeightAdapter for Adapter {
    fn base_weight(&self) -> &DenseMatrix {
        self.inner().base_weight()
    }

    fn rank(&self) -> usize {
        self.inner().rank()
    }

    fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.inner().forward(x)
    }

    fn backward(
        &self,
        x: &DenseMatrix,
        upstream: &DenseMatrix,
    ) -> Result<(ParamGrads, DenseMatrix)> {
        self.inner().backward(x, upstream)
    }

    fn merge(&self) -> Result<MergedLayer> {
        self.inner().merge()
    }

    fn params(&self) -> Vec<(&'static str, &DenseMatrix)> {
        self.inner().params()
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.inner_mut().params_mut()
    }
}

pub(crate) fn check_rank(
    w0: &DenseMatrix,
    rank: usize,
    target: Option<&'static str>,
) -> Result<()> {
    let (d, k) = w0.shape();
    if rank == 0 || rank > d.min(k) {
        return Err(HutError::Rank {
            rank,
            rows: d,
            cols: k,
            target,
        });
    }
    Ok(())
}

pub(crate) fn expect_shape(
    m: &DenseMatrix,
    shape: (usize, usize),
    op: &'static str,
) -> Result<()> {
    if m.shape() != shape {
        return Err(HutError::Shape {
            op,
            left: m.shape(),
            right: shape,
        });
    }
    Ok(())
}
