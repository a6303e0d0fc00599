//! Layers and differentiable neural-network operations.

mod activation;
mod conv;
mod params;
mod reduce;
mod shuffle;
mod warp;

pub use conv::{conv_output_extent, Conv2dLayer};
pub use params::{kaiming_uniform, Bound, ParamId, ParamStore};

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Negative slope of the leaky ReLU used throughout the convolutional trunk.
pub const TRUNK_SLOPE: f64 = 0.1;

/// Affine map `y = W x + b` on a vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl LinearLayer {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[out_features, in_features], in_features, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_features]));
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Element>(&self, params: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        if x.shape() != [self.in_features] {
            return Err(Error::invalid(
                "linear",
                format!("expected [{}], got {:?}", self.in_features, x.shape()),
            ));
        }
        params
            .get(self.weight)
            .matmul(&x.reshape(&[self.in_features, 1])?)?
            .reshape(&[self.out_features])?
            .add(params.get(self.bias))
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }

    pub fn macs(&self) -> u64 {
        (self.in_features * self.out_features) as u64
    }
}
