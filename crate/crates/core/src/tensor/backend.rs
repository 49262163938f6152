use std::collections::HashMap;
use std::sync::Arc;

use super::conv::{self, ConvSpec};
use super::ops::{self, BnAffine};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// The primitive operations model code is written against.
///
/// [`Graph`](super::Graph) records each call for differentiation, [`Eager`]
/// only computes values. Blocks are generic over this trait so the same
/// forward code serves training and inference.
pub trait Backend<T: Real> {
    type Value: Clone;

    fn constant(&mut self, value: Tensor<T>) -> Self::Value;

    /// Binds a named parameter. Repeated calls with the same name return the
    /// same value. Non-trainable parameters behave like constants.
    fn parameter(&mut self, name: &str, value: &Tensor<T>, trainable: bool) -> Self::Value;

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;

    fn conv2d(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value, spec: &ConvSpec) -> Result<Self::Value>;

    /// Same-padded max pooling.
    fn max_pool2d(&mut self, x: &Self::Value, kernel: usize, stride: usize) -> Result<Self::Value>;

    fn global_avg_pool(&mut self, x: &Self::Value) -> Result<Self::Value>;

    /// Align-corners=false bilinear resampling to an explicit size.
    fn resize_bilinear(&mut self, x: &Self::Value, out_h: usize, out_w: usize) -> Result<Self::Value>;

    fn upsample_bilinear(&mut self, x: &Self::Value, factor: usize) -> Result<Self::Value> {
        if factor == 0 {
            return Err(Error::config("upsample factor must be at least 1"));
        }
        let (_, _, h, w) = self.value(x).nchw()?;
        self.resize_bilinear(x, h * factor, w * factor)
    }

    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn softplus(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn concat_channels(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;

    /// `x: [N,C,H,W]` times `weights: [N,C,1,1]`, broadcast over H×W.
    fn channel_scale(&mut self, x: &Self::Value, weights: &Self::Value) -> Result<Self::Value>;

    fn batchnorm_frozen(&mut self, x: &Self::Value, bn: &BnAffine<T>) -> Result<Self::Value>;

    fn sum(&mut self, x: &Self::Value) -> Result<Self::Value>;

    fn log_l1_loss(&mut self, pred: &Self::Value, truth: &Tensor<T>, mask: &[bool]) -> Result<Self::Value>;
}

/// Value-only backend for inference.
#[derive(Debug, Default)]
pub struct Eager<T> {
    params: HashMap<String, Arc<Tensor<T>>>,
}

impl<T: Real> Eager<T> {
    pub fn new() -> Self {
        Self { params: HashMap::new() }
    }
}

type Shared<T> = Arc<Tensor<T>>;

impl<T: Real> Backend<T> for Eager<T> {
    type Value = Shared<T>;

    fn constant(&mut self, value: Tensor<T>) -> Shared<T> {
        Arc::new(value)
    }

    fn parameter(&mut self, name: &str, value: &Tensor<T>, _trainable: bool) -> Shared<T> {
        self.params
            .entry(name.to_string())
            .or_insert_with(|| Arc::new(value.clone()))
            .clone()
    }

    fn value<'a>(&'a self, v: &'a Shared<T>) -> &'a Tensor<T> {
        v
    }

    fn conv2d(&mut self, x: &Shared<T>, w: &Shared<T>, b: &Shared<T>, spec: &ConvSpec) -> Result<Shared<T>> {
        conv::conv2d(x, w, b, spec).map(Arc::new)
    }

    fn max_pool2d(&mut self, x: &Shared<T>, kernel: usize, stride: usize) -> Result<Shared<T>> {
        ops::max_pool2d(x, kernel, stride).map(Arc::new)
    }

    fn global_avg_pool(&mut self, x: &Shared<T>) -> Result<Shared<T>> {
        ops::global_avg_pool(x).map(Arc::new)
    }

    fn resize_bilinear(&mut self, x: &Shared<T>, out_h: usize, out_w: usize) -> Result<Shared<T>> {
        ops::resize_bilinear(x, out_h, out_w).map(Arc::new)
    }

    fn relu(&mut self, x: &Shared<T>) -> Result<Shared<T>> {
        Ok(Arc::new(ops::relu(x)))
    }

    fn sigmoid(&mut self, x: &Shared<T>) -> Result<Shared<T>> {
        Ok(Arc::new(ops::sigmoid(x)))
    }

    fn softplus(&mut self, x: &Shared<T>) -> Result<Shared<T>> {
        Ok(Arc::new(ops::softplus(x)))
    }

    fn add(&mut self, a: &Shared<T>, b: &Shared<T>) -> Result<Shared<T>> {
        ops::add(a, b).map(Arc::new)
    }

    fn mul(&mut self, a: &Shared<T>, b: &Shared<T>) -> Result<Shared<T>> {
        ops::mul(a, b).map(Arc::new)
    }

    fn concat_channels(&mut self, a: &Shared<T>, b: &Shared<T>) -> Result<Shared<T>> {
        ops::concat_channels(a, b).map(Arc::new)
    }

    fn channel_scale(&mut self, x: &Shared<T>, weights: &Shared<T>) -> Result<Shared<T>> {
        ops::channel_scale(x, weights).map(Arc::new)
    }

    fn batchnorm_frozen(&mut self, x: &Shared<T>, bn: &BnAffine<T>) -> Result<Shared<T>> {
        bn.apply(x).map(Arc::new)
    }

    fn sum(&mut self, x: &Shared<T>) -> Result<Shared<T>> {
        Ok(Arc::new(Tensor::scalar(x.sum())))
    }

    fn log_l1_loss(&mut self, pred: &Shared<T>, truth: &Tensor<T>, mask: &[bool]) -> Result<Shared<T>> {
        let r = ops::log_l1_loss(pred, truth, mask)?;
        Ok(Arc::new(Tensor::scalar(r.loss)))
    }
}
