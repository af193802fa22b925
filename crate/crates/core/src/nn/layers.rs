//! Minimal differentiable layers over candle tensors. Every layer can hand
//! out a copy of itself whose weights are detached from the autograd graph,
//! which is how a network is frozen for the opposing player's update.

use candle_core::{Tensor, D};

use super::params::{Init, ParamPath};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    /// Uniform init with bound `1/sqrt(fan_in)`.
    pub fn new(p: &ParamPath, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            weight: p.get("weight", &[out_dim, in_dim], Init::Uniform(bound))?,
            bias: p.get("bias", &[out_dim], Init::Uniform(bound))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        Ok(y.broadcast_add(&self.bias)?)
    }

    pub fn detached(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// He-uniform init, suited to a following ReLU.
    pub fn new(p: &ParamPath, c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel) as f64;
        Ok(Self {
            weight: p.get("weight", &[c_out, c_in, kernel, kernel], Init::Uniform((6.0 / fan_in).sqrt()))?,
            bias: p.get("bias", &[c_out], Init::Const(0.0))?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }

    pub fn detached(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
            ..*self
        }
    }
}

/// 3×3, stride-2 transposed convolution that exactly doubles both spatial
/// dims (padding 1, output padding 1).
#[derive(Clone, Debug)]
pub struct UpConv {
    weight: Tensor,
    bias: Tensor,
}

impl UpConv {
    pub const KERNEL: usize = 3;
    pub const STRIDE: usize = 2;

    pub fn new(p: &ParamPath, c_in: usize, c_out: usize) -> Result<Self> {
        let k = Self::KERNEL;
        // each output pixel sees about c_in * k * k / stride^2 inputs
        let fan_in = (c_in * k * k) as f64 / (Self::STRIDE * Self::STRIDE) as f64;
        Ok(Self {
            weight: p.get("weight", &[c_in, c_out, k, k], Init::Uniform((6.0 / fan_in).sqrt()))?,
            bias: p.get("bias", &[c_out], Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(&self.weight, 1, 1, Self::STRIDE, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }

    pub fn detached(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(p: &ParamPath, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: p.get("weight", &[dim], Init::Const(1.0))?,
            bias: p.get("bias", &[dim], Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }

    pub fn detached(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
        }
    }
}

/// Softmax over the last dim. The max shift is detached; the result is
/// invariant to it.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}
