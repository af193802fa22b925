//! Differentiable separable resampling of `(B, C, H, W)` tensors, expressed
//! as two matrix products so gradients flow through the standard matmul
//! backward.

use candle_core::Tensor;

use crate::error::Result;
use crate::raster::{area_matrix, bilinear_matrix};

fn apply(x: &Tensor, rh: Vec<f64>, rw: Vec<f64>, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let dev = x.device();
    let dt = x.dtype();
    // rw is out_w × w; we need its transpose w × out_w
    let rw_t = Tensor::from_vec(rw, (out_w, w), dev)?.to_dtype(dt)?.t()?.contiguous()?;
    let rh_t = Tensor::from_vec(rh, (out_h, h), dev)?.to_dtype(dt)?.t()?.contiguous()?;
    let y = x.contiguous()?.reshape((b * c * h, w))?.matmul(&rw_t)?;
    let y = y.reshape((b, c, h, out_w))?.transpose(2, 3)?.contiguous()?;
    let y = y.reshape((b * c * out_w, h))?.matmul(&rh_t)?;
    Ok(y.reshape((b, c, out_w, out_h))?.transpose(2, 3)?.contiguous()?)
}

/// Bilinear resize, align-corners off. Identity when dims already match.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    apply(x, bilinear_matrix(out_h, h), bilinear_matrix(out_w, w), out_h, out_w)
}

/// Fractional area-average resize.
pub fn resize_area(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    apply(x, area_matrix(out_h, h), area_matrix(out_w, w), out_h, out_w)
}
