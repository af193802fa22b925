//! Set-prediction reconstruction loss: weighted cross-entropy over all
//! queries plus box L1 and (1 − GIoU) over matched pairs.

use candle_core::{DType, Tensor};

use super::matching::{Assignment, MatchWeights};
use crate::error::{shape_err, Error, Result};
use crate::layout::{Category, Layout};
use crate::nn::{LayoutPrediction, PredictionTensors, NUM_CLASSES};

/// Unweighted components; `total` applies the match weights.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReconstructionTerms {
    pub ce: f64,
    pub bbox_l1: f64,
    pub giou: f64,
}

impl ReconstructionTerms {
    pub fn total(&self, w: &MatchWeights) -> f64 {
        w.class * self.ce + w.bbox_l1 * self.bbox_l1 + w.giou * self.giou
    }
}

fn query_targets(n_queries: usize, asg: &Assignment, gt: &Layout, w: &MatchWeights) -> Vec<(usize, f64)> {
    (0..n_queries)
        .map(|q| match asg.gt_for_query(q) {
            Some(g) => (gt.elements[g].category.index(), 1.0),
            None => (Category::NO_OBJECT, w.no_object),
        })
        .collect()
}

/// Reconstruction loss of a single image from detached predictions.
pub fn reconstruction_loss(
    pred: &LayoutPrediction,
    gt: &Layout,
    asg: &Assignment,
    w: &MatchWeights,
) -> Result<ReconstructionTerms> {
    pred.validate()?;
    asg.validate(pred.n_queries(), gt.len())?;
    let targets = query_targets(pred.n_queries(), asg, gt, w);
    let (mut num, mut den) = (0.0, 0.0);
    for (probs, (cls, wt)) in pred.class_probs.iter().zip(&targets) {
        num -= wt * probs[*cls].max(f64::MIN_POSITIVE).ln();
        den += wt;
    }
    let n_gt = gt.len().max(1) as f64;
    let mut terms = ReconstructionTerms {
        ce: if den > 0.0 { num / den } else { 0.0 },
        ..Default::default()
    };
    for &(q, g) in &asg.pairs {
        let b = &gt.elements[g].bbox;
        terms.bbox_l1 += pred.boxes[q].l1(b) / n_gt;
        terms.giou += (1.0 - pred.boxes[q].giou(b)) / n_gt;
    }
    Ok(terms)
}

fn corners(b: &Tensor) -> Result<[Tensor; 4]> {
    let cx = b.narrow(2, 0, 1)?;
    let cy = b.narrow(2, 1, 1)?;
    let hw = (b.narrow(2, 2, 1)? * 0.5)?;
    let hh = (b.narrow(2, 3, 1)? * 0.5)?;
    Ok([(&cx - &hw)?, (&cy - &hh)?, (&cx + &hw)?, (&cy + &hh)?])
}

/// Elementwise GIoU of two `(B, N, 4)` box tensors, shaped `(B, N, 1)`.
pub fn giou_tensor(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [ax0, ay0, ax1, ay1] = corners(a)?;
    let [bx0, by0, bx1, by1] = corners(b)?;
    let area = |x0: &Tensor, y0: &Tensor, x1: &Tensor, y1: &Tensor| -> Result<Tensor> {
        Ok(((x1 - x0)?.relu()? * (y1 - y0)?.relu()?)?)
    };
    let inter = area(&ax0.maximum(&bx0)?, &ay0.maximum(&by0)?, &ax1.minimum(&bx1)?, &ay1.minimum(&by1)?)?;
    let union = ((area(&ax0, &ay0, &ax1, &ay1)? + area(&bx0, &by0, &bx1, &by1)?)? - &inter)?;
    let enclose = area(&ax0.minimum(&bx0)?, &ay0.minimum(&by0)?, &ax1.maximum(&bx1)?, &ay1.maximum(&by1)?)?;
    // max(x, eps) written as relu(x - eps) + eps so it stays differentiable
    let eps = crate::layout::GIOU_EPS;
    let guard = |x: &Tensor| -> Result<Tensor> { Ok(((x - eps)?.relu()? + eps)?) };
    let iou = (&inter / guard(&union)?)?;
    Ok((iou - ((&enclose - &union)? / guard(&enclose)?)?)?)
}

/// Batched, differentiable reconstruction loss. Cross-entropy is a weighted
/// mean over every query in the batch; box terms are summed over matched
/// pairs and divided by the batch's ground-truth count.
pub fn reconstruction_loss_tensor(
    pred: &PredictionTensors,
    gts: &[&Layout],
    assignments: &[Assignment],
    w: &MatchWeights,
) -> Result<(Tensor, ReconstructionTerms)> {
    let (b, nq, k) = pred.logits.dims3()?;
    if k != NUM_CLASSES || gts.len() != b || assignments.len() != b {
        return shape_err(format!(
            "logits {:?} vs {} layouts and {} assignments",
            pred.logits.dims(),
            gts.len(),
            assignments.len()
        ));
    }
    let dtype = pred.logits.dtype();
    let dev = pred.logits.device();
    let mut ce_weights = vec![0.0f64; b * nq * k];
    let mut box_mask = vec![0.0f64; b * nq];
    let mut box_target = vec![0.5f64; b * nq * 4];
    let mut weight_sum = 0.0;
    let mut n_gt = 0usize;
    for (i, (gt, asg)) in gts.iter().zip(assignments).enumerate() {
        asg.validate(nq, gt.len())?;
        n_gt += gt.len();
        for (q, (cls, wt)) in query_targets(nq, asg, gt, w).into_iter().enumerate() {
            ce_weights[(i * nq + q) * k + cls] = wt;
            weight_sum += wt;
        }
        for &(q, g) in &asg.pairs {
            box_mask[i * nq + q] = 1.0;
            box_target[(i * nq + q) * 4..(i * nq + q + 1) * 4].copy_from_slice(&gt.elements[g].bbox.to_array());
        }
    }
    let n_gt = n_gt.max(1) as f64;
    let ce_w = Tensor::from_vec(ce_weights, (b, nq, k), dev)?.to_dtype(dtype)?;
    let mask = Tensor::from_vec(box_mask, (b, nq, 1), dev)?.to_dtype(dtype)?;
    let target = Tensor::from_vec(box_target, (b, nq, 4), dev)?.to_dtype(dtype)?;

    let ce = ((pred.log_probs()? * ce_w)?.sum_all()? * (-1.0 / weight_sum.max(f64::MIN_POSITIVE)))?;
    let l1 = ((pred.boxes.clone() - &target)?.abs()?.broadcast_mul(&mask)?.sum_all()? / n_gt)?;
    let giou = (((giou_tensor(&pred.boxes, &target)?.affine(-1.0, 1.0)? * &mask)?).sum_all()? / n_gt)?;
    let total = ((ce.clone() * w.class)? + (l1.clone() * w.bbox_l1)? + (giou.clone() * w.giou)?)?;

    let scalar = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
    let terms = ReconstructionTerms {
        ce: scalar(&ce)?,
        bbox_l1: scalar(&l1)?,
        giou: scalar(&giou)?,
    };
    if !terms.total(w).is_finite() {
        return Err(Error::NonFinite(format!("reconstruction loss {terms:?}")));
    }
    Ok((total, terms))
}
