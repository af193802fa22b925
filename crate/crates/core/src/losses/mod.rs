//! Training losses: the adversarial white-patch losses for both players,
//! the set-prediction reconstruction loss and label smoothing.

mod matching;
mod reconstruction;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Grid;

pub use matching::{hungarian_match, matching_cost_matrix, solve_assignment, Assignment, MatchWeights};
pub use reconstruction::{giou_tensor, reconstruction_loss, reconstruction_loss_tensor, ReconstructionTerms};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Source-domain term weight.
    pub alpha: f64,
    /// Target-domain term weight.
    pub beta: f64,
    /// Adversarial weight in the generator objective. Zero disables
    /// adaptation.
    pub gamma: f64,
    pub smooth_low: f64,
    pub smooth_high: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 1.0,
            gamma: 6.0,
            smooth_low: 0.2,
            smooth_high: 0.8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.beta > 0.0
            && self.gamma >= 0.0
            && self.gamma.is_finite()
            && (0.0..1.0).contains(&self.smooth_low)
            && self.smooth_high > 0.0
            && self.smooth_high <= 1.0
            && self.smooth_low < self.smooth_high;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid loss weights {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingScheme {
    None,
    /// Zeros become `smooth_low`; ones stay.
    #[default]
    OneTarget,
    /// Ones become `smooth_high`; zeros stay.
    OneSource,
    TwoSide,
}

impl SmoothingScheme {
    pub const ALL: [SmoothingScheme; 4] = [Self::None, Self::OneTarget, Self::OneSource, Self::TwoSide];

    /// Smoothed value of a binary label.
    pub fn apply(self, label: bool, w: &LossWeights) -> f64 {
        match (self, label) {
            (Self::OneTarget | Self::TwoSide, false) => w.smooth_low,
            (Self::OneSource | Self::TwoSide, true) => w.smooth_high,
            (_, l) => f64::from(u8::from(l)),
        }
    }
}

/// Smooths a binary white-patch map.
pub fn smooth_labels(map: &Grid, scheme: SmoothingScheme, w: &LossWeights) -> Result<Grid> {
    if !map.is_binary() {
        return Err(Error::InvalidInput("label smoothing needs a binary map".into()));
    }
    let lo = scheme.apply(false, w) as f32;
    let hi = scheme.apply(true, w) as f32;
    Ok(map.map(|v| if v > 0.5 { hi } else { lo }))
}

/// Prediction and its smoothed target for one domain's slice of a batch.
#[derive(Clone, Copy, Debug)]
pub struct DomainMaps<'a> {
    pub pred: &'a Tensor,
    pub target: &'a Tensor,
}

/// A weighted adversarial loss with its per-domain means. A domain absent
/// from the batch contributes nothing and is flagged.
#[derive(Clone, Debug)]
pub struct PdLoss {
    pub loss: Tensor,
    pub source_mean: f64,
    pub target_mean: f64,
    pub source_empty: bool,
    pub target_empty: bool,
}

impl PdLoss {
    pub fn value(&self) -> Result<f64> {
        Ok(self.loss.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    }
}

fn mean_abs(m: Option<DomainMaps>) -> Result<Option<Tensor>> {
    let Some(m) = m else { return Ok(None) };
    if m.pred.dims() != m.target.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            m.pred.dims(),
            m.target.dims()
        )));
    }
    if m.pred.elem_count() == 0 {
        return Ok(None);
    }
    Ok(Some((m.pred - m.target)?.abs()?.mean_all()?))
}

fn combine(source: Option<Tensor>, target: Option<Tensor>, w: &LossWeights) -> Result<PdLoss> {
    let scalar = |t: &Option<Tensor>| -> Result<f64> {
        t.as_ref().map_or(Ok(0.0), |t| Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?))
    };
    let (source_mean, target_mean) = (scalar(&source)?, scalar(&target)?);
    let loss = match (&source, &target) {
        (Some(s), Some(t)) => ((s * w.alpha)? + (t * w.beta)?)?,
        (Some(s), None) => (s * w.alpha)?,
        (None, Some(t)) => (t * w.beta)?,
        (None, None) => return Err(Error::InvalidInput("adversarial loss on an empty batch".into())),
    };
    Ok(PdLoss {
        loss,
        source_mean,
        target_mean,
        source_empty: source.is_none(),
        target_empty: target.is_none(),
    })
}

/// Discriminator objective: `alpha·mean|gt_s − pred_s| + beta·mean|gt_t − pred_t|`,
/// each mean taken over all pixels of that domain's images.
pub fn pd_discriminator_loss(source: Option<DomainMaps>, target: Option<DomainMaps>, w: &LossWeights) -> Result<PdLoss> {
    combine(mean_abs(source)?, mean_abs(target)?, w)
}

/// Generator objective: as the discriminator's, but the source target is the
/// constant `smooth_low` map, so the true white patch never enters.
pub fn pd_generator_loss(pred_s: Option<&Tensor>, target: Option<DomainMaps>, w: &LossWeights) -> Result<PdLoss> {
    let fake = pred_s.map(|p| p.ones_like().and_then(|o| o * w.smooth_low)).transpose()?;
    let source = pred_s.zip(fake.as_ref()).map(|(pred, target)| DomainMaps { pred, target });
    combine(mean_abs(source)?, mean_abs(target)?, w)
}

/// `l_rec + gamma · l_pd_g`.
pub fn generator_total_loss(l_rec: f64, l_pd_g: f64, w: &LossWeights) -> Result<f64> {
    if !l_rec.is_finite() || !l_pd_g.is_finite() {
        return Err(Error::NonFinite(format!("generator loss inputs {l_rec}, {l_pd_g}")));
    }
    Ok(l_rec + w.gamma * l_pd_g)
}
