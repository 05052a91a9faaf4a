//! Joint detection/localization objective: binary cross-entropy on class
//! activity plus activity-masked squared error on source coordinates, both
//! normalized by `C * T`.

use thiserror::Error;

/// Predictions are clamped into `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub sed: f64,
    pub sce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { sed: 1.0, sce: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub sed_loss: f64,
    pub sce_loss: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.sed_loss.is_finite() && self.sce_loss.is_finite()
    }
}

pub fn total_loss(sed_loss: f64, sce_loss: f64, weights: LossWeights) -> LossBreakdown {
    LossBreakdown {
        total: weights.sed * sed_loss + weights.sce * sce_loss,
        sed_loss,
        sce_loss,
        weights,
    }
}

fn check(name: &str, len: usize, expected: usize) -> Result<(), LossError> {
    if len != expected {
        return Err(LossError::ShapeMismatch(format!(
            "{name} has {len} values, expected {expected}"
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy over a `T x C` grid of activity predictions and
/// its gradient w.r.t. the predictions. Clamped entries get zero gradient.
pub fn sed_bce(
    pred: &[f64],
    truth: &[f64],
    n_frames: usize,
    n_classes: usize,
) -> Result<(f64, Vec<f64>), LossError> {
    let n = n_frames * n_classes;
    check("prediction", pred.len(), n)?;
    check("truth", truth.len(), n)?;
    let scale = 1.0 / n as f64;
    let mut sum = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let (p, y) = (pred[i], truth[i]);
        let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        sum += y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        if p == pc {
            grad[i] = -scale * (y / pc - (1.0 - y) / (1.0 - pc));
        }
    }
    Ok((-scale * sum, grad))
}

/// `(1/CT) * sum |(pred - truth) * y|^2` over a `T x C x 3` grid, with the
/// gradient w.r.t. the predictions. Inactive classes contribute nothing.
pub fn sce_masked_mse(
    pred: &[f64],
    truth: &[f64],
    activity: &[f64],
    n_frames: usize,
    n_classes: usize,
) -> Result<(f64, Vec<f64>), LossError> {
    let n = n_frames * n_classes;
    check("prediction", pred.len(), 3 * n)?;
    check("truth", truth.len(), 3 * n)?;
    check("activity", activity.len(), n)?;
    let scale = 1.0 / n as f64;
    let mut sum = 0.0;
    let mut grad = vec![0.0; 3 * n];
    for i in 0..n {
        let y = activity[i];
        if y == 0.0 {
            continue;
        }
        for j in 3 * i..3 * i + 3 {
            let r = (pred[j] - truth[j]) * y;
            sum += r * r;
            grad[j] = 2.0 * scale * r * y;
        }
    }
    Ok((scale * sum, grad))
}
