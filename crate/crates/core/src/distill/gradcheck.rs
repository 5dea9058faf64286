//! Central finite differences over the forward pass and stage loss. This
//! route never touches the analytic backward code it checks.

use serde::{Deserialize, Serialize};

use crate::domain::Rng;
use crate::model::{ModelParams, TensorId};

use super::{batch_grad, batch_loss, DistillError, KlDirection, LossWeights, Sample, Stage};

pub const FD_STEP: f64 = 1e-4;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordCheck {
    pub tensor: TensorId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub stage: Stage,
    pub checks: Vec<CoordCheck>,
    pub max_rel_err: f64,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare analytic and central-difference gradients on `coords` trainable
/// coordinates drawn uniformly at random.
pub fn gradcheck(
    stage: Stage,
    params: &ModelParams,
    batch: &[&Sample],
    weights: &LossWeights,
    direction: KlDirection,
    coords: usize,
    seed: u64,
) -> Result<GradcheckReport, DistillError> {
    let (grads, _, _) = batch_grad(stage, params, batch, weights, direction)?;
    let trainable = stage.trainable();
    let sizes: Vec<usize> = trainable.iter().map(|id| id.len(&params.config)).collect();
    let total: usize = sizes.iter().sum();

    let mut rng = Rng::seeded(seed);
    let mut probe = params.clone();
    let mut checks = Vec::with_capacity(coords);
    for _ in 0..coords {
        let mut flat = rng.below(total as u64) as usize;
        let mut slot = 0;
        while flat >= sizes[slot] {
            flat -= sizes[slot];
            slot += 1;
        }
        let id = trainable[slot];
        let original = probe.tensor(id)[flat];

        probe.tensor_mut(id)[flat] = original + FD_STEP;
        let (up, _) = batch_loss(stage, &probe, batch, weights, direction)?;
        probe.tensor_mut(id)[flat] = original - FD_STEP;
        let (down, _) = batch_loss(stage, &probe, batch, weights, direction)?;
        probe.tensor_mut(id)[flat] = original;

        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grads.get(id).expect("trainable gradient")[flat];
        checks.push(CoordCheck {
            tensor: id,
            index: flat,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    let max_rel_err = checks.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport {
        stage,
        checks,
        max_rel_err,
    })
}
