//! Data terms. Each returns the batch mean of a per-sample `½‖·‖²`.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::data::Batch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `½(f(x) − τ(x))²`, `τ` the indicator of the closed unit ball.
    Rof,
    /// `½‖f(y) − y‖²` on noisy inputs only.
    Denoise,
    /// `½‖f(y) − t‖²` against the batch target (clean points or regression labels).
    Supervised,
    /// `½‖f(y) − y′‖²` with `y′` an independent noisy copy of the same clean point.
    N2n,
}

impl LossKind {
    pub fn data_term(self, output: &Tensor, batch: &Batch) -> Result<Tensor> {
        let need = |t: &Option<Tensor>, what: &str| {
            t.clone()
                .ok_or_else(|| Error::InvalidArgument(format!("{self:?} loss needs {what} in the batch")))
        };
        match self {
            LossKind::Rof => rof_loss(output, &batch.input),
            LossKind::Denoise => denoise_loss(output, &batch.input),
            LossKind::Supervised => supervised_mse(output, &need(&batch.target, "targets")?),
            LossKind::N2n => n2n_loss(output, &need(&batch.pair, "a second noisy copy")?),
        }
    }
}

/// Indicator of the closed unit ball, one value per row: `[b, 1]`.
pub fn unit_ball_indicator(x: &Tensor) -> Result<Tensor> {
    let (b, n) = x.dims2().ok_or_else(|| Error::Rank {
        op: "unit_ball_indicator",
        expected: 2,
        shape: x.shape().to_vec(),
    })?;
    let data = x
        .data()
        .chunks_exact(n)
        .map(|r| if r.iter().map(|v| v * v).sum::<f64>() <= 1.0 { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::new(data, &[b, 1]))
}

fn half_mean_sq(output: &Tensor, target: &Tensor) -> Result<Tensor> {
    let b = output.shape().first().copied().unwrap_or(1).max(1);
    Ok(output.sub(target)?.sq_norm().scale(0.5 / b as f64))
}

pub fn rof_loss(fx: &Tensor, x: &Tensor) -> Result<Tensor> {
    half_mean_sq(fx, &unit_ball_indicator(x)?)
}

pub fn denoise_loss(fy: &Tensor, y: &Tensor) -> Result<Tensor> {
    half_mean_sq(fy, &y.detach())
}

pub fn supervised_mse(fy: &Tensor, x: &Tensor) -> Result<Tensor> {
    half_mean_sq(fy, x)
}

pub fn n2n_loss(fy: &Tensor, y2: &Tensor) -> Result<Tensor> {
    half_mean_sq(fy, y2)
}
