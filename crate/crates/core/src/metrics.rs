//! Measured quantities that the closed-form bounds predict: consensus error,
//! weight distance between coupled runs, loss distance, mean squared
//! per-sample gradient norm, and the power-law fit of stability curves.

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::{Sample, SampleAccess};
use crate::linalg;
use crate::model::{ModelError, ModelSpec};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("power-law fit needs at least {need} strictly positive points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("power-law fit undefined: no strictly positive distances")]
    UndefinedFit,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-round measurement record. `None` fields were not requested.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord<F: Scalar> {
    /// Rounds completed when the snapshot was taken.
    pub t: usize,
    pub train_loss: Option<F>,
    pub test_loss: Option<F>,
    pub consensus_error: Option<F>,
    pub weight_distance: Option<F>,
    pub gbar: Option<F>,
    /// Step size used in the round that produced this state.
    pub eta: F,
}

/// Fixed CSV schema for record streams.
pub const ROUND_CSV_HEADER: &str = "t,train_loss,test_loss,consensus_error,weight_distance,gbar,eta";

fn push_opt<F: Scalar>(line: &mut String, v: Option<F>) {
    line.push(',');
    if let Some(v) = v {
        let _ = write!(line, "{v}");
    }
}

impl<F: Scalar> RoundRecord<F> {
    pub fn to_csv_row(&self) -> String {
        let mut line = format!("{}", self.t);
        push_opt(&mut line, self.train_loss);
        push_opt(&mut line, self.test_loss);
        push_opt(&mut line, self.consensus_error);
        push_opt(&mut line, self.weight_distance);
        push_opt(&mut line, self.gbar);
        let _ = write!(line, ",{}", self.eta);
        line
    }
}

/// Mean squared deviation of agent parameters from their average:
/// `(1/m) sum_k ||theta_k - mean||^2`.
pub fn consensus_error<F: Scalar>(params: &[Vec<F>]) -> F {
    assert!(!params.is_empty());
    let mean = linalg::mean_rows(params);
    let total: F = params
        .iter()
        .map(|p| linalg::norm_sq(&linalg::sub(p, &mean)))
        .sum();
    total / F::from_usize(params.len()).unwrap()
}

/// Squared parameter distance between coupled runs:
/// `sum_k ||theta_k - theta_tilde_k||^2`.
pub fn weight_distance<F: Scalar>(a: &[Vec<F>], b: &[Vec<F>]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| linalg::norm_sq(&linalg::sub(x, y)))
        .sum()
}

/// Held-out mean loss minus training mean loss at a given parameter vector.
pub fn loss_distance<F: Scalar>(
    model: &ModelSpec<F>,
    theta: &[F],
    train: &[Sample<F>],
    held_out: &[Sample<F>],
) -> Result<F, MetricsError> {
    let train_risk = model.empirical_risk(theta, train.iter())?;
    let test_risk = model.empirical_risk(theta, held_out.iter())?;
    Ok(test_risk - train_risk)
}

/// Mean over all `m * n` training samples of the squared per-sample gradient
/// norm at `theta`.
pub fn empirical_gbar<F: Scalar, D: SampleAccess<F>>(
    model: &ModelSpec<F>,
    theta: &[F],
    data: &D,
) -> Result<F, MetricsError> {
    let (m, n) = (data.agents(), data.shard_len());
    let mut acc = F::zero();
    for k in 0..m {
        for i in 0..n {
            let g = model.grad(theta, data.sample(k, i))?;
            acc += linalg::norm_sq(&g);
        }
    }
    Ok(acc / F::from_usize(m * n).unwrap())
}

/// Least-squares slope of `ln(distance)` against `ln(t)` over the post-onset
/// segment (from the first strictly positive distance onward; zero entries
/// inside the segment are skipped as log-undefined).
pub fn powerlaw_fit<F: Scalar>(series: &[(F, F)]) -> Result<F, MetricsError> {
    let onset = series
        .iter()
        .position(|&(t, d)| t > F::zero() && d > F::zero())
        .ok_or(MetricsError::UndefinedFit)?;
    let pts: Vec<(F, F)> = series[onset..]
        .iter()
        .filter(|&&(t, d)| t > F::zero() && d > F::zero())
        .map(|&(t, d)| (t.ln(), d.ln()))
        .collect();
    if pts.len() < 10 {
        return Err(MetricsError::TooFewPoints {
            need: 10,
            got: pts.len(),
        });
    }
    let n = F::from_usize(pts.len()).unwrap();
    let mx: F = pts.iter().map(|p| p.0).sum::<F>() / n;
    let my: F = pts.iter().map(|p| p.1).sum::<F>() / n;
    let mut sxx = F::zero();
    let mut sxy = F::zero();
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == F::zero() {
        // All abscissas identical; slope is undefined.
        return Err(MetricsError::UndefinedFit);
    }
    Ok(sxy / sxx)
}
