//! Semi-supervised cost: supervised location error, measure-weighted
//! unsupervised term, and the assembled parameter gradient.
//!
//! The supervised error E takes a geometric mean over predictions and an
//! arithmetic mean over targets, so every target must be matched by some
//! prediction before E reaches zero and extra predictions are tolerated. The
//! unsupervised term (|P| − |D|)·λ·ln Ψ anneals itself away as the prediction
//! count reaches the target count: with too few predictions it pushes the
//! measure Ψ up (toward bifurcation-rich regimes), with too many it pushes Ψ
//! down, and at |P| = |D| it is dropped exactly, leaving L = E.

use serde::{Deserialize, Serialize};

use crate::continuation::Diagram;
use crate::detection::PredictionSet;
use crate::error::{Error, Result};
use crate::geometry;
use crate::model::{ModelDef, ModelRhs};

/// Matched prediction-target distances below this contribute a zero
/// (sub)gradient; E is exactly at its minimum there.
const EPS_MATCH: f64 = 1e-14;

/// Target control-condition values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TargetSet {
    values: Vec<f64>,
}

impl TargetSet {
    /// Validates: nonempty, strictly increasing after sorting, inside the
    /// control window.
    pub fn new(mut values: Vec<f64>, p_window: (f64, f64)) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Usage("target set must be nonempty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage("non-finite target value".into()));
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Usage("target values must be distinct".into()));
        }
        let (lo, hi) = p_window;
        if values.iter().any(|v| *v < lo || *v > hi) {
            return Err(Error::Usage(format!(
                "targets must lie inside the control window [{lo}, {hi}]"
            )));
        }
        Ok(TargetSet { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Cost weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CostConfig {
    /// Weight of the unsupervised term in both value and gradient.
    pub lambda: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig { lambda: 1.0 }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Usage("lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// Loss evaluation summary for one θ.
#[derive(Clone, Debug, Serialize)]
pub struct CostReport {
    pub loss: f64,
    /// Supervised error E; zero when there are no predictions (the term is
    /// omitted from the loss in that case).
    pub error: f64,
    pub psi: f64,
    pub n_predictions: usize,
    pub n_targets: usize,
    pub supervised_term: f64,
    pub unsupervised_term: f64,
    /// ∂L/∂θ in raw coordinates; present only from [`grad_loss`].
    pub grad: Option<Vec<f64>>,
}

/// Supervised error E over prediction values: arithmetic mean over targets of
/// the geometric mean of |p − p′| over predictions.
///
/// An empty prediction slice is the caller's signal to drop the supervised
/// term; it is reported as a usage error here.
pub fn supervised_error(predictions: &[f64], targets: &TargetSet) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Usage(
            "supervised error undefined for an empty prediction set".into(),
        ));
    }
    let inv = 1.0 / predictions.len() as f64;
    let mut sum = 0.0;
    for t in targets.values() {
        let mut prod = 1.0;
        for p in predictions {
            prod *= (p - t).abs().powf(inv);
        }
        sum += prod;
    }
    Ok(sum / targets.len() as f64)
}

// Scalar loss kernel; also used directly by tests.
fn loss_value(n_p: usize, n_d: usize, psi: f64, error: f64, lambda: f64) -> (f64, f64, f64) {
    let coeff = n_p as f64 - n_d as f64;
    let sup = if n_p > 0 { error } else { 0.0 };
    let unsup = if n_p == n_d {
        0.0 // dropped exactly
    } else {
        coeff * lambda * psi.ln()
    };
    (sup + unsup, sup, unsup)
}

fn report_value<R: ModelRhs>(
    _model: &ModelDef<R>,
    diagram: &Diagram,
    pset: &PredictionSet,
    targets: &TargetSet,
    cfg: &CostConfig,
) -> Result<CostReport> {
    cfg.validate()?;
    if diagram.is_empty() {
        return Err(Error::UndefinedLoss);
    }
    let psi = geometry::total_measure(diagram).map_err(|_| Error::UndefinedLoss)?;
    let values = pset.values();
    let n_p = values.len();
    let n_d = targets.len();
    let error = if n_p > 0 {
        supervised_error(&values, targets)?
    } else {
        0.0
    };
    let (loss, sup, unsup) = loss_value(n_p, n_d, psi, error, cfg.lambda);
    Ok(CostReport {
        loss,
        error,
        psi,
        n_predictions: n_p,
        n_targets: n_d,
        supervised_term: sup,
        unsupervised_term: unsup,
        grad: None,
    })
}

/// Loss value L(θ | D) for a traced diagram and its prediction set.
pub fn loss<R: ModelRhs>(
    model: &ModelDef<R>,
    _theta: &[f64],
    diagram: &Diagram,
    pset: &PredictionSet,
    targets: &TargetSet,
    cfg: &CostConfig,
) -> Result<CostReport> {
    report_value(model, diagram, pset, targets, cfg)
}

/// Loss with its full gradient ∂L/∂θ.
///
/// The prediction count is treated as a constant: gradients flow through the
/// individual locations p(θ) (via their refined sensitivities) and through
/// Ψ(θ) (via the measure gradient); the Ψ term is skipped entirely when its
/// coefficient |P| − |D| is zero.
pub fn grad_loss<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    diagram: &Diagram,
    pset: &PredictionSet,
    targets: &TargetSet,
    cfg: &CostConfig,
) -> Result<CostReport> {
    let mut report = report_value(model, diagram, pset, targets, cfg)?;
    let m = model.param_dim;
    let mut grad = vec![0.0; m];
    let n_p = report.n_predictions;
    let n_d = report.n_targets;

    if n_p != n_d {
        let mg = geometry::grad_total_measure(model, theta, diagram)?;
        let coeff = (n_p as f64 - n_d as f64) * cfg.lambda / report.psi;
        for j in 0..m {
            grad[j] += coeff * mg.grad[j];
        }
    }

    if n_p > 0 {
        // dE/dθ: per target, the geometric-mean factor times the log-derivative
        // sum over predictions
        let points = pset.value_points();
        let inv = 1.0 / n_p as f64;
        for t in targets.values() {
            let mut prod = 1.0;
            for pt in &points {
                prod *= (pt.z.p - t).abs().powf(inv);
            }
            let mut logderiv = vec![0.0; m];
            for pt in &points {
                let d = pt.z.p - t;
                if d.abs() < EPS_MATCH {
                    continue; // subgradient at the minimum
                }
                let s = d.signum() / d.abs();
                for j in 0..m {
                    logderiv[j] += s * pt.dp_dtheta[j];
                }
            }
            for j in 0..m {
                grad[j] += prod * inv * logderiv[j] / targets.len() as f64;
            }
        }
    }

    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    report.grad = Some(grad);
    Ok(report)
}
