//! Bifurcation detection, refinement, and parameter sensitivities.
//!
//! Crossings of the Jacobian determinant along a traced branch are bracketed
//! by sign changes, refined by damped Newton on the square extended system
//! G(u, p) = [F(u, p); det ∂F/∂u] = 0, checked for a finite determinant slope
//! (the degenerate case where several eigenvalues vanish together is reported
//! but excluded), and equipped with ∂p/∂θ from the implicit function theorem
//! applied to G.

use serde::Serialize;

use crate::continuation::{Branch, Diagram};
use crate::error::{Error, Result};
use crate::geometry;
use crate::linalg::{dist, norm_inf, solve, solve_multi, Mat};
use crate::model::{
    det_grad_theta, det_grad_z, jac_theta, jac_z, ModelDef, ModelRhs, StatePoint,
};

/// Minimum |d det/ds| for a crossing to count as a bifurcation.
pub const EPS_SLOPE: f64 = 1e-8;
/// Proximity below which two refined points are considered the same.
pub const DELTA_MERGE: f64 = 1e-6;
/// |det| at a sample below this is an exact crossing on its own.
const EPS_EXACT_ZERO: f64 = 1e-12;

/// A refined bifurcation point.
#[derive(Clone, Debug, Serialize)]
pub struct BifurcationPoint {
    pub z: StatePoint,
    /// d det/ds along the canonically oriented tangent at z.
    pub det_slope: f64,
    /// Sensitivity ∂p/∂θ of the crossing location, raw coordinates.
    pub dp_dtheta: Vec<f64>,
    pub branch_id: usize,
    /// Bracketing sample indices on the source branch.
    pub bracket: (usize, usize),
}

/// A bracketed crossing that could not be refined into a valid bifurcation.
#[derive(Clone, Debug, Serialize)]
pub struct DegenerateCrossing {
    pub branch_id: usize,
    pub bracket: (usize, usize),
    pub reason: String,
}

/// The prediction set: refined bifurcation locations sorted by p, plus the
/// degenerate leftovers.
#[derive(Clone, Debug, Serialize, Default)]
pub struct PredictionSet {
    pub points: Vec<BifurcationPoint>,
    pub degenerate: Vec<DegenerateCrossing>,
}

impl PredictionSet {
    /// Distinct predicted control values: coincident p (within the merge
    /// tolerance) from different states collapses to a single prediction.
    pub fn values(&self) -> Vec<f64> {
        let mut vals: Vec<f64> = Vec::new();
        for pt in &self.points {
            if vals.last().map(|v| (pt.z.p - v).abs() > DELTA_MERGE).unwrap_or(true) {
                vals.push(pt.z.p);
            }
        }
        vals
    }

    /// One representative point per distinct control value.
    pub fn value_points(&self) -> Vec<&BifurcationPoint> {
        let mut out: Vec<&BifurcationPoint> = Vec::new();
        for pt in &self.points {
            if out
                .last()
                .map(|v| (pt.z.p - v.z.p).abs() > DELTA_MERGE)
                .unwrap_or(true)
            {
                out.push(pt);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.values().len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Bracketing index pairs (i, i+1) where the determinant changes sign; a
/// sample sitting exactly on zero yields the degenerate bracket (i, i).
pub fn detect_crossings(branch: &Branch) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let n = branch.samples.len();
    for i in 0..n {
        if branch.samples[i].det.abs() <= EPS_EXACT_ZERO {
            out.push((i, i));
        }
    }
    for i in 0..n.saturating_sub(1) {
        let (a, b) = (branch.samples[i].det, branch.samples[i + 1].det);
        if a.abs() > EPS_EXACT_ZERO && b.abs() > EPS_EXACT_ZERO && a * b < 0.0 {
            out.push((i, i + 1));
        }
    }
    out.sort_unstable();
    out
}

// Extended system G(z) = [F(z); det ∂F/∂u] and its z-Jacobian.
fn eval_extended<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    z: &[f64],
) -> (Vec<f64>, f64) {
    let n = model.state_dim;
    let mut f = vec![0.0; n];
    model.eval_flat(z, theta, &mut f);
    let det = geometry::determinant(model, theta, z);
    (f, det)
}

fn extended_jacobian<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    z: &[f64],
) -> Mat<f64> {
    let n = model.state_dim;
    let jz = jac_z(model, z, theta);
    let dg = det_grad_z(model, z, theta);
    let mut rows: Vec<Vec<f64>> = (0..n).map(|r| jz.row(r).to_vec()).collect();
    rows.push(dg);
    Mat::from_rows(rows)
}

/// Damped Newton on G(u, p) = 0 from a bracket midpoint. The refined point
/// must satisfy both residuals to 1e-10 and carry a determinant slope above
/// [`EPS_SLOPE`].
pub fn refine_bifurcation<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    z_guess: &StatePoint,
) -> Result<BifurcationPoint> {
    let tol = 1e-10;
    let mut z = z_guess.to_flat();
    let (mut f, mut det) = eval_extended(model, theta, &z);
    let mut merit = norm_inf(&f).max(det.abs());
    let mut converged = merit <= tol;
    for _ in 0..25 {
        if converged {
            break;
        }
        let jg = extended_jacobian(model, theta, &z);
        let mut rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        rhs.push(-det);
        let delta = solve(&jg, &rhs).map_err(|_| Error::Refinement { residual: merit })?;
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..6 {
            let znew: Vec<f64> = z.iter().zip(&delta).map(|(zi, d)| zi + alpha * d).collect();
            let (fn_, dn) = eval_extended(model, theta, &znew);
            let m = norm_inf(&fn_).max(dn.abs());
            if m.is_finite() && m < merit {
                z = znew;
                f = fn_;
                det = dn;
                merit = m;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            return Err(Error::Refinement { residual: merit });
        }
        converged = merit <= tol;
    }
    if !converged {
        return Err(Error::Refinement { residual: merit });
    }
    // finite-slope condition
    let tangent = geometry::tangent_field(model, theta, &z)
        .map_err(|_| Error::DegenerateBifurcation { slope: 0.0 })?;
    let slope = geometry::det_and_slope(model, theta, &z, &tangent.unit).1;
    if slope.abs() <= EPS_SLOPE {
        return Err(Error::DegenerateBifurcation { slope });
    }
    let dp_dtheta = grad_bifurcation_at(model, theta, &z)?;
    Ok(BifurcationPoint {
        z: StatePoint::from_flat(&z),
        det_slope: slope,
        dp_dtheta,
        branch_id: 0,
        bracket: (0, 0),
    })
}

fn grad_bifurcation_at<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    z: &[f64],
) -> Result<Vec<f64>> {
    let n = model.state_dim;
    let m = model.param_dim;
    let jg = extended_jacobian(model, theta, z);
    // ∂G/∂θ: F rows from the model Jacobian, det row from its θ gradient
    let jt = jac_theta(model, z, theta);
    let dt = det_grad_theta(model, z, theta);
    let cols: Vec<Vec<f64>> = (0..m)
        .map(|c| {
            let mut col: Vec<f64> = (0..n).map(|r| jt.at(r, c)).collect();
            col.push(dt[c]);
            col
        })
        .collect();
    let xs = solve_multi(&jg, &cols).map_err(|_| Error::DegenerateSensitivity)?;
    // ∂p/∂θ = −(last row of (∂G/∂z)⁻¹ ∂G/∂θ)
    Ok(xs.iter().map(|x| -x[n]).collect())
}

/// Sensitivity ∂p/∂θ of a refined bifurcation point.
pub fn grad_bifurcation<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    bp: &BifurcationPoint,
) -> Result<Vec<f64>> {
    grad_bifurcation_at(model, theta, &bp.z.to_flat())
}

/// Extract the prediction set from a diagram: detect, refine, merge, attach
/// sensitivities. Refinement failures never abort; they are collected as
/// degenerate flags.
pub fn predictions<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    diagram: &Diagram,
) -> PredictionSet {
    let mut points: Vec<BifurcationPoint> = Vec::new();
    let mut degenerate = Vec::new();
    for (bid, branch) in diagram.branches.iter().enumerate() {
        for (i, j) in detect_crossings(branch) {
            let zi = branch.samples[i].z_flat();
            let zj = branch.samples[j].z_flat();
            let guess: Vec<f64> = if i == j {
                zi.clone()
            } else {
                // linear interpolation of the zero between the bracket ends
                let (di, dj) = (branch.samples[i].det, branch.samples[j].det);
                let t = di / (di - dj);
                zi.iter().zip(&zj).map(|(a, b)| a + t * (b - a)).collect()
            };
            match refine_bifurcation(model, theta, &StatePoint::from_flat(&guess)) {
                Ok(mut bp) => {
                    bp.branch_id = bid;
                    bp.bracket = (i, j);
                    points.push(bp);
                }
                Err(e) => degenerate.push(DegenerateCrossing {
                    branch_id: bid,
                    bracket: (i, j),
                    reason: e.to_string(),
                }),
            }
        }
    }
    // sort by (p, u) and merge coincident refinements
    points.sort_by(|a, b| {
        (a.z.p, &a.z.u)
            .partial_cmp(&(b.z.p, &b.z.u))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut merged: Vec<BifurcationPoint> = Vec::new();
    for pt in points {
        let dup = merged.iter().any(|q| {
            (q.z.p - pt.z.p).abs() <= DELTA_MERGE && dist(&q.z.u, &pt.z.u) <= DELTA_MERGE
        });
        if !dup {
            merged.push(pt);
        }
    }
    PredictionSet {
        points: merged,
        degenerate,
    }
}
