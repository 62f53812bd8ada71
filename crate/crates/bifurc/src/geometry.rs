//! Level-set geometry: tangents, determinant, bifurcation measure, and the
//! measure gradient.
//!
//! The steady-state set of F(u, p; θ) is a family of space curves in
//! z = (u, p). Its unit tangent is the nullspace of the rectangular Jacobian
//! ∂F/∂z, computable two ways: from signed minor determinants (an explicit
//! field, smooth in z) or from the QR factors (cheaper; used in hot loops).
//! The bifurcation measure φ compares det(∂F/∂u) against its directional
//! derivative along the curve; its arclength-normalized integral Ψ is the
//! unsupervised loss ingredient, and ∂Ψ/∂θ follows from differentiating the
//! line integrals directly — the curve is never re-traced. Per-point
//! derivative needs (up to third order in F) are met by nesting the dual
//! scalars.

use crate::continuation::Diagram;
use crate::error::{Error, Result};
use crate::linalg::{lu_det, qr_nullspace, solve_multi, Mat};
use crate::model::{
    det_jac_u_generic, jac_theta_generic, jac_u, jac_z_generic, ModelDef, ModelRhs,
};
use crate::scalar::{lift, Dual, Scalar};

/// Guard in the measure denominator; keeps φ defined (and near zero) where
/// the determinant's directional derivative vanishes.
pub const EPS_DEN: f64 = 1e-12;

/// Normal deformation dz/dθ of the level set at a point, one column per
/// parameter direction.
#[derive(Clone, Debug)]
pub struct DeformationField {
    /// M columns, each in R^{N+1}.
    pub columns: Vec<Vec<f64>>,
}

/// Total measure Ψ with its parameter gradient.
#[derive(Clone, Debug)]
pub struct MeasureGradient {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Tangent at a point: the explicit minor-determinant field plus its
/// canonically oriented unit version.
#[derive(Clone, Debug)]
pub struct Tangent {
    /// Component i is (−1)^i times the minor of ∂F/∂z with column i removed.
    pub raw: Vec<f64>,
    /// raw, normalized, with the control component made non-negative (first
    /// nonzero component positive on ties).
    pub unit: Vec<f64>,
}

/// Bifurcation measure formula: φ = (1 + |det| / (|slope| + ε))⁻¹.
pub fn phi(det: f64, slope: f64) -> f64 {
    phi_generic(det, slope)
}

fn phi_generic<S: Scalar>(det: S, slope: S) -> S {
    let eps = S::from_f64(EPS_DEN);
    S::one() / (S::one() + det.abs() / (slope.abs() + eps))
}

/// Unit tangent via the QR nullspace of ∂F/∂z. Sign is an artifact of the
/// factorization; callers orient it. Every use in the measure is even in the
/// tangent, so the sign never leaks into values.
pub fn tangent_qr<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    z: &[f64],
) -> Result<Vec<f64>> {
    let j = jac_z_generic(model, z, theta);
    qr_nullspace(&j)
}

fn tangent_qr_generic<R: ModelRhs, S: Scalar>(
    model: &ModelDef<R>,
    z: &[S],
    theta: &[S],
) -> Result<Vec<S>> {
    let j = jac_z_generic(model, z, theta);
    qr_nullspace(&j)
}

/// Explicit tangent field from signed minor determinants of ∂F/∂z.
pub fn tangent_minors<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    z: &[f64],
) -> Vec<f64> {
    let n = model.state_dim;
    let j = jac_z_generic(model, z, theta);
    let mut t = vec![0.0; n + 1];
    for skip in 0..=n {
        let mut minor = Mat::zeros(n, n);
        let mut col = 0;
        for c in 0..=n {
            if c == skip {
                continue;
            }
            for r in 0..n {
                minor.set(r, col, j.at(r, c));
            }
            col += 1;
        }
        let sign = if skip % 2 == 0 { 1.0 } else { -1.0 };
        t[skip] = sign * lu_det(&minor);
    }
    t
}

fn orient_canonical(t: &mut [f64]) {
    let n = t.len() - 1;
    let flip = if t[n] != 0.0 {
        t[n] < 0.0
    } else {
        t.iter().find(|x| **x != 0.0).map(|x| *x < 0.0).unwrap_or(false)
    };
    if flip {
        for x in t.iter_mut() {
            *x = -*x;
        }
    }
}

/// Tangent to the level set at z: the minor-determinant field and its unit
/// version. Rank deficiency of ∂F/∂z (checked through the QR factors) is a
/// degenerate-geometry error.
pub fn tangent_field<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    z: &[f64],
) -> Result<Tangent> {
    // rank check rides on the QR path
    let _ = tangent_qr(model, theta, z)?;
    let raw = tangent_minors(model, theta, z);
    let nrm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nrm == 0.0 {
        return Err(Error::DegenerateGeometry {
            context: "zero tangent field".into(),
        });
    }
    let mut unit: Vec<f64> = raw.iter().map(|x| x / nrm).collect();
    orient_canonical(&mut unit);
    Ok(Tangent { raw, unit })
}

/// det(∂F/∂u) via LU with partial pivoting. Zero is a legitimate value.
pub fn determinant<R: ModelRhs>(model: &ModelDef<R>, theta: &[f64], z: &[f64]) -> f64 {
    lu_det(&jac_u(model, z, theta))
}

/// Determinant and its directional derivative along a given direction,
/// evaluated in one dual pass.
pub fn det_and_slope<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    z: &[f64],
    direction: &[f64],
) -> (f64, f64) {
    let zd: Vec<Dual<f64>> = z
        .iter()
        .zip(direction)
        .map(|(&zi, &di)| Dual::seeded(zi, di))
        .collect();
    let det = det_jac_u_generic(model, &zd, &lift(theta));
    (det.re, det.du)
}

/// Directional derivative of det(∂F/∂u) along the canonically oriented unit
/// tangent.
pub fn directional_det_derivative<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    z: &[f64],
) -> Result<f64> {
    let t = tangent_field(model, theta, z)?;
    Ok(det_and_slope(model, theta, z, &t.unit).1)
}

/// Bifurcation measure φ ∈ [0, 1] at a point of the level set.
///
/// Rank-deficient geometry is treated as zero slope, which sends φ toward
/// zero for any nonzero determinant; such points are reported as degenerate
/// by the detection layer rather than asserted here.
pub fn bifurcation_measure<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    z: &[f64],
) -> f64 {
    match tangent_qr(model, theta, z) {
        Ok(t) => {
            let (det, slope) = det_and_slope(model, theta, z, &t);
            phi(det, slope)
        }
        Err(_) => phi(determinant(model, theta, z), 0.0),
    }
}

// φ as a field of (z, θ) in any scalar: tangent from QR, determinant and its
// tangent-directional derivative from one nested dual evaluation.
fn measure_at_generic<R: ModelRhs, S: Scalar>(
    model: &ModelDef<R>,
    z: &[S],
    theta: &[S],
) -> Result<S> {
    let t = tangent_qr_generic(model, z, theta)?;
    let zd: Vec<Dual<S>> = z
        .iter()
        .zip(&t)
        .map(|(&zi, &ti)| Dual::seeded(zi, ti))
        .collect();
    let det = det_jac_u_generic(model, &zd, &lift(theta));
    Ok(phi_generic(det.re, det.du))
}

fn measure_integrals(diagram: &Diagram) -> Result<(f64, f64)> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut any = false;
    for b in &diagram.branches {
        if b.samples.len() < 2 {
            continue;
        }
        any = true;
        for i in 1..b.samples.len() {
            let ds = b.samples[i].ds;
            num += 0.5 * (b.samples[i - 1].measure + b.samples[i].measure) * ds;
            den += ds;
        }
    }
    if !any || den <= 0.0 {
        return Err(Error::UndefinedMeasure);
    }
    Ok((num, den))
}

/// Total measure Ψ: the arclength-normalized trapezoid integral of φ over
/// every branch of the diagram.
pub fn total_measure(diagram: &Diagram) -> Result<f64> {
    let (num, den) = measure_integrals(diagram)?;
    Ok(num / den)
}

fn deformation_generic<R: ModelRhs, S: Scalar>(
    model: &ModelDef<R>,
    z: &[S],
    theta: &[S],
) -> Result<Mat<S>> {
    let n = model.state_dim;
    let m = model.param_dim;
    let j = jac_z_generic(model, z, theta);
    let jt = j.transpose();
    let a = j.matmul(&jt); // JJᵀ, N×N
    let b = jac_theta_generic(model, z, theta);
    let cols: Vec<Vec<S>> = (0..m).map(|c| b.col_vec(c)).collect();
    let xs = solve_multi(&a, &cols).map_err(|_| Error::DegenerateGeometry {
        context: "deformation solve: JJᵀ singular".into(),
    })?;
    let mut w = Mat::zeros(n + 1, m);
    for (jcol, x) in xs.iter().enumerate() {
        for r in 0..=n {
            let mut acc = S::zero();
            for k in 0..n {
                acc += jt.at(r, k) * x[k];
            }
            w.set(r, jcol, -acc);
        }
    }
    Ok(w)
}

/// Normal deformation dz/dθ at a level-set point: solve (JJᵀ)x = ∂F/∂θ, then
/// dz/dθ = −Jᵀx. Columns are orthogonal to the tangent by construction.
pub fn deformation_field<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    z: &[f64],
) -> Result<DeformationField> {
    let w = deformation_generic(model, z, theta)?;
    let columns = (0..model.param_dim).map(|c| w.col_vec(c)).collect();
    Ok(DeformationField { columns })
}

// Per-sample integrand pieces for the measure gradient:
//   g[j]   = ∂φ/∂θ_j + ∇_z φ · w_j + φ·σ_j   (d/dθ_j of the φ line integral)
//   sig[j] = σ_j = T̂ · (∂w_j/∂z · T̂)          (d/dθ_j of the arclength integral)
//   wp[j]  = control component of w_j          (for endpoint sliding)
fn sample_integrands<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    z: &[f64],
    tangent: &[f64],
    phi_value: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = model.state_dim;
    let m = model.param_dim;
    let w = deformation_generic::<R, f64>(model, z, theta)?;
    // deformation differentiated along the tangent, all columns at once
    let zd: Vec<Dual<f64>> = z
        .iter()
        .zip(tangent)
        .map(|(&zi, &ti)| Dual::seeded(zi, ti))
        .collect();
    let theta_d = lift(theta);
    let wd = deformation_generic::<R, Dual<f64>>(model, &zd, &theta_d)?;
    let mut g = vec![0.0; m];
    let mut sig = vec![0.0; m];
    let mut wp = vec![0.0; m];
    for j in 0..m {
        let mut s = 0.0;
        for r in 0..=n {
            s += tangent[r] * wd.at(r, j).du;
        }
        sig[j] = s;
        wp[j] = w.at(n, j);
        // explicit θ dependence and the z chain through w_j, in one seed
        let zc: Vec<Dual<f64>> = (0..=n)
            .map(|r| Dual::seeded(z[r], w.at(r, j)))
            .collect();
        let mut tc: Vec<Dual<f64>> = lift(theta);
        tc[j].du = 1.0;
        let phi_d = measure_at_generic(model, &zc, &tc)?;
        g[j] = phi_d.du + phi_value * s;
    }
    Ok((g, sig, wp))
}

/// Gradient of the total measure, ∂Ψ/∂θ, from the traced diagram alone.
///
/// Differentiates the numerator and denominator line integrals of Ψ under the
/// same trapezoid weights as [`total_measure`]: explicit θ dependence of φ,
/// the chain through the normal deformation of the curve, and the tangential
/// stretch of the arclength element. Branch endpoints clipped to the control
/// window additionally slide along the deforming curve to stay on the window
/// boundary, which moves the integration limits; that sliding is accounted
/// for at ends lying on the boundary. No re-trace is performed.
pub fn grad_total_measure<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    diagram: &Diagram,
) -> Result<MeasureGradient> {
    let m = model.param_dim;
    let (int_phi, int_len) = measure_integrals(diagram)?;
    let psi = int_phi / int_len;
    let mut d_phi = vec![0.0; m];
    let mut d_len = vec![0.0; m];
    let (pmin, pmax) = diagram.p_window;
    let n = model.state_dim;
    for (bi, branch) in diagram.branches.iter().enumerate() {
        if branch.samples.len() < 2 {
            continue;
        }
        let mut g_all = Vec::with_capacity(branch.samples.len());
        let mut sig_all = Vec::with_capacity(branch.samples.len());
        let mut wp_all = Vec::with_capacity(branch.samples.len());
        for (si, s) in branch.samples.iter().enumerate() {
            let (g, sig, wp) =
                sample_integrands(model, theta, &s.z_flat(), &s.tangent, s.measure).map_err(
                    |e| Error::AtSample {
                        branch: bi,
                        sample: si,
                        source: Box::new(e),
                    },
                )?;
            g_all.push(g);
            sig_all.push(sig);
            wp_all.push(wp);
        }
        for i in 1..branch.samples.len() {
            let ds = branch.samples[i].ds;
            for j in 0..m {
                d_phi[j] += 0.5 * (g_all[i - 1][j] + g_all[i][j]) * ds;
                d_len[j] += 0.5 * (sig_all[i - 1][j] + sig_all[i][j]) * ds;
            }
        }
        if !branch.closed {
            // endpoint sliding on the window planes
            let last = branch.samples.len() - 1;
            for (idx, sign) in [(0usize, 1.0f64), (last, -1.0)] {
                let s = &branch.samples[idx];
                let on_boundary =
                    (s.z.p - pmin).abs() < 1e-9 || (s.z.p - pmax).abs() < 1e-9;
                let tp = s.tangent[n];
                if on_boundary && tp.abs() > 1e-6 {
                    for j in 0..m {
                        let slide = sign * wp_all[idx][j] / tp;
                        d_phi[j] += s.measure * slide;
                        d_len[j] += slide;
                    }
                }
            }
        }
    }
    let grad = (0..m)
        .map(|j| (d_phi[j] - psi * d_len[j]) / int_len)
        .collect();
    Ok(MeasureGradient { value: psi, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::{trace_branches, TraceSettings};
    use crate::linalg::dot;
    use crate::model::{ModelDef, ParamTransform, StatePoint};
    use crate::models;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn phi_formula_cases() {
        assert_eq!(phi(0.0, 1.0), 1.0);
        assert!((phi(1.0, 1.0) - 0.5).abs() < 1e-12);
        assert!((phi(-0.7, 0.7) - 0.5).abs() < 1e-12);
        // zero slope with unit determinant: guarded toward zero
        assert!(phi(1.0, 0.0) < 2e-12);
    }

    #[test]
    fn saddle_node_tangent_closed_form() {
        let m = models::saddle_node();
        let th = [2.5, -1.0];
        let t = tangent_field(&m, &th, &[0.0, 0.0]).unwrap();
        assert!((t.raw[0] - 1.0).abs() < 1e-14);
        assert!((t.raw[1] + 2.5).abs() < 1e-14);
    }

    #[test]
    fn pitchfork_tangent_closed_form() {
        let m = models::pitchfork();
        let th = [0.5, -1.0];
        // at u=1, p=0 the minors give (u, −(3θ2u² + p)) = (1, 3)
        let t = tangent_field(&m, &th, &[1.0, 0.0]).unwrap();
        assert!((t.raw[0] - 1.0).abs() < 1e-14);
        assert!((t.raw[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn tangent_is_orthogonal_to_gradients() {
        let mut rng = StdRng::seed_from_u64(3);
        for model in [models::saddle_node(), models::pitchfork(), models::toggle_switch()] {
            for _ in 0..100 {
                let mut z: Vec<f64> = (0..model.state_dim)
                    .map(|_| rng.gen_range(0.2..2.0))
                    .collect();
                z.push(rng.gen_range(0.3..2.0));
                let theta: Vec<f64> = (0..model.param_dim)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                let t = tangent_minors(&model, &theta, &z);
                let j = crate::model::jac_z(&model, &z, &theta);
                let scale = t.iter().map(|x| x * x).sum::<f64>().sqrt();
                for r in 0..model.state_dim {
                    let d = dot(j.row(r), &t).abs();
                    assert!(d <= 1e-10 * (1.0 + scale), "row {r}: {d}");
                }
            }
        }
    }

    #[test]
    fn qr_and_minor_tangents_agree_in_direction() {
        let mut rng = StdRng::seed_from_u64(11);
        let builtins = [
            models::saddle_node(),
            models::pitchfork(),
            models::toggle_switch(),
            models::scaling_chain(4, 3).unwrap(),
            models::degenerate_pair(),
        ];
        for model in builtins {
            for _ in 0..100 {
                let mut z: Vec<f64> = (0..model.state_dim)
                    .map(|_| rng.gen_range(0.2..1.8))
                    .collect();
                z.push(rng.gen_range(0.3..2.0));
                let theta: Vec<f64> = (0..model.param_dim)
                    .map(|_| rng.gen_range(-1.2..1.2))
                    .collect();
                let tm = tangent_minors(&model, &theta, &z);
                let nrm = tm.iter().map(|x| x * x).sum::<f64>().sqrt();
                if nrm < 1e-12 {
                    continue; // degenerate draw
                }
                let tq = match tangent_qr(&model, &theta, &z) {
                    Ok(t) => t,
                    Err(_) => continue,
                };
                let cosang = dot(&tm, &tq).abs() / nrm;
                assert!(
                    cosang > 1.0 - 1e-9,
                    "{}: |cos| = {cosang}",
                    model.name
                );
            }
        }
    }

    #[test]
    fn determinant_examples() {
        let m = models::saddle_node();
        let th = [2.5, -1.0];
        assert!((determinant(&m, &th, &[0.0, 0.0]) - 2.5).abs() < 1e-14);
        let fold_u = (2.5f64 / 3.0).sqrt();
        assert!(determinant(&m, &th, &[fold_u, 0.0]).abs() < 1e-12);

        struct DiagLinear;
        impl crate::model::ModelRhs for DiagLinear {
            fn state_dim(&self) -> usize {
                2
            }
            fn param_dim(&self) -> usize {
                1
            }
            fn eval<S: Scalar>(&self, u: &[S], _p: S, _th: &[S], out: &mut [S]) {
                out[0] = -u[0];
                out[1] = -(u[1] + u[1]);
            }
        }
        let dm = ModelDef::new(
            "diag",
            DiagLinear,
            ParamTransform::Identity,
            (-1.0, 1.0),
            vec![(-10.0, 10.0); 2],
        )
        .unwrap();
        assert!((determinant(&dm, &[0.0], &[0.3, 0.4, 0.0]) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn directional_det_derivative_closed_form() {
        // ∂_z det = (6θ2·u, 0); T̂ ∝ (1, −(θ1 + 3θ2u²)); at u=1:
        // slope = −6 / √1.25
        let m = models::saddle_node();
        let th = [2.5, -1.0];
        let s = directional_det_derivative(&m, &th, &[1.0, 0.0]).unwrap();
        let expect = -6.0 / 1.25f64.sqrt();
        assert!((s - expect).abs() < 1e-10, "{s} vs {expect}");
        assert!((expect - -5.366563145999495).abs() < 1e-12);
    }

    #[test]
    fn linear_model_has_zero_slope() {
        struct Linear;
        impl crate::model::ModelRhs for Linear {
            fn state_dim(&self) -> usize {
                1
            }
            fn param_dim(&self) -> usize {
                1
            }
            fn eval<S: Scalar>(&self, u: &[S], p: S, _th: &[S], out: &mut [S]) {
                out[0] = p - u[0];
            }
        }
        let m = ModelDef::new(
            "linear",
            Linear,
            ParamTransform::Identity,
            (-1.0, 1.0),
            vec![(-10.0, 10.0)],
        )
        .unwrap();
        let s = directional_det_derivative(&m, &[0.0], &[0.4, 0.4]).unwrap();
        assert_eq!(s, 0.0);
        // measure ≈ ε-guard level
        let phi_v = bifurcation_measure(&m, &[0.0], &[0.4, 0.4]);
        assert!(phi_v < 2e-12);
    }

    #[test]
    fn measure_is_one_at_fold() {
        let m = models::saddle_node();
        let th = [2.5, -1.0];
        let u = (2.5f64 / 3.0).sqrt();
        let p = -(2.5 * u - u * u * u);
        let phi_v = bifurcation_measure(&m, &th, &[u, p]);
        assert!(phi_v > 1.0 - 1e-9, "{phi_v}");
    }

    #[test]
    fn deformation_columns_are_normal() {
        let mut rng = StdRng::seed_from_u64(5);
        let builtins = [
            models::saddle_node(),
            models::pitchfork(),
            models::toggle_switch(),
            models::scaling_chain(3, 2).unwrap(),
            models::degenerate_pair(),
        ];
        let settings = TraceSettings::default();
        for model in builtins {
            let theta: Vec<f64> = match model.name.as_str() {
                "saddle-node" | "degenerate-pair" => vec![2.5, -1.0],
                "pitchfork" => vec![0.5, -1.0],
                "toggle" => vec![1.0, 1.0, 0.0, 0.0, 0.0],
                _ => vec![0.5; model.param_dim],
            };
            let diagram = trace_branches(&model, &theta, &settings).unwrap();
            assert!(!diagram.is_empty(), "{} traced empty", model.name);
            let branch = &diagram.branches[0];
            for _ in 0..10 {
                let s = &branch.samples[rng.gen_range(0..branch.samples.len())];
                let z = s.z_flat();
                let w = deformation_field(&model, &theta, &z).unwrap();
                let t = tangent_qr(&model, &theta, &z).unwrap();
                for col in &w.columns {
                    assert!(
                        dot(col, &t).abs() < 1e-8,
                        "{}: tangential leak {}",
                        model.name,
                        dot(col, &t)
                    );
                }
            }
        }
    }

    #[test]
    fn deformation_unused_parameter_is_zero_column() {
        struct CubicPlus;
        impl crate::model::ModelRhs for CubicPlus {
            fn state_dim(&self) -> usize {
                1
            }
            fn param_dim(&self) -> usize {
                3
            }
            fn eval<S: Scalar>(&self, u: &[S], p: S, th: &[S], out: &mut [S]) {
                out[0] = p + th[0] * u[0] + th[1] * u[0] * u[0] * u[0];
            }
        }
        let m = ModelDef::new(
            "cubic+",
            CubicPlus,
            ParamTransform::Identity,
            (-3.0, 3.0),
            vec![(-10.0, 10.0)],
        )
        .unwrap();
        let w = deformation_field(&m, &[2.5, -1.0, 7.0], &[0.5, -1.125]).unwrap();
        assert!(w.columns[2].iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn deformation_matches_retrace_displacement() {
        // perturb θ1, correct back onto the curve orthogonally to the tangent,
        // compare the displacement against the deformation column
        let m = models::saddle_node();
        let theta = [2.5, -1.0];
        let settings = TraceSettings::default();
        let diagram = trace_branches(&m, &theta, &settings).unwrap();
        let branch = &diagram.branches[0];
        let s = &branch.samples[branch.samples.len() / 3];
        let z = s.z_flat();
        let w = deformation_field(&m, &theta, &z).unwrap();
        let t = tangent_qr(&m, &theta, &z).unwrap();
        let h = 1e-5;
        for j in 0..2 {
            let mut tp = theta;
            tp[j] += h;
            let zp = crate::continuation::newton_correct(
                &m,
                &tp,
                &StatePoint::from_flat(&z),
                &t,
                &settings,
            )
            .unwrap()
            .to_flat();
            let disp: Vec<f64> = zp.iter().zip(&z).map(|(a, b)| a - b).collect();
            let wnorm = w.columns[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            let err: f64 = disp
                .iter()
                .zip(&w.columns[j])
                .map(|(d, wj)| (d - h * wj) * (d - h * wj))
                .sum::<f64>()
                .sqrt();
            assert!(
                err <= 1e-3 * h * wnorm.max(1.0),
                "column {j}: err {err}, scale {}",
                h * wnorm
            );
        }
    }

    #[test]
    fn total_measure_synthetic_and_linear() {
        // synthetic: measure ≡ 1 gives Ψ = 1 exactly
        let mut diagram = {
            let m = models::saddle_node();
            trace_branches(&m, &[2.5, -1.0], &TraceSettings::default()).unwrap()
        };
        for b in diagram.branches.iter_mut() {
            for s in b.samples.iter_mut() {
                s.measure = 1.0;
            }
        }
        assert!((total_measure(&diagram).unwrap() - 1.0).abs() < 1e-12);

        struct Linear;
        impl crate::model::ModelRhs for Linear {
            fn state_dim(&self) -> usize {
                1
            }
            fn param_dim(&self) -> usize {
                1
            }
            fn eval<S: Scalar>(&self, u: &[S], p: S, _th: &[S], out: &mut [S]) {
                out[0] = p - u[0];
            }
        }
        let m = ModelDef::new(
            "linear",
            Linear,
            ParamTransform::Identity,
            (-1.0, 1.0),
            vec![(-10.0, 10.0)],
        )
        .unwrap();
        let d = trace_branches(&m, &[0.0], &TraceSettings::default()).unwrap();
        assert_eq!(d.branches.len(), 1);
        let psi = total_measure(&d).unwrap();
        assert!(psi < 2e-12, "{psi}");
    }

    #[test]
    fn total_measure_matches_independent_trapezoid() {
        let m = models::saddle_node();
        let diagram = trace_branches(&m, &[2.5, -1.0], &TraceSettings::default()).unwrap();
        let psi = total_measure(&diagram).unwrap();
        // independent oracle: plain trapezoid over the same samples
        let mut num = 0.0;
        let mut den = 0.0;
        for b in &diagram.branches {
            for i in 1..b.samples.len() {
                num += (b.samples[i - 1].measure + b.samples[i].measure) / 2.0
                    * b.samples[i].ds;
                den += b.samples[i].ds;
            }
        }
        assert!((psi - num / den).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&psi));
    }

    #[test]
    fn measure_gradient_zero_for_unused_parameter() {
        struct CubicPlus;
        impl crate::model::ModelRhs for CubicPlus {
            fn state_dim(&self) -> usize {
                1
            }
            fn param_dim(&self) -> usize {
                3
            }
            fn eval<S: Scalar>(&self, u: &[S], p: S, th: &[S], out: &mut [S]) {
                out[0] = p + th[0] * u[0] + th[1] * u[0] * u[0] * u[0];
            }
        }
        let m = ModelDef::new(
            "cubic+",
            CubicPlus,
            ParamTransform::Identity,
            (-3.0, 3.0),
            vec![(-10.0, 10.0)],
        )
        .unwrap();
        let theta = [2.5, -1.0, 3.3];
        let d = trace_branches(&m, &theta, &TraceSettings::default()).unwrap();
        let g = grad_total_measure(&m, &theta, &d).unwrap();
        assert!(g.grad[2].abs() < 1e-10, "{}", g.grad[2]);
    }

    fn fd_psi<R: crate::model::ModelRhs>(
        model: &ModelDef<R>,
        theta: &[f64],
        j: usize,
        h: f64,
        settings: &TraceSettings,
    ) -> f64 {
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[j] += h;
        tm[j] -= h;
        let dp = trace_branches(model, &tp, settings).unwrap();
        let dm = trace_branches(model, &tm, settings).unwrap();
        (total_measure(&dp).unwrap() - total_measure(&dm).unwrap()) / (2.0 * h)
    }

    #[test]
    fn measure_gradient_matches_full_pipeline_fd_saddle() {
        let m = models::saddle_node();
        let theta = [2.5, -1.0];
        let settings = TraceSettings::default();
        let d = trace_branches(&m, &theta, &settings).unwrap();
        let g = grad_total_measure(&m, &theta, &d).unwrap();
        for j in 0..2 {
            let fd = fd_psi(&m, &theta, j, 1e-4, &settings);
            let rel = (g.grad[j] - fd).abs() / fd.abs().max(1e-12);
            assert!(rel < 0.02, "component {j}: {} vs fd {fd}, rel {rel}", g.grad[j]);
        }
    }

    #[test]
    fn measure_gradient_matches_full_pipeline_fd_pitchfork() {
        let m = models::pitchfork();
        let theta = [0.5, -1.0];
        let settings = TraceSettings::default();
        let d = trace_branches(&m, &theta, &settings).unwrap();
        let g = grad_total_measure(&m, &theta, &d).unwrap();
        for j in 0..2 {
            let fd = fd_psi(&m, &theta, j, 1e-4, &settings);
            let rel = (g.grad[j] - fd).abs() / fd.abs().max(1e-12);
            assert!(rel < 0.02, "component {j}: {} vs fd {fd}, rel {rel}", g.grad[j]);
        }
    }
}
