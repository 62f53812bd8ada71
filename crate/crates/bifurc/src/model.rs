//! Model interface and exact derivative access.
//!
//! A model is a right-hand side F(u, p; θ) for states `u ∈ R^N`, a scalar
//! control condition `p`, and parameters `θ ∈ R^M`, written generically over
//! the [`Scalar`] type so that nested dual numbers deliver exact first-,
//! second-, and third-order partial derivatives of anything computed from it.
//! Optimization always works in raw coordinates; a [`ParamTransform`] maps
//! raw θ to the effective parameters the right-hand side sees, and the chain
//! rule through the transform is carried by the same dual arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::{lift, Dual, Scalar};

/// Elementwise map from raw optimization coordinates to effective parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamTransform {
    Identity,
    /// Effective parameters are `10^θ`; keeps them strictly positive.
    Log10,
}

impl ParamTransform {
    #[inline]
    pub fn apply<S: Scalar>(&self, theta: &[S], out: &mut Vec<S>) {
        out.clear();
        match self {
            ParamTransform::Identity => out.extend_from_slice(theta),
            ParamTransform::Log10 => {
                let ln10 = S::from_f64(std::f64::consts::LN_10);
                out.extend(theta.iter().map(|&t| (t * ln10).exp()));
            }
        }
    }

    pub fn apply_f64(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        self.apply(theta, &mut out);
        out
    }
}

/// Right-hand side of an ODE model, evaluable in any differentiation scalar.
///
/// `eval` receives the *effective* parameters (after the transform) and must
/// fill `out` (length `state_dim`) deterministically with no side effects.
pub trait ModelRhs: Send + Sync {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn eval<S: Scalar>(&self, u: &[S], p: S, theta_eff: &[S], out: &mut [S]);

    /// Optional θ-dependent box for root seeding; `None` uses the model's
    /// static `u_box`.
    fn seed_box(&self, _theta_eff: &[f64]) -> Option<Vec<(f64, f64)>> {
        None
    }
}

/// A point (u, p) of the composite space z = (u_1..u_N, p).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatePoint {
    pub u: Vec<f64>,
    pub p: f64,
}

impl StatePoint {
    pub fn new(u: Vec<f64>, p: f64) -> Self {
        StatePoint { u, p }
    }

    pub fn from_flat(z: &[f64]) -> Self {
        let n = z.len() - 1;
        StatePoint {
            u: z[..n].to_vec(),
            p: z[n],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut z = self.u.clone();
        z.push(self.p);
        z
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.u.iter().all(|x| x.is_finite())
    }
}

/// An ODE model definition: right-hand side plus metadata used by tracing.
#[derive(Clone, Debug)]
pub struct ModelDef<R> {
    pub name: String,
    pub state_dim: usize,
    pub param_dim: usize,
    pub rhs: R,
    pub transform: ParamTransform,
    /// Closed interval of the control condition to trace over.
    pub p_window: (f64, f64),
    /// Per-component state bounds; tracing stops outside, root seeds start
    /// inside (unless the rhs supplies a θ-dependent seed box).
    pub u_box: Vec<(f64, f64)>,
}

impl<R: ModelRhs> ModelDef<R> {
    pub fn new(
        name: impl Into<String>,
        rhs: R,
        transform: ParamTransform,
        p_window: (f64, f64),
        u_box: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let state_dim = rhs.state_dim();
        let param_dim = rhs.param_dim();
        if state_dim == 0 {
            return Err(Error::Usage("state dimension must be positive".into()));
        }
        if p_window.0 >= p_window.1 {
            return Err(Error::Usage(format!(
                "empty control window [{}, {}]",
                p_window.0, p_window.1
            )));
        }
        if u_box.len() != state_dim {
            return Err(Error::Usage(format!(
                "u_box has {} entries for state dimension {}",
                u_box.len(),
                state_dim
            )));
        }
        Ok(ModelDef {
            name: name.into(),
            state_dim,
            param_dim,
            rhs,
            transform,
            p_window,
            u_box,
        })
    }

    pub fn with_p_window(mut self, p_window: (f64, f64)) -> Self {
        self.p_window = p_window;
        self
    }

    /// Box used for root seeding at a given raw θ.
    pub fn seed_box(&self, theta: &[f64]) -> Vec<(f64, f64)> {
        let eff = self.transform.apply_f64(theta);
        self.rhs.seed_box(&eff).unwrap_or_else(|| self.u_box.clone())
    }

    /// Evaluate F at (u, p) with raw parameters θ, generically over scalars.
    pub fn eval_raw<S: Scalar>(&self, u: &[S], p: S, theta: &[S], out: &mut [S]) {
        debug_assert_eq!(u.len(), self.state_dim);
        debug_assert_eq!(theta.len(), self.param_dim);
        debug_assert_eq!(out.len(), self.state_dim);
        let mut eff = Vec::with_capacity(theta.len());
        self.transform.apply(theta, &mut eff);
        self.rhs.eval(u, p, &eff, out);
    }

    /// Evaluate F with a flat z = (u.., p) in any scalar.
    pub fn eval_flat<S: Scalar>(&self, z: &[S], theta: &[S], out: &mut [S]) {
        let n = self.state_dim;
        self.eval_raw(&z[..n], z[n], theta, out);
    }

    fn check_dims(&self, z: &StatePoint, theta: &[f64]) -> Result<()> {
        if z.u.len() != self.state_dim {
            return Err(Error::Usage(format!(
                "state has {} components, model {} expects {}",
                z.u.len(),
                self.name,
                self.state_dim
            )));
        }
        if theta.len() != self.param_dim {
            return Err(Error::Usage(format!(
                "parameter vector has {} components, model {} expects {}",
                theta.len(),
                self.name,
                self.param_dim
            )));
        }
        if !z.is_finite() || theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Usage("non-finite state or parameters".into()));
        }
        Ok(())
    }
}

/// F(u, p; θ) with the parameter transform applied.
pub fn evaluate<R: ModelRhs>(
    model: &ModelDef<R>,
    z: &StatePoint,
    theta: &[f64],
) -> Result<Vec<f64>> {
    model.check_dims(z, theta)?;
    let mut out = vec![0.0; model.state_dim];
    model.eval_raw(&z.u, z.p, theta, &mut out);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::ModelEval {
            u: z.u.clone(),
            p: z.p,
            theta: theta.to_vec(),
        });
    }
    Ok(out)
}

// --- derivative kernels, generic over the scalar ---------------------------

/// N×N Jacobian ∂F/∂u at flat z, in scalar S.
pub fn jac_u_generic<R: ModelRhs, S: Scalar>(
    model: &ModelDef<R>,
    z: &[S],
    theta: &[S],
) -> Mat<Dual<S>> {
    let n = model.state_dim;
    let theta_d = lift(theta);
    let p = Dual::constant(z[n]);
    let mut jac = Mat::zeros(n, n);
    let mut out = vec![Dual::<S>::zero(); n];
    let mut u: Vec<Dual<S>> = lift(&z[..n]);
    for j in 0..n {
        u[j].du = S::one();
        model.eval_raw(&u, p, &theta_d, &mut out);
        u[j].du = S::zero();
        for i in 0..n {
            jac.set(i, j, out[i]);
        }
    }
    jac
}

/// N×(N+1) Jacobian ∂F/∂z (z = (u, p)) at flat z, in scalar S.
pub fn jac_z_generic<R: ModelRhs, S: Scalar>(
    model: &ModelDef<R>,
    z: &[S],
    theta: &[S],
) -> Mat<S> {
    let n = model.state_dim;
    let theta_d = lift(theta);
    let mut jac = Mat::zeros(n, n + 1);
    let mut out = vec![Dual::<S>::zero(); n];
    let mut zd: Vec<Dual<S>> = lift(z);
    for j in 0..=n {
        zd[j].du = S::one();
        model.eval_raw(&zd[..n], zd[n], &theta_d, &mut out);
        zd[j].du = S::zero();
        for i in 0..n {
            jac.set(i, j, out[i].du);
        }
    }
    jac
}

/// N×M Jacobian ∂F/∂θ in raw coordinates (chain rule through the transform).
pub fn jac_theta_generic<R: ModelRhs, S: Scalar>(
    model: &ModelDef<R>,
    z: &[S],
    theta: &[S],
) -> Mat<S> {
    let n = model.state_dim;
    let m = model.param_dim;
    let u: Vec<Dual<S>> = lift(&z[..n]);
    let p = Dual::constant(z[n]);
    let mut jac = Mat::zeros(n, m);
    let mut out = vec![Dual::<S>::zero(); n];
    let mut theta_d: Vec<Dual<S>> = lift(theta);
    for j in 0..m {
        theta_d[j].du = S::one();
        model.eval_raw(&u, p, &theta_d, &mut out);
        theta_d[j].du = S::zero();
        for i in 0..n {
            jac.set(i, j, out[i].du);
        }
    }
    jac
}

/// det(∂F/∂u) at flat z, in scalar S.
pub fn det_jac_u_generic<R: ModelRhs, S: Scalar>(
    model: &ModelDef<R>,
    z: &[S],
    theta: &[S],
) -> S {
    let jac = jac_u_generic(model, z, theta);
    let n = model.state_dim;
    let mut re = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            re.set(i, j, jac.at(i, j).du);
        }
    }
    crate::linalg::lu_det(&re)
}

// The N×N dual matrix from jac_u_generic stores (F_i, ∂F_i/∂u_j); only the
// derivative parts form the Jacobian.
fn jac_parts<S: Scalar>(jac: &Mat<Dual<S>>) -> Mat<S> {
    let n = jac.rows();
    let mut m = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m.set(i, j, jac.at(i, j).du);
        }
    }
    m
}

/// Gradient ∂/∂z of det(∂F/∂u), a vector in R^{N+1}.
pub fn det_grad_z<R: ModelRhs>(model: &ModelDef<R>, z: &[f64], theta: &[f64]) -> Vec<f64> {
    let n = model.state_dim;
    let mut grad = vec![0.0; n + 1];
    let mut zd: Vec<Dual<f64>> = lift(z);
    let theta_d = lift(theta);
    for k in 0..=n {
        zd[k].du = 1.0;
        let det = det_jac_u_generic(model, &zd, &theta_d);
        zd[k].du = 0.0;
        grad[k] = det.du;
    }
    grad
}

/// Gradient ∂/∂θ (raw coordinates) of det(∂F/∂u), a vector in R^M.
pub fn det_grad_theta<R: ModelRhs>(model: &ModelDef<R>, z: &[f64], theta: &[f64]) -> Vec<f64> {
    let m = model.param_dim;
    let zd: Vec<Dual<f64>> = lift(z);
    let mut theta_d: Vec<Dual<f64>> = lift(theta);
    let mut grad = vec![0.0; m];
    for k in 0..m {
        theta_d[k].du = 1.0;
        let det = det_jac_u_generic(model, &zd, &theta_d);
        theta_d[k].du = 0.0;
        grad[k] = det.du;
    }
    grad
}

/// Directional second derivative block: ∂/∂ε [∂F/∂u](z + ε·dir) at ε = 0.
pub fn jac_u_directional<R: ModelRhs>(
    model: &ModelDef<R>,
    z: &[f64],
    theta: &[f64],
    dir: &[f64],
) -> Mat<f64> {
    let n = model.state_dim;
    let zd: Vec<Dual<f64>> = z
        .iter()
        .zip(dir)
        .map(|(&v, &d)| Dual::seeded(v, d))
        .collect();
    let theta_d = lift(theta);
    let jac = jac_u_generic(model, &zd, &theta_d);
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, jac.at(i, j).du.du);
        }
    }
    out
}

/// Derivative selector for [`differentiate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivKind {
    /// ∂F/∂u, an N×N matrix.
    JacU,
    /// ∂F/∂(u, p), an N×(N+1) matrix.
    JacZ,
    /// ∂F/∂θ in raw coordinates, an N×M matrix.
    JacTheta,
    /// ∂/∂z det(∂F/∂u), a 1×(N+1) row.
    DetGradZ,
    /// ∂/∂θ det(∂F/∂u), a 1×M row.
    DetGradTheta,
}

/// Exact derivative of the model at (z, θ), selected at compile time.
pub fn differentiate<R: ModelRhs>(
    model: &ModelDef<R>,
    z: &StatePoint,
    theta: &[f64],
    which: DerivKind,
) -> Result<Mat<f64>> {
    model.check_dims(z, theta)?;
    let zf = z.to_flat();
    let out = match which {
        DerivKind::JacU => jac_parts(&jac_u_generic(model, &zf, theta)),
        DerivKind::JacZ => jac_z_generic(model, &zf, theta),
        DerivKind::JacTheta => jac_theta_generic(model, &zf, theta),
        DerivKind::DetGradZ => Mat::from_rows(vec![det_grad_z(model, &zf, theta)]),
        DerivKind::DetGradTheta => Mat::from_rows(vec![det_grad_theta(model, &zf, theta)]),
    };
    if !out.all_finite() {
        return Err(Error::ModelEval {
            u: z.u.clone(),
            p: z.p,
            theta: theta.to_vec(),
        });
    }
    Ok(out)
}

/// Convenience: real-valued ∂F/∂u at flat z.
pub fn jac_u<R: ModelRhs>(model: &ModelDef<R>, z: &[f64], theta: &[f64]) -> Mat<f64> {
    jac_parts(&jac_u_generic(model, z, theta))
}

/// Convenience: real-valued ∂F/∂z at flat z.
pub fn jac_z<R: ModelRhs>(model: &ModelDef<R>, z: &[f64], theta: &[f64]) -> Mat<f64> {
    jac_z_generic(model, z, theta)
}

/// Convenience: real-valued ∂F/∂θ (raw) at flat z.
pub fn jac_theta<R: ModelRhs>(model: &ModelDef<R>, z: &[f64], theta: &[f64]) -> Mat<f64> {
    jac_theta_generic(model, z, theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// F = p + θ1·u + θ2·u³ (inline copy; the catalog has the shared one).
    struct Cubic;
    impl ModelRhs for Cubic {
        fn state_dim(&self) -> usize {
            1
        }
        fn param_dim(&self) -> usize {
            2
        }
        fn eval<S: Scalar>(&self, u: &[S], p: S, th: &[S], out: &mut [S]) {
            out[0] = p + th[0] * u[0] + th[1] * u[0] * u[0] * u[0];
        }
    }

    fn cubic_model() -> ModelDef<Cubic> {
        ModelDef::new(
            "cubic",
            Cubic,
            ParamTransform::Identity,
            (-3.0, 3.0),
            vec![(-10.0, 10.0)],
        )
        .unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let m = cubic_model();
        let th = [2.5, -1.0];
        let f0 = evaluate(&m, &StatePoint::new(vec![0.0], 0.0), &th).unwrap();
        assert_eq!(f0[0], 0.0);
        let f1 = evaluate(&m, &StatePoint::new(vec![1.0], 0.0), &th).unwrap();
        assert!((f1[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn evaluate_is_pure_bitwise() {
        let m = cubic_model();
        let z = StatePoint::new(vec![0.731], 0.4);
        let th = [1.7, -0.3];
        let a = evaluate(&m, &z, &th).unwrap();
        let b = evaluate(&m, &z, &th).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let m = cubic_model();
        let err = evaluate(&m, &StatePoint::new(vec![0.0, 1.0], 0.0), &[2.5, -1.0]);
        assert!(matches!(err, Err(Error::Usage(_))));
        let err = evaluate(&m, &StatePoint::new(vec![0.0], 0.0), &[2.5]);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn non_finite_theta_rejected() {
        let m = cubic_model();
        let err = evaluate(&m, &StatePoint::new(vec![0.0], 0.0), &[f64::NAN, 1.0]);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn jacobian_u_closed_form() {
        let m = cubic_model();
        let j = differentiate(
            &m,
            &StatePoint::new(vec![1.0], 0.0),
            &[2.5, -1.0],
            DerivKind::JacU,
        )
        .unwrap();
        // θ1 + 3 θ2 u² = 2.5 - 3
        assert!((j.at(0, 0) + 0.5).abs() < 1e-14);
    }

    #[test]
    fn unused_parameter_has_zero_column() {
        struct WithDummy;
        impl ModelRhs for WithDummy {
            fn state_dim(&self) -> usize {
                1
            }
            fn param_dim(&self) -> usize {
                2
            }
            fn eval<S: Scalar>(&self, u: &[S], p: S, th: &[S], out: &mut [S]) {
                out[0] = p - th[0] * u[0];
            }
        }
        let m = ModelDef::new(
            "dummy",
            WithDummy,
            ParamTransform::Identity,
            (-1.0, 1.0),
            vec![(-10.0, 10.0)],
        )
        .unwrap();
        let j = differentiate(
            &m,
            &StatePoint::new(vec![0.4], 0.2),
            &[1.3, 9.9],
            DerivKind::JacTheta,
        )
        .unwrap();
        assert_eq!(j.at(0, 1), 0.0);
    }

    #[test]
    fn det_grad_z_closed_form() {
        // det = θ1 + 3θ2u²; ∂det/∂u = 6θ2u, ∂det/∂p = 0
        let m = cubic_model();
        let g = det_grad_z(&m, &[1.0, 0.0], &[2.5, -1.0]);
        assert!((g[0] + 6.0).abs() < 1e-12);
        assert!(g[1].abs() < 1e-14);
    }

    #[test]
    fn log10_transform_chain_rule() {
        struct Scaled;
        impl ModelRhs for Scaled {
            fn state_dim(&self) -> usize {
                1
            }
            fn param_dim(&self) -> usize {
                1
            }
            fn eval<S: Scalar>(&self, u: &[S], _p: S, th: &[S], out: &mut [S]) {
                out[0] = th[0] * u[0];
            }
        }
        let m = ModelDef::new(
            "scaled",
            Scaled,
            ParamTransform::Log10,
            (0.0, 1.0),
            vec![(0.0, 10.0)],
        )
        .unwrap();
        // F = 10^θ·u; ∂F/∂θ = 10^θ·ln10·u
        let theta = [0.3];
        let u = 1.7;
        let j = jac_theta(&m, &[u, 0.5], &theta);
        let eff = 10f64.powf(0.3);
        assert!((j.at(0, 0) - eff * std::f64::consts::LN_10 * u).abs() < 1e-12);
    }
}
