//! Built-in model catalog.
//!
//! Minimal cubic normal forms, a two-gene toggle switch with Hill
//! cooperativity 2, a linearly chained system extensible in states and
//! parameters for complexity measurements, and a decoupled pair that shares
//! parameters between two identical cubic states (its diagonal branch carries
//! a double eigenvalue crossing, the stress case for degenerate detection).
//!
//! Each model also exposes closed-form Jacobians used as cross-check oracles
//! against the dual-number derivative path in tests.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{ModelDef, ModelRhs, ParamTransform};
use crate::scalar::Scalar;

/// Right-hand sides of the built-in models.
#[derive(Clone, Debug)]
pub enum BuiltinRhs {
    /// F = p + θ1·u + θ2·u³
    SaddleNode,
    /// F = θ1 + p·u + θ2·u³
    Pitchfork,
    /// Two mutually regulating genes with Hill exponent 2; the control
    /// condition is the sensitivity of gene 1 to gene 2. Parameters are
    /// (a1, a2, μ1, μ2, k), optimized in log10 space.
    ToggleSwitch,
    /// First state: sin²p − (θ1·sin²p + 1)·u1. States n ≥ 2 relax linearly:
    /// u̇_n = u_{n−1} − (μ_n² + 1)·u_n where μ_n sums a contiguous slice of θ
    /// (the M indices are tiled as evenly as possible over states 2..N).
    ScalingChain { n: usize, m: usize },
    /// Two decoupled copies of the saddle-node cubic sharing (θ1, θ2); both
    /// eigenvalues cross zero simultaneously on its diagonal branch.
    DegeneratePair,
}

impl ModelRhs for BuiltinRhs {
    fn state_dim(&self) -> usize {
        match self {
            BuiltinRhs::SaddleNode | BuiltinRhs::Pitchfork => 1,
            BuiltinRhs::ToggleSwitch | BuiltinRhs::DegeneratePair => 2,
            BuiltinRhs::ScalingChain { n, .. } => *n,
        }
    }

    fn param_dim(&self) -> usize {
        match self {
            BuiltinRhs::SaddleNode | BuiltinRhs::Pitchfork | BuiltinRhs::DegeneratePair => 2,
            BuiltinRhs::ToggleSwitch => 5,
            BuiltinRhs::ScalingChain { m, .. } => *m,
        }
    }

    fn eval<S: Scalar>(&self, u: &[S], p: S, th: &[S], out: &mut [S]) {
        match self {
            BuiltinRhs::SaddleNode => {
                out[0] = p + th[0] * u[0] + th[1] * u[0] * u[0] * u[0];
            }
            BuiltinRhs::Pitchfork => {
                out[0] = th[0] + p * u[0] + th[1] * u[0] * u[0] * u[0];
            }
            BuiltinRhs::ToggleSwitch => {
                let (a1, a2, mu1, mu2, k) = (th[0], th[1], th[2], th[3], th[4]);
                let one = S::one();
                let x = p * u[1];
                let x2 = x * x;
                let y = k * u[0];
                let y2 = y * y;
                out[0] = (a1 + x2) / (one + x2) - mu1 * u[0];
                out[1] = (a2 + y2) / (one + y2) - mu2 * u[1];
            }
            BuiltinRhs::ScalingChain { n, m } => {
                let s2 = p.sin() * p.sin();
                out[0] = s2 - (th[0] * s2 + S::one()) * u[0];
                for i in 1..*n {
                    let (lo, hi) = chain_slice(i, *n, *m);
                    let mut mu = S::zero();
                    for j in lo..hi {
                        mu += th[j];
                    }
                    out[i] = u[i - 1] - (mu * mu + S::one()) * u[i];
                }
            }
            BuiltinRhs::DegeneratePair => {
                out[0] = p + th[0] * u[0] + th[1] * u[0] * u[0] * u[0];
                out[1] = p + th[0] * u[1] + th[1] * u[1] * u[1] * u[1];
            }
        }
    }

    fn seed_box(&self, theta_eff: &[f64]) -> Option<Vec<(f64, f64)>> {
        match self {
            BuiltinRhs::ToggleSwitch => {
                // The Hill outputs lie between min(a,1) and max(a,1), so steady
                // states live in a box scaled by the baseline production rates.
                let hi = 10.0 * theta_eff[0].max(theta_eff[1]).max(1.0);
                Some(vec![(0.0, hi); 2])
            }
            _ => None,
        }
    }
}

/// θ index slice contributing to μ for chain state `i` (1-based interior
/// states are i = 1..n-1). Slices tile 0..m as evenly as possible.
fn chain_slice(i: usize, n: usize, m: usize) -> (usize, usize) {
    debug_assert!(i >= 1 && i < n);
    let chunks = n - 1;
    let c = i - 1;
    (c * m / chunks, (c + 1) * m / chunks)
}

pub fn saddle_node() -> ModelDef<BuiltinRhs> {
    ModelDef::new(
        "saddle-node",
        BuiltinRhs::SaddleNode,
        ParamTransform::Identity,
        (-3.0, 3.0),
        vec![(-10.0, 10.0)],
    )
    .unwrap()
}

pub fn pitchfork() -> ModelDef<BuiltinRhs> {
    ModelDef::new(
        "pitchfork",
        BuiltinRhs::Pitchfork,
        ParamTransform::Identity,
        (-2.0, 3.0),
        vec![(-10.0, 10.0)],
    )
    .unwrap()
}

pub fn toggle_switch() -> ModelDef<BuiltinRhs> {
    // The static box only bounds tracing; seeding uses the θ-dependent box.
    ModelDef::new(
        "toggle",
        BuiltinRhs::ToggleSwitch,
        ParamTransform::Log10,
        (0.0, 10.0),
        vec![(-1e-6, 1e9); 2],
    )
    .unwrap()
}

pub fn scaling_chain(n: usize, m: usize) -> Result<ModelDef<BuiltinRhs>> {
    if n < 1 || m < 1 {
        return Err(Error::Usage(
            "scaling chain needs at least one state and one parameter".into(),
        ));
    }
    ModelDef::new(
        format!("scaling-chain-{n}x{m}"),
        BuiltinRhs::ScalingChain { n, m },
        ParamTransform::Identity,
        (0.0, std::f64::consts::PI),
        vec![(-10.0, 10.0); n],
    )
}

pub fn degenerate_pair() -> ModelDef<BuiltinRhs> {
    ModelDef::new(
        "degenerate-pair",
        BuiltinRhs::DegeneratePair,
        ParamTransform::Identity,
        (-3.0, 3.0),
        vec![(-10.0, 10.0); 2],
    )
    .unwrap()
}

/// Look up a built-in model by CLI name. `scaling-chain` takes its dimensions
/// from `(n, m)`; the other models ignore them.
pub fn by_name(name: &str, n: usize, m: usize) -> Result<ModelDef<BuiltinRhs>> {
    match name {
        "saddle-node" => Ok(saddle_node()),
        "pitchfork" => Ok(pitchfork()),
        "toggle" | "toggle-switch" => Ok(toggle_switch()),
        "scaling-chain" => scaling_chain(n, m),
        "degenerate-pair" => Ok(degenerate_pair()),
        other => Err(Error::Usage(format!(
            "unknown model '{other}' (available: saddle-node, pitchfork, toggle, scaling-chain, degenerate-pair)"
        ))),
    }
}

pub const BUILTIN_NAMES: &[&str] = &[
    "saddle-node",
    "pitchfork",
    "toggle",
    "scaling-chain",
    "degenerate-pair",
];

/// Steady-state relation of the toggle switch: returns the value of k/μ1
/// implied by a steady state with second component `u2` at control `p`.
///
/// Derived by eliminating u1 from the two steady-state equations; it depends
/// on the parameters only through a1, a2, μ2 and the ratio k/μ1, so jointly
/// rescaling (k, μ1) leaves every solution, and hence every bifurcation
/// location, unchanged. Valid for 1 < u2·μ2 < a2.
pub fn toggle_steady_relation(u2: f64, p: f64, theta_eff: &[f64]) -> Result<f64> {
    let (a1, a2, mu2) = (theta_eff[0], theta_eff[1], theta_eff[3]);
    let uprime = u2 * mu2;
    if !(uprime > 1.0 && uprime < a2) {
        return Err(Error::OracleDomain(format!(
            "u' = {uprime} outside (1, {a2})"
        )));
    }
    let x = (p / mu2) * uprime; // = p·u2
    let x2 = x * x;
    Ok((1.0 + x2) * (a2 - uprime).sqrt() / ((a1 + x2) * (uprime - 1.0).sqrt()))
}

/// Toggle-switch cluster id from raw (log10) parameters: cluster 1 when both
/// baseline production rates are below one (mutual activation), cluster 2
/// when both are above one (mutual inhibition).
pub fn toggle_cluster(theta_raw: &[f64]) -> Option<u8> {
    let (t1, t2) = (theta_raw[0], theta_raw[1]);
    if t1 < 0.0 && t2 < 0.0 {
        Some(1)
    } else if t1 > 0.0 && t2 > 0.0 {
        Some(2)
    } else {
        None
    }
}

// --- closed-form derivative oracles (test cross-checks) --------------------

impl BuiltinRhs {
    /// Closed-form ∂F/∂z (columns u_1..u_N, p) in effective parameters.
    pub fn closed_form_jac_z(&self, u: &[f64], p: f64, th: &[f64]) -> Mat<f64> {
        match self {
            BuiltinRhs::SaddleNode => {
                Mat::from_rows(vec![vec![th[0] + 3.0 * th[1] * u[0] * u[0], 1.0]])
            }
            BuiltinRhs::Pitchfork => {
                Mat::from_rows(vec![vec![p + 3.0 * th[1] * u[0] * u[0], u[0]]])
            }
            BuiltinRhs::ToggleSwitch => {
                let (a1, a2, mu1, mu2, k) = (th[0], th[1], th[2], th[3], th[4]);
                let x2 = (p * u[1]) * (p * u[1]);
                let y2 = (k * u[0]) * (k * u[0]);
                let d1 = (1.0 + x2) * (1.0 + x2);
                let d2 = (1.0 + y2) * (1.0 + y2);
                Mat::from_rows(vec![
                    vec![
                        -mu1,
                        2.0 * p * p * u[1] * (1.0 - a1) / d1,
                        2.0 * p * u[1] * u[1] * (1.0 - a1) / d1,
                    ],
                    vec![
                        2.0 * k * k * u[0] * (1.0 - a2) / d2,
                        -mu2,
                        0.0,
                    ],
                ])
            }
            BuiltinRhs::ScalingChain { n, m } => {
                let s = p.sin();
                let c = p.cos();
                let s2 = s * s;
                let ds2 = 2.0 * s * c;
                let mut rows = vec![vec![0.0; n + 1]; *n];
                rows[0][0] = -(th[0] * s2 + 1.0);
                rows[0][*n] = ds2 - th[0] * ds2 * u[0];
                for i in 1..*n {
                    let (lo, hi) = chain_slice(i, *n, *m);
                    let mu: f64 = th[lo..hi].iter().sum();
                    rows[i][i - 1] = 1.0;
                    rows[i][i] = -(mu * mu + 1.0);
                }
                Mat::from_rows(rows)
            }
            BuiltinRhs::DegeneratePair => Mat::from_rows(vec![
                vec![th[0] + 3.0 * th[1] * u[0] * u[0], 0.0, 1.0],
                vec![0.0, th[0] + 3.0 * th[1] * u[1] * u[1], 1.0],
            ]),
        }
    }

    /// Closed-form ∂F/∂θ_eff (no transform chain rule).
    pub fn closed_form_jac_theta_eff(&self, u: &[f64], p: f64, th: &[f64]) -> Mat<f64> {
        match self {
            BuiltinRhs::SaddleNode => {
                Mat::from_rows(vec![vec![u[0], u[0] * u[0] * u[0]]])
            }
            BuiltinRhs::Pitchfork => Mat::from_rows(vec![vec![1.0, u[0] * u[0] * u[0]]]),
            BuiltinRhs::ToggleSwitch => {
                let (a2, k) = (th[1], th[4]);
                let x2 = (p * u[1]) * (p * u[1]);
                let y2 = (k * u[0]) * (k * u[0]);
                let d2 = (1.0 + y2) * (1.0 + y2);
                Mat::from_rows(vec![
                    vec![1.0 / (1.0 + x2), 0.0, -u[0], 0.0, 0.0],
                    vec![
                        0.0,
                        1.0 / (1.0 + y2),
                        0.0,
                        -u[1],
                        2.0 * k * u[0] * u[0] * (1.0 - a2) / d2,
                    ],
                ])
            }
            BuiltinRhs::ScalingChain { n, m } => {
                let s2 = p.sin() * p.sin();
                let mut rows = vec![vec![0.0; *m]; *n];
                rows[0][0] = -s2 * u[0];
                for i in 1..*n {
                    let (lo, hi) = chain_slice(i, *n, *m);
                    let mu: f64 = th[lo..hi].iter().sum();
                    for j in lo..hi {
                        rows[i][j] = -2.0 * mu * u[i];
                    }
                }
                Mat::from_rows(rows)
            }
            BuiltinRhs::DegeneratePair => Mat::from_rows(vec![
                vec![u[0], u[0] * u[0] * u[0]],
                vec![u[1], u[1] * u[1] * u[1]],
            ]),
        }
    }
}
