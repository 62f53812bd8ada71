//! Steady-state level-set tracing.
//!
//! The level set F(u, p; θ) = 0 is traced over the control window as a set of
//! polyline branches. Disconnected branches are found by deflated Newton
//! searches from Latin-hypercube seeds at the window edge and at a few
//! interior control values; each root is then continued in both directions
//! with an Euler predictor along the unit tangent and a Newton corrector
//! constrained to the hyperplane orthogonal to it. Branches are clipped
//! exactly to the control window so the traced geometry varies smoothly with
//! θ (finite-difference checks of downstream gradients rely on this).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;
use crate::linalg::{dist, norm_inf, solve, Mat};
use crate::model::{jac_u, jac_z, ModelDef, ModelRhs, StatePoint};

/// Tracer configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceSettings {
    /// Pseudo-arclength step size.
    pub step: f64,
    /// Cap on samples per branch.
    pub max_samples: usize,
    /// Corrector convergence tolerance on ‖F‖∞.
    pub corrector_tol: f64,
    /// Corrector iteration cap.
    pub max_corrector_iters: usize,
    /// Number of interior control values seeded in addition to the window edge.
    pub interior_seeds: usize,
    /// Latin-hypercube starting points per seeded control value.
    pub lhs_seeds: usize,
    /// Seed for the (counter-based) generator behind Latin-hypercube sampling.
    pub rng_seed: u64,
    /// Minimum distance between distinct roots.
    pub root_separation: f64,
    /// Iteration cap for the deflated Newton solver.
    pub max_newton_iters: usize,
    /// Corrector-failure backoff: the step is halved at most this many times.
    pub max_backoff: usize,
}

impl Default for TraceSettings {
    fn default() -> Self {
        TraceSettings {
            step: 0.02,
            max_samples: 10_000,
            corrector_tol: 1e-10,
            max_corrector_iters: 25,
            interior_seeds: 5,
            lhs_seeds: 16,
            rng_seed: 0,
            root_separation: 1e-6,
            max_newton_iters: 50,
            max_backoff: 4,
        }
    }
}

/// One traced point of a branch with its geometric annotations.
#[derive(Clone, Debug)]
pub struct BranchSample {
    pub z: StatePoint,
    /// det(∂F/∂u) at z.
    pub det: f64,
    /// Unit tangent in (u, p), oriented along the sample order.
    pub tangent: Vec<f64>,
    /// Arclength of the segment to the previous sample (0 for the first).
    pub ds: f64,
    /// Bifurcation measure φ ∈ [0, 1].
    pub measure: f64,
}

impl BranchSample {
    pub fn z_flat(&self) -> Vec<f64> {
        self.z.to_flat()
    }
}

/// A polyline of steady states. A closed loop repeats its first sample at the
/// end so per-segment sums need no special casing.
#[derive(Clone, Debug)]
pub struct Branch {
    pub samples: Vec<BranchSample>,
    pub closed: bool,
    /// True when tracing stopped early (corrector breakdown or sample cap).
    pub truncated: bool,
}

impl Branch {
    pub fn arclength(&self) -> f64 {
        self.samples.iter().map(|s| s.ds).sum()
    }
}

/// All branches traced for one θ. Immutable once returned.
#[derive(Clone, Debug)]
pub struct Diagram {
    pub branches: Vec<Branch>,
    pub theta: Vec<f64>,
    pub p_window: (f64, f64),
    pub settings: TraceSettings,
    pub diagnostics: Vec<String>,
}

impl Diagram {
    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn sample_count(&self) -> usize {
        self.branches.iter().map(|b| b.samples.len()).sum()
    }
}

// p-sorted index over already-accepted samples, for duplicate suppression.
struct ProximityIndex {
    entries: Vec<(f64, Vec<f64>)>,
}

impl ProximityIndex {
    fn new() -> Self {
        ProximityIndex { entries: Vec::new() }
    }

    fn near(&self, z: &[f64], radius: f64) -> bool {
        let p = z[z.len() - 1];
        let lo = self
            .entries
            .partition_point(|(ep, _)| *ep < p - radius);
        for (ep, ez) in &self.entries[lo..] {
            if *ep > p + radius {
                break;
            }
            if dist(ez, z) <= radius {
                return true;
            }
        }
        false
    }

    fn add_branch(&mut self, branch: &Branch) {
        for s in &branch.samples {
            self.entries.push((s.z.p, s.z_flat()));
        }
        self.entries
            .sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    }
}

/// Newton corrector on the bordered system: find z with ‖F(z)‖∞ ≤ tol on the
/// hyperplane through `z_guess` orthogonal to `constraint_direction`.
pub fn newton_correct<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    z_guess: &StatePoint,
    constraint_direction: &[f64],
    settings: &TraceSettings,
) -> Result<StatePoint> {
    let anchor = z_guess.to_flat();
    let z = newton_correct_flat(model, theta, &anchor, constraint_direction, settings)?;
    Ok(StatePoint::from_flat(&z))
}

fn newton_correct_flat<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    anchor: &[f64],
    dir: &[f64],
    settings: &TraceSettings,
) -> Result<Vec<f64>> {
    let n = model.state_dim;
    if dir.len() != n + 1 || norm_inf(dir) == 0.0 {
        return Err(Error::Usage("constraint direction must be nonzero in R^{N+1}".into()));
    }
    let tol = settings.corrector_tol;
    let mut z = anchor.to_vec();
    let mut f = vec![0.0; n];
    model.eval_flat(&z, theta, &mut f);
    let mut merit = norm_inf(&f);
    for _ in 0..settings.max_corrector_iters {
        let c: f64 = z
            .iter()
            .zip(anchor)
            .zip(dir)
            .map(|((zi, ai), di)| (zi - ai) * di)
            .sum();
        if merit <= tol && c.abs() <= 1e-12 * (1.0 + norm_inf(&z)) {
            return Ok(z);
        }
        let j = jac_z(model, &z, theta);
        let mut rows: Vec<Vec<f64>> = (0..n).map(|r| j.row(r).to_vec()).collect();
        rows.push(dir.to_vec());
        let bordered = Mat::from_rows(rows);
        let mut rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        rhs.push(-c);
        let delta = solve(&bordered, &rhs).map_err(|_| Error::SingularSystem {
            context: "bordered corrector".into(),
        })?;
        // damped update: halve until the residual does not grow
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..5 {
            let znew: Vec<f64> = z.iter().zip(&delta).map(|(zi, d)| zi + alpha * d).collect();
            model.eval_flat(&znew, theta, &mut f);
            let m = norm_inf(&f);
            if m.is_finite() && (m < merit || m <= tol) {
                z = znew;
                merit = m;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // take the smallest damped step anyway; next iteration re-checks
            let znew: Vec<f64> = z.iter().zip(&delta).map(|(zi, d)| zi + alpha * d).collect();
            model.eval_flat(&znew, theta, &mut f);
            let m = norm_inf(&f);
            if !m.is_finite() {
                return Err(Error::CorrectorFailure {
                    residual: merit,
                    iters: settings.max_corrector_iters,
                });
            }
            z = znew;
            merit = m;
        }
    }
    let c: f64 = z
        .iter()
        .zip(anchor)
        .zip(dir)
        .map(|((zi, ai), di)| (zi - ai) * di)
        .sum();
    if merit <= tol && c.abs() <= 1e-12 * (1.0 + norm_inf(&z)) {
        return Ok(z);
    }
    Err(Error::CorrectorFailure {
        residual: merit,
        iters: settings.max_corrector_iters,
    })
}

// Deflation operator Π_r (1/‖u−r‖² + 1) and its gradient over ‖·‖².
fn deflation(u: &[f64], roots: &[Vec<f64>]) -> Option<(f64, Vec<f64>)> {
    let n = u.len();
    let mut m = 1.0;
    let mut grad = vec![0.0; n];
    for r in roots {
        let d2: f64 = u.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 < 1e-24 {
            return None; // sitting on a found root
        }
        let mr = 1.0 / d2 + 1.0;
        m *= mr;
        // ∇ log mr = -2 (u - r) / (d2² · mr)
        for i in 0..n {
            grad[i] += -2.0 * (u[i] - r[i]) / (d2 * d2 * mr);
        }
    }
    for g in grad.iter_mut() {
        *g *= m; // ∇M = M · Σ ∇log m_r
    }
    Some((m, grad))
}

fn deflated_newton<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    p0: f64,
    start: &[f64],
    roots: &[Vec<f64>],
    bounds: &[(f64, f64)],
    settings: &TraceSettings,
) -> Option<Vec<f64>> {
    let n = model.state_dim;
    let mut u = start.to_vec();
    let mut f = vec![0.0; n];
    let escape = bounds
        .iter()
        .map(|(lo, hi)| 10.0 * (hi - lo).abs().max(1.0))
        .collect::<Vec<_>>();
    for _ in 0..settings.max_newton_iters {
        let mut z = u.clone();
        z.push(p0);
        model.eval_flat(&z, theta, &mut f);
        if !f.iter().all(|x| x.is_finite()) {
            return None;
        }
        if norm_inf(&f) <= settings.corrector_tol {
            return Some(u);
        }
        let (m, grad_m) = deflation(&u, roots)?;
        let j = jac_u(model, &z, theta);
        let mut jd = Mat::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                jd.set(r, c, m * j.at(r, c) + f[r] * grad_m[c]);
            }
        }
        let rhs: Vec<f64> = f.iter().map(|x| -m * x).collect();
        let delta = match solve(&jd, &rhs) {
            Ok(d) => d,
            Err(_) => return None,
        };
        // backtrack on the deflated merit ‖M·F‖∞
        let merit = m * norm_inf(&f);
        let mut alpha = 1.0;
        let mut unew = u.clone();
        for _ in 0..6 {
            for i in 0..n {
                unew[i] = u[i] + alpha * delta[i];
            }
            let mut zt = unew.clone();
            zt.push(p0);
            model.eval_flat(&zt, theta, &mut f);
            let ok = f.iter().all(|x| x.is_finite());
            if ok {
                if let Some((mn, _)) = deflation(&unew, roots) {
                    if mn * norm_inf(&f) < merit || norm_inf(&f) <= settings.corrector_tol {
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        u = unew;
        // abandon runaways
        for (i, (lo, hi)) in bounds.iter().enumerate() {
            let mid = 0.5 * (lo + hi);
            if (u[i] - mid).abs() > escape[i] {
                return None;
            }
        }
    }
    None
}

// Plain Newton polish at fixed p; sharpens a converged root toward machine
// precision so downstream quantities vary smoothly with θ.
fn polish_root<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    p0: f64,
    u: &mut Vec<f64>,
) {
    let n = model.state_dim;
    let mut f = vec![0.0; n];
    for _ in 0..3 {
        let mut z = u.clone();
        z.push(p0);
        model.eval_flat(&z, theta, &mut f);
        let j = jac_u(model, &z, theta);
        let rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        if let Ok(delta) = solve(&j, &rhs) {
            let ok = delta.iter().all(|d| d.is_finite());
            if ok {
                for i in 0..n {
                    u[i] += delta[i];
                }
            }
        } else {
            return;
        }
    }
}

fn latin_hypercube(
    bounds: &[(f64, f64)],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let dims = bounds.len();
    let mut strata: Vec<Vec<usize>> = Vec::with_capacity(dims);
    for _ in 0..dims {
        let mut perm: Vec<usize> = (0..count).collect();
        // Fisher-Yates with the counter-based stream
        for i in (1..count).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        strata.push(perm);
    }
    (0..count)
        .map(|i| {
            (0..dims)
                .map(|d| {
                    let (lo, hi) = bounds[d];
                    let cell = strata[d][i] as f64;
                    let frac: f64 = rng.gen();
                    lo + (cell + frac) * (hi - lo) / count as f64
                })
                .collect()
        })
        .collect()
}

/// Distinct steady states u with ‖F(u, p0)‖∞ ≤ tol, found by repeated Newton
/// solves on the deflated residual from Latin-hypercube seeds.
///
/// Non-convergence from every seed yields an empty list, not an error.
pub fn find_roots_deflated<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    p0: f64,
    settings: &TraceSettings,
) -> Result<Vec<Vec<f64>>> {
    let (pmin, pmax) = model.p_window;
    if !(pmin..=pmax).contains(&p0) {
        return Err(Error::Usage(format!(
            "p0 = {p0} outside the control window [{pmin}, {pmax}]"
        )));
    }
    if theta.len() != model.param_dim {
        return Err(Error::Usage(format!(
            "parameter vector has {} components, model expects {}",
            theta.len(),
            model.param_dim
        )));
    }
    let bounds = model.seed_box(theta);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.rng_seed);
    let seeds = latin_hypercube(&bounds, settings.lhs_seeds, &mut rng);
    let mut roots: Vec<Vec<f64>> = Vec::new();
    for seed in &seeds {
        // deflate and restart from the same seed until it stops producing
        for _ in 0..4 {
            match deflated_newton(model, theta, p0, seed, &roots, &bounds, settings) {
                Some(mut u) => {
                    polish_root(model, theta, p0, &mut u);
                    let distinct = roots
                        .iter()
                        .all(|r| dist(r, &u) > settings.root_separation);
                    if distinct && u.iter().all(|x| x.is_finite()) {
                        roots.push(u);
                    } else {
                        break;
                    }
                }
                None => break,
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(roots)
}

struct RawSample {
    z: Vec<f64>,
    tangent: Vec<f64>,
}

enum DirectionEnd {
    WindowExit,
    BoxExit,
    Closed,
    Truncated(String),
    Duplicate,
}

#[allow(clippy::too_many_arguments)]
fn trace_direction<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    z0: &[f64],
    t0: &[f64],
    settings: &TraceSettings,
    index: &ProximityIndex,
    budget: usize,
    out: &mut Vec<RawSample>,
) -> DirectionEnd {
    let (pmin, pmax) = model.p_window;
    let n = model.state_dim;
    let h0 = settings.step;
    let mut z = z0.to_vec();
    let mut t = t0.to_vec();
    let mut arc = 0.0;
    while out.len() < budget {
        let mut h = h0;
        let mut corrected = None;
        for _ in 0..=settings.max_backoff {
            let pred: Vec<f64> = z.iter().zip(&t).map(|(zi, ti)| zi + h * ti).collect();
            match newton_correct_flat(model, theta, &pred, &t, settings) {
                Ok(znew) => {
                    corrected = Some(znew);
                    break;
                }
                Err(_) => h *= 0.5,
            }
        }
        let znew = match corrected {
            Some(z) => z,
            None => return DirectionEnd::Truncated("corrector breakdown".into()),
        };
        let tnew = match geometry::tangent_qr(model, theta, &znew) {
            Ok(t) => t,
            Err(_) => return DirectionEnd::Truncated("degenerate tangent".into()),
        };
        let mut tnew = tnew;
        if crate::linalg::dot(&tnew, &t) < 0.0 {
            for x in tnew.iter_mut() {
                *x = -*x;
            }
        }
        let p = znew[n];
        if p < pmin || p > pmax {
            // clip the last segment exactly to the window boundary
            let bound = if p < pmin { pmin } else { pmax };
            let lam = (bound - z[n]) / (p - z[n]);
            let mut guess: Vec<f64> = z
                .iter()
                .zip(&znew)
                .map(|(a, b)| a + lam * (b - a))
                .collect();
            guess[n] = bound;
            let mut pdir = vec![0.0; n + 1];
            pdir[n] = 1.0;
            if let Ok(zc) = newton_correct_flat(model, theta, &guess, &pdir, settings) {
                if dist(&zc, &z) > 1e-12 {
                    let tc = geometry::tangent_qr(model, theta, &zc)
                        .map(|mut tc| {
                            if crate::linalg::dot(&tc, &t) < 0.0 {
                                for x in tc.iter_mut() {
                                    *x = -*x;
                                }
                            }
                            tc
                        })
                        .unwrap_or_else(|_| tnew.clone());
                    if index.near(&zc, settings.step / 2.0) {
                        return DirectionEnd::Duplicate;
                    }
                    out.push(RawSample { z: zc, tangent: tc });
                }
            }
            return DirectionEnd::WindowExit;
        }
        let outside_box = znew[..n]
            .iter()
            .zip(&model.u_box)
            .any(|(x, (lo, hi))| x < lo || x > hi);
        if outside_box {
            return DirectionEnd::BoxExit;
        }
        arc += dist(&znew, &z);
        // loop closure: back near the start with an aligned tangent
        if arc > 3.0 * h0
            && dist(&znew, z0) < h0 / 2.0
            && crate::linalg::dot(&tnew, t0) > 0.0
        {
            out.push(RawSample {
                z: z0.to_vec(),
                tangent: t0.to_vec(),
            });
            return DirectionEnd::Closed;
        }
        if index.near(&znew, settings.step / 2.0) {
            return DirectionEnd::Duplicate;
        }
        out.push(RawSample {
            z: znew.clone(),
            tangent: tnew.clone(),
        });
        z = znew;
        t = tnew;
    }
    DirectionEnd::Truncated("sample budget exhausted".into())
}

fn assemble_branch<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    raw: Vec<RawSample>,
    closed: bool,
    truncated: bool,
) -> Option<Branch> {
    if raw.len() < 2 {
        return None;
    }
    let mut raw = raw;
    // orient the whole branch by the first sample's tangent: control component
    // non-negative, ties broken by the first nonzero component
    let flip = {
        let t = &raw[0].tangent;
        let n = t.len() - 1;
        if t[n] != 0.0 {
            t[n] < 0.0
        } else {
            t.iter().find(|x| **x != 0.0).map(|x| *x < 0.0).unwrap_or(false)
        }
    };
    if flip {
        raw.reverse();
        for s in raw.iter_mut() {
            for x in s.tangent.iter_mut() {
                *x = -*x;
            }
        }
    }
    let mut samples = Vec::with_capacity(raw.len());
    let mut prev: Option<Vec<f64>> = None;
    for s in raw {
        let ds = prev.as_ref().map(|p| dist(p, &s.z)).unwrap_or(0.0);
        let (det, slope) = geometry::det_and_slope(model, theta, &s.z, &s.tangent);
        let measure = geometry::phi(det, slope);
        prev = Some(s.z.clone());
        samples.push(BranchSample {
            z: StatePoint::from_flat(&s.z),
            det,
            tangent: s.tangent,
            ds,
            measure,
        });
    }
    Some(Branch {
        samples,
        closed,
        truncated,
    })
}

/// Trace the full diagram for θ over the model control window.
///
/// Returns an empty diagram (with a diagnostic) rather than an error when no
/// branch is found.
pub fn trace_branches<R: ModelRhs>(
    model: &ModelDef<R>,
    theta: &[f64],
    settings: &TraceSettings,
) -> Result<Diagram> {
    if theta.len() != model.param_dim {
        return Err(Error::Usage(format!(
            "parameter vector has {} components, model {} expects {}",
            theta.len(),
            model.name,
            model.param_dim
        )));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Usage("non-finite parameters".into()));
    }
    let (pmin, pmax) = model.p_window;
    let mut seeds_p = vec![pmin];
    for k in 1..=settings.interior_seeds {
        seeds_p.push(pmin + k as f64 * (pmax - pmin) / (settings.interior_seeds + 1) as f64);
    }
    let mut index = ProximityIndex::new();
    let mut branches = Vec::new();
    let mut diagnostics = Vec::new();
    let n = model.state_dim;
    for &p0 in &seeds_p {
        let roots = find_roots_deflated(model, theta, p0, settings)?;
        for u0 in roots {
            let mut z0 = u0.clone();
            z0.push(p0);
            if index.near(&z0, settings.step / 2.0) {
                continue;
            }
            let t0 = match geometry::tangent_qr(model, theta, &z0) {
                Ok(mut t) => {
                    // initial orientation: control component non-negative
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
                    t
                }
                Err(_) => {
                    diagnostics.push(format!(
                        "degenerate tangent at seed root p={p0}, skipped"
                    ));
                    continue;
                }
            };
            let mut fwd = Vec::new();
            let end_fwd = trace_direction(
                model, theta, &z0, &t0, settings, &index,
                settings.max_samples, &mut fwd,
            );
            if matches!(end_fwd, DirectionEnd::Duplicate) {
                continue;
            }
            let closed = matches!(end_fwd, DirectionEnd::Closed);
            let mut raw = Vec::new();
            let mut truncated = matches!(end_fwd, DirectionEnd::Truncated(_));
            if closed {
                raw.push(RawSample {
                    z: z0.clone(),
                    tangent: t0.clone(),
                });
                raw.extend(fwd);
            } else {
                let tb: Vec<f64> = t0.iter().map(|x| -x).collect();
                let mut bwd = Vec::new();
                let budget = settings.max_samples.saturating_sub(fwd.len() + 1);
                let end_bwd = trace_direction(
                    model, theta, &z0, &tb, settings, &index, budget, &mut bwd,
                );
                if matches!(end_bwd, DirectionEnd::Duplicate) {
                    continue;
                }
                truncated |= matches!(end_bwd, DirectionEnd::Truncated(_));
                // backward samples reversed and re-oriented along the final order
                bwd.reverse();
                for s in bwd.iter_mut() {
                    for x in s.tangent.iter_mut() {
                        *x = -*x;
                    }
                }
                raw.extend(bwd);
                raw.push(RawSample {
                    z: z0.clone(),
                    tangent: t0.clone(),
                });
                raw.extend(fwd);
            }
            if let DirectionEnd::Truncated(why) = &end_fwd {
                diagnostics.push(format!("branch truncated: {why}"));
            }
            if let Some(branch) = assemble_branch(model, theta, raw, closed, truncated) {
                index.add_branch(&branch);
                branches.push(branch);
            }
        }
    }
    if branches.is_empty() {
        diagnostics.push("no steady-state branches found in the control window".into());
    }
    Ok(Diagram {
        branches,
        theta: theta.to_vec(),
        p_window: model.p_window,
        settings: settings.clone(),
        diagnostics,
    })
}

/// Diagram CSV: one row per sample.
///
/// Columns: `branch_id, p, u_1..u_N, det, measure, ds, t_u_1..t_u_N, t_p`.
/// Floats are written in shortest round-trip form.
pub fn write_diagram_csv<W: std::io::Write>(
    diagram: &Diagram,
    w: &mut W,
) -> std::io::Result<()> {
    let n = diagram
        .branches
        .first()
        .map(|b| b.samples[0].z.u.len())
        .unwrap_or(0);
    let mut header = String::from("branch_id,p");
    for i in 1..=n {
        header.push_str(&format!(",u_{i}"));
    }
    header.push_str(",det,measure,ds");
    for i in 1..=n {
        header.push_str(&format!(",t_u_{i}"));
    }
    header.push_str(",t_p");
    writeln!(w, "{header}")?;
    for (bid, branch) in diagram.branches.iter().enumerate() {
        for s in &branch.samples {
            let mut row = format!("{bid},{}", s.z.p);
            for u in &s.z.u {
                row.push_str(&format!(",{u}"));
            }
            row.push_str(&format!(",{},{},{}", s.det, s.measure, s.ds));
            for t in &s.tangent {
                row.push_str(&format!(",{t}"));
            }
            writeln!(w, "{row}")?;
        }
    }
    Ok(())
}
