//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated a precondition (dimension mismatch, non-finite input,
    /// invalid configuration).
    #[error("usage error: {0}")]
    Usage(String),

    /// The model produced a non-finite value.
    #[error("model evaluation produced non-finite output at u={u:?}, p={p}, theta={theta:?}")]
    ModelEval {
        u: Vec<f64>,
        p: f64,
        theta: Vec<f64>,
    },

    /// Newton corrector failed to converge.
    #[error("corrector did not converge: residual {residual:.3e} after {iters} iterations")]
    CorrectorFailure { residual: f64, iters: usize },

    /// A linear system in the solver chain was singular.
    #[error("singular system in {context}")]
    SingularSystem { context: String },

    /// The curve geometry is degenerate (rank-deficient Jacobian) at the
    /// queried point.
    #[error("degenerate geometry: {context}")]
    DegenerateGeometry { context: String },

    /// Level-set tracing found no branches.
    #[error("empty diagram: {0}")]
    EmptyDiagram(String),

    /// Total measure is undefined (no branch with at least two samples).
    #[error("measure undefined for an empty diagram")]
    UndefinedMeasure,

    /// Loss is undefined because the diagram is empty; re-seed and re-trace.
    #[error("loss undefined: diagram has no branches (re-seed the trace)")]
    UndefinedLoss,

    /// Newton refinement of a candidate bifurcation diverged.
    #[error("bifurcation refinement failed: residual {residual:.3e}")]
    Refinement { residual: f64 },

    /// Refined point violates the finite-slope condition.
    #[error("degenerate bifurcation: |d det/ds| = {slope:.3e} below threshold")]
    DegenerateBifurcation { slope: f64 },

    /// The extended-system Jacobian is singular; no parameter sensitivity.
    #[error("degenerate sensitivity: extended Jacobian is singular")]
    DegenerateSensitivity,

    /// Input outside the validity domain of an analytic relation.
    #[error("oracle domain violation: {0}")]
    OracleDomain(String),

    /// A gradient passed to the optimizer was non-finite.
    #[error("non-finite gradient")]
    NonFiniteGradient,

    /// Geometry failure at a specific diagram sample.
    #[error("degenerate geometry at branch {branch}, sample {sample}: {source}")]
    AtSample {
        branch: usize,
        sample: usize,
        #[source]
        source: Box<Error>,
    },
}
