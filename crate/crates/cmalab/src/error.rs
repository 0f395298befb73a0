use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("grid of {nodes} nodes exceeds the configured cap of {cap}")]
    MemoryCap { nodes: usize, cap: usize },
    #[error("stencil at node {node} leaves the domain")]
    StencilViolation { node: usize },
    #[error("complex Hessian at node {node} is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    DegenerateHessian { node: usize, min_eigenvalue: f64 },
    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("plurisubharmonicity lost at iteration {iteration} (smallest eigenvalue {min_eigenvalue:e})")]
    Degeneracy {
        iteration: usize,
        min_eigenvalue: f64,
    },
    #[error("linear solve stalled after {iterations} iterations (relative residual {residual:e})")]
    LinearSolve { iterations: usize, residual: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("grid functions live on different domains")]
    DomainMismatch,
    #[error("section at node {base} with height {height:e} touches the domain boundary")]
    SectionEscape { base: usize, height: f64 },
    #[error("section chain broken at level {level}: {reason}")]
    ChainBroken { level: usize, reason: String },
    #[error("rescaled image leaves the source domain")]
    ImageEscape,
    #[error("dilated set escapes the grid box")]
    DilationEscape,
    #[error("node {node} is not covered by the family")]
    Coverage { node: usize },
    #[error("convex envelope did not converge after {sweeps} sweeps (last change {change:e})")]
    EnvelopeNonConvergence { sweeps: usize, change: f64 },
    #[error("function is not convex on the lattice near node {node}")]
    NonConvex { node: usize },
    #[error("no section chain available at node {node}")]
    MissingChain { node: usize },
    #[error("singular transform")]
    SingularTransform,
    #[error("expression error: {0}")]
    Expr(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
