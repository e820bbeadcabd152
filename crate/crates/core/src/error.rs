use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),

    #[error("degenerate scan region: {0}")]
    DegenerateRegion(String),

    #[error("invalid scene: {}", .0.join("; "))]
    InvalidScene(Vec<String>),

    #[error("no vessel observed: {0}")]
    NoVessel(String),

    #[error("degenerate clustering: {0}")]
    DegenerateCluster(String),

    #[error("ambiguous vein/artery classification (deformations {first:.3} vs {second:.3})")]
    AmbiguousClassification { first: f64, second: f64 },

    #[error("centerline reconstruction failed: {0}")]
    ReconstructionFailed(String),

    #[error("target unreachable: distance {distance:.3} mm exceeds needle length {needle_length:.3} mm")]
    Unreachable { distance: f64, needle_length: f64 },

    #[error("needle geometry error: {0}")]
    NeedleGeometry(String),

    #[error("no collision-free pose within {max_pivot_deg} deg after {attempts} pivot steps")]
    NoClearPose { attempts: usize, max_pivot_deg: f64 },

    #[error("controller did not converge within {steps} steps (last distance {distance:.3} mm)")]
    ConvergenceFailure { steps: usize, distance: f64 },

    #[error("overshoot guard: commanded depth {depth:.3} mm exceeds limit {limit:.3} mm")]
    Overshoot { depth: f64, limit: f64 },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("scan log format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
