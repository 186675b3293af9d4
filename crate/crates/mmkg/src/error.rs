use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point (t={t}, r={r}) is not strictly inside the light cone")]
    OutsideCone { t: f64, r: f64 },

    #[error("integrand is not integrable near {endpoint}: {detail}")]
    NonIntegrable { endpoint: &'static str, detail: String },

    #[error("quadrature did not converge: achieved error {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {what} (max defect {defect:e})")]
    Precondition { what: String, defect: f64 },

    #[error("time step |dt|={dt} exceeds the CFL limit {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("instability detected at t={t}: {detail}")]
    Unstable { t: f64, detail: String },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("estimator did not settle: drift {drift:e} above threshold {threshold:e}")]
    NonSettling { drift: f64, threshold: f64 },

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data file error: {0}")]
    DataFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
