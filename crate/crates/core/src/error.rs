use thiserror::Error;

/// Errors raised by the safety-filter library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("plant stalled: longitudinal speed {vx} m/s is not positive")]
    PlantStall { vx: f64 },

    #[error("longitudinal speed {vx} m/s outside the nominal model domain (vx > 0)")]
    SpeedDomain { vx: f64 },

    #[error("wheel load {index} is nonpositive ({value} N)")]
    LoadDomain { index: usize, value: f64 },

    #[error("load scale w = {w:.4} is below the floor {floor}; load variance diverges")]
    SingularLoadRegime { w: f64, floor: f64 },

    #[error("risk level {0} outside the open interval (0, 0.5)")]
    RiskDomain(f64),

    #[error("standard deviation {0} is negative")]
    VarianceDomain(f64),

    #[error("prediction Jacobian is singular (det = {det:e})")]
    JacobianDegenerate { det: f64 },

    #[error("{what} is not a valid covariance (asymmetry {asym:e}, min eigenvalue {min_eig:e})")]
    CovarianceDomain { what: &'static str, asym: f64, min_eig: f64 },

    #[error("degrees of freedom {nu} must exceed {min}")]
    DofDomain { nu: f64, min: f64 },

    #[error("optimal forgetting factor {0} is outside (0, 1); drift too fast for this estimator")]
    ForgettingDomain(f64),

    #[error("reference path is empty")]
    PathDomain,

    #[error("QP did not converge after {iterations} iterations (max KKT residual {residual:e})")]
    QpNoConverge { iterations: usize, residual: f64 },

    #[error("QP box bounds are infeasible at variable {index} ({lower} > {upper})")]
    QpInfeasibleBox { index: usize, lower: f64, upper: f64 },

    #[error("nominal input matrix is rank deficient; pseudo-inverse undefined")]
    GDegenerate,

    #[error("unknown scenario kind `{0}`")]
    ScenarioDomain(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
