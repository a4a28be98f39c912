//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("model has no interaction kernel but one is required")]
    MissingInteraction,

    #[error("degenerate critical point at q = {q} (|V''| = {hess:.3e} below tolerance)")]
    DegenerateCritical { q: f64, hess: f64 },

    #[error("saddle values collide: {v0} and {v1} differ by less than tolerance")]
    SaddleValueCollision { v0: f64, v1: f64 },

    #[error("box too small: {0}")]
    BoxTooSmall(String),

    #[error("energy cap {h_max} does not exceed all critical values (max {max_crit})")]
    CapBelowCritical { h_max: f64, max_crit: f64 },

    #[error("point outside domain: {0}")]
    OutsideDomain(String),

    #[error("level {h} is within tolerance of critical value {near}")]
    NearCriticalLevel { h: f64, near: f64 },

    #[error("level-set topology inconsistent on this grid: {0}")]
    TopologyInconsistent(String),

    #[error("no level-set component found: {0}")]
    ComponentNotFound(String),

    #[error("level {0} too close to a saddle value for quadrature")]
    TooCloseToSaddle(f64),

    #[error("|grad H| vanishes on the level curve (= {0:.3e})")]
    VanishingGradient(f64),

    #[error("mesh/table mismatch: {0}")]
    MeshTableMismatch(String),

    #[error("linear solve failed: {0}")]
    SolveFailure(String),

    #[error("source density is empty or non-normalizable")]
    EmptySource,

    #[error("time step unstable after {halvings} halvings (dt = {dt})")]
    UnstableStep { dt: f64, halvings: u32 },

    #[error("boundary flux proxy {rate:.3e} exceeds {limit:.3e} mass per unit time")]
    BoundaryLeak { rate: f64, limit: f64 },

    #[error("residual not representable as a momentum flux: defect {defect:.3e}")]
    NonRepresentableResidual { defect: f64 },

    #[error("snapshot layout mismatch: {0}")]
    SnapshotMismatch(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
