use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh is invalid: {0}")]
    InvalidMesh(String),

    #[error("edge {a}-{b} is shared by {count} facets; a manifold edge has at most two")]
    NonManifold { a: usize, b: usize, count: usize },

    #[error("facet {facet} has zero area in the reference shape")]
    DegenerateFacet { facet: usize },

    #[error("facet index {facet} out of range (mesh has {count} facets)")]
    FacetOutOfRange { facet: usize, count: usize },

    #[error("barycentric coordinates {b:?} are invalid: {detail}")]
    InvalidBarycentric { b: [f64; 3], detail: String },

    #[error("camera is invalid: {0}")]
    InvalidCamera(String),

    #[error("no inlier correspondences to assemble")]
    EmptyInlierSet,

    #[error(
        "reference shape is not planar: max deviation {deviation:.3e} exceeds {tolerance:.3e}"
    )]
    NotPlanar { deviation: f64, tolerance: f64 },

    #[error("degenerate vertex configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("virtual-vertex Gram matrix is singular beyond repair")]
    VirtualGramSingular,

    #[error("control count {count} out of range [{min}, {max}]")]
    CountOutOfRange { count: usize, min: usize, max: usize },

    #[error("interior block of the regularizer is rank deficient; too few or ill-placed control vertices")]
    RankDeficientInterior,

    #[error("eigen decomposition did not converge")]
    EigenFailure,

    #[error("both sign choices put the surface behind the camera")]
    AllBehindCamera,

    #[error("all correspondences were rejected as outliers")]
    AllRejected,

    #[error(
        "refinement did not converge within {iterations} iterations \
         (relative constraint violation {violation:.3e})"
    )]
    NoConvergence { iterations: usize, violation: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("parameter {name} = {value} out of range: {detail}")]
    ParamOutOfRange {
        name: &'static str,
        value: f64,
        detail: String,
    },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
