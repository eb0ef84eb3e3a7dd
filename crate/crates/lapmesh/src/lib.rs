//! Recover the 3D shape of a deformable triangulated surface from a single
//! image, given point correspondences with a reference template and a
//! calibrated camera.
//!
//! The pipeline is linear at its core: correspondences give two projection
//! rows per point ([`projection`]), a mesh-Laplacian-style operator
//! regularizes the deformation ([`regularizer`]), and the shape is
//! parameterized by a small set of control vertices ([`controls`]). The
//! initial shape is the smallest singular vector of the stacked system
//! ([`solver`]), made robust to mismatches by iterative reprojection-based
//! rejection ([`robust`]) and then polished under exact edge-length
//! inextensibility constraints ([`refine`]). The [`synth`] module generates
//! ground-truthed synthetic scenes for evaluation, and [`pipeline`] ties the
//! stages together behind one configuration struct.
//!
//! Shapes are flat coordinate vectors in vertex-major order throughout:
//! `x = [v0.x, v0.y, v0.z, v1.x, ...]`.

pub mod controls;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod pipeline;
pub mod projection;
pub mod refine;
pub mod regularizer;
pub mod robust;
pub mod solver;
pub mod sparse;
pub mod synth;

pub use error::{Error, Result};
