//! C ABI for the reconstruction library.
//!
//! Every object crosses the boundary as an opaque handle created by a
//! `lap_*_new`/`lap_*_load_*` function and released by the matching
//! `lap_*_free`; handles are never shared between those calls and plain C
//! structs (`LapOptions`, `LapBallOptions`) configure the pipeline by value.
//! All functions return [`LapStatus`]; on anything but `LAP_STATUS_OK` a
//! human-readable description is available from [`lap_last_error_message`]
//! until the next failing call on the same thread. Null handles are
//! rejected, never dereferenced, and panics are caught at the boundary and
//! reported as `LAP_STATUS_INTERNAL`.
//!
//! The generated header lives at `include/lapmesh.h`; it is refreshed on
//! every build of this crate.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nalgebra::{DVector, Point3, Vector2, Vector3};

use lapmesh::error::Error;
use lapmesh::mesh::{BaryPoint, TriMesh};
use lapmesh::pipeline::{
    ground_truth_report, reconstruct, BallSpec, ReconstructOptions, SurfaceKind,
};
use lapmesh::projection::{
    reprojection_rms, Camera, Correspondence, CorrespondenceSet,
};
use lapmesh::refine::{Cylinder, Line3};

/// Outcome of a call. Anything but `OK` leaves a message for
/// [`lap_last_error_message`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LapStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Invalid input: bad file contents, out-of-range parameter,
    /// inconsistent sizes.
    InvalidArgument = 2,
    /// The file system refused.
    Io = 3,
    /// The solve failed numerically (degenerate geometry, eigen failure,
    /// every correspondence rejected).
    NumericalFailure = 4,
    /// Refinement ran out of iterations; the result handle is still
    /// produced, best-effort.
    NoConvergence = 5,
    /// A panic was caught at the boundary; state is unspecified but memory
    /// is safe.
    Internal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message)
        .unwrap_or_else(|_| CString::new("error message contained NUL").expect("valid literal"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LapStatus {
    match e {
        Error::Io(_) => LapStatus::Io,
        Error::NoConvergence { .. } => LapStatus::NoConvergence,
        Error::EigenFailure
        | Error::AllBehindCamera
        | Error::AllRejected
        | Error::VirtualGramSingular
        | Error::RankDeficientInterior
        | Error::DegenerateConfiguration(_) => LapStatus::NumericalFailure,
        _ => LapStatus::InvalidArgument,
    }
}

fn fail(e: Error) -> LapStatus {
    let status = status_of(&e);
    set_error(e.to_string());
    status
}

fn fail_null(what: &str) -> LapStatus {
    set_error(format!("{what} must not be null"));
    LapStatus::NullPointer
}

/// Runs a fallible body, converting panics into `Internal`.
fn guarded(f: impl FnOnce() -> LapStatus) -> LapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic of unknown type".into());
            set_error(format!("internal panic: {msg}"));
            LapStatus::Internal
        }
    }
}

unsafe fn path_arg(ptr: *const c_char, what: &str) -> Result<PathBuf, LapStatus> {
    if ptr.is_null() {
        return Err(fail_null(what));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error(format!("{what} is not valid UTF-8"));
            Err(LapStatus::InvalidArgument)
        }
    }
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> LapStatus {
    if out.is_null() {
        return fail_null("out");
    }
    *out = Box::into_raw(Box::new(value));
    LapStatus::Ok
}

/// Version of the library as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Description of the most recent failure on this thread, or null if none
/// occurred yet. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|c| c.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Reference template mesh (opaque).
pub struct LapMesh {
    inner: TriMesh,
}

/// Pinhole camera (opaque).
pub struct LapCamera {
    inner: Camera,
}

/// A batch of template-to-image point correspondences (opaque).
pub struct LapCorrespondences {
    inner: CorrespondenceSet,
}

/// Loads a triangulated template from an OBJ file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid location.
#[no_mangle]
pub unsafe extern "C" fn lap_mesh_load_obj(
    path: *const c_char,
    out: *mut *mut LapMesh,
) -> LapStatus {
    guarded(|| {
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match TriMesh::load_obj(&path) {
            Ok(mesh) => write_handle(out, LapMesh { inner: mesh }),
            Err(e) => fail(e),
        }
    })
}

/// Builds a template from raw arrays: `vertices` holds `3 * n_vertices`
/// coordinates (x, y, z per vertex), `facets` holds `3 * n_facets`
/// zero-based vertex indices.
///
/// # Safety
/// The arrays must be readable at those lengths; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lap_mesh_from_arrays(
    vertices: *const f64,
    n_vertices: u32,
    facets: *const u32,
    n_facets: u32,
    out: *mut *mut LapMesh,
) -> LapStatus {
    guarded(|| {
        if vertices.is_null() {
            return fail_null("vertices");
        }
        if facets.is_null() {
            return fail_null("facets");
        }
        let vs = std::slice::from_raw_parts(vertices, 3 * n_vertices as usize);
        let fs = std::slice::from_raw_parts(facets, 3 * n_facets as usize);
        let points: Vec<Point3<f64>> = vs
            .chunks_exact(3)
            .map(|c| Point3::new(c[0], c[1], c[2]))
            .collect();
        let triangles: Vec<[usize; 3]> = fs
            .chunks_exact(3)
            .map(|c| [c[0] as usize, c[1] as usize, c[2] as usize])
            .collect();
        match TriMesh::new(points, triangles, "ffi") {
            Ok(mesh) => write_handle(out, LapMesh { inner: mesh }),
            Err(e) => fail(e),
        }
    })
}

/// Number of vertices, or 0 for a null handle.
#[no_mangle]
pub extern "C" fn lap_mesh_num_vertices(mesh: *const LapMesh) -> u32 {
    if mesh.is_null() {
        return 0;
    }
    unsafe { (*mesh).inner.num_vertices() as u32 }
}

/// Number of facets, or 0 for a null handle.
#[no_mangle]
pub extern "C" fn lap_mesh_num_facets(mesh: *const LapMesh) -> u32 {
    if mesh.is_null() {
        return 0;
    }
    unsafe { (*mesh).inner.num_facets() as u32 }
}

/// Releases a mesh handle. Null is a no-op.
///
/// # Safety
/// `mesh` must come from a `lap_mesh_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn lap_mesh_free(mesh: *mut LapMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Creates a pinhole camera from intrinsics (focal lengths and principal
/// point in pixels) and the image size.
///
/// # Safety
/// `out` must be a valid location.
#[no_mangle]
pub unsafe extern "C" fn lap_camera_new(
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    out: *mut *mut LapCamera,
) -> LapStatus {
    guarded(|| match Camera::new(fx, fy, cx, cy, width, height) {
        Ok(camera) => write_handle(out, LapCamera { inner: camera }),
        Err(e) => fail(e),
    })
}

/// Loads a camera from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid location.
#[no_mangle]
pub unsafe extern "C" fn lap_camera_load_json(
    path: *const c_char,
    out: *mut *mut LapCamera,
) -> LapStatus {
    guarded(|| {
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Camera::load_json(&path) {
            Ok(camera) => write_handle(out, LapCamera { inner: camera }),
            Err(e) => fail(e),
        }
    })
}

/// Releases a camera handle. Null is a no-op.
///
/// # Safety
/// `camera` must come from a `lap_camera_*` constructor, freed once.
#[no_mangle]
pub unsafe extern "C" fn lap_camera_free(camera: *mut LapCamera) {
    if !camera.is_null() {
        drop(Box::from_raw(camera));
    }
}

/// Loads correspondences from a CSV file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid location.
#[no_mangle]
pub unsafe extern "C" fn lap_corr_load_csv(
    path: *const c_char,
    out: *mut *mut LapCorrespondences,
) -> LapStatus {
    guarded(|| {
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match CorrespondenceSet::load_csv(&path) {
            Ok(corr) => write_handle(out, LapCorrespondences { inner: corr }),
            Err(e) => fail(e),
        }
    })
}

/// Builds correspondences from raw arrays of length `n`: `facets[i]` is the
/// template facet, `barycentric` holds 3 coordinates per entry summing to
/// one, `pixels` holds the matched (u, v) per entry.
///
/// # Safety
/// The arrays must be readable at those lengths; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lap_corr_from_arrays(
    facets: *const u32,
    barycentric: *const f64,
    pixels: *const f64,
    n: u32,
    out: *mut *mut LapCorrespondences,
) -> LapStatus {
    guarded(|| {
        if facets.is_null() {
            return fail_null("facets");
        }
        if barycentric.is_null() {
            return fail_null("barycentric");
        }
        if pixels.is_null() {
            return fail_null("pixels");
        }
        let n = n as usize;
        let fs = std::slice::from_raw_parts(facets, n);
        let bs = std::slice::from_raw_parts(barycentric, 3 * n);
        let ps = std::slice::from_raw_parts(pixels, 2 * n);
        let mut items = Vec::with_capacity(n);
        for i in 0..n {
            let template = match BaryPoint::new(
                fs[i] as usize,
                [bs[3 * i], bs[3 * i + 1], bs[3 * i + 2]],
            ) {
                Ok(t) => t,
                Err(e) => return fail(e),
            };
            items.push(Correspondence {
                template,
                pixel: Vector2::new(ps[2 * i], ps[2 * i + 1]),
                inlier: true,
            });
        }
        match CorrespondenceSet::new(items) {
            Ok(corr) => write_handle(out, LapCorrespondences { inner: corr }),
            Err(e) => fail(e),
        }
    })
}

/// Number of correspondences, or 0 for a null handle.
#[no_mangle]
pub extern "C" fn lap_corr_len(corr: *const LapCorrespondences) -> u32 {
    if corr.is_null() {
        return 0;
    }
    unsafe { (*corr).inner.len() as u32 }
}

/// Releases a correspondence handle. Null is a no-op.
///
/// # Safety
/// `corr` must come from a `lap_corr_*` constructor, freed once.
#[no_mangle]
pub unsafe extern "C" fn lap_corr_free(corr: *mut LapCorrespondences) {
    if !corr.is_null() {
        drop(Box::from_raw(corr));
    }
}

/// Regularizer selection.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LapSurface {
    /// Planar when the template is flat within tolerance, curved otherwise.
    Auto = 0,
    Planar = 1,
    NonPlanar = 2,
}

/// Control-vertex selection.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LapStrategy {
    /// Deterministic farthest-point spread.
    Regular = 0,
    /// Seeded uniform sample.
    Random = 1,
    /// Every vertex (`control_count` is ignored).
    All = 2,
}

/// Pipeline settings, passed by value. Obtain defaults from
/// [`lap_options_default`] and override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LapOptions {
    pub surface: LapSurface,
    /// Virtual-vertex offset scale of the curved regularizer.
    pub sigma: f64,
    pub strategy: LapStrategy,
    pub control_count: u32,
    /// Seed of the stochastic stages.
    pub seed: u64,
    /// Regularization weight.
    pub w_r: f64,
    /// Run iterative outlier rejection before the final solve.
    pub robust: bool,
    /// Run constrained refinement after the linear solve.
    pub refine: bool,
}

/// The documented defaults: auto surface, sigma 1, 25 regular controls,
/// w_r 1, rejection and refinement on.
#[no_mangle]
pub extern "C" fn lap_options_default() -> LapOptions {
    let defaults = ReconstructOptions::default();
    LapOptions {
        surface: LapSurface::Auto,
        sigma: defaults.sigma,
        strategy: LapStrategy::Regular,
        control_count: defaults.control_count as u32,
        seed: defaults.seed,
        w_r: defaults.w_r,
        robust: defaults.robust.is_some(),
        refine: defaults.refine.is_some(),
    }
}

/// Cylindrical obstacle plus trajectory prior for the collision-aware
/// refinement, passed by value.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LapBallOptions {
    /// A point on the cylinder axis.
    pub cylinder_point: [f64; 3],
    /// Axis direction (any nonzero length).
    pub cylinder_axis: [f64; 3],
    pub cylinder_radius: f64,
    /// A point on the flight path of the surface centroid.
    pub trajectory_point: [f64; 3],
    /// Flight direction (any nonzero length).
    pub trajectory_direction: [f64; 3],
    /// Edge-length preservation weight.
    pub w_l: f64,
    /// Trajectory attachment weight.
    pub w_t: f64,
}

fn options_to_rust(options: Option<&LapOptions>, ball: Option<&LapBallOptions>) -> ReconstructOptions {
    let defaults = ReconstructOptions::default();
    let opts = match options {
        Some(o) => *o,
        None => lap_options_default(),
    };
    ReconstructOptions {
        surface: match opts.surface {
            LapSurface::Auto => SurfaceKind::Auto,
            LapSurface::Planar => SurfaceKind::Planar,
            LapSurface::NonPlanar => SurfaceKind::NonPlanar,
        },
        sigma: opts.sigma,
        strategy: match opts.strategy {
            LapStrategy::Regular => lapmesh::controls::ControlStrategy::Regular,
            LapStrategy::Random => lapmesh::controls::ControlStrategy::Random,
            LapStrategy::All => lapmesh::controls::ControlStrategy::All,
        },
        control_count: opts.control_count as usize,
        seed: opts.seed,
        w_r: opts.w_r,
        robust: opts.robust.then(Default::default),
        refine: opts.refine.then(|| {
            let mut cfg = lapmesh::refine::RefineConfig::with_weight(opts.w_r);
            cfg.w_r = opts.w_r;
            cfg
        }),
        ball: ball.map(|b| BallSpec {
            cylinder: Cylinder {
                point: Vector3::from(b.cylinder_point),
                axis: Vector3::from(b.cylinder_axis),
                radius: b.cylinder_radius,
            },
            trajectory: Line3 {
                point: Vector3::from(b.trajectory_point),
                direction: Vector3::from(b.trajectory_direction),
            },
            w_l: b.w_l,
            w_t: b.w_t,
        }),
        ..defaults
    }
}

/// Reconstruction output (opaque). Produced even on
/// `LAP_STATUS_NO_CONVERGENCE`, best-effort.
pub struct LapResult {
    mesh: TriMesh,
    x: DVector<f64>,
    flags: Vec<bool>,
    refined: bool,
    converged: bool,
    iterations: u32,
    max_violation: f64,
    reproj_rms_px: f64,
}

unsafe fn run_reconstruct(
    mesh: *const LapMesh,
    camera: *const LapCamera,
    corr: *const LapCorrespondences,
    options: *const LapOptions,
    ball: Option<&LapBallOptions>,
    out: *mut *mut LapResult,
) -> LapStatus {
    if mesh.is_null() {
        return fail_null("mesh");
    }
    if camera.is_null() {
        return fail_null("camera");
    }
    if corr.is_null() {
        return fail_null("corr");
    }
    if out.is_null() {
        return fail_null("out");
    }
    let mesh = &(*mesh).inner;
    let camera = &(*camera).inner;
    let corr = &(*corr).inner;
    let opts = options_to_rust(options.as_ref(), ball);

    let recon = match reconstruct(mesh, camera, corr, &opts) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let kept = corr.with_flags(&recon.flags);
    let reproj_rms_px = reprojection_rms(mesh, camera, &kept, &recon.x).unwrap_or(f64::NAN);
    let (refined, converged, iterations, max_violation) = match &recon.refined {
        Some(r) => (true, r.converged, r.iterations as u32, r.max_violation),
        None => (false, true, 0, 0.0),
    };
    let result = LapResult {
        mesh: mesh.clone(),
        x: recon.x,
        flags: recon.flags,
        refined,
        converged,
        iterations,
        max_violation,
        reproj_rms_px,
    };
    let status = write_handle(out, result);
    if status == LapStatus::Ok && refined && !converged {
        set_error(
            Error::NoConvergence {
                iterations: iterations as usize,
                violation: max_violation,
            }
            .to_string(),
        );
        return LapStatus::NoConvergence;
    }
    status
}

/// Full reconstruction: outlier rejection, linear solve, refinement, per
/// `options` (null for defaults). On success `*out` owns the result; on
/// `LAP_STATUS_NO_CONVERGENCE` the best-effort result is returned too.
///
/// # Safety
/// All handles must be live; `options` may be null; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lap_reconstruct(
    mesh: *const LapMesh,
    camera: *const LapCamera,
    corr: *const LapCorrespondences,
    options: *const LapOptions,
    out: *mut *mut LapResult,
) -> LapStatus {
    guarded(|| run_reconstruct(mesh, camera, corr, options, None, out))
}

/// Like [`lap_reconstruct`] but refines with the collision-aware variant:
/// the surface stays outside the cylinder and its centroid near the
/// trajectory line.
///
/// # Safety
/// As [`lap_reconstruct`]; `ball` must point to a valid struct.
#[no_mangle]
pub unsafe extern "C" fn lap_reconstruct_with_obstacle(
    mesh: *const LapMesh,
    camera: *const LapCamera,
    corr: *const LapCorrespondences,
    options: *const LapOptions,
    ball: *const LapBallOptions,
    out: *mut *mut LapResult,
) -> LapStatus {
    guarded(|| {
        if ball.is_null() {
            return fail_null("ball");
        }
        run_reconstruct(mesh, camera, corr, options, Some(&*ball), out)
    })
}

/// Number of vertices of the reconstructed mesh, or 0 for a null handle.
#[no_mangle]
pub extern "C" fn lap_result_num_vertices(result: *const LapResult) -> u32 {
    if result.is_null() {
        return 0;
    }
    unsafe { ((*result).x.len() / 3) as u32 }
}

/// Copies the reconstructed coordinates (x, y, z per vertex) into `out`,
/// which must hold exactly `3 * lap_result_num_vertices` doubles.
///
/// # Safety
/// `out` must be writable at that length.
#[no_mangle]
pub unsafe extern "C" fn lap_result_coords(
    result: *const LapResult,
    out: *mut f64,
    len: u32,
) -> LapStatus {
    guarded(|| {
        if result.is_null() {
            return fail_null("result");
        }
        if out.is_null() {
            return fail_null("out");
        }
        let x = &(*result).x;
        if len as usize != x.len() {
            set_error(format!("len is {len}, expected {}", x.len()));
            return LapStatus::InvalidArgument;
        }
        std::slice::from_raw_parts_mut(out, x.len()).copy_from_slice(x.as_slice());
        LapStatus::Ok
    })
}

/// Copies the per-correspondence inlier flags into `out`, which must hold
/// exactly as many entries as the correspondence set that produced the
/// result.
///
/// # Safety
/// `out` must be writable at that length.
#[no_mangle]
pub unsafe extern "C" fn lap_result_inlier_flags(
    result: *const LapResult,
    out: *mut bool,
    len: u32,
) -> LapStatus {
    guarded(|| {
        if result.is_null() {
            return fail_null("result");
        }
        if out.is_null() {
            return fail_null("out");
        }
        let flags = &(*result).flags;
        if len as usize != flags.len() {
            set_error(format!("len is {len}, expected {}", flags.len()));
            return LapStatus::InvalidArgument;
        }
        std::slice::from_raw_parts_mut(out, flags.len()).copy_from_slice(flags);
        LapStatus::Ok
    })
}

/// Whether refinement ran and converged (true for linear-only runs).
#[no_mangle]
pub extern "C" fn lap_result_converged(result: *const LapResult) -> bool {
    if result.is_null() {
        return false;
    }
    unsafe { (*result).converged }
}

/// Whether constrained refinement ran at all.
#[no_mangle]
pub extern "C" fn lap_result_refined(result: *const LapResult) -> bool {
    if result.is_null() {
        return false;
    }
    unsafe { (*result).refined }
}

/// Refinement iterations (0 for linear-only runs).
#[no_mangle]
pub extern "C" fn lap_result_iterations(result: *const LapResult) -> u32 {
    if result.is_null() {
        return 0;
    }
    unsafe { (*result).iterations }
}

/// Largest relative constraint violation of the refined shape.
#[no_mangle]
pub extern "C" fn lap_result_max_violation(result: *const LapResult) -> f64 {
    if result.is_null() {
        return f64::NAN;
    }
    unsafe { (*result).max_violation }
}

/// Reprojection RMS over the kept inliers, true pixels.
#[no_mangle]
pub extern "C" fn lap_result_reproj_rms_px(result: *const LapResult) -> f64 {
    if result.is_null() {
        return f64::NAN;
    }
    unsafe { (*result).reproj_rms_px }
}

/// Writes the reconstructed shape as an OBJ file.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lap_result_write_obj(
    result: *const LapResult,
    path: *const c_char,
) -> LapStatus {
    guarded(|| {
        if result.is_null() {
            return fail_null("result");
        }
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let r = &*result;
        match r.mesh.write_obj(&path, &r.x) {
            Ok(()) => LapStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Mean 3D vertex error of the result against ground-truth coordinates
/// (x, y, z per vertex, `3 * lap_result_num_vertices` doubles).
///
/// # Safety
/// `gt` must be readable at that length; `out_mean` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lap_result_mean_3d_error(
    result: *const LapResult,
    gt: *const f64,
    len: u32,
    out_mean: *mut f64,
) -> LapStatus {
    guarded(|| {
        if result.is_null() {
            return fail_null("result");
        }
        if gt.is_null() {
            return fail_null("gt");
        }
        if out_mean.is_null() {
            return fail_null("out_mean");
        }
        let r = &*result;
        if len as usize != r.x.len() {
            set_error(format!("len is {len}, expected {}", r.x.len()));
            return LapStatus::InvalidArgument;
        }
        let gt = DVector::from_column_slice(std::slice::from_raw_parts(gt, len as usize));
        // Camera only affects the pixel-agreement fields, not the mean; any
        // valid camera works here.
        let camera = Camera::new(1.0, 1.0, 0.0, 0.0, 1, 1).expect("valid unit camera");
        *out_mean = ground_truth_report(&camera, &r.x, &gt).mean_3d;
        LapStatus::Ok
    })
}

/// Releases a result handle. Null is a no-op.
///
/// # Safety
/// `result` must come from a reconstruction call, freed once.
#[no_mangle]
pub unsafe extern "C" fn lap_result_free(result: *mut LapResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
