//! Synthetic scenes with ground truth for evaluation and stress testing.
//!
//! Provides procedural reference surfaces (a flat sheet, a half-cylinder
//! shell, a closed sphere), deformation families for generating ground-truth
//! shapes, correspondence sampling with Gaussian pixel noise and injected
//! outliers, metrics against ground truth, and a Monte-Carlo sweep of the
//! full rejection pipeline over inlier counts and outlier ratios.
//!
//! World units are millimeters in the standard scenes; the camera looks down
//! +z from the origin.

use std::time::Instant;

use nalgebra::{DVector, Point3, Rotation3, Unit, Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controls::{build_p, select_controls, ControlStrategy};
use crate::error::{Error, Result};
use crate::mesh::{bary_to_world, build_topology, set_vertex3, vertex3, BaryPoint, TriMesh};
use crate::projection::{reprojection_rms, Camera, Correspondence, CorrespondenceSet};
use crate::refine::Cylinder;
use crate::regularizer::build_planar;
use crate::robust::{reject_outliers, RobustConfig};

/// Deformation applied to a reference shape to produce ground truth.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DeformFamily {
    /// Wraps the sheet around a cylinder whose axis is parallel to the y
    /// axis, preserving every edge length of an x-aligned grid exactly:
    /// columns of constant x are placed at successive angles such that the
    /// chord between neighboring columns equals their original spacing.
    CylinderBend { radius: f64 },
    /// Adds `amplitude · cos(2π · periods · (x − x_min)/width)` to each
    /// vertex depth. Not length-preserving; a soft deformation.
    CosineWave { amplitude: f64, periods: f64 },
    /// Rotation about an axis through the centroid, then a translation.
    Rigid {
        axis: [f64; 3],
        angle: f64,
        translation: [f64; 3],
    },
}

impl DeformFamily {
    /// Whether the family preserves edge lengths (so the ground truth is
    /// feasible for inextensibility constraints).
    pub fn is_isometric(&self) -> bool {
        matches!(
            self,
            DeformFamily::CylinderBend { .. } | DeformFamily::Rigid { .. }
        )
    }
}

/// Applies a deformation family to the reference shape, returning the
/// ground-truth coordinate vector.
pub fn deform(mesh: &TriMesh, family: &DeformFamily) -> Result<DVector<f64>> {
    match *family {
        DeformFamily::CylinderBend { radius } => cylinder_bend(mesh, radius),
        DeformFamily::CosineWave { amplitude, periods } => cosine_wave(mesh, amplitude, periods),
        DeformFamily::Rigid {
            axis,
            angle,
            translation,
        } => rigid(mesh, axis, angle, translation),
    }
}

fn cylinder_bend(mesh: &TriMesh, radius: f64) -> Result<DVector<f64>> {
    let xs: Vec<f64> = mesh.vertices().iter().map(|v| v.x).collect();
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = x_max - x_min;
    if !(radius.is_finite() && radius >= width / 2.0 && radius > 0.0) {
        return Err(Error::ParamOutOfRange {
            name: "radius",
            value: radius,
            detail: format!("bend radius must be at least half the sheet width ({width} / 2)"),
        });
    }

    // Cluster the distinct column positions.
    let mut sorted = xs.clone();
    sorted.sort_by(f64::total_cmp);
    let tol = 1e-9 * (1.0 + width);
    let mut columns: Vec<f64> = Vec::new();
    for x in sorted {
        if columns.last().is_none_or(|&c| x - c > tol) {
            columns.push(x);
        }
    }

    // Chord-preserving angular positions: the 3D chord between neighboring
    // columns equals their flat spacing.
    let mut theta = vec![0.0f64; columns.len()];
    for i in 1..columns.len() {
        let d = columns[i] - columns[i - 1];
        theta[i] = theta[i - 1] + 2.0 * (d / (2.0 * radius)).clamp(-1.0, 1.0).asin();
    }
    let theta_mid = 0.5 * (theta[0] + theta[columns.len() - 1]);
    let x_mid = 0.5 * (x_min + x_max);

    let mut gt = mesh.reference_coords();
    for (i, v) in mesh.vertices().iter().enumerate() {
        let col = columns
            .iter()
            .position(|&c| (v.x - c).abs() <= tol)
            .expect("vertex belongs to a column");
        let t = theta[col] - theta_mid;
        gt[3 * i] = x_mid + radius * t.sin();
        gt[3 * i + 2] = v.z + radius * (1.0 - t.cos());
    }
    Ok(gt)
}

fn cosine_wave(mesh: &TriMesh, amplitude: f64, periods: f64) -> Result<DVector<f64>> {
    if !(amplitude.is_finite() && periods.is_finite() && periods > 0.0) {
        return Err(Error::ParamOutOfRange {
            name: "periods",
            value: periods,
            detail: "wave parameters must be finite with periods > 0".into(),
        });
    }
    let x_min = mesh
        .vertices()
        .iter()
        .map(|v| v.x)
        .fold(f64::INFINITY, f64::min);
    let x_max = mesh
        .vertices()
        .iter()
        .map(|v| v.x)
        .fold(f64::NEG_INFINITY, f64::max);
    let width = (x_max - x_min).max(f64::MIN_POSITIVE);
    let mut gt = mesh.reference_coords();
    for (i, v) in mesh.vertices().iter().enumerate() {
        let phase = std::f64::consts::TAU * periods * (v.x - x_min) / width;
        gt[3 * i + 2] = v.z + amplitude * phase.cos();
    }
    Ok(gt)
}

fn rigid(mesh: &TriMesh, axis: [f64; 3], angle: f64, translation: [f64; 3]) -> Result<DVector<f64>> {
    let axis_v = Vector3::new(axis[0], axis[1], axis[2]);
    if !(axis_v.norm() > 0.0 && axis_v.norm().is_finite() && angle.is_finite()) {
        return Err(Error::ParamOutOfRange {
            name: "axis",
            value: axis_v.norm(),
            detail: "rotation axis must be a finite nonzero vector".into(),
        });
    }
    let t = Vector3::new(translation[0], translation[1], translation[2]);
    if !t.iter().all(|c| c.is_finite()) {
        return Err(Error::ParamOutOfRange {
            name: "translation",
            value: f64::NAN,
            detail: "translation must be finite".into(),
        });
    }
    let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis_v), angle);
    let centroid = mesh
        .vertices()
        .iter()
        .fold(Vector3::zeros(), |acc, v| acc + v.coords)
        / mesh.num_vertices() as f64;
    let mut gt = mesh.reference_coords();
    for i in 0..mesh.num_vertices() {
        let p = vertex3(&gt, i);
        let q = r * (p - centroid) + centroid + t;
        gt[3 * i] = q.x;
        gt[3 * i + 1] = q.y;
        gt[3 * i + 2] = q.z;
    }
    Ok(gt)
}

/// Rectangular sheet in the x-y plane at constant depth, `rows × cols`
/// vertices spanning `width` along x with square cells.
pub fn make_sheet(rows: usize, cols: usize, width: f64, depth: f64) -> Result<TriMesh> {
    if rows < 2 || cols < 2 {
        return Err(Error::ParamOutOfRange {
            name: "rows/cols",
            value: rows.min(cols) as f64,
            detail: "a sheet needs at least 2 rows and 2 columns".into(),
        });
    }
    if !(width > 0.0 && width.is_finite() && depth.is_finite()) {
        return Err(Error::ParamOutOfRange {
            name: "width",
            value: width,
            detail: "sheet width must be positive and finite".into(),
        });
    }
    let spacing = width / (cols - 1) as f64;
    let mut vertices = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            vertices.push(Point3::new(
                (c as f64 - (cols as f64 - 1.0) / 2.0) * spacing,
                (r as f64 - (rows as f64 - 1.0) / 2.0) * spacing,
                depth,
            ));
        }
    }
    let at = |r: usize, c: usize| r * cols + c;
    let mut facets = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            facets.push([at(r, c), at(r, c + 1), at(r + 1, c)]);
            facets.push([at(r, c + 1), at(r + 1, c + 1), at(r + 1, c)]);
        }
    }
    TriMesh::new(vertices, facets, "sheet")
}

/// Half-cylinder shell: axis parallel to y, opening away from the camera,
/// `rows` vertices along the axis and `cols` across the half circle.
pub fn make_half_cylinder(rows: usize, cols: usize, radius: f64, length: f64, depth: f64) -> Result<TriMesh> {
    if rows < 2 || cols < 2 {
        return Err(Error::ParamOutOfRange {
            name: "rows/cols",
            value: rows.min(cols) as f64,
            detail: "a shell needs at least 2 rows and 2 columns".into(),
        });
    }
    if !(radius > 0.0 && radius.is_finite() && length > 0.0 && length.is_finite()) {
        return Err(Error::ParamOutOfRange {
            name: "radius",
            value: radius,
            detail: "shell radius and length must be positive and finite".into(),
        });
    }
    let mut vertices = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let y = (r as f64 / (rows as f64 - 1.0) - 0.5) * length;
        for c in 0..cols {
            let phi = (c as f64 / (cols as f64 - 1.0) - 0.5) * std::f64::consts::PI;
            vertices.push(Point3::new(
                radius * phi.sin(),
                y,
                depth + radius * (1.0 - phi.cos()),
            ));
        }
    }
    let at = |r: usize, c: usize| r * cols + c;
    let mut facets = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            facets.push([at(r, c), at(r, c + 1), at(r + 1, c)]);
            facets.push([at(r, c + 1), at(r + 1, c + 1), at(r + 1, c)]);
        }
    }
    TriMesh::new(vertices, facets, "half-cylinder")
}

/// Closed sphere: an icosahedron subdivided `subdivisions` times with all
/// vertices on a sphere of the given diameter, centered on the optical axis
/// at `depth`. Faces wind consistently with outward normals.
pub fn make_sphere(subdivisions: usize, diameter: f64, depth: f64) -> Result<TriMesh> {
    if !(diameter > 0.0 && diameter.is_finite() && depth.is_finite()) {
        return Err(Error::ParamOutOfRange {
            name: "diameter",
            value: diameter,
            detail: "sphere diameter must be positive and finite".into(),
        });
    }
    if subdivisions > 5 {
        return Err(Error::ParamOutOfRange {
            name: "subdivisions",
            value: subdivisions as f64,
            detail: "at most 5 subdivision levels are supported".into(),
        });
    }
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut points: Vec<Vector3<f64>> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|a| Vector3::new(a[0], a[1], a[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    // Ensure outward winding from the start so subdivision preserves it.
    for f in faces.iter_mut() {
        let (a, b, c) = (points[f[0]], points[f[1]], points[f[2]]);
        if (b - a).cross(&(c - a)).dot(&(a + b + c)) < 0.0 {
            f.swap(1, 2);
        }
    }

    for _ in 0..subdivisions {
        let mut cache: std::collections::BTreeMap<(usize, usize), usize> =
            std::collections::BTreeMap::new();
        let mut midpoint = |i: usize, j: usize, points: &mut Vec<Vector3<f64>>| -> usize {
            let key = (i.min(j), i.max(j));
            *cache.entry(key).or_insert_with(|| {
                let m = (points[i] + points[j]).normalize();
                points.push(m);
                points.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut points);
            let bc = midpoint(f[1], f[2], &mut points);
            let ca = midpoint(f[2], f[0], &mut points);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }

    let r = diameter / 2.0;
    let vertices: Vec<Point3<f64>> = points
        .iter()
        .map(|p| Point3::new(r * p.x, r * p.y, depth + r * p.z))
        .collect();
    TriMesh::new(vertices, faces, "sphere")
}

/// The 9×11 sheet used by the standard experiments: 200 mm wide at 600 mm
/// depth, 99 vertices and 160 facets.
pub fn standard_sheet() -> TriMesh {
    make_sheet(9, 11, 200.0, 600.0).expect("standard sheet parameters are valid")
}

/// The VGA camera used by the standard experiments.
pub fn standard_camera() -> Camera {
    Camera::new(528.0, 528.0, 320.0, 240.0, 640, 480).expect("standard intrinsics are valid")
}

/// A generated scene: reference shape, ground truth, camera, and sampled
/// correspondences with their true inlier labels.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub mesh: TriMesh,
    pub gt_coords: DVector<f64>,
    pub camera: Camera,
    pub corr: CorrespondenceSet,
    /// True label per correspondence: `true` for genuine inliers.
    pub truth_inliers: Vec<bool>,
    pub seed: u64,
}

/// Samples correspondences against a ground-truth shape: `n_inliers` genuine
/// matches with per-axis Gaussian pixel noise, followed by enough
/// uniform-pixel outliers to reach `outlier_ratio` of the total. Template
/// points are drawn uniformly over the surface (area-weighted facets,
/// uniform barycentric). Returns the set (all runtime flags `true`) and the
/// true labels, inliers first.
pub fn sample_correspondences(
    mesh: &TriMesh,
    gt_coords: &DVector<f64>,
    camera: &Camera,
    n_inliers: usize,
    outlier_ratio: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<(CorrespondenceSet, Vec<bool>)> {
    if n_inliers == 0 {
        return Err(Error::ParamOutOfRange {
            name: "n_inliers",
            value: 0.0,
            detail: "at least one inlier is required".into(),
        });
    }
    if !(0.0..1.0).contains(&outlier_ratio) {
        return Err(Error::ParamOutOfRange {
            name: "outlier_ratio",
            value: outlier_ratio,
            detail: "outlier ratio must lie in [0, 1)".into(),
        });
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::ParamOutOfRange {
            name: "noise_sigma",
            value: noise_sigma,
            detail: "noise must be non-negative and finite".into(),
        });
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n_outliers = ((n_inliers as f64) * outlier_ratio / (1.0 - outlier_ratio)).round() as usize;

    // Cumulative reference areas for uniform surface sampling.
    let mut cumulative = Vec::with_capacity(mesh.num_facets());
    let mut total = 0.0;
    for f in 0..mesh.num_facets() {
        total += mesh.facet_area(f);
        cumulative.push(total);
    }

    let noise = if noise_sigma > 0.0 {
        Some(Normal::new(0.0, noise_sigma).expect("validated sigma"))
    } else {
        None
    };
    let (width, height) = camera.image_size();

    let sample_template = |rng: &mut ChaCha12Rng| -> BaryPoint {
        let r = rng.random_range(0.0..total);
        let facet = cumulative.partition_point(|&c| c <= r).min(mesh.num_facets() - 1);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        BaryPoint::new(facet, [1.0 - s, s * (1.0 - r2), s * r2]).expect("barycentric sums to one")
    };

    let mut items = Vec::with_capacity(n_inliers + n_outliers);
    let mut truth = Vec::with_capacity(n_inliers + n_outliers);
    for _ in 0..n_inliers {
        let template = sample_template(&mut rng);
        let p = bary_to_world(mesh, &template, gt_coords)?;
        let mut pixel = camera.project(&p).ok_or_else(|| {
            Error::DegenerateInput("ground-truth point is behind the camera".into())
        })?;
        if let Some(n) = &noise {
            pixel += Vector2::new(n.sample(&mut rng), n.sample(&mut rng));
        }
        items.push(Correspondence {
            template,
            pixel,
            inlier: true,
        });
        truth.push(true);
    }
    for _ in 0..n_outliers {
        let template = sample_template(&mut rng);
        let pixel = Vector2::new(
            rng.random_range(0.0..width as f64),
            rng.random_range(0.0..height as f64),
        );
        items.push(Correspondence {
            template,
            pixel,
            inlier: true,
        });
        truth.push(false);
    }
    Ok((CorrespondenceSet::new(items)?, truth))
}

/// Parameters for [`make_scenario`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub family: DeformFamily,
    pub n_inliers: usize,
    pub outlier_ratio: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Builds a full scenario: deform the reference, sample correspondences.
pub fn make_scenario(mesh: &TriMesh, camera: &Camera, params: &ScenarioParams) -> Result<Scenario> {
    let gt_coords = deform(mesh, &params.family)?;
    if params.family.is_isometric() {
        debug_assert!(
            max_edge_growth(mesh, &gt_coords) <= 1e-6,
            "isometric family stretched an edge"
        );
    }
    let (corr, truth_inliers) = sample_correspondences(
        mesh,
        &gt_coords,
        camera,
        params.n_inliers,
        params.outlier_ratio,
        params.noise_sigma,
        params.seed,
    )?;
    Ok(Scenario {
        mesh: mesh.clone(),
        gt_coords,
        camera: camera.clone(),
        corr,
        truth_inliers,
        seed: params.seed,
    })
}

/// Pushes every vertex that lies inside the cylindrical obstacle radially
/// out onto its surface, leaving the rest untouched — the contact
/// deformation of a soft body resting against the obstacle. Compresses
/// edge lengths near the contact patch, so the result stays feasible for
/// upper-bound length constraints.
pub fn press_onto_cylinder(coords: &DVector<f64>, cylinder: &Cylinder) -> DVector<f64> {
    let axis = cylinder.axis.normalize();
    let mut pressed = coords.clone();
    for v in 0..coords.len() / 3 {
        let rel = vertex3(coords, v) - cylinder.point;
        let along = axis * rel.dot(&axis);
        let radial = rel - along;
        let dist = radial.norm();
        if dist < cylinder.radius {
            let fixed = cylinder.point + along + radial * (cylinder.radius / dist);
            set_vertex3(&mut pressed, v, fixed);
        }
    }
    pressed
}

/// Largest relative edge-length growth of `coords` over the reference.
pub fn max_edge_growth(mesh: &TriMesh, coords: &DVector<f64>) -> f64 {
    let topo = build_topology(mesh).expect("valid mesh");
    topo.edges
        .iter()
        .zip(&topo.ref_edge_lengths)
        .map(|(e, &l)| ((vertex3(coords, e.a) - vertex3(coords, e.b)).norm() - l) / l)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Quality metrics of a reconstruction against a scenario's ground truth.
#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    /// Mean 3D vertex error, world units.
    pub mean_3d: f64,
    /// Median 3D vertex error, world units.
    pub median_3d: f64,
    /// Mean/median 3D error after the best scalar rescale in [0.8, 1.25],
    /// set when scale search is requested.
    pub mean_3d_scaled: Option<f64>,
    pub median_3d_scaled: Option<f64>,
    /// Reprojection RMS over the true-inlier correspondences, pixels.
    pub reproj_rms: f64,
    /// At least 90% of vertices project within 2 pixels of the ground-truth
    /// vertex projections.
    pub success: bool,
    /// Precision/recall of the supplied inlier flags against the true
    /// labels; precision is `None` when nothing is flagged inlier.
    pub precision: Option<f64>,
    pub recall: f64,
}

/// Fraction of vertices whose projection lies within `tol_px` of the
/// ground-truth vertex projection; vertices that do not project count as
/// misses.
pub fn projection_agreement(
    camera: &Camera,
    x: &DVector<f64>,
    gt: &DVector<f64>,
    tol_px: f64,
) -> f64 {
    let n = gt.len() / 3;
    let mut hits = 0usize;
    for i in 0..n {
        let pg = camera.project(&vertex3(gt, i));
        let pr = camera.project(&vertex3(x, i));
        if let (Some(pg), Some(pr)) = (pg, pr) {
            if (pg - pr).norm() <= tol_px {
                hits += 1;
            }
        }
    }
    hits as f64 / n as f64
}

fn mean_median(mut errs: Vec<f64>) -> (f64, f64) {
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    errs.sort_by(f64::total_cmp);
    let mid = errs.len() / 2;
    let median = if errs.len() % 2 == 1 {
        errs[mid]
    } else {
        0.5 * (errs[mid - 1] + errs[mid])
    };
    (mean, median)
}

/// Evaluates a reconstruction against the scenario's ground truth. `flags`
/// are the pipeline's final inlier flags (defaults to the flags carried by
/// the scenario's correspondences). Scale search reports 3D errors after the
/// best scalar rescale toward the camera within [0.8, 1.25].
pub fn evaluate(
    x: &DVector<f64>,
    scenario: &Scenario,
    flags: Option<&[bool]>,
    scale_search: bool,
) -> Metrics {
    let gt = &scenario.gt_coords;
    let n = gt.len() / 3;
    let errs: Vec<f64> = (0..n)
        .map(|i| (vertex3(x, i) - vertex3(gt, i)).norm())
        .collect();
    let (mean_3d, median_3d) = mean_median(errs);

    let (mean_3d_scaled, median_3d_scaled) = if scale_search {
        let s = (x.dot(gt) / x.dot(x)).clamp(0.8, 1.25);
        let errs: Vec<f64> = (0..n)
            .map(|i| (s * vertex3(x, i) - vertex3(gt, i)).norm())
            .collect();
        let (m, md) = mean_median(errs);
        (Some(m), Some(md))
    } else {
        (None, None)
    };

    let truth_corr = scenario.corr.with_flags(&scenario.truth_inliers);
    let reproj_rms = reprojection_rms(&scenario.mesh, &scenario.camera, &truth_corr, x)
        .unwrap_or(f64::INFINITY);

    let success = projection_agreement(&scenario.camera, x, gt, 2.0) >= 0.9;

    let default_flags = scenario.corr.inlier_flags();
    let flags = flags.unwrap_or(&default_flags);
    let tp = flags
        .iter()
        .zip(&scenario.truth_inliers)
        .filter(|&(&f, &t)| f && t)
        .count();
    let flagged = flags.iter().filter(|&&f| f).count();
    let truths = scenario.truth_inliers.iter().filter(|&&t| t).count();
    Metrics {
        mean_3d,
        median_3d,
        mean_3d_scaled,
        median_3d_scaled,
        reproj_rms,
        success,
        precision: (flagged > 0).then(|| tp as f64 / flagged as f64),
        recall: tp as f64 / truths as f64,
    }
}

/// Grid specification for [`robustness_sweep`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub inlier_counts: Vec<usize>,
    pub outlier_ratios: Vec<f64>,
    pub trials_per_cell: usize,
    pub noise_sigma: f64,
    pub control_count: usize,
    pub family: DeformFamily,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            inlier_counts: vec![25, 50, 100, 200, 400],
            outlier_ratios: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            trials_per_cell: 50,
            noise_sigma: 1.0,
            control_count: 25,
            family: DeformFamily::CylinderBend { radius: 200.0 },
            seed: 0,
        }
    }
}

/// One cell of the sweep result.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub n_inliers: usize,
    pub outlier_ratio: f64,
    pub success_rate: f64,
    pub mean_runtime_s: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Runs the rejection pipeline over every (inlier count, outlier ratio)
/// cell of the grid on the standard sheet scene, `trials_per_cell` times
/// each with derived seeds, in parallel over cells. Failed trials (solver
/// errors, everything rejected) count as unsuccessful. Deterministic for a
/// given config.
pub fn robustness_sweep(cfg: &SweepConfig) -> Result<Vec<SweepCell>> {
    if cfg.trials_per_cell == 0 {
        return Err(Error::ParamOutOfRange {
            name: "trials_per_cell",
            value: 0.0,
            detail: "at least one trial per cell is required".into(),
        });
    }
    let mesh = standard_sheet();
    let camera = standard_camera();
    let topo = build_topology(&mesh)?;
    let reg = build_planar(&mesh, &topo)?;
    let indices = select_controls(&mesh, ControlStrategy::Regular, cfg.control_count, cfg.seed)?;
    let basis = build_p(&reg, &indices)?;

    let cells: Vec<(usize, f64)> = cfg
        .inlier_counts
        .iter()
        .flat_map(|&n| cfg.outlier_ratios.iter().map(move |&r| (n, r)))
        .collect();

    cells
        .par_iter()
        .enumerate()
        .map(|(cell_idx, &(n_inliers, outlier_ratio))| {
            let mut successes = 0usize;
            let mut runtime = 0.0f64;
            for trial in 0..cfg.trials_per_cell {
                let seed = splitmix64(
                    cfg.seed ^ splitmix64((cell_idx as u64) << 32 | trial as u64),
                );
                let params = ScenarioParams {
                    family: cfg.family.clone(),
                    n_inliers,
                    outlier_ratio,
                    noise_sigma: cfg.noise_sigma,
                    seed,
                };
                let scenario = make_scenario(&mesh, &camera, &params)?;
                let start = Instant::now();
                let outcome = reject_outliers(
                    &scenario.mesh,
                    &scenario.camera,
                    &scenario.corr,
                    &topo,
                    &reg,
                    &basis,
                    &RobustConfig::default(),
                );
                runtime += start.elapsed().as_secs_f64();
                if let Ok((flags, sol)) = outcome {
                    if evaluate(&sol.x, &scenario, Some(&flags), false).success {
                        successes += 1;
                    }
                }
            }
            Ok(SweepCell {
                n_inliers,
                outlier_ratio,
                success_rate: successes as f64 / cfg.trials_per_cell as f64,
                mean_runtime_s: runtime / cfg.trials_per_cell as f64,
            })
        })
        .collect()
}

/// Writes sweep results as CSV with a header row.
pub fn write_sweep_csv(path: impl AsRef<std::path::Path>, cells: &[SweepCell]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "n_inliers,outlier_ratio,success_rate,mean_runtime_s")?;
    for c in cells {
        writeln!(
            w,
            "{},{},{},{}",
            c.n_inliers, c.outlier_ratio, c.success_rate, c.mean_runtime_s
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::points_from_coords;
    use crate::projection::reprojection_errors;
    use approx::assert_relative_eq;

    #[test]
    fn cylinder_bend_preserves_every_edge_length() {
        let mesh = standard_sheet();
        let gt = deform(&mesh, &DeformFamily::CylinderBend { radius: 200.0 }).unwrap();
        let topo = build_topology(&mesh).unwrap();
        for (e, &l) in topo.edges.iter().zip(&topo.ref_edge_lengths) {
            let d = (vertex3(&gt, e.a) - vertex3(&gt, e.b)).norm();
            assert_relative_eq!(d, l, max_relative = 1e-9);
        }
        // It actually bent: depth now varies.
        let zs: Vec<f64> = (0..mesh.num_vertices()).map(|i| gt[3 * i + 2]).collect();
        let span = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - zs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(span > 10.0, "bend too shallow: z span {span}");
    }

    #[test]
    fn huge_bend_radius_approaches_identity() {
        let mesh = standard_sheet();
        let gt = deform(&mesh, &DeformFamily::CylinderBend { radius: 1e9 }).unwrap();
        let x_ref = mesh.reference_coords();
        assert!((gt - &x_ref).amax() < 1e-4);
    }

    #[test]
    fn bend_radius_below_half_width_is_rejected() {
        let mesh = standard_sheet();
        assert!(matches!(
            deform(&mesh, &DeformFamily::CylinderBend { radius: 99.0 }),
            Err(Error::ParamOutOfRange { .. })
        ));
    }

    #[test]
    fn rigid_motion_preserves_lengths_exactly() {
        let mesh = standard_sheet();
        let gt = deform(
            &mesh,
            &DeformFamily::Rigid {
                axis: [0.3, 1.0, -0.2],
                angle: 0.7,
                translation: [5.0, -3.0, 40.0],
            },
        )
        .unwrap();
        assert!(max_edge_growth(&mesh, &gt).abs() < 1e-12);
    }

    #[test]
    fn sample_counts_match_ratio_contract() {
        let mesh = standard_sheet();
        let camera = standard_camera();
        let gt = mesh.reference_coords();
        let (corr, truth) =
            sample_correspondences(&mesh, &gt, &camera, 200, 0.5, 1.0, 5).unwrap();
        assert_eq!(corr.len(), 400);
        assert_eq!(truth.iter().filter(|&&t| !t).count(), 200);
        assert!(truth[..200].iter().all(|&t| t));
    }

    #[test]
    fn noiseless_samples_reproject_exactly() {
        let mesh = standard_sheet();
        let camera = standard_camera();
        let gt = deform(&mesh, &DeformFamily::CylinderBend { radius: 250.0 }).unwrap();
        let (corr, _) = sample_correspondences(&mesh, &gt, &camera, 100, 0.0, 0.0, 9).unwrap();
        let errs = reprojection_errors(&mesh, &camera, &corr, &gt).unwrap();
        assert!(errs.iter().all(|&e| e < 1e-9));
    }

    #[test]
    fn unit_noise_gives_rayleigh_mean_error() {
        let mesh = standard_sheet();
        let camera = standard_camera();
        let gt = mesh.reference_coords();
        let (corr, _) = sample_correspondences(&mesh, &gt, &camera, 2000, 0.0, 1.0, 11).unwrap();
        let errs = reprojection_errors(&mesh, &camera, &corr, &gt).unwrap();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let expected = (std::f64::consts::PI / 2.0).sqrt();
        assert!((mean - expected).abs() < 0.08, "mean {mean} vs {expected}");
    }

    #[test]
    fn sampling_is_reproducible_from_seed() {
        let mesh = standard_sheet();
        let camera = standard_camera();
        let gt = mesh.reference_coords();
        let (a, ta) = sample_correspondences(&mesh, &gt, &camera, 50, 0.3, 1.0, 42).unwrap();
        let (b, tb) = sample_correspondences(&mesh, &gt, &camera, 50, 0.3, 1.0, 42).unwrap();
        assert_eq!(ta, tb);
        for (x, y) in a.items().iter().zip(b.items()) {
            assert_eq!(x.template.facet, y.template.facet);
            assert_eq!(x.template.b, y.template.b);
            assert_eq!(x.pixel, y.pixel);
        }
    }

    #[test]
    fn evaluate_against_ground_truth_and_scaled_copy() {
        let mesh = standard_sheet();
        let camera = standard_camera();
        let params = ScenarioParams {
            family: DeformFamily::CylinderBend { radius: 300.0 },
            n_inliers: 80,
            outlier_ratio: 0.0,
            noise_sigma: 0.0,
            seed: 3,
        };
        let scenario = make_scenario(&mesh, &camera, &params).unwrap();
        let exact = evaluate(&scenario.gt_coords, &scenario, None, true);
        assert!(exact.success);
        assert!(exact.mean_3d < 1e-12);
        assert!(exact.reproj_rms < 1e-9);
        assert_eq!(exact.recall, 1.0);
        assert_eq!(exact.precision, Some(1.0));

        // Scaling toward the camera leaves projections unchanged; the scale
        // search recovers the factor.
        let scaled = evaluate(&(1.1 * &scenario.gt_coords), &scenario, None, true);
        assert!(scaled.success, "projective scaling must not affect success");
        assert!(scaled.mean_3d > 1.0);
        assert!(scaled.mean_3d_scaled.unwrap() < 1e-9);
    }

    #[test]
    fn icosphere_is_a_closed_manifold_of_correct_size() {
        let mesh = make_sphere(2, 73.52, 600.0).unwrap();
        let v = mesh.num_vertices();
        let f = mesh.num_facets();
        let topo = build_topology(&mesh).unwrap();
        let e = topo.edges.len();
        assert_eq!(f, 20 * 16);
        assert_eq!(e, 3 * f / 2);
        assert_eq!(v as i64 - e as i64 + f as i64, 2, "Euler characteristic");
        assert_eq!(topo.interior_edges.len(), e, "closed: no boundary edges");
        for p in mesh.vertices() {
            let r = (p - Point3::new(0.0, 0.0, 600.0)).norm();
            assert_relative_eq!(r, 73.52 / 2.0, max_relative = 1e-12);
        }
        // Outward winding: signed volume from the centroid is positive.
        let c = Vector3::new(0.0, 0.0, 600.0);
        let mut vol = 0.0;
        let coords = mesh.reference_coords();
        for f in mesh.facets() {
            let a = vertex3(&coords, f[0]) - c;
            let b = vertex3(&coords, f[1]) - c;
            let d = vertex3(&coords, f[2]) - c;
            vol += a.cross(&b).dot(&d) / 6.0;
        }
        let ball = 4.0 / 3.0 * std::f64::consts::PI * (73.52f64 / 2.0).powi(3);
        assert!(vol > 0.95 * ball && vol < ball, "volume {vol} vs ball {ball}");
    }

    #[test]
    fn half_cylinder_is_not_planar() {
        let mesh = make_half_cylinder(7, 9, 50.0, 150.0, 600.0).unwrap();
        let topo = build_topology(&mesh).unwrap();
        assert!(crate::regularizer::build_planar(&mesh, &topo).is_err());
        assert!(crate::regularizer::build_auto(&mesh, &topo, 1.0).is_ok());
        let _ = points_from_coords(&mesh.reference_coords());
    }

    #[test]
    fn tiny_sweep_is_deterministic_and_sane() {
        let cfg = SweepConfig {
            inlier_counts: vec![50, 150],
            outlier_ratios: vec![0.0, 0.4],
            trials_per_cell: 3,
            seed: 5,
            ..Default::default()
        };
        let a = robustness_sweep(&cfg).unwrap();
        let b = robustness_sweep(&cfg).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.success_rate, y.success_rate);
            assert!((0.0..=1.0).contains(&x.success_rate));
            assert!(x.mean_runtime_s >= 0.0);
        }
        // The easiest cell succeeds.
        let easy = a
            .iter()
            .find(|c| c.n_inliers == 150 && c.outlier_ratio == 0.0)
            .unwrap();
        assert_eq!(easy.success_rate, 1.0);
    }
}
