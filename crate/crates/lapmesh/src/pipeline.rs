//! End-to-end reconstruction: load the template, camera and correspondences,
//! build the regularizer and control basis, reject outliers, solve the
//! linear system, optionally refine under inextensibility, and write the
//! result artifacts (OBJ mesh, inlier mask CSV, metrics JSON).
//!
//! The heavy lifting lives in the other modules; this one wires them
//! together behind a single serializable [`PipelineConfig`] so that runs are
//! reproducible from a config file plus a seed. Solves run in normalized
//! image coordinates (see [`Camera::normalized`]) so the documented weight
//! defaults keep their intended strength for any pixel scale; every reported
//! pixel figure is measured with the original camera.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::controls::{build_p, select_controls, ControlBasis, ControlStrategy};
use crate::error::{Error, Result};
use crate::mesh::{build_topology, vertex3, Topology, TriMesh};
use crate::projection::{
    assemble_m, reprojection_errors, reprojection_rms, Camera, CorrespondenceSet,
};
use crate::refine::{
    refine_ball, refine_constrained, BallConfig, Cylinder, Line3, RefineConfig, RefineResult,
};
use crate::regularizer::{
    build_auto, build_nonplanar, build_planar, Regularizer, RegularizerMode, DEFAULT_SIGMA,
};
use crate::robust::{reject_outliers, RobustConfig};
use crate::solver::{
    solve_initial, EigenMethod, LinearSolution, LinearSolveConfig, DEFAULT_WR,
};
use crate::synth::projection_agreement;

/// Which regularizer construction to use for the reference shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceKind {
    /// Planar construction when the reference deviates from its best plane
    /// by less than the tolerance, curved construction otherwise.
    Auto,
    Planar,
    NonPlanar,
}

/// Obstacle and motion prior for the collision-aware refinement variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BallSpec {
    pub cylinder: Cylinder,
    pub trajectory: Line3,
    /// Weight of the soft edge-length preservation term, world units.
    #[serde(default = "one")]
    pub w_l: f64,
    /// Weight of the trajectory attachment term, world units.
    #[serde(default = "one")]
    pub w_t: f64,
}

fn one() -> f64 {
    1.0
}

/// Everything `reconstruct` needs: input paths plus every stage's knobs.
/// Deserializes from JSON with all fields optional except the paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Reference template, OBJ.
    pub mesh: PathBuf,
    /// Camera intrinsics, JSON.
    pub camera: PathBuf,
    /// Point correspondences, CSV.
    pub correspondences: PathBuf,
    /// Output directory; created if missing.
    pub output_dir: PathBuf,
    /// Optional deformed ground truth (OBJ, same vertex order as `mesh`).
    /// When given, 3D error metrics are added to the report.
    pub ground_truth: Option<PathBuf>,
    pub surface: SurfaceKind,
    /// Virtual-vertex offset scale of the curved-reference regularizer.
    pub sigma: f64,
    pub strategy: ControlStrategy,
    pub control_count: usize,
    /// Seed for the stochastic stages (random control selection).
    pub seed: u64,
    /// Regularization weight of the linear solve and the refinement.
    pub w_r: f64,
    pub method: EigenMethod,
    /// Run iterative outlier rejection before the final solve.
    pub robust: bool,
    pub robust_config: RobustConfig,
    /// Run constrained refinement after the linear solve.
    pub refine: bool,
    /// Refinement knobs. `w_r` inside is ignored; the pipeline-level `w_r`
    /// is used, with the slack weight at its default ratio unless set here.
    pub refine_config: RefineConfig,
    /// Switch the refinement to the collision-aware ball variant.
    pub ball: Option<BallSpec>,
    /// Also write the singular-value spectrum of the solve, CSV.
    pub spectrum: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mesh: PathBuf::new(),
            camera: PathBuf::new(),
            correspondences: PathBuf::new(),
            output_dir: PathBuf::from("."),
            ground_truth: None,
            surface: SurfaceKind::Auto,
            sigma: DEFAULT_SIGMA,
            strategy: ControlStrategy::Regular,
            control_count: 25,
            seed: 0,
            w_r: DEFAULT_WR,
            method: EigenMethod::Auto,
            robust: true,
            robust_config: RobustConfig::default(),
            refine: true,
            refine_config: RefineConfig::default(),
            ball: None,
            spectrum: false,
        }
    }
}

impl PipelineConfig {
    /// Reads a config from a JSON file.
    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        for (name, path) in [
            ("mesh", &self.mesh),
            ("camera", &self.camera),
            ("correspondences", &self.correspondences),
        ] {
            if !path.is_file() {
                return Err(Error::DegenerateInput(format!(
                    "{name} file not found: {}",
                    path.display()
                )));
            }
        }
        if let Some(gt) = &self.ground_truth {
            if !gt.is_file() {
                return Err(Error::DegenerateInput(format!(
                    "ground_truth file not found: {}",
                    gt.display()
                )));
            }
        }
        Ok(())
    }
}

/// In-memory reconstruction settings: [`PipelineConfig`] minus the paths.
#[derive(Debug, Clone)]
pub struct ReconstructOptions {
    pub surface: SurfaceKind,
    pub sigma: f64,
    pub strategy: ControlStrategy,
    pub control_count: usize,
    pub seed: u64,
    pub w_r: f64,
    pub method: EigenMethod,
    pub robust: Option<RobustConfig>,
    pub refine: Option<RefineConfig>,
    pub ball: Option<BallSpec>,
    pub spectrum: bool,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        PipelineConfig::default().options()
    }
}

impl PipelineConfig {
    /// The non-path part of the config.
    pub fn options(&self) -> ReconstructOptions {
        let mut refine_config = self.refine_config;
        refine_config.w_r = self.w_r;
        ReconstructOptions {
            surface: self.surface,
            sigma: self.sigma,
            strategy: self.strategy,
            control_count: self.control_count,
            seed: self.seed,
            w_r: self.w_r,
            method: self.method,
            robust: self.robust.then_some(self.robust_config),
            refine: self.refine.then_some(refine_config),
            ball: self.ball.clone(),
            spectrum: self.spectrum,
        }
    }
}

/// Output of [`reconstruct`]: all intermediate and final state a caller
/// might want to inspect or serialize.
#[derive(Debug)]
pub struct Reconstruction {
    pub topo: Topology,
    pub mode: RegularizerMode,
    pub basis: ControlBasis,
    /// Final per-correspondence inlier flags.
    pub flags: Vec<bool>,
    pub linear: LinearSolution,
    pub refined: Option<RefineResult>,
    /// Final coordinates: the refined shape when refinement ran, the linear
    /// solution otherwise.
    pub x: DVector<f64>,
    pub timings: Timings,
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Timings {
    pub setup_s: f64,
    pub robust_s: f64,
    pub solve_s: f64,
    pub refine_s: f64,
    pub total_s: f64,
}

fn build_regularizer(
    mesh: &TriMesh,
    topo: &Topology,
    surface: SurfaceKind,
    sigma: f64,
) -> Result<Regularizer> {
    match surface {
        SurfaceKind::Auto => build_auto(mesh, topo, sigma),
        SurfaceKind::Planar => build_planar(mesh, topo),
        SurfaceKind::NonPlanar => build_nonplanar(mesh, topo, sigma),
    }
}

/// Runs the full reconstruction on in-memory inputs: regularizer, control
/// basis, optional outlier rejection, linear solve at `w_r`, optional
/// refinement. Never parallelizes internally.
pub fn reconstruct(
    mesh: &TriMesh,
    camera: &Camera,
    corr: &CorrespondenceSet,
    opts: &ReconstructOptions,
) -> Result<Reconstruction> {
    let start = Instant::now();
    let topo = build_topology(mesh)?;
    let reg = build_regularizer(mesh, &topo, opts.surface, opts.sigma)?;
    let indices = select_controls(mesh, opts.strategy, opts.control_count, opts.seed)?;
    let basis = build_p(&reg, &indices)?;
    let mut timings = Timings::default();
    timings.setup_s = start.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut flags = corr.inlier_flags();
    if let Some(robust_cfg) = &opts.robust {
        let (kept, _) = reject_outliers(mesh, camera, corr, &topo, &reg, &basis, robust_cfg)?;
        flags = kept;
    }
    timings.robust_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let solve_camera = camera.normalized();
    let solve_corr = corr
        .scaled_pixels(1.0 / camera.focal_mean())
        .with_flags(&flags);
    let m = assemble_m(mesh, &solve_camera, &solve_corr)?;
    let solve_cfg = LinearSolveConfig {
        w_r: opts.w_r,
        method: opts.method,
        with_spectrum: opts.spectrum,
    };
    let linear = solve_initial(&m, &reg, &basis, &topo, &solve_cfg)?;
    timings.solve_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let refined = match (&opts.refine, &opts.ball) {
        (Some(refine_cfg), None) => Some(refine_constrained(
            &linear.c, &m, &reg, &basis, &topo, refine_cfg,
        )?),
        (Some(refine_cfg), Some(spec)) => {
            let mut ball_cfg = BallConfig::new(
                refine_cfg.w_r,
                spec.cylinder.clone(),
                spec.trajectory.clone(),
            );
            ball_cfg.w_l = spec.w_l;
            ball_cfg.w_t = spec.w_t;
            ball_cfg.max_iterations = refine_cfg.max_iterations;
            ball_cfg.step_tol = refine_cfg.step_tol;
            ball_cfg.constraint_tol = refine_cfg.constraint_tol;
            Some(refine_ball(&linear.c, &m, &reg, &basis, &topo, &ball_cfg)?)
        }
        (None, _) => None,
    };
    timings.refine_s = t.elapsed().as_secs_f64();
    timings.total_s = start.elapsed().as_secs_f64();

    let x = refined
        .as_ref()
        .map(|r| r.x.clone())
        .unwrap_or_else(|| linear.x.clone());
    Ok(Reconstruction {
        topo,
        mode: reg.mode(),
        basis,
        flags,
        linear,
        refined,
        x,
        timings,
    })
}

/// One solve stage's quality figures.
#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub objective: f64,
    /// Reprojection RMS over the kept inliers, true pixels.
    pub reproj_rms_px: f64,
}

/// Refinement outcome figures.
#[derive(Debug, Clone, Serialize)]
pub struct RefineReport {
    pub converged: bool,
    pub iterations: usize,
    /// Largest relative constraint violation (edge stretch or obstacle
    /// penetration).
    pub max_violation: f64,
    pub objective: f64,
    pub reproj_rms_px: f64,
}

/// Accuracy against a supplied ground truth, world units / pixels.
#[derive(Debug, Clone, Serialize)]
pub struct GroundTruthReport {
    pub mean_3d: f64,
    pub median_3d: f64,
    /// Fraction of vertices projecting within 2 px of the ground-truth
    /// vertex projections.
    pub agreement_2px: f64,
    /// `agreement_2px >= 0.9`.
    pub success: bool,
}

/// Paths of everything a run wrote.
#[derive(Debug, Clone, Serialize)]
pub struct Artifacts {
    pub mesh_obj: PathBuf,
    pub inliers_csv: PathBuf,
    pub metrics_json: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum_csv: Option<PathBuf>,
}

/// The machine-readable summary written to `metrics.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub n_vertices: usize,
    pub n_facets: usize,
    pub n_correspondences: usize,
    pub n_controls: usize,
    pub surface: RegularizerMode,
    pub inliers_kept: usize,
    pub linear: StageReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refined: Option<RefineReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthReport>,
    pub timings: Timings,
    pub artifacts: Artifacts,
}

fn mean_median(mut values: Vec<f64>) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    (mean, median)
}

/// 3D error and reprojection-agreement metrics of `x` against `gt`.
pub fn ground_truth_report(
    camera: &Camera,
    x: &DVector<f64>,
    gt: &DVector<f64>,
) -> GroundTruthReport {
    let n = gt.len() / 3;
    let errs: Vec<f64> = (0..n)
        .map(|i| (vertex3(x, i) - vertex3(gt, i)).norm())
        .collect();
    let (mean_3d, median_3d) = mean_median(errs);
    let agreement_2px = projection_agreement(camera, x, gt, 2.0);
    GroundTruthReport {
        mean_3d,
        median_3d,
        agreement_2px,
        success: agreement_2px >= 0.9,
    }
}

fn write_inlier_csv(
    path: &Path,
    corr: &CorrespondenceSet,
    flags: &[bool],
    errors: &[f64],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "index,facet,b0,b1,b2,u,v,inlier,reproj_px")?;
    for (i, item) in corr.items().iter().enumerate() {
        let b = item.template.b;
        writeln!(
            w,
            "{i},{},{},{},{},{},{},{},{}",
            item.template.facet,
            b[0],
            b[1],
            b[2],
            item.pixel.x,
            item.pixel.y,
            flags[i] as u8,
            errors[i]
        )?;
    }
    Ok(())
}

fn write_spectrum_csv(path: &Path, spectrum: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "index,singular_value")?;
    for (i, s) in spectrum.iter().enumerate() {
        writeln!(w, "{i},{s}")?;
    }
    Ok(())
}

/// Loads the inputs named by `cfg`, runs [`reconstruct`], writes the
/// artifacts into `cfg.output_dir` and returns the report that was written
/// to `metrics.json`.
///
/// A refinement that ran out of iterations still writes every artifact; the
/// report marks `refined.converged = false` and the function returns the
/// corresponding [`Error::NoConvergence`] after writing, so callers can
/// distinguish best-effort output from success.
pub fn run_reconstruct(cfg: &PipelineConfig) -> Result<Report> {
    cfg.validate()?;
    let mesh = TriMesh::load_obj(&cfg.mesh)?;
    let camera = Camera::load_json(&cfg.camera)?;
    let corr = CorrespondenceSet::load_csv(&cfg.correspondences)?;
    let gt = cfg
        .ground_truth
        .as_ref()
        .map(|path| -> Result<DVector<f64>> {
            let gt_mesh = TriMesh::load_obj(path)?;
            if gt_mesh.num_vertices() != mesh.num_vertices() {
                return Err(Error::DegenerateInput(format!(
                    "ground truth has {} vertices, template has {}",
                    gt_mesh.num_vertices(),
                    mesh.num_vertices()
                )));
            }
            Ok(gt_mesh.reference_coords())
        })
        .transpose()?;

    let recon = reconstruct(&mesh, &camera, &corr, &cfg.options())?;

    std::fs::create_dir_all(&cfg.output_dir)?;
    let artifacts = Artifacts {
        mesh_obj: cfg.output_dir.join("recon.obj"),
        inliers_csv: cfg.output_dir.join("inliers.csv"),
        metrics_json: cfg.output_dir.join("metrics.json"),
        spectrum_csv: recon
            .linear
            .spectrum
            .is_some()
            .then(|| cfg.output_dir.join("spectrum.csv")),
    };

    mesh.write_obj(&artifacts.mesh_obj, &recon.x)?;
    let errors = reprojection_errors(&mesh, &camera, &corr, &recon.x)?;
    write_inlier_csv(&artifacts.inliers_csv, &corr, &recon.flags, &errors)?;
    if let (Some(path), Some(spectrum)) = (&artifacts.spectrum_csv, &recon.linear.spectrum) {
        write_spectrum_csv(path, spectrum)?;
    }

    let kept_corr = corr.with_flags(&recon.flags);
    let linear_report = StageReport {
        objective: recon.linear.objective,
        reproj_rms_px: reprojection_rms(&mesh, &camera, &kept_corr, &recon.linear.x)?,
    };
    let refined_report = recon
        .refined
        .as_ref()
        .map(|r| -> Result<RefineReport> {
            Ok(RefineReport {
                converged: r.converged,
                iterations: r.iterations,
                max_violation: r.max_violation,
                objective: r.objective,
                reproj_rms_px: reprojection_rms(&mesh, &camera, &kept_corr, &r.x)?,
            })
        })
        .transpose()?;

    let report = Report {
        n_vertices: mesh.num_vertices(),
        n_facets: mesh.num_facets(),
        n_correspondences: corr.len(),
        n_controls: recon.basis.num_controls(),
        surface: recon.mode,
        inliers_kept: recon.flags.iter().filter(|&&f| f).count(),
        linear: linear_report,
        refined: refined_report,
        ground_truth: gt
            .as_ref()
            .map(|gt| ground_truth_report(&camera, &recon.x, gt)),
        timings: recon.timings,
        artifacts,
    };

    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(&report.artifacts.metrics_json, json)?;

    if let Some(r) = &report.refined {
        if !r.converged {
            return Err(Error::NoConvergence {
                iterations: r.iterations,
                violation: r.max_violation,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{
        make_scenario, standard_camera, standard_sheet, DeformFamily, ScenarioParams,
    };
    use tempfile::TempDir;

    fn scenario_params(noise: f64, ratio: f64, n: usize, seed: u64) -> ScenarioParams {
        ScenarioParams {
            family: DeformFamily::CylinderBend { radius: 150.0 },
            n_inliers: n,
            outlier_ratio: ratio,
            noise_sigma: noise,
            seed,
        }
    }

    fn write_scene(dir: &Path, noise: f64, ratio: f64, n: usize, seed: u64) -> PipelineConfig {
        let mesh = standard_sheet();
        let camera = standard_camera();
        let scenario =
            make_scenario(&mesh, &camera, &scenario_params(noise, ratio, n, seed)).unwrap();
        mesh.write_obj(dir.join("template.obj"), &mesh.reference_coords())
            .unwrap();
        mesh.write_obj(dir.join("gt.obj"), &scenario.gt_coords)
            .unwrap();
        camera.write_json(dir.join("camera.json")).unwrap();
        scenario.corr.write_csv(dir.join("corr.csv")).unwrap();
        PipelineConfig {
            mesh: dir.join("template.obj"),
            camera: dir.join("camera.json"),
            correspondences: dir.join("corr.csv"),
            output_dir: dir.join("out"),
            ground_truth: Some(dir.join("gt.obj")),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn end_to_end_on_files_recovers_the_scene() {
        let dir = TempDir::new().unwrap();
        let cfg = write_scene(dir.path(), 1.0, 0.2, 200, 5);
        let report = run_reconstruct(&cfg).unwrap();

        assert_eq!(report.n_vertices, 99);
        assert_eq!(report.n_correspondences, 250);
        let gt = report.ground_truth.as_ref().unwrap();
        assert!(gt.success, "agreement {}", gt.agreement_2px);
        assert!(gt.mean_3d < 5.0, "mean 3D error {} mm", gt.mean_3d);
        let refined = report.refined.as_ref().unwrap();
        assert!(refined.converged);
        assert!(
            refined.reproj_rms_px <= report.linear.reproj_rms_px + 1.0,
            "refinement must not degrade reprojection: {} vs {}",
            refined.reproj_rms_px,
            report.linear.reproj_rms_px
        );

        for path in [
            &report.artifacts.mesh_obj,
            &report.artifacts.inliers_csv,
            &report.artifacts.metrics_json,
        ] {
            assert!(path.is_file(), "missing artifact {}", path.display());
        }
        assert!(report.artifacts.spectrum_csv.is_none());

        let written: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&report.artifacts.metrics_json).unwrap())
                .unwrap();
        assert_eq!(written["ground_truth"]["success"], serde_json::json!(true));
    }

    #[test]
    fn all_strategy_matches_regular_with_full_count() {
        let mesh = standard_sheet();
        let camera = standard_camera();
        let scenario =
            make_scenario(&mesh, &camera, &scenario_params(0.0, 0.0, 150, 9)).unwrap();
        let base = ReconstructOptions {
            robust: None,
            refine: None,
            ..ReconstructOptions::default()
        };
        let all = ReconstructOptions {
            strategy: ControlStrategy::All,
            ..base.clone()
        };
        let regular_full = ReconstructOptions {
            strategy: ControlStrategy::Regular,
            control_count: mesh.num_vertices(),
            ..base
        };
        let ra = reconstruct(&mesh, &camera, &scenario.corr, &all).unwrap();
        let rb = reconstruct(&mesh, &camera, &scenario.corr, &regular_full).unwrap();
        assert_eq!(ra.x.as_slice(), rb.x.as_slice());
    }

    #[test]
    fn spectrum_artifact_is_written_on_request() {
        let dir = TempDir::new().unwrap();
        let mut cfg = write_scene(dir.path(), 0.5, 0.0, 120, 11);
        cfg.spectrum = true;
        cfg.robust = false;
        cfg.refine = false;
        let report = run_reconstruct(&cfg).unwrap();
        let path = report.artifacts.spectrum_csv.as_ref().unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let rows = text.lines().count();
        assert_eq!(rows, 1 + 3 * report.n_controls);
        assert!(text.starts_with("index,singular_value"));
        assert!(report.refined.is_none());
    }

    #[test]
    fn missing_input_is_reported_by_name() {
        let dir = TempDir::new().unwrap();
        let mut cfg = write_scene(dir.path(), 0.5, 0.0, 80, 2);
        cfg.camera = dir.path().join("nope.json");
        let err = run_reconstruct(&cfg).unwrap_err();
        let text = err.to_string();
        assert!(
            text.contains("camera") && text.contains("nope.json"),
            "unhelpful error: {text}"
        );
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = PipelineConfig {
            mesh: PathBuf::from("a.obj"),
            w_r: 2.5,
            control_count: 40,
            robust: false,
            ..PipelineConfig::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.mesh, cfg.mesh);
        assert_eq!(back.w_r, cfg.w_r);
        assert_eq!(back.control_count, cfg.control_count);
        assert_eq!(back.robust, cfg.robust);

        let sparse: PipelineConfig =
            serde_json::from_str(r#"{"mesh": "m.obj", "w_r": 3.0}"#).unwrap();
        assert_eq!(sparse.w_r, 3.0);
        assert_eq!(sparse.control_count, 25);
        assert!(sparse.robust && sparse.refine);
    }
}
