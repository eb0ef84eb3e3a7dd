//! Command-line surface for the reconstruction library.
//!
//! Every subcommand reads plain files (OBJ meshes, JSON cameras and configs,
//! CSV correspondences), writes plain files, and prints a JSON summary to
//! stdout. Failures print a machine-readable JSON object to stderr and exit
//! with 2 for configuration or input problems and 3 when the constrained
//! refinement fails to converge (artifacts are still written best-effort).
//! All stochastic stages take explicit seeds, so every run is reproducible
//! from its flags alone. `LAPMESH_THREADS` (or `--threads`) caps the worker
//! pool of the parallel sweep; everything else is single-threaded.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DVector, Point3, Vector3};
use serde_json::json;

use lapmesh::controls::{select_controls, ControlStrategy};
use lapmesh::error::{Error, Result};
use lapmesh::mesh::{build_topology, vertex3, TriMesh};
use lapmesh::pipeline::{
    reconstruct, run_reconstruct, BallSpec, PipelineConfig, ReconstructOptions, SurfaceKind,
};
use lapmesh::projection::assemble_m;
use lapmesh::refine::{fit_trajectory, Cylinder, Line3, RefineConfig};
use lapmesh::regularizer::{normalized_spectrum, RegularizerMode, DEFAULT_SIGMA};
use lapmesh::solver::{conditioning_report, EigenMethod, DEFAULT_WR};
use lapmesh::synth::{
    self, make_half_cylinder, make_scenario, make_sheet, make_sphere, press_onto_cylinder,
    robustness_sweep, sample_correspondences, standard_camera, write_sweep_csv, DeformFamily,
    ScenarioParams, SweepConfig,
};

#[derive(Parser)]
#[command(
    name = "lapmesh",
    version,
    about = "Monocular 3D shape recovery of deformable triangulated surfaces",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for parallel commands; overrides LAPMESH_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: outlier rejection, linear solve, refinement, artifacts.
    Reconstruct(ReconstructArgs),
    /// Linear solve only; no rejection, no refinement.
    SolveLinear(SolveLinearArgs),
    /// Build the regularization matrix and write it with its spectrum.
    Regularizer(RegularizerArgs),
    /// Select control vertices and write them as CSV.
    Controls(ControlsArgs),
    /// Generate a synthetic scene bundle with ground truth.
    Synth(SynthArgs),
    /// Monte-Carlo success-rate sweep over inlier counts and outlier ratios.
    Sweep(SweepArgs),
    /// Conditioning sweep and regularizer spectra diagnostics.
    Diag(DiagArgs),
    /// Multi-frame ball-against-cylinder demo with trajectory fitting.
    Ball(BallArgs),
}

fn parse_floats(s: &str, n: usize, what: &str) -> std::result::Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != n {
        return Err(format!("{what} needs {n} comma-separated numbers, got {}", parts.len()));
    }
    parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad number {:?} in {what}: {e}", p.trim()))
        })
        .collect()
}

fn parse_vec3(s: &str) -> std::result::Result<Vector3<f64>, String> {
    let v = parse_floats(s, 3, "a 3D vector")?;
    Ok(Vector3::new(v[0], v[1], v[2]))
}

/// "px,py,pz,dx,dy,dz,r" — a point on the axis, the axis direction, radius.
fn parse_cylinder(s: &str) -> std::result::Result<Cylinder, String> {
    let v = parse_floats(s, 7, "a cylinder")?;
    Ok(Cylinder {
        point: Vector3::new(v[0], v[1], v[2]),
        axis: Vector3::new(v[3], v[4], v[5]),
        radius: v[6],
    })
}

/// "px,py,pz,dx,dy,dz" — a point on the line and its direction.
fn parse_line(s: &str) -> std::result::Result<Line3, String> {
    let v = parse_floats(s, 6, "a line")?;
    Ok(Line3 {
        point: Vector3::new(v[0], v[1], v[2]),
        direction: Vector3::new(v[3], v[4], v[5]),
    })
}

#[derive(Clone)]
enum TrajArg {
    /// Fit the line to the per-frame linear-solution centroids.
    Auto,
    Line(Line3),
}

fn parse_traj(s: &str) -> std::result::Result<TrajArg, String> {
    if s.eq_ignore_ascii_case("auto") {
        Ok(TrajArg::Auto)
    } else {
        Ok(TrajArg::Line(parse_line(s)?))
    }
}

#[derive(Args)]
struct ReconstructArgs {
    /// JSON pipeline config; any flag below overrides its field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reference template, OBJ.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Camera intrinsics, JSON.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Point correspondences, CSV.
    #[arg(long)]
    correspondences: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Deformed ground truth (OBJ) for 3D error metrics.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, value_enum)]
    surface: Option<SurfaceKind>,
    /// Virtual-vertex offset scale of the curved regularizer.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_enum)]
    strategy: Option<ControlStrategy>,
    /// Number of control vertices.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Regularization weight.
    #[arg(long)]
    wr: Option<f64>,
    #[arg(long, value_enum)]
    method: Option<EigenMethod>,
    /// Run iterative outlier rejection (true/false).
    #[arg(long)]
    robust: Option<bool>,
    /// Run constrained refinement (true/false).
    #[arg(long)]
    refine: Option<bool>,
    /// Also write the singular-value spectrum of the final solve.
    #[arg(long)]
    spectrum: bool,
    /// Cylindrical obstacle "px,py,pz,dx,dy,dz,r"; switches refinement to
    /// the collision-aware variant (requires --ball-trajectory).
    #[arg(long, value_parser = parse_cylinder)]
    ball_cylinder: Option<Cylinder>,
    /// Ball center trajectory "px,py,pz,dx,dy,dz".
    #[arg(long, value_parser = parse_line)]
    ball_trajectory: Option<Line3>,
}

impl ReconstructArgs {
    fn into_config(self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load_json(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.mesh {
            cfg.mesh = v;
        }
        if let Some(v) = self.camera {
            cfg.camera = v;
        }
        if let Some(v) = self.correspondences {
            cfg.correspondences = v;
        }
        if let Some(v) = self.out {
            cfg.output_dir = v;
        }
        if let Some(v) = self.gt {
            cfg.ground_truth = Some(v);
        }
        if let Some(v) = self.surface {
            cfg.surface = v;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.strategy {
            cfg.strategy = v;
        }
        if let Some(v) = self.count {
            cfg.control_count = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.wr {
            cfg.w_r = v;
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.robust {
            cfg.robust = v;
        }
        if let Some(v) = self.refine {
            cfg.refine = v;
        }
        if self.spectrum {
            cfg.spectrum = true;
        }
        match (self.ball_cylinder, self.ball_trajectory) {
            (Some(cylinder), Some(trajectory)) => {
                cfg.ball = Some(BallSpec {
                    cylinder,
                    trajectory,
                    w_l: 1.0,
                    w_t: 1.0,
                });
            }
            (Some(_), None) | (None, Some(_)) => {
                return Err(Error::DegenerateInput(
                    "--ball-cylinder and --ball-trajectory must be given together".into(),
                ));
            }
            (None, None) => {}
        }
        for (name, path) in [
            ("--mesh", &cfg.mesh),
            ("--camera", &cfg.camera),
            ("--correspondences", &cfg.correspondences),
        ] {
            if path.as_os_str().is_empty() {
                return Err(Error::DegenerateInput(format!(
                    "{name} is required (flag or config file)"
                )));
            }
        }
        Ok(cfg)
    }
}

fn cmd_reconstruct(args: ReconstructArgs) -> Result<serde_json::Value> {
    let cfg = args.into_config()?;
    let report = run_reconstruct(&cfg)?;
    Ok(serde_json::to_value(&report)?)
}

#[derive(Args)]
struct SolveLinearArgs {
    /// Reference template, OBJ.
    #[arg(long)]
    mesh: PathBuf,
    /// Camera intrinsics, JSON.
    #[arg(long)]
    camera: PathBuf,
    /// Point correspondences, CSV.
    #[arg(long)]
    correspondences: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Deformed ground truth (OBJ) for 3D error metrics.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Regularization weight.
    #[arg(long, default_value_t = DEFAULT_WR)]
    wr: f64,
    #[arg(long, value_enum, default_value_t = SurfaceKind::Auto)]
    surface: SurfaceKind,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, value_enum, default_value_t = ControlStrategy::Regular)]
    strategy: ControlStrategy,
    /// Number of control vertices.
    #[arg(long, default_value_t = 25)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = EigenMethod::Auto)]
    method: EigenMethod,
    /// Also write the singular-value spectrum of the solve.
    #[arg(long)]
    spectrum: bool,
}

fn cmd_solve_linear(args: SolveLinearArgs) -> Result<serde_json::Value> {
    let cfg = PipelineConfig {
        mesh: args.mesh,
        camera: args.camera,
        correspondences: args.correspondences,
        output_dir: args.out,
        ground_truth: args.gt,
        surface: args.surface,
        sigma: args.sigma,
        strategy: args.strategy,
        control_count: args.count,
        seed: args.seed,
        w_r: args.wr,
        method: args.method,
        robust: false,
        refine: false,
        spectrum: args.spectrum,
        ..PipelineConfig::default()
    };
    let report = run_reconstruct(&cfg)?;
    Ok(serde_json::to_value(&report)?)
}

#[derive(Args)]
struct RegularizerArgs {
    /// Reference template, OBJ.
    #[arg(long)]
    mesh: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SurfaceKind::Auto)]
    surface: SurfaceKind,
    /// Virtual-vertex offset scale of the curved regularizer.
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
}

fn cmd_regularizer(args: RegularizerArgs) -> Result<serde_json::Value> {
    let mesh = TriMesh::load_obj(&args.mesh)?;
    let topo = build_topology(&mesh)?;
    let reg = match args.surface {
        SurfaceKind::Auto => lapmesh::regularizer::build_auto(&mesh, &topo, args.sigma)?,
        SurfaceKind::Planar => lapmesh::regularizer::build_planar(&mesh, &topo)?,
        SurfaceKind::NonPlanar => {
            lapmesh::regularizer::build_nonplanar(&mesh, &topo, args.sigma)?
        }
    };
    std::fs::create_dir_all(&args.out)?;
    let mtx_path = args.out.join("regularizer.mtx");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&mtx_path)?);
    reg.a_prime().write_matrix_market(&mut w)?;
    drop(w);

    let spectrum = normalized_spectrum(&reg)?;
    let spectrum_path = args.out.join("regularizer_spectrum.csv");
    {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&spectrum_path)?);
        writeln!(w, "index,normalized_singular_value")?;
        for (i, s) in spectrum.iter().enumerate() {
            writeln!(w, "{i},{s}")?;
        }
    }
    let kernel_dim = spectrum.iter().filter(|&&s| s < 1e-8).count();
    Ok(json!({
        "mode": match reg.mode() {
            RegularizerMode::Planar => json!("planar"),
            RegularizerMode::NonPlanar { sigma } => json!({"non-planar": {"sigma": sigma}}),
        },
        "rows": reg.nrows(),
        "vertices": reg.num_vertices(),
        "nnz": reg.a_prime().nnz(),
        "kernel_dim": kernel_dim,
        "matrix": mtx_path,
        "spectrum": spectrum_path,
    }))
}

#[derive(Args)]
struct ControlsArgs {
    /// Reference template, OBJ.
    #[arg(long)]
    mesh: PathBuf,
    /// Output CSV file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ControlStrategy::Regular)]
    strategy: ControlStrategy,
    /// Number of control vertices.
    #[arg(long, default_value_t = 25)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_controls(args: ControlsArgs) -> Result<serde_json::Value> {
    let mesh = TriMesh::load_obj(&args.mesh)?;
    let indices = select_controls(&mesh, args.strategy, args.count, args.seed)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    use std::io::Write;
    let coords = mesh.reference_coords();
    let mut w = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    writeln!(w, "control,vertex,x,y,z")?;
    for (c, &v) in indices.iter().enumerate() {
        let p = vertex3(&coords, v);
        writeln!(w, "{c},{v},{},{},{}", p.x, p.y, p.z)?;
    }
    drop(w);
    Ok(json!({ "count": indices.len(), "out": args.out }))
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ShapeKind {
    Sheet,
    HalfCylinder,
    Sphere,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum FamilyKind {
    CylinderBend,
    CosineWave,
    Rigid,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the bundle.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ShapeKind::Sheet)]
    shape: ShapeKind,
    /// Grid rows of the sheet / shell.
    #[arg(long, default_value_t = 9)]
    rows: usize,
    /// Grid columns of the sheet / shell.
    #[arg(long, default_value_t = 11)]
    cols: usize,
    /// Sheet width / shell length, world units.
    #[arg(long, default_value_t = 280.0)]
    size: f64,
    /// Shell radius (half-cylinder shape only).
    #[arg(long, default_value_t = 90.0)]
    shell_radius: f64,
    /// Icosphere subdivision level (sphere shape only).
    #[arg(long, default_value_t = 2)]
    subdivisions: usize,
    /// Sphere diameter (sphere shape only).
    #[arg(long, default_value_t = 73.52)]
    diameter: f64,
    /// Distance of the reference shape from the camera.
    #[arg(long, default_value_t = 600.0)]
    depth: f64,
    #[arg(long, value_enum, default_value_t = FamilyKind::CylinderBend)]
    family: FamilyKind,
    /// Bend radius of the cylinder-bend family.
    #[arg(long, default_value_t = 150.0)]
    bend_radius: f64,
    /// Depth amplitude of the cosine-wave family.
    #[arg(long, default_value_t = 15.0)]
    amplitude: f64,
    /// Periods across the sheet of the cosine-wave family.
    #[arg(long, default_value_t = 1.5)]
    periods: f64,
    /// Rotation axis of the rigid family, "x,y,z".
    #[arg(long, value_parser = parse_vec3, default_value = "0,1,0")]
    axis: Vector3<f64>,
    /// Rotation angle of the rigid family, radians.
    #[arg(long, default_value_t = 0.0)]
    angle: f64,
    /// Translation of the rigid family, "x,y,z".
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    translation: Vector3<f64>,
    /// Number of genuine correspondences.
    #[arg(long, default_value_t = 200)]
    inliers: usize,
    /// Fraction of the total correspondences that are outliers.
    #[arg(long, default_value_t = 0.0)]
    outlier_ratio: f64,
    /// Pixel noise standard deviation on inliers.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_synth(args: SynthArgs) -> Result<serde_json::Value> {
    let mesh = match args.shape {
        ShapeKind::Sheet => make_sheet(args.rows, args.cols, args.size, args.depth)?,
        ShapeKind::HalfCylinder => make_half_cylinder(
            args.rows,
            args.cols,
            args.shell_radius,
            args.size,
            args.depth,
        )?,
        ShapeKind::Sphere => make_sphere(args.subdivisions, args.diameter, args.depth)?,
    };
    let camera = standard_camera();
    let family = match args.family {
        FamilyKind::CylinderBend => DeformFamily::CylinderBend {
            radius: args.bend_radius,
        },
        FamilyKind::CosineWave => DeformFamily::CosineWave {
            amplitude: args.amplitude,
            periods: args.periods,
        },
        FamilyKind::Rigid => DeformFamily::Rigid {
            axis: [args.axis.x, args.axis.y, args.axis.z],
            angle: args.angle,
            translation: [args.translation.x, args.translation.y, args.translation.z],
        },
    };
    let params = ScenarioParams {
        family,
        n_inliers: args.inliers,
        outlier_ratio: args.outlier_ratio,
        noise_sigma: args.noise,
        seed: args.seed,
    };
    let scenario = make_scenario(&mesh, &camera, &params)?;

    std::fs::create_dir_all(&args.out)?;
    let template = args.out.join("template.obj");
    let gt = args.out.join("gt.obj");
    let camera_path = args.out.join("camera.json");
    let corr = args.out.join("corr.csv");
    let scenario_path = args.out.join("scenario.json");
    mesh.write_obj(&template, &mesh.reference_coords())?;
    mesh.write_obj(&gt, &scenario.gt_coords)?;
    camera.write_json(&camera_path)?;
    scenario.corr.write_csv(&corr)?;
    let description = json!({
        "params": params,
        "truth_inliers": scenario.truth_inliers,
        "files": {
            "template": template,
            "ground_truth": gt,
            "camera": camera_path,
            "correspondences": corr,
        },
    });
    std::fs::write(&scenario_path, serde_json::to_string_pretty(&description)?)?;

    Ok(json!({
        "out": args.out,
        "n_vertices": mesh.num_vertices(),
        "n_facets": mesh.num_facets(),
        "n_correspondences": scenario.corr.len(),
        "n_true_inliers": scenario.truth_inliers.iter().filter(|&&t| t).count(),
        "scenario": scenario_path,
    }))
}

#[derive(Args)]
struct SweepArgs {
    /// Grid config, JSON; defaults to the built-in desk-scale grid.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Output CSV file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Override the number of trials per cell.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_sweep(args: SweepArgs) -> Result<serde_json::Value> {
    let mut cfg = match &args.grid {
        Some(path) => serde_json::from_str::<SweepConfig>(&std::fs::read_to_string(path)?)?,
        None => SweepConfig::default(),
    };
    if let Some(t) = args.trials {
        cfg.trials_per_cell = t;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let cells = robustness_sweep(&cfg)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_sweep_csv(&args.out, &cells)?;
    let rates: Vec<f64> = cells.iter().map(|c| c.success_rate).collect();
    Ok(json!({
        "cells": cells.len(),
        "trials_per_cell": cfg.trials_per_cell,
        "min_success_rate": rates.iter().cloned().fold(f64::INFINITY, f64::min),
        "max_success_rate": rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        "out": args.out,
    }))
}

#[derive(Args)]
struct DiagArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Points on the log-spaced weight grid.
    #[arg(long, default_value_t = 33)]
    points: usize,
    /// Number of control vertices of the conditioning scene.
    #[arg(long, default_value_t = 25)]
    count: usize,
    /// Correspondences of the conditioning scene.
    #[arg(long, default_value_t = 100)]
    correspondences: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// Log-spaced grid over [1/120, 120], symmetric around 1.
fn weight_grid(points: usize) -> Vec<f64> {
    let span = 120.0f64.ln();
    (0..points)
        .map(|i| {
            let t = if points == 1 {
                0.5
            } else {
                i as f64 / (points - 1) as f64
            };
            ((2.0 * t - 1.0) * span).exp()
        })
        .collect()
}

fn cmd_diag(args: DiagArgs) -> Result<serde_json::Value> {
    use std::io::Write;
    std::fs::create_dir_all(&args.out)?;

    // Conditioning of the stacked system on the standard bent-sheet scene,
    // solved in normalized image coordinates so the balance between data
    // rows and regularizer rows is independent of the pixel scale.
    let mesh = synth::standard_sheet();
    let camera = standard_camera();
    let params = ScenarioParams {
        family: DeformFamily::CylinderBend { radius: 200.0 },
        n_inliers: args.correspondences,
        outlier_ratio: 0.0,
        noise_sigma: 1.0,
        seed: args.seed,
    };
    let scenario = make_scenario(&mesh, &camera, &params)?;
    let topo = build_topology(&mesh)?;
    let reg = lapmesh::regularizer::build_planar(&mesh, &topo)?;
    let indices = select_controls(&mesh, ControlStrategy::Regular, args.count, args.seed)?;
    let basis = lapmesh::controls::build_p(&reg, &indices)?;
    let m = assemble_m(
        &mesh,
        &camera.normalized(),
        &scenario.corr.scaled_pixels(1.0 / camera.focal_mean()),
    )?;
    let grid = weight_grid(args.points);
    let report = conditioning_report(&m, &reg, &basis, &grid)?;

    let conditioning_path = args.out.join("conditioning.csv");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&conditioning_path)?);
        writeln!(w, "w_r,condition")?;
        for entry in &report {
            writeln!(w, "{},{}", entry.w_r, entry.condition)?;
        }
    }
    let best = report
        .iter()
        .min_by(|a, b| a.condition.total_cmp(&b.condition))
        .expect("nonempty grid");

    // Normalized spectra of the curved-reference regularizer across offset
    // scales, on a half-cylinder shell.
    let shell = make_half_cylinder(9, 11, 90.0, 280.0, 600.0)?;
    let shell_topo = build_topology(&shell)?;
    let sigmas = [0.5, 1.0, 2.0, 5.0];
    let spectra_path = args.out.join("spectra.csv");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&spectra_path)?);
        writeln!(w, "sigma,index,normalized_singular_value")?;
        for &sigma in &sigmas {
            let reg = lapmesh::regularizer::build_nonplanar(&shell, &shell_topo, sigma)?;
            for (i, s) in normalized_spectrum(&reg)?.iter().enumerate() {
                writeln!(w, "{sigma},{i},{s}")?;
            }
        }
    }

    Ok(json!({
        "conditioning": conditioning_path,
        "spectra": spectra_path,
        "grid_points": grid.len(),
        "best_w_r": best.w_r,
        "best_condition": best.condition,
    }))
}

#[derive(Args)]
struct BallArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of frames along the flight path.
    #[arg(long, default_value_t = 5)]
    frames: usize,
    /// Cylindrical obstacle "px,py,pz,dx,dy,dz,r".
    #[arg(long, value_parser = parse_cylinder, default_value = "0,-60,600,1,0,0,30")]
    cylinder: Cylinder,
    /// Ball trajectory: "auto" fits a line to the per-frame linear
    /// centroids; or an explicit "px,py,pz,dx,dy,dz".
    #[arg(long, value_parser = parse_traj, default_value = "auto")]
    traj: TrajArg,
    /// Ball center of the first frame, "x,y,z".
    #[arg(long, value_parser = parse_vec3, default_value = "0,30,600")]
    start: Vector3<f64>,
    /// Center displacement per frame, "x,y,z".
    #[arg(long, value_parser = parse_vec3, default_value = "0,-10,0")]
    step: Vector3<f64>,
    /// Ball diameter, world units.
    #[arg(long, default_value_t = 73.52)]
    diameter: f64,
    /// Icosphere subdivision level.
    #[arg(long, default_value_t = 2)]
    subdivisions: usize,
    /// Correspondences per frame.
    #[arg(long, default_value_t = 400)]
    inliers: usize,
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Regularization weight.
    #[arg(long, default_value_t = DEFAULT_WR)]
    wr: f64,
    /// Edge-length preservation weight.
    #[arg(long, default_value_t = 1.0)]
    wl: f64,
    /// Trajectory attachment weight.
    #[arg(long, default_value_t = 1.0)]
    wt: f64,
    #[arg(long, value_enum, default_value_t = ControlStrategy::All)]
    strategy: ControlStrategy,
    /// Number of control vertices (ignored by the all strategy).
    #[arg(long, default_value_t = 0)]
    count: usize,
}

fn centroid(x: &DVector<f64>) -> Vector3<f64> {
    let n = x.len() / 3;
    (0..n).map(|i| vertex3(x, i)).sum::<Vector3<f64>>() / n as f64
}

fn penetration_mm(x: &DVector<f64>, cylinder: &Cylinder) -> f64 {
    let axis = cylinder.axis.normalize();
    let min_dist = (0..x.len() / 3)
        .map(|v| {
            let rel = vertex3(x, v) - cylinder.point;
            (rel - axis * rel.dot(&axis)).norm()
        })
        .fold(f64::INFINITY, f64::min);
    (cylinder.radius - min_dist).max(0.0)
}

fn cmd_ball(args: BallArgs) -> Result<serde_json::Value> {
    use std::io::Write;
    if args.frames == 0 {
        return Err(Error::ParamOutOfRange {
            name: "frames",
            value: 0.0,
            detail: "at least one frame is required".into(),
        });
    }
    if matches!(args.traj, TrajArg::Auto) && args.frames < 2 {
        return Err(Error::DegenerateInput(
            "trajectory fitting needs at least 2 frames; pass an explicit --traj".into(),
        ));
    }
    let depth = args.start.z;
    let mesh = make_sphere(args.subdivisions, args.diameter, depth)?;
    let camera = standard_camera();
    let reference = mesh.reference_coords();
    let ref_center = centroid(&reference);

    // Ground truth per frame: the sphere carried along the flight path,
    // pressed onto the obstacle wherever it would penetrate.
    let mut gts = Vec::with_capacity(args.frames);
    let mut corrs = Vec::with_capacity(args.frames);
    for k in 0..args.frames {
        let offset = args.start + args.step * k as f64 - ref_center;
        let mut gt = reference.clone();
        for v in 0..gt.len() / 3 {
            let p = vertex3(&gt, v) + offset;
            lapmesh::mesh::set_vertex3(&mut gt, v, p);
        }
        let gt = press_onto_cylinder(&gt, &args.cylinder);
        let (corr, _) = sample_correspondences(
            &mesh,
            &gt,
            &camera,
            args.inliers,
            0.0,
            args.noise,
            args.seed.wrapping_add(k as u64),
        )?;
        gts.push(gt);
        corrs.push(corr);
    }

    let base_opts = ReconstructOptions {
        strategy: args.strategy,
        control_count: args.count,
        seed: args.seed,
        w_r: args.wr,
        robust: None,
        refine: None,
        ..ReconstructOptions::default()
    };
    let trajectory = match &args.traj {
        TrajArg::Auto => {
            // The plain linear solutions wobble in depth with the pixel
            // noise, which would dominate the fit; length-constrained
            // refinement pins the scale, so its centroids trace the actual
            // flight path.
            let fit_opts = ReconstructOptions {
                refine: Some(RefineConfig::with_weight(args.wr)),
                ..base_opts.clone()
            };
            let mut centroids = Vec::with_capacity(args.frames);
            for corr in &corrs {
                let recon = reconstruct(&mesh, &camera, corr, &fit_opts)?;
                centroids.push(Point3::from(centroid(&recon.x)));
            }
            fit_trajectory(&centroids)?
        }
        TrajArg::Line(line) => line.clone(),
    };

    std::fs::create_dir_all(&args.out)?;
    let frames_path = args.out.join("frames.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&frames_path)?);
    writeln!(
        w,
        "frame,center_x,center_y,center_z,penetration_mm,penetration_rel,mean_3d_mm,converged,iterations"
    )?;

    let mut max_penetration = 0.0f64;
    let mut max_mean_3d = 0.0f64;
    let mut worst: Option<(usize, f64)> = None;
    for (k, corr) in corrs.iter().enumerate() {
        let opts = ReconstructOptions {
            refine: Some(RefineConfig::with_weight(args.wr)),
            ball: Some(BallSpec {
                cylinder: args.cylinder.clone(),
                trajectory: trajectory.clone(),
                w_l: args.wl,
                w_t: args.wt,
            }),
            ..base_opts.clone()
        };
        let recon = reconstruct(&mesh, &camera, corr, &opts)?;
        let refined = recon.refined.as_ref().expect("refinement was requested");
        mesh.write_obj(args.out.join(format!("frame_{k:02}.obj")), &recon.x)?;

        let center = args.start + args.step * k as f64;
        let pen = penetration_mm(&recon.x, &args.cylinder);
        let gt_report =
            lapmesh::pipeline::ground_truth_report(&camera, &recon.x, &gts[k]);
        writeln!(
            w,
            "{k},{},{},{},{pen},{},{},{},{}",
            center.x,
            center.y,
            center.z,
            pen / args.cylinder.radius,
            gt_report.mean_3d,
            refined.converged as u8,
            refined.iterations
        )?;
        max_penetration = max_penetration.max(pen);
        max_mean_3d = max_mean_3d.max(gt_report.mean_3d);
        if !refined.converged {
            worst = Some((refined.iterations, refined.max_violation));
        }
    }
    drop(w);

    let summary = json!({
        "frames": args.frames,
        "trajectory": {
            "point": [trajectory.point.x, trajectory.point.y, trajectory.point.z],
            "direction": [
                trajectory.direction.x,
                trajectory.direction.y,
                trajectory.direction.z
            ],
        },
        "max_penetration_mm": max_penetration,
        "max_penetration_rel": max_penetration / args.cylinder.radius,
        "max_mean_3d_mm": max_mean_3d,
        "report": frames_path,
        "out": args.out,
    });
    std::fs::write(
        args.out.join("ball_report.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    if let Some((iterations, violation)) = worst {
        return Err(Error::NoConvergence {
            iterations,
            violation,
        });
    }
    Ok(summary)
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidMesh(_) => "invalid-mesh",
        Error::NonManifold { .. } => "non-manifold",
        Error::DegenerateFacet { .. } => "degenerate-facet",
        Error::FacetOutOfRange { .. } => "facet-out-of-range",
        Error::InvalidBarycentric { .. } => "invalid-barycentric",
        Error::InvalidCamera(_) => "invalid-camera",
        Error::EmptyInlierSet => "empty-inlier-set",
        Error::NotPlanar { .. } => "not-planar",
        Error::DegenerateConfiguration(_) => "degenerate-configuration",
        Error::VirtualGramSingular => "virtual-gram-singular",
        Error::CountOutOfRange { .. } => "count-out-of-range",
        Error::RankDeficientInterior => "rank-deficient-interior",
        Error::EigenFailure => "eigen-failure",
        Error::AllBehindCamera => "all-behind-camera",
        Error::AllRejected => "all-rejected",
        Error::NoConvergence { .. } => "no-convergence",
        Error::DegenerateInput(_) => "degenerate-input",
        Error::ParamOutOfRange { .. } => "param-out-of-range",
        Error::Parse { .. } => "parse",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn error_json(e: &Error) -> serde_json::Value {
    let mut value = json!({
        "error": error_kind(e),
        "message": e.to_string(),
    });
    if let Error::NoConvergence {
        iterations,
        violation,
    } = e
    {
        value["iterations"] = json!(iterations);
        value["violation"] = json!(violation);
    }
    value
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoConvergence { .. } => 3,
        _ => 2,
    }
}

fn init_threads(flag: Option<usize>) {
    let from_env = std::env::var("LAPMESH_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = flag.or(from_env) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

fn run(command: Command) -> Result<serde_json::Value> {
    match command {
        Command::Reconstruct(args) => cmd_reconstruct(args),
        Command::SolveLinear(args) => cmd_solve_linear(args),
        Command::Regularizer(args) => cmd_regularizer(args),
        Command::Controls(args) => cmd_controls(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Diag(args) => cmd_diag(args),
        Command::Ball(args) => cmd_ball(args),
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    init_threads(cli.threads);
    match run(cli.command) {
        Ok(value) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&value).expect("summary serializes")
            );
        }
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::to_string(&error_json(&e)).expect("error serializes")
            );
            std::process::exit(exit_code(&e));
        }
    }
}
