//! Iterative outlier rejection by alternating solves with a shrinking gate.
//!
//! Starting from a heavily regularized solve, each round re-estimates the
//! shape from the current inliers, then re-tests every correspondence
//! against the new shape: those whose reprojection error exceeds the current
//! gate radius are flagged as outliers, and previously rejected ones whose
//! error now falls inside are re-admitted. Both the regularization weight
//! and the gate radius are halved between rounds, so early rounds tolerate a
//! coarse shape and late rounds enforce pixel-level agreement.
//!
//! Solves run in normalized image coordinates (see [`Camera::normalized`])
//! so that the regularization weight schedule is independent of the pixel
//! scale of the camera; gate radii and reported errors remain in true
//! pixels.

use crate::controls::ControlBasis;
use crate::error::{Error, Result};
use crate::mesh::{Topology, TriMesh};
use crate::projection::{assemble_m, reprojection_errors, Camera, CorrespondenceSet};
use crate::regularizer::Regularizer;
use crate::solver::{solve_initial, EigenMethod, LinearSolution, LinearSolveConfig};

/// Schedule for the rejection rounds. Defaults run five rounds with the
/// weight going 16, 8, 4, 2, 1 and the pixel gate 64, 32, 16, 8, 4.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RobustConfig {
    pub iterations: usize,
    pub w_r_start: f64,
    pub radius_start: f64,
    pub method: EigenMethod,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            iterations: 5,
            w_r_start: 16.0,
            radius_start: 64.0,
            method: EigenMethod::Auto,
        }
    }
}

impl RobustConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::ParamOutOfRange {
                name: "iterations",
                value: self.iterations as f64,
                detail: "at least one rejection round is required".into(),
            });
        }
        if !(self.w_r_start > 0.0 && self.w_r_start.is_finite()) {
            return Err(Error::ParamOutOfRange {
                name: "w_r_start",
                value: self.w_r_start,
                detail: "starting weight must be positive and finite".into(),
            });
        }
        if !(self.radius_start > 0.0 && self.radius_start.is_finite()) {
            return Err(Error::ParamOutOfRange {
                name: "radius_start",
                value: self.radius_start,
                detail: "starting gate radius must be positive and finite".into(),
            });
        }
        Ok(())
    }
}

/// Alternates linear solves with reprojection gating, halving the weight and
/// the gate radius each round. Returns the final inlier flags together with
/// the solution of the last round. The first solve uses the flags carried by
/// `corr`; every round re-tests all correspondences, so pre-flagged outliers
/// can be re-admitted.
pub fn reject_outliers(
    mesh: &TriMesh,
    camera: &Camera,
    corr: &CorrespondenceSet,
    topo: &Topology,
    reg: &Regularizer,
    basis: &ControlBasis,
    cfg: &RobustConfig,
) -> Result<(Vec<bool>, LinearSolution)> {
    cfg.validate()?;

    let scale = 1.0 / camera.focal_mean();
    let solve_camera = camera.normalized();
    let solve_corr = corr.scaled_pixels(scale);

    let mut flags = corr.inlier_flags();
    let mut w_r = cfg.w_r_start;
    let mut radius = cfg.radius_start;
    let mut last: Option<LinearSolution> = None;

    for round in 0..cfg.iterations {
        let m = match assemble_m(mesh, &solve_camera, &solve_corr.with_flags(&flags)) {
            Ok(m) => m,
            Err(Error::EmptyInlierSet) => return Err(Error::AllRejected),
            Err(e) => return Err(e),
        };
        let solve_cfg = LinearSolveConfig {
            w_r,
            method: cfg.method,
            with_spectrum: false,
        };
        let sol = solve_initial(&m, reg, basis, topo, &solve_cfg)?;

        let errors = reprojection_errors(mesh, camera, corr, &sol.x)?;
        let mut kept = 0usize;
        for (flag, err) in flags.iter_mut().zip(&errors) {
            *flag = *err <= radius;
            kept += *flag as usize;
        }
        log::debug!(
            "rejection round {}: w_r={w_r}, radius={radius}px, {kept}/{} inliers",
            round + 1,
            flags.len()
        );
        if kept == 0 {
            return Err(Error::AllRejected);
        }

        last = Some(sol);
        w_r *= 0.5;
        radius *= 0.5;
    }

    Ok((flags, last.expect("at least one round ran")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::{build_p, select_controls, ControlStrategy};
    use crate::mesh::{bary_to_world, build_topology, BaryPoint, TriMesh};
    use crate::projection::Correspondence;
    use crate::regularizer::build_planar;
    use nalgebra::{Point3, Vector2};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn scene_mesh(rows: usize, cols: usize) -> TriMesh {
        let mut vertices = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                vertices.push(Point3::new(
                    c as f64 - (cols as f64 - 1.0) / 2.0,
                    r as f64 - (rows as f64 - 1.0) / 2.0,
                    4.0,
                ));
            }
        }
        let at = |r: usize, c: usize| r * cols + c;
        let mut facets = Vec::new();
        for r in 0..rows - 1 {
            for c in 0..cols - 1 {
                facets.push([at(r, c), at(r, c + 1), at(r + 1, c)]);
                facets.push([at(r, c + 1), at(r + 1, c + 1), at(r + 1, c)]);
            }
        }
        TriMesh::new(vertices, facets, "scene").unwrap()
    }

    struct Scene {
        mesh: TriMesh,
        topo: crate::mesh::Topology,
        reg: crate::regularizer::Regularizer,
        basis: crate::controls::ControlBasis,
        camera: Camera,
        corr: CorrespondenceSet,
        truth: Vec<bool>,
    }

    /// Scene with `n_in` noisy inliers followed by `n_out` uniform-pixel
    /// outliers on the same template points.
    fn scene(n_in: usize, n_out: usize, noise: f64, seed: u64) -> Scene {
        let mesh = scene_mesh(5, 6);
        let topo = build_topology(&mesh).unwrap();
        let reg = build_planar(&mesh, &topo).unwrap();
        let idx = select_controls(&mesh, ControlStrategy::Regular, 8, 0).unwrap();
        let basis = build_p(&reg, &idx).unwrap();
        let camera = Camera::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let x = mesh.reference_coords();
        let mut rng = StdRng::seed_from_u64(seed);
        let mut items = Vec::new();
        let mut truth = Vec::new();
        for i in 0..n_in + n_out {
            let facet = rng.random_range(0..mesh.num_facets());
            let mut b = [
                rng.random_range(0.05..0.9f64),
                rng.random_range(0.05..0.9f64),
                0.0,
            ];
            let s = b[0] + b[1];
            if s > 0.95 {
                b[0] *= 0.9 / s;
                b[1] *= 0.9 / s;
            }
            b[2] = 1.0 - b[0] - b[1];
            let t = BaryPoint::new(facet, b).unwrap();
            let pixel = if i < n_in {
                let p = bary_to_world(&mesh, &t, &x).unwrap();
                camera.project(&p).unwrap()
                    + Vector2::new(
                        rng.random_range(-noise..noise.max(1e-12)),
                        rng.random_range(-noise..noise.max(1e-12)),
                    )
            } else {
                Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0))
            };
            items.push(Correspondence {
                template: t,
                pixel,
                inlier: true,
            });
            truth.push(i < n_in);
        }
        Scene {
            mesh,
            topo,
            reg,
            basis,
            camera,
            corr: CorrespondenceSet::new(items).unwrap(),
            truth,
        }
    }

    fn run(s: &Scene, cfg: &RobustConfig) -> Result<(Vec<bool>, LinearSolution)> {
        reject_outliers(&s.mesh, &s.camera, &s.corr, &s.topo, &s.reg, &s.basis, cfg)
    }

    #[test]
    fn noiseless_data_keeps_everything() {
        let s = scene(50, 0, 0.0, 1);
        let (flags, sol) = run(&s, &RobustConfig::default()).unwrap();
        assert!(flags.iter().all(|&f| f));
        let x_ref = s.mesh.reference_coords();
        assert!((sol.x - &x_ref).norm() < 1e-5 * x_ref.norm());
    }

    #[test]
    fn gross_outliers_are_rejected_and_inliers_kept() {
        let s = scene(120, 40, 1.0, 2);
        let (flags, sol) = run(&s, &RobustConfig::default()).unwrap();
        let kept_in = flags
            .iter()
            .zip(&s.truth)
            .filter(|&(&f, &t)| f && t)
            .count();
        let kept_out = flags
            .iter()
            .zip(&s.truth)
            .filter(|&(&f, &t)| f && !t)
            .count();
        assert!(kept_in >= 119, "kept {kept_in}/120 true inliers");
        assert!(kept_out <= 2, "kept {kept_out}/40 outliers");
        // Final gate: every kept correspondence within radius_start / 2^(n-1).
        let errors = reprojection_errors(&s.mesh, &s.camera, &s.corr, &sol.x).unwrap();
        for (err, &flag) in errors.iter().zip(&flags) {
            if flag {
                assert!(*err <= 4.0);
            }
        }
    }

    #[test]
    fn pre_flagged_inliers_are_readmitted() {
        let s = scene(60, 0, 0.5, 3);
        let mut start = vec![true; 60];
        for f in start.iter_mut().take(10) {
            *f = false;
        }
        let corr = s.corr.with_flags(&start);
        let (flags, _) = reject_outliers(
            &s.mesh,
            &s.camera,
            &corr,
            &s.topo,
            &s.reg,
            &s.basis,
            &RobustConfig::default(),
        )
        .unwrap();
        assert!(flags.iter().all(|&f| f), "good points were not re-admitted");
    }

    #[test]
    fn deterministic_given_same_inputs() {
        let s = scene(80, 30, 1.0, 4);
        let a = run(&s, &RobustConfig::default()).unwrap();
        let b = run(&s, &RobustConfig::default()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.x, b.1.x);
    }

    #[test]
    fn all_rejected_is_reported() {
        let s = scene(40, 0, 1.0, 5);
        // Absurdly tight gate: everything fails it in round one.
        let cfg = RobustConfig {
            radius_start: 1e-9,
            ..Default::default()
        };
        assert!(matches!(run(&s, &cfg), Err(Error::AllRejected)));
        // All flags already false: nothing to solve from.
        let corr = s.corr.with_flags(&vec![false; 40]);
        let r = reject_outliers(
            &s.mesh,
            &s.camera,
            &corr,
            &s.topo,
            &s.reg,
            &s.basis,
            &RobustConfig::default(),
        );
        assert!(matches!(r, Err(Error::AllRejected)));
    }

    #[test]
    fn rejects_bad_config() {
        let s = scene(20, 0, 0.0, 6);
        for cfg in [
            RobustConfig {
                iterations: 0,
                ..Default::default()
            },
            RobustConfig {
                w_r_start: 0.0,
                ..Default::default()
            },
            RobustConfig {
                radius_start: -1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                run(&s, &cfg),
                Err(Error::ParamOutOfRange { .. })
            ));
        }
    }
}
