//! Perspective camera model and image-point correspondences.
//!
//! Each correspondence ties a barycentric point on the template to a pixel.
//! For a calibrated camera with intrinsics `K`, a 3D point `p` projecting to
//! pixel `(u, v)` satisfies two linear equations in `p`: the first two rows
//! of `K` minus `(u, v)` times the third row, applied to `p`, vanish. Since
//! `p` is a fixed barycentric combination of mesh vertices, every
//! correspondence contributes two linear rows in the vertex coordinates,
//! stacked here into a sparse matrix.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DVector, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{bary_to_world, BaryPoint, TriMesh};
use crate::sparse::SparseMatrix;

/// Calibrated pinhole camera at the origin, looking down +z.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

/// Serialized form of [`Camera`].
#[derive(Debug, Serialize, Deserialize)]
struct CameraParams {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidCamera("non-finite intrinsics".into()));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera("image size must be positive".into()));
        }
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn focal_mean(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    /// The same camera expressed in normalized image coordinates: all
    /// intrinsics divided by the mean focal length, so ray matrices built
    /// from it have entries of order one regardless of the pixel scale.
    /// Pixel observations must be divided by the same factor (see
    /// [`CorrespondenceSet::scaled_pixels`]).
    pub fn normalized(&self) -> Camera {
        let f = self.focal_mean();
        Camera {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width,
            height: self.height,
        }
    }

    /// Projects a camera-frame point to pixel coordinates; `None` if the
    /// point is not strictly in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// The 2x3 matrix `H` whose null space is the viewing ray of `pixel`:
    /// the first two rows of `K` minus the pixel times the third row. A 3D
    /// point projects onto `pixel` exactly when `H p = 0` (and depth > 0).
    pub fn h_matrix(&self, pixel: &Vector2<f64>) -> Matrix2x3<f64> {
        Matrix2x3::new(
            self.fx,
            0.0,
            self.cx - pixel.x,
            0.0,
            self.fy,
            self.cy - pixel.y,
        )
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let p: CameraParams = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Camera::new(p.fx, p.fy, p.cx, p.cy, p.width, p.height)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = CameraParams {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &p)?;
        writeln!(w)?;
        Ok(())
    }
}

/// One template-to-image correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub template: BaryPoint,
    pub pixel: Vector2<f64>,
    /// Cleared by outlier rejection; only inliers enter the linear system.
    pub inlier: bool,
}

/// A non-empty batch of correspondences for one image.
#[derive(Debug, Clone)]
pub struct CorrespondenceSet {
    items: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn new(items: Vec<Correspondence>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::DegenerateInput(
                "correspondence set must not be empty".into(),
            ));
        }
        Ok(CorrespondenceSet { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Correspondence] {
        &self.items
    }

    pub fn inlier_count(&self) -> usize {
        self.items.iter().filter(|c| c.inlier).count()
    }

    pub fn inlier_flags(&self) -> Vec<bool> {
        self.items.iter().map(|c| c.inlier).collect()
    }

    /// Returns a copy with the given inlier flags applied.
    pub fn with_flags(&self, flags: &[bool]) -> CorrespondenceSet {
        assert_eq!(flags.len(), self.items.len(), "flag count mismatch");
        let items = self
            .items
            .iter()
            .zip(flags)
            .map(|(c, &inlier)| Correspondence { inlier, ..*c })
            .collect();
        CorrespondenceSet { items }
    }

    /// Returns a copy with every pixel multiplied by `factor`, for moving
    /// observations into the units of a rescaled camera (see
    /// [`Camera::normalized`]).
    pub fn scaled_pixels(&self, factor: f64) -> CorrespondenceSet {
        let items = self
            .items
            .iter()
            .map(|c| Correspondence {
                pixel: factor * c.pixel,
                ..*c
            })
            .collect();
        CorrespondenceSet { items }
    }

    pub fn set_flags(&mut self, flags: &[bool]) {
        assert_eq!(flags.len(), self.items.len(), "flag count mismatch");
        for (c, &f) in self.items.iter_mut().zip(flags) {
            c.inlier = f;
        }
    }

    /// Reads correspondences from CSV with header `facet,b1,b2,b3,u,v`.
    /// All rows start out flagged as inliers.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        Self::parse_csv(reader)
    }

    pub fn parse_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line?,
            None => {
                return Err(Error::Parse {
                    line: 1,
                    detail: "empty correspondence file".into(),
                })
            }
        };
        let header: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        if header != ["facet", "b1", "b2", "b3", "u", "v"] {
            return Err(Error::Parse {
                line: 1,
                detail: format!("expected header 'facet,b1,b2,b3,u,v', got '{}'", header.join(",")),
            });
        }
        let mut items = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(Error::Parse {
                    line: line_no,
                    detail: format!("expected 6 fields, got {}", fields.len()),
                });
            }
            let facet: usize = fields[0].parse().map_err(|_| Error::Parse {
                line: line_no,
                detail: format!("bad facet index '{}'", fields[0]),
            })?;
            let mut nums = [0.0f64; 5];
            for (k, s) in fields[1..].iter().enumerate() {
                nums[k] = s.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    detail: format!("bad number '{s}'"),
                })?;
            }
            let template = BaryPoint::new(facet, [nums[0], nums[1], nums[2]])?;
            items.push(Correspondence {
                template,
                pixel: Vector2::new(nums[3], nums[4]),
                inlier: true,
            });
        }
        CorrespondenceSet::new(items)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "facet,b1,b2,b3,u,v")?;
        for c in &self.items {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.template.facet,
                c.template.b[0],
                c.template.b[1],
                c.template.b[2],
                c.pixel.x,
                c.pixel.y
            )?;
        }
        Ok(())
    }
}

/// Stacks the two projection rows of every inlier correspondence into a
/// sparse matrix over the vertex-major coordinate vector: row pairs appear
/// in correspondence order, and `M x = 0` holds exactly when every inlier's
/// surface point lies on its pixel ray.
pub fn assemble_m(
    mesh: &TriMesh,
    camera: &Camera,
    corr: &CorrespondenceSet,
) -> Result<SparseMatrix> {
    let inliers: Vec<&Correspondence> = corr.items().iter().filter(|c| c.inlier).collect();
    if inliers.is_empty() {
        return Err(Error::EmptyInlierSet);
    }
    let mut triplets = Vec::with_capacity(inliers.len() * 2 * 9);
    for (m, c) in inliers.iter().enumerate() {
        if c.template.facet >= mesh.num_facets() {
            return Err(Error::FacetOutOfRange {
                facet: c.template.facet,
                count: mesh.num_facets(),
            });
        }
        let h = camera.h_matrix(&c.pixel);
        let facet = mesh.facets()[c.template.facet];
        for r in 0..2 {
            for (k, &vi) in facet.iter().enumerate() {
                let b = c.template.b[k];
                for col in 0..3 {
                    let v = b * h[(r, col)];
                    if v != 0.0 {
                        triplets.push((2 * m + r, 3 * vi + col, v));
                    }
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(
        2 * inliers.len(),
        3 * mesh.num_vertices(),
        &triplets,
    ))
}

/// Pixel reprojection error of every correspondence (inliers and outliers)
/// against the shape `coords`; points not in front of the camera get
/// `f64::INFINITY`.
pub fn reprojection_errors(
    mesh: &TriMesh,
    camera: &Camera,
    corr: &CorrespondenceSet,
    coords: &DVector<f64>,
) -> Result<Vec<f64>> {
    let mut errors = Vec::with_capacity(corr.len());
    for c in corr.items() {
        let p = bary_to_world(mesh, &c.template, coords)?;
        let err = match camera.project(&p) {
            Some(px) => (px - c.pixel).norm(),
            None => f64::INFINITY,
        };
        errors.push(err);
    }
    Ok(errors)
}

/// Root-mean-square of the reprojection errors of the flagged inliers.
pub fn reprojection_rms(
    mesh: &TriMesh,
    camera: &Camera,
    corr: &CorrespondenceSet,
    coords: &DVector<f64>,
) -> Result<f64> {
    let errors = reprojection_errors(mesh, camera, corr, coords)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (e, c) in errors.iter().zip(corr.items()) {
        if c.inlier {
            sum += e * e;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyInlierSet);
    }
    Ok((sum / n as f64).sqrt())
}
