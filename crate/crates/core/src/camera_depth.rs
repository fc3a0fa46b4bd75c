//! Depth measure, root back-projection, and absolute mesh placement.
//!
//! Depths are millimeters along the optical axis.

use serde::{Deserialize, Serialize};

use crate::error::{MugError, Result};
use crate::numerics::DenseMatrix;

pub const DEFAULT_FOCAL: f64 = 1500.0;
pub const DEFAULT_ALPHA: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(focal: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(focal > 0.0) || !focal.is_finite() || !cx.is_finite() || !cy.is_finite() {
            return Err(MugError::Data(format!("bad intrinsics f={focal} c=({cx}, {cy})")));
        }
        Ok(Self { focal, cx, cy })
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [[self.focal, 0.0, self.cx], [0.0, self.focal, self.cy], [0.0, 0.0, 1.0]]
    }
}

/// Principal point at the image center with focal length 1500.
pub fn default_intrinsics(width: f64, height: f64) -> CameraIntrinsics {
    CameraIntrinsics {
        focal: DEFAULT_FOCAL,
        cx: width / 2.0,
        cy: height / 2.0,
    }
}

/// `D S / (1000 alpha f)`.
pub fn depth_to_measure(depth: f64, long_edge: f64, focal: f64, alpha: f64) -> f64 {
    depth * long_edge / (1000.0 * alpha * focal)
}

pub fn measure_to_depth(measure: f64, long_edge: f64, focal: f64, alpha: f64) -> f64 {
    measure * 1000.0 * alpha * focal / long_edge
}

/// Camera-space root from its raw-image pixel position and depth.
pub fn backproject_root(x_px: f64, y_px: f64, depth: f64, cam: &CameraIntrinsics) -> Result<[f64; 3]> {
    if !(depth > 0.0) {
        return Err(MugError::Numeric(format!("root depth {depth} is not in front of the camera")));
    }
    Ok([
        (x_px - cam.cx) * depth / cam.focal,
        (y_px - cam.cy) * depth / cam.focal,
        depth,
    ])
}

/// Pixel position of a camera-space point.
pub fn project(point: [f64; 3], cam: &CameraIntrinsics) -> Result<[f64; 2]> {
    if !(point[2] > 0.0) {
        return Err(MugError::Numeric(format!("point depth {} is not in front of the camera", point[2])));
    }
    Ok([
        cam.focal * point[0] / point[2] + cam.cx,
        cam.focal * point[1] / point[2] + cam.cy,
    ])
}

/// Projects every row of an `N x 3` matrix.
pub fn project_points(points: &DenseMatrix, cam: &CameraIntrinsics) -> Result<DenseMatrix> {
    let mut out = DenseMatrix::zeros(points.rows(), 2);
    for i in 0..points.rows() {
        let r = points.row(i);
        let p = project([r[0], r[1], r[2]], cam)?;
        out.row_mut(i).copy_from_slice(&p);
    }
    Ok(out)
}

/// Root-relative mesh translated to the root position.
pub fn absolute_mesh(mesh: &DenseMatrix, root: [f64; 3]) -> DenseMatrix {
    let mut out = mesh.clone();
    for i in 0..out.rows() {
        for (x, r) in out.row_mut(i).iter_mut().zip(root) {
            *x += r;
        }
    }
    out
}

/// Inverse of [`absolute_mesh`].
pub fn relative_mesh(mesh: &DenseMatrix, root: [f64; 3]) -> DenseMatrix {
    absolute_mesh(mesh, [-root[0], -root[1], -root[2]])
}
