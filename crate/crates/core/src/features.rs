//! Per-node input features.
//!
//! Row layout (length `2 + 2J + 2 + 3B`):
//! canonical joint, flattened canonical pose, normalized joint, then one
//! xyz triple per template variant. Canonical pixels are divided by 1000 and
//! template coordinates are in meters so every channel is O(1).

use log::warn;
use serde::{Deserialize, Serialize};

use crate::body_template::{BodyTemplate, TemplateBank};
use crate::error::{MugError, Result};
use crate::numerics::DenseMatrix;

/// Side of the canonical square, in pixels.
pub const CANONICAL_SIZE: f64 = 1000.0;
const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    /// `J x 2` raw-image pixels.
    pub joints: DenseMatrix,
    pub visible: Vec<bool>,
}

impl Pose2D {
    pub fn new(joints: DenseMatrix, visible: Vec<bool>) -> Result<Self> {
        if joints.cols() != 2 {
            return Err(MugError::Data(format!("pose must be J x 2, got {:?}", joints.shape())));
        }
        if visible.len() != joints.rows() {
            return Err(MugError::Data(format!(
                "{} visibility flags for {} joints",
                visible.len(),
                joints.rows()
            )));
        }
        if !joints.is_finite() {
            return Err(MugError::Data("pose has non-finite coordinates".into()));
        }
        Ok(Self { joints, visible })
    }

    pub fn all_visible(joints: DenseMatrix) -> Result<Self> {
        let n = joints.rows();
        Self::new(joints, vec![true; n])
    }

    pub fn joint_count(&self) -> usize {
        self.joints.rows()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    /// Joints with invisible entries replaced by the visible centroid.
    pub fn imputed(&self) -> Result<DenseMatrix> {
        let n = self.visible_count();
        if n == 0 {
            return Err(MugError::Data("pose has no visible joints".into()));
        }
        let mut c = [0.0; 2];
        for (j, _) in self.visible.iter().enumerate().filter(|(_, &v)| v) {
            c[0] += self.joints[(j, 0)];
            c[1] += self.joints[(j, 1)];
        }
        c[0] /= n as f64;
        c[1] /= n as f64;
        let mut out = self.joints.clone();
        for (j, &vis) in self.visible.iter().enumerate() {
            if !vis {
                out.row_mut(j).copy_from_slice(&c);
            }
        }
        Ok(out)
    }
}

/// `canonical = raw * scale + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalTransform {
    pub scale: f64,
    pub offset: [f64; 2],
}

impl CanonicalTransform {
    pub fn for_image(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
            return Err(MugError::Data(format!("bad image size {width}x{height}")));
        }
        let scale = CANONICAL_SIZE / width.max(height);
        let offset = [
            (CANONICAL_SIZE - width * scale) / 2.0,
            (CANONICAL_SIZE - height * scale) / 2.0,
        ];
        Ok(Self { scale, offset })
    }

    /// Raw long edge in pixels.
    pub fn long_edge(&self) -> f64 {
        CANONICAL_SIZE / self.scale
    }

    pub fn apply(&self, raw: &DenseMatrix) -> DenseMatrix {
        let mut out = raw.clone();
        for i in 0..out.rows() {
            let r = out.row_mut(i);
            r[0] = r[0] * self.scale + self.offset[0];
            r[1] = r[1] * self.scale + self.offset[1];
        }
        out
    }

    pub fn invert(&self, canonical: &DenseMatrix) -> DenseMatrix {
        let mut out = canonical.clone();
        for i in 0..out.rows() {
            let r = out.row_mut(i);
            r[0] = (r[0] - self.offset[0]) / self.scale;
            r[1] = (r[1] - self.offset[1]) / self.scale;
        }
        out
    }
}

/// Zero mean, unit population standard deviation per axis over visible
/// joints. Invisible joints are imputed first, so they land on the origin.
pub fn normalize_pose(pose: &Pose2D) -> Result<DenseMatrix> {
    let p = pose.imputed()?;
    let n = pose.visible_count() as f64;
    let mut out = p.clone();
    for axis in 0..2 {
        let vis = || {
            pose.visible
                .iter()
                .enumerate()
                .filter(|(_, &v)| v)
                .map(|(j, _)| p[(j, axis)])
        };
        let mean = vis().sum::<f64>() / n;
        let var = vis().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let mut std = var.sqrt();
        if std < STD_FLOOR {
            warn!("pose has zero spread on axis {axis}; flooring std at {STD_FLOOR}");
            std = STD_FLOOR;
        }
        for j in 0..p.rows() {
            out[(j, axis)] = (p[(j, axis)] - mean) / std;
        }
    }
    Ok(out)
}

/// Imputed pose mapped into the canonical 1000x1000 frame.
pub fn canonicalize(pose: &Pose2D, width: f64, height: f64) -> Result<(DenseMatrix, CanonicalTransform)> {
    let t = CanonicalTransform::for_image(width, height)?;
    Ok((t.apply(&pose.imputed()?), t))
}

pub fn feature_dim(joints: usize, bank_size: usize) -> usize {
    2 + 2 * joints + 2 + 3 * bank_size
}

fn push_common(row: &mut Vec<f64>, j: usize, canonical: &DenseMatrix, normalized: &DenseMatrix) {
    row.push(canonical[(j, 0)] / CANONICAL_SIZE);
    row.push(canonical[(j, 1)] / CANONICAL_SIZE);
    row.extend(canonical.data().iter().map(|x| x / CANONICAL_SIZE));
    row.extend_from_slice(normalized.row(j));
}

/// Feature row of joint node `j`.
pub fn joint_feature_row(
    j: usize,
    canonical: &DenseMatrix,
    normalized: &DenseMatrix,
    bank: &TemplateBank,
) -> Vec<f64> {
    let mut row = Vec::with_capacity(feature_dim(canonical.rows(), bank.len()));
    push_common(&mut row, j, canonical, normalized);
    for joints in &bank.regressed {
        row.extend(joints.row(j).iter().map(|x| x / 1000.0));
    }
    row
}

/// Feature row of mesh node `v`; its 2D channels come from the nearest joint.
pub fn mesh_feature_row(
    v: usize,
    canonical: &DenseMatrix,
    normalized: &DenseMatrix,
    bank: &TemplateBank,
    nearest_joints: &[(usize, usize)],
) -> Vec<f64> {
    let j = nearest_joints[v].0;
    let mut row = Vec::with_capacity(feature_dim(canonical.rows(), bank.len()));
    push_common(&mut row, j, canonical, normalized);
    for verts in &bank.variants {
        row.extend(verts.row(v).iter().map(|x| x / 1000.0));
    }
    row
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    /// `(K J) x d`, human-major.
    pub joint_features: DenseMatrix,
    /// `(K V) x d`, human-major.
    pub mesh_features: DenseMatrix,
    pub dim: usize,
}

/// Everything derived from a scene's raw poses that the graph and network
/// consume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFeatures {
    pub features: FeatureMatrix,
    /// Per-human canonical poses, `J x 2`.
    pub canonical: Vec<DenseMatrix>,
    pub transform: CanonicalTransform,
}

/// Builds joint and mesh feature rows for every human of a scene.
pub fn assemble_features(
    poses: &[Pose2D],
    image_width: f64,
    image_height: f64,
    template: &BodyTemplate,
    bank: &TemplateBank,
) -> Result<SceneFeatures> {
    let j = template.joint_count();
    let v = template.vertex_count();
    if poses.is_empty() {
        return Err(MugError::Data("scene has no humans".into()));
    }
    if let Some(p) = poses.iter().find(|p| p.joint_count() != j) {
        return Err(MugError::Data(format!(
            "pose has {} joints, template has {j}",
            p.joint_count()
        )));
    }
    let dim = feature_dim(j, bank.len());
    let transform = CanonicalTransform::for_image(image_width, image_height)?;
    let mut joint_data = Vec::with_capacity(poses.len() * j * dim);
    let mut mesh_data = Vec::with_capacity(poses.len() * v * dim);
    let mut canonical = Vec::with_capacity(poses.len());
    for pose in poses {
        let c = transform.apply(&pose.imputed()?);
        let n = normalize_pose(pose)?;
        for jj in 0..j {
            joint_data.extend(joint_feature_row(jj, &c, &n, bank));
        }
        for vv in 0..v {
            mesh_data.extend(mesh_feature_row(vv, &c, &n, bank, &template.nearest_joints));
        }
        canonical.push(c);
    }
    Ok(SceneFeatures {
        features: FeatureMatrix {
            joint_features: DenseMatrix::from_vec(poses.len() * j, dim, joint_data)?,
            mesh_features: DenseMatrix::from_vec(poses.len() * v, dim, mesh_data)?,
            dim,
        },
        canonical,
        transform,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_template::{JointSet, SyntheticBody};

    fn pose(points: &[[f64; 2]]) -> Pose2D {
        Pose2D::all_visible(DenseMatrix::from_rows(points).unwrap()).unwrap()
    }

    #[test]
    fn normalize_square() {
        let n = normalize_pose(&pose(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])).unwrap();
        let want = DenseMatrix::from_rows(&[[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(n.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn identical_joints_give_zeros() {
        let n = normalize_pose(&pose(&[[3.0, 4.0]; 5])).unwrap();
        assert!(n.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn invisible_joints_are_imputed_to_centroid() {
        let p = Pose2D::new(
            DenseMatrix::from_rows(&[[0.0, 0.0], [4.0, 2.0], [1e6, -1e6]]).unwrap(),
            vec![true, true, false],
        )
        .unwrap();
        let n = normalize_pose(&p).unwrap();
        assert_eq!(n.row(2), &[0.0, 0.0]);
        assert!((n[(0, 0)] + 1.0).abs() < 1e-12);
        assert!(Pose2D::new(DenseMatrix::zeros(2, 2), vec![false, false])
            .unwrap()
            .imputed()
            .is_err());
    }

    #[test]
    fn canonical_examples() {
        let (c, t) = canonicalize(&pose(&[[10.0, 20.0]]), 1000.0, 1000.0).unwrap();
        assert_eq!(t.scale, 1.0);
        assert_eq!(c.row(0), &[10.0, 20.0]);
        let (c, t) = canonicalize(&pose(&[[1000.0, 500.0]]), 2000.0, 1000.0).unwrap();
        assert_eq!((t.scale, t.offset), (0.5, [0.0, 250.0]));
        assert_eq!(c.row(0), &[500.0, 500.0]);
        let (c, _) = canonicalize(&pose(&[[250.0, 0.0]]), 500.0, 1000.0).unwrap();
        assert_eq!(c.row(0), &[500.0, 0.0]);
        assert!(CanonicalTransform::for_image(0.0, 10.0).is_err());
    }

    #[test]
    fn feature_dimensions() {
        assert_eq!(feature_dim(17, 11), 71);
        assert_eq!(feature_dim(19, 11), 75);
        let body = SyntheticBody::default();
        let t = body.template();
        let bank = body.bank(&t);
        let c = DenseMatrix::zeros(17, 2);
        assert_eq!(joint_feature_row(0, &c, &c, &bank).len(), 71);
        assert_eq!(mesh_feature_row(5, &c, &c, &bank, &t.nearest_joints).len(), 71);

        let coco = SyntheticBody {
            joint_set: JointSet::Coco19,
            ..Default::default()
        };
        let t = coco.template();
        let bank = coco.bank(&t);
        let c = DenseMatrix::zeros(19, 2);
        assert_eq!(joint_feature_row(0, &c, &c, &bank).len(), 75);
    }

    #[test]
    fn mesh_row_reads_nearest_joint() {
        let body = SyntheticBody::default();
        let t = body.template();
        let bank = body.bank(&t);
        let v = t.nearest_joints.iter().position(|nj| nj.0 == t.root_index).unwrap();
        let mut c = DenseMatrix::zeros(17, 2);
        c.row_mut(t.root_index).copy_from_slice(&[500.0, 500.0]);
        let row = mesh_feature_row(v, &c, &c, &bank, &t.nearest_joints);
        assert_eq!(&row[..2], &[0.5, 0.5]);
    }

    #[test]
    fn assembled_rows_follow_human_order() {
        let body = SyntheticBody::default();
        let t = body.template();
        let bank = body.bank(&t);
        let mk = |dx: f64| {
            let rows: Vec<[f64; 2]> = (0..17).map(|j| [dx + j as f64 * 7.0, 300.0 + (j * j) as f64]).collect();
            pose(&rows)
        };
        let a = assemble_features(&[mk(100.0), mk(900.0)], 1920.0, 1080.0, &t, &bank).unwrap();
        let b = assemble_features(&[mk(900.0), mk(100.0)], 1920.0, 1080.0, &t, &bank).unwrap();
        let fa = &a.features;
        let fb = &b.features;
        assert_eq!(fa.joint_features.shape(), (34, 71));
        assert_eq!(fa.mesh_features.shape(), (862, 71));
        assert_eq!(fa.joint_features.slice_rows(0, 17), fb.joint_features.slice_rows(17, 34));
        assert_eq!(fa.mesh_features.slice_rows(0, 431), fb.mesh_features.slice_rows(431, 862));
    }
}
