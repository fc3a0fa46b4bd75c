//! Procedural multi-human scenes with exact ground truth, the training-time
//! 2D corruption model, and flip augmentation.
//!
//! Bodies are bank variants articulated by rigid per-part rotations about
//! their driving joint. Ground-truth joints are always the regressor applied
//! to the posed mesh, so joints, mesh and 2D poses agree exactly.

use std::path::{Path, PathBuf};

use log::info;
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::body_template::{BodyTemplate, TemplateBank};
use crate::camera_depth::{backproject_root, default_intrinsics, depth_to_measure, project, CameraIntrinsics};
use crate::error::{MugError, Result};
use crate::features::{Pose2D, CANONICAL_SIZE};
use crate::numerics::DenseMatrix;
use crate::seed::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub image_width: f64,
    pub image_height: f64,
    pub focal: f64,
    /// Root depth range, mm.
    pub depth_min: f64,
    pub depth_max: f64,
    /// Minimum 3D distance between any two roots, mm.
    pub min_separation: f64,
    /// Multiplier on every articulation angle range; 0 gives the rest pose.
    pub pose_variation: f64,
    pub max_attempts: usize,
    pub humans_min: usize,
    pub humans_max: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            image_width: 1920.0,
            image_height: 1080.0,
            focal: 1500.0,
            depth_min: 2000.0,
            depth_max: 15000.0,
            min_separation: 300.0,
            pose_variation: 1.0,
            max_attempts: 2000,
            humans_min: 2,
            humans_max: 3,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.image_width > 0.0
            && self.image_height > 0.0
            && self.focal > 0.0
            && self.depth_min > 0.0
            && self.depth_max >= self.depth_min
            && self.min_separation >= 0.0
            && self.pose_variation >= 0.0
            && self.max_attempts > 0
            && self.humans_min >= 1
            && self.humans_max >= self.humans_min;
        if ok {
            Ok(())
        } else {
            Err(MugError::Config(format!("invalid generator settings: {self:?}")))
        }
    }

    pub fn camera(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            focal: self.focal,
            ..default_intrinsics(self.image_width, self.image_height)
        }
    }

    /// SHA-256 of the serialized settings, hex encoded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanGt {
    /// `V x 3` camera-space mesh, mm.
    pub mesh: DenseMatrix,
    /// `J x 3` camera-space joints, mm.
    pub joints: DenseMatrix,
    /// Root depth, mm.
    pub depth: f64,
    pub bank_index: usize,
}

impl HumanGt {
    /// Root-relative mesh and joints, mm.
    pub fn root_relative(&self, root_index: usize) -> (DenseMatrix, DenseMatrix) {
        let r = self.joints.row(root_index).to_vec();
        let shift = |m: &DenseMatrix| {
            let mut out = m.clone();
            for i in 0..out.rows() {
                for (x, c) in out.row_mut(i).iter_mut().zip(&r) {
                    *x -= c;
                }
            }
            out
        };
        (shift(&self.mesh), shift(&self.joints))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneHuman {
    pub pose: Pose2D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<HumanGt>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub image_width: f64,
    pub image_height: f64,
    /// Missing intrinsics fall back to focal 1500 at the image center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraIntrinsics>,
    pub humans: Vec<SceneHuman>,
}

impl Scene {
    pub fn human_count(&self) -> usize {
        self.humans.len()
    }

    /// Intrinsics and whether the fallback was used.
    pub fn intrinsics(&self) -> (CameraIntrinsics, bool) {
        match self.camera {
            Some(c) => (c, false),
            None => (default_intrinsics(self.image_width, self.image_height), true),
        }
    }

    pub fn long_edge(&self) -> f64 {
        self.image_width.max(self.image_height)
    }

    pub fn poses(&self) -> Vec<Pose2D> {
        self.humans.iter().map(|h| h.pose.clone()).collect()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.humans.iter().all(|h| h.gt.is_some())
    }

    /// Ground-truth depth measures, if every human has ground truth.
    pub fn depth_measures(&self, alpha: f64) -> Option<Vec<f64>> {
        let (cam, _) = self.intrinsics();
        self.humans
            .iter()
            .map(|h| h.gt.as_ref().map(|g| depth_to_measure(g.depth, self.long_edge(), cam.focal, alpha)))
            .collect()
    }

    pub fn validate(&self, template: &BodyTemplate) -> Result<()> {
        if self.humans.is_empty() {
            return Err(MugError::Data(format!("scene {} has no humans", self.seed)));
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return Err(MugError::Data(format!("scene {} has a bad image size", self.seed)));
        }
        let (j, v) = (template.joint_count(), template.vertex_count());
        for (k, h) in self.humans.iter().enumerate() {
            if h.pose.joints.shape() != (j, 2) || h.pose.visible.len() != j {
                return Err(MugError::Data(format!(
                    "scene {} human {k}: pose is {:?}, template has {j} joints",
                    self.seed,
                    h.pose.joints.shape()
                )));
            }
            if h.pose.visible_count() == 0 {
                return Err(MugError::Data(format!("scene {} human {k}: no visible joints", self.seed)));
            }
            if let Some(g) = &h.gt {
                if g.mesh.shape() != (v, 3) || g.joints.shape() != (j, 3) || !(g.depth > 0.0) {
                    return Err(MugError::Data(format!(
                        "scene {} human {k}: ground truth does not match the template",
                        self.seed
                    )));
                }
            }
        }
        Ok(())
    }
}

fn rot(axis: Vector3<f64>, deg: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), deg.to_radians()).matrix()
}

/// Joints whose subtree contains no vertex drivers other than themselves.
fn rotation_safe(template: &BodyTemplate, parents: &[Option<usize>], joint: usize) -> bool {
    let drivers: std::collections::BTreeSet<usize> = template.vertex_driver.iter().copied().collect();
    (0..template.joint_count()).all(|d| {
        if d == joint || !drivers.contains(&d) {
            return true;
        }
        let mut p = parents[d];
        while let Some(q) = p {
            if q == joint {
                return false;
            }
            p = parents[q];
        }
        true
    })
}

/// Seeded local rotation per joint. Left/right ranges mirror each other.
fn sample_local_rotations(template: &BodyTemplate, rng: &mut impl Rng, variation: f64) -> Vec<Matrix3<f64>> {
    let parents = template.joint_parents();
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    let mut u = |lo: f64, hi: f64| variation * rng.random_range(lo..=hi);
    template
        .joint_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let side = if name.starts_with("l_") { 1.0 } else { -1.0 };
            let base = name.trim_start_matches("l_").trim_start_matches("r_");
            match base {
                _ if j == template.root_index => rot(y, u(-60.0, 60.0)) * rot(x, u(-10.0, 10.0)),
                "hip" => rot(z, -side * u(-5.0, 30.0)) * rot(x, u(-70.0, 20.0)),
                "knee" => rot(x, u(0.0, 100.0)),
                "shoulder" => rot(z, -side * u(-10.0, 100.0)) * rot(x, u(-90.0, 40.0)),
                "elbow" => rot(x, u(-120.0, 0.0)),
                "neck" if rotation_safe(template, &parents, j) => rot(y, u(-30.0, 30.0)) * rot(x, u(-20.0, 20.0)),
                _ => Matrix3::identity(),
            }
        })
        .collect()
}

/// Root-relative posed mesh of bank variant `b`, mm.
pub fn pose_body(
    template: &BodyTemplate,
    bank: &TemplateBank,
    b: usize,
    local: &[Matrix3<f64>],
) -> Result<(DenseMatrix, DenseMatrix)> {
    let rest_v = &bank.variants[b];
    let rest_j = &bank.regressed[b];
    let parents = template.joint_parents();
    let j = template.joint_count();
    let p3 = |m: &DenseMatrix, i: usize| Vector3::new(m[(i, 0)], m[(i, 1)], m[(i, 2)]);

    let mut order = vec![template.root_index];
    let mut i = 0;
    while i < order.len() {
        let cur = order[i];
        order.extend((0..j).filter(|&c| parents[c] == Some(cur)));
        i += 1;
    }
    let mut global = vec![Matrix3::identity(); j];
    let mut posed = vec![Vector3::zeros(); j];
    for &c in &order {
        match parents[c] {
            None => {
                global[c] = local[c];
                posed[c] = p3(rest_j, c);
            }
            Some(p) => {
                global[c] = global[p] * local[c];
                posed[c] = posed[p] + global[p] * (p3(rest_j, c) - p3(rest_j, p));
            }
        }
    }
    let mut mesh = DenseMatrix::zeros(rest_v.rows(), 3);
    for v in 0..rest_v.rows() {
        let d = template.vertex_driver[v];
        let q = posed[d] + global[d] * (p3(rest_v, v) - p3(rest_j, d));
        mesh.row_mut(v).copy_from_slice(q.as_slice());
    }
    let joints = template.regress_joints(&mesh)?;
    let root: Vec<f64> = joints.row(template.root_index).to_vec();
    let shift = |m: &DenseMatrix| {
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (x, c) in out.row_mut(r).iter_mut().zip(&root) {
                *x -= c;
            }
        }
        out
    };
    Ok((shift(&mesh), shift(&joints)))
}

/// One scene with `k` humans. Deterministic per `seed`.
pub fn generate_scene(
    seed: u64,
    k: usize,
    template: &BodyTemplate,
    bank: &TemplateBank,
    cfg: &GeneratorConfig,
) -> Result<Scene> {
    cfg.validate()?;
    if k == 0 {
        return Err(MugError::Data("a scene needs at least one human".into()));
    }
    let cam = cfg.camera();
    let mut rng = rng_for(seed, &[0x5ce7e]);
    let mut humans: Vec<SceneHuman> = Vec::with_capacity(k);
    let mut roots: Vec<[f64; 3]> = Vec::with_capacity(k);
    for h in 0..k {
        let mut placed = false;
        for _ in 0..cfg.max_attempts {
            let b = rng.random_range(0..bank.len());
            let local = sample_local_rotations(template, &mut rng, cfg.pose_variation);
            let (mesh, joints) = pose_body(template, bank, b, &local)?;
            let depth = rng.random_range(cfg.depth_min..=cfg.depth_max);
            let px = rng.random_range(0.0..cfg.image_width);
            let py = rng.random_range(0.0..cfg.image_height);
            let root = backproject_root(px, py, depth, &cam)?;
            if roots
                .iter()
                .any(|r| ((r[0] - root[0]).powi(2) + (r[1] - root[1]).powi(2) + (r[2] - root[2]).powi(2)).sqrt() < cfg.min_separation)
            {
                continue;
            }
            let mesh_abs = crate::camera_depth::absolute_mesh(&mesh, root);
            let joints_abs = crate::camera_depth::absolute_mesh(&joints, root);
            if (0..mesh_abs.rows()).any(|v| mesh_abs[(v, 2)] < 100.0) {
                continue;
            }
            let mut pose = DenseMatrix::zeros(joints_abs.rows(), 2);
            let mut inside = true;
            for jj in 0..joints_abs.rows() {
                let r = joints_abs.row(jj);
                let p = project([r[0], r[1], r[2]], &cam)?;
                inside &= p[0] >= 0.0 && p[0] <= cfg.image_width && p[1] >= 0.0 && p[1] <= cfg.image_height;
                pose.row_mut(jj).copy_from_slice(&p);
            }
            if !inside {
                continue;
            }
            humans.push(SceneHuman {
                pose: Pose2D::all_visible(pose)?,
                gt: Some(HumanGt {
                    mesh: mesh_abs,
                    joints: joints_abs,
                    depth: root[2],
                    bank_index: b,
                }),
            });
            roots.push(root);
            placed = true;
            break;
        }
        if !placed {
            return Err(MugError::Data(format!(
                "could not place human {h} of scene {seed} after {} attempts",
                cfg.max_attempts
            )));
        }
    }
    Ok(Scene {
        seed,
        image_width: cfg.image_width,
        image_height: cfg.image_height,
        camera: Some(cam),
        humans,
    })
}

/// Scene `i` of a dataset drawn with `base_seed`; the human count is drawn
/// from the configured range.
pub fn generate_indexed(
    base_seed: u64,
    index: u64,
    template: &BodyTemplate,
    bank: &TemplateBank,
    cfg: &GeneratorConfig,
) -> Result<Scene> {
    let seed = crate::seed::derive_seed(base_seed, &[index]);
    let k = rng_for(seed, &[0x4b]).random_range(cfg.humans_min..=cfg.humans_max);
    generate_scene(seed, k, template, bank, cfg)
}

pub fn generate_dataset(
    base_seed: u64,
    count: usize,
    template: &BodyTemplate,
    bank: &TemplateBank,
    cfg: &GeneratorConfig,
) -> Result<Vec<Scene>> {
    (0..count as u64)
        .map(|i| generate_indexed(base_seed, i, template, bank, cfg))
        .collect()
}

/// 2D pose corruption. `sigma` is in canonical pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub sigma: f64,
    pub drop_prob: f64,
    pub swap_prob: f64,
    /// Scales `sigma` and both probabilities (clamped to 1).
    pub magnification: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma: 5.0,
            drop_prob: 0.05,
            swap_prob: 0.02,
            magnification: 1.0,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            sigma: 0.0,
            drop_prob: 0.0,
            swap_prob: 0.0,
            magnification: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = |x: f64| (0.0..=1.0).contains(&x);
        if self.sigma >= 0.0 && p(self.drop_prob) && p(self.swap_prob) && self.magnification >= 0.0 {
            Ok(())
        } else {
            Err(MugError::Config(format!("invalid noise model: {self:?}")))
        }
    }

    fn effective(&self) -> (f64, f64, f64) {
        let m = self.magnification;
        (self.sigma * m, (self.drop_prob * m).min(1.0), (self.swap_prob * m).min(1.0))
    }
}

/// Corrupts one pose. `long_edge` converts canonical jitter to raw pixels.
/// Swaps exchange a joint with a random other joint of the same pose.
pub fn perturb_pose(pose: &Pose2D, model: &NoiseModel, rng: &mut impl Rng, long_edge: f64) -> Pose2D {
    let mut poses = [pose.clone()];
    perturb_poses(&mut poses, model, rng, long_edge);
    let [p] = poses;
    p
}

/// Corrupts every pose of a scene. With two or more humans a swap exchanges
/// a joint with the same joint of another human.
pub fn perturb_poses(poses: &mut [Pose2D], model: &NoiseModel, rng: &mut impl Rng, long_edge: f64) {
    let (sigma, drop, swap) = model.effective();
    let sigma_raw = sigma * long_edge / CANONICAL_SIZE;
    let normal = Normal::new(0.0, sigma_raw.max(0.0)).expect("finite sigma");
    let k = poses.len();
    for h in 0..k {
        let j = poses[h].joint_count();
        for jj in 0..j {
            if sigma_raw > 0.0 {
                let r = poses[h].joints.row_mut(jj);
                r[0] += normal.sample(rng);
                r[1] += normal.sample(rng);
            }
            if drop > 0.0 && rng.random_bool(drop) {
                poses[h].visible[jj] = false;
            }
            if swap > 0.0 && rng.random_bool(swap) {
                if k >= 2 {
                    let mut o = rng.random_range(0..k - 1);
                    if o >= h {
                        o += 1;
                    }
                    let a = poses[h].joints.row(jj).to_vec();
                    let b = poses[o].joints.row(jj).to_vec();
                    poses[h].joints.row_mut(jj).copy_from_slice(&b);
                    poses[o].joints.row_mut(jj).copy_from_slice(&a);
                } else if j >= 2 {
                    let mut o = rng.random_range(0..j - 1);
                    if o >= jj {
                        o += 1;
                    }
                    let a = poses[h].joints.row(jj).to_vec();
                    let b = poses[h].joints.row(o).to_vec();
                    poses[h].joints.row_mut(jj).copy_from_slice(&b);
                    poses[h].joints.row_mut(o).copy_from_slice(&a);
                }
            }
        }
        if poses[h].visible_count() == 0 {
            // Keep at least one anchor so normalization stays defined.
            let keep = rng.random_range(0..j);
            poses[h].visible[keep] = true;
        }
    }
}

/// A scene with every pose corrupted.
pub fn perturb_scene(scene: &Scene, model: &NoiseModel, rng: &mut impl Rng) -> Scene {
    let mut poses = scene.poses();
    perturb_poses(&mut poses, model, rng, scene.long_edge());
    let mut out = scene.clone();
    for (h, p) in out.humans.iter_mut().zip(poses) {
        h.pose = p;
    }
    out
}

/// Mirror image about the vertical image midline, with left/right labels
/// swapped so joint and vertex semantics are preserved.
pub fn flip_augment(scene: &Scene, template: &BodyTemplate) -> Result<Scene> {
    let (js, vs) = match (&template.joint_symmetry, &template.vertex_symmetry) {
        (Some(j), Some(v)) => (j, v),
        _ => return Err(MugError::Data("template has no symmetry maps; cannot flip".into())),
    };
    let w = scene.image_width;
    let relabel = |m: &DenseMatrix, map: &[usize], mirror_col: usize, around: f64| {
        let mut out = DenseMatrix::zeros(m.rows(), m.cols());
        for (i, &s) in map.iter().enumerate() {
            out.row_mut(i).copy_from_slice(m.row(s));
            out[(i, mirror_col)] = around - out[(i, mirror_col)];
        }
        out
    };
    let humans = scene
        .humans
        .iter()
        .map(|h| SceneHuman {
            pose: Pose2D {
                joints: relabel(&h.pose.joints, js, 0, w),
                visible: js.iter().map(|&s| h.pose.visible[s]).collect(),
            },
            gt: h.gt.as_ref().map(|g| HumanGt {
                mesh: relabel(&g.mesh, vs, 0, 0.0),
                joints: relabel(&g.joints, js, 0, 0.0),
                depth: g.depth,
                bank_index: g.bank_index,
            }),
        })
        .collect();
    Ok(Scene {
        seed: scene.seed,
        image_width: scene.image_width,
        image_height: scene.image_height,
        camera: scene.camera.map(|c| CameraIntrinsics { cx: w - c.cx, ..c }),
        humans,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub seed: u64,
    pub humans: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub base_seed: u64,
    pub generator: GeneratorConfig,
    pub config_hash: String,
    pub template_hash: String,
    pub scenes: Vec<ManifestEntry>,
}

/// Writes `scene_NNNN.json` files and `manifest.json` into `dir`.
pub fn write_dataset(
    dir: &Path,
    scenes: &[Scene],
    base_seed: u64,
    cfg: &GeneratorConfig,
    template_hash: &str,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let file = format!("scene_{i:04}.json");
        std::fs::write(dir.join(&file), serde_json::to_string(s)?)?;
        entries.push(ManifestEntry {
            file,
            seed: s.seed,
            humans: s.human_count(),
        });
    }
    let manifest = Manifest {
        base_seed,
        generator: *cfg,
        config_hash: cfg.hash(),
        template_hash: template_hash.to_string(),
        scenes: entries,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    info!("wrote {} scenes to {}", scenes.len(), dir.display());
    Ok(manifest)
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| MugError::Data(format!("cannot read scene {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| MugError::Data(format!("malformed scene {}: {e}", path.display())))
}

/// Reads a dataset directory (via its manifest) or a single scene file.
pub fn read_dataset(path: &Path) -> Result<Vec<Scene>> {
    if path.is_file() {
        return Ok(vec![read_scene(path)?]);
    }
    let manifest_path: PathBuf = path.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| MugError::Data(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| MugError::Data(format!("malformed manifest: {e}")))?;
    manifest.scenes.iter().map(|e| read_scene(&path.join(&e.file))).collect()
}
