//! Procedural humanoid: capsule-shaped body parts around a skeleton.
//!
//! Every part is a tube of rings perpendicular to a bone axis, closed by a
//! pole vertex at each end. Joint regressor rows average the rings that sit
//! on a joint, so regressed joints land on the skeleton exactly and stay
//! there under any rigid motion of the parts.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{mesh_edges, BodyTemplate, TemplateBank, BANK_SIZE};
use crate::numerics::{CsrMatrix, DenseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JointSet {
    /// 17 joints, pelvis first.
    H36m17,
    /// 17 COCO keypoints followed by pelvis and neck.
    Coco19,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeshDetail {
    /// 431 vertices, 11 parts.
    Full,
    /// 40 vertices, 5 parts. Used for fast gradient checks.
    Reduced,
}

/// Multiplicative body proportions; all ones is the canonical body.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyShape {
    pub stature: f64,
    pub torso: f64,
    pub arms: f64,
    pub legs: f64,
    pub girth: f64,
}

impl Default for BodyShape {
    fn default() -> Self {
        Self {
            stature: 1.0,
            torso: 1.0,
            arms: 1.0,
            legs: 1.0,
            girth: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBody {
    pub joint_set: JointSet,
    pub detail: MeshDetail,
    pub bank_seed: u64,
}

impl Default for SyntheticBody {
    fn default() -> Self {
        Self {
            joint_set: JointSet::H36m17,
            detail: MeshDetail::Full,
            bank_seed: 11,
        }
    }
}

const H36M_NAMES: [&str; 17] = [
    "pelvis",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
];

const H36M_EDGES: [(usize, usize); 16] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (0, 4),
    (4, 5),
    (5, 6),
    (0, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (8, 11),
    (11, 12),
    (12, 13),
    (8, 14),
    (14, 15),
    (15, 16),
];

const COCO_NAMES: [&str; 19] = [
    "nose",
    "l_eye",
    "r_eye",
    "l_ear",
    "r_ear",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_ankle",
    "r_ankle",
    "pelvis",
    "neck",
];

const COCO_EDGES: [(usize, usize); 18] = [
    (17, 11),
    (17, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
    (17, 18),
    (18, 5),
    (18, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (18, 0),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
];

type P3 = [f64; 3];

fn sub(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn add(a: P3, b: P3) -> P3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn mul(a: P3, s: f64) -> P3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: P3, b: P3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: P3, b: P3) -> P3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
fn normalize(a: P3) -> P3 {
    mul(a, 1.0 / dot(a, a).sqrt())
}
fn mirror(a: P3) -> P3 {
    [-a[0], a[1], a[2]]
}

/// Named skeleton points, millimeters. `y` points down, the body faces `−z`,
/// and the subject's left is `+x`.
fn anatomy(shape: &BodyShape) -> Vec<(&'static str, P3)> {
    let s = shape.stature;
    let g = shape.girth;
    let t = shape.torso;
    let a = shape.arms;
    let l = shape.legs;
    let l_hip = [100.0 * g, 0.0, 0.0];
    let l_knee = add(l_hip, [0.0, 430.0 * l, 0.0]);
    let l_ankle = add(l_knee, [0.0, 420.0 * l, 0.0]);
    let spine = [0.0, -240.0 * t, 0.0];
    let thorax = [0.0, -480.0 * t, 0.0];
    let neck = add(thorax, [0.0, -100.0 * t, 0.0]);
    let head = add(neck, [0.0, -140.0, 0.0]);
    let l_shoulder = add(thorax, [170.0 * g, 10.0, 0.0]);
    let l_elbow = add(l_shoulder, [60.0 * a, 260.0 * a, 0.0]);
    let l_wrist = add(l_elbow, [40.0 * a, 250.0 * a, 0.0]);
    let pts = vec![
        ("pelvis", [0.0, 0.0, 0.0]),
        ("r_hip", mirror(l_hip)),
        ("r_knee", mirror(l_knee)),
        ("r_ankle", mirror(l_ankle)),
        ("l_hip", l_hip),
        ("l_knee", l_knee),
        ("l_ankle", l_ankle),
        ("spine", spine),
        ("thorax", thorax),
        ("neck", neck),
        ("head", head),
        ("l_shoulder", l_shoulder),
        ("l_elbow", l_elbow),
        ("l_wrist", l_wrist),
        ("r_shoulder", mirror(l_shoulder)),
        ("r_elbow", mirror(l_elbow)),
        ("r_wrist", mirror(l_wrist)),
    ];
    pts.into_iter().map(|(n, p)| (n, mul(p, s))).collect()
}

fn point(anat: &[(&'static str, P3)], name: &str) -> P3 {
    anat.iter().find(|(n, _)| *n == name).map(|(_, p)| *p).unwrap()
}

struct PartSpec {
    start: &'static str,
    end: &'static str,
    rings: usize,
    segments: usize,
    /// Radii along the two ring axes.
    radii: (f64, f64),
    driver: &'static str,
    /// Build as the mirror image of the preceding part.
    mirrored: bool,
}

fn part_specs(detail: MeshDetail) -> Vec<PartSpec> {
    let p = |start, end, rings, segments, radii, driver, mirrored| PartSpec {
        start,
        end,
        rings,
        segments,
        radii,
        driver,
        mirrored,
    };
    match detail {
        MeshDetail::Full => vec![
            p("r_hip", "l_hip", 5, 9, (110.0, 90.0), "pelvis", false),
            p("pelvis", "thorax", 9, 12, (100.0, 150.0), "pelvis", false),
            p("neck", "head", 5, 8, (90.0, 75.0), "neck", false),
            p("l_hip", "l_knee", 5, 6, (70.0, 70.0), "l_hip", false),
            p("r_hip", "r_knee", 5, 6, (70.0, 70.0), "r_hip", true),
            p("l_knee", "l_ankle", 5, 6, (50.0, 50.0), "l_knee", false),
            p("r_knee", "r_ankle", 5, 6, (50.0, 50.0), "r_knee", true),
            p("l_shoulder", "l_elbow", 4, 6, (45.0, 45.0), "l_shoulder", false),
            p("r_shoulder", "r_elbow", 4, 6, (45.0, 45.0), "r_shoulder", true),
            p("l_elbow", "l_wrist", 4, 6, (38.0, 38.0), "l_elbow", false),
            p("r_elbow", "r_wrist", 4, 6, (38.0, 38.0), "r_elbow", true),
        ],
        MeshDetail::Reduced => vec![
            p("pelvis", "head", 2, 3, (100.0, 150.0), "pelvis", false),
            p("l_hip", "l_ankle", 2, 3, (60.0, 60.0), "l_hip", false),
            p("r_hip", "r_ankle", 2, 3, (60.0, 60.0), "r_hip", true),
            p("l_shoulder", "l_wrist", 2, 3, (40.0, 40.0), "l_shoulder", false),
            p("r_shoulder", "r_wrist", 2, 3, (40.0, 40.0), "r_shoulder", true),
        ],
    }
}

/// One generated capsule.
struct Capsule {
    start: P3,
    end: P3,
    rings: usize,
    segments: usize,
    /// Index of the first vertex (the start pole).
    base: usize,
}

impl Capsule {
    fn ring_vertex(&self, ring: usize, seg: usize) -> usize {
        self.base + 1 + ring * self.segments + seg
    }

    fn end_pole(&self) -> usize {
        self.base + 1 + self.rings * self.segments
    }

    fn vertex_count(&self) -> usize {
        self.rings * self.segments + 2
    }

    /// Axis parameter of the closest point to `p` and its distance.
    fn project(&self, p: P3) -> (f64, f64) {
        let axis = sub(self.end, self.start);
        let t = (dot(sub(p, self.start), axis) / dot(axis, axis)).clamp(0.0, 1.0);
        let q = add(self.start, mul(axis, t));
        let d = sub(p, q);
        (t, dot(d, d).sqrt())
    }

    /// Convex weights over this capsule's vertices whose centroid is the
    /// axis point at parameter `t`.
    fn axis_weights(&self, t: f64) -> Vec<(usize, f64)> {
        let span = (self.rings - 1) as f64;
        let pos = t * span;
        let mut lo = pos.floor() as usize;
        let mut frac = pos - lo as f64;
        if frac > 1.0 - 1e-9 {
            lo += 1;
            frac = 0.0;
        } else if frac < 1e-9 {
            frac = 0.0;
        }
        let lo = lo.min(self.rings - 1);
        let s = self.segments as f64;
        let mut out: Vec<(usize, f64)> = (0..self.segments)
            .map(|j| (self.ring_vertex(lo, j), (1.0 - frac) / s))
            .collect();
        if frac > 0.0 {
            out.extend((0..self.segments).map(|j| (self.ring_vertex(lo + 1, j), frac / s)));
        }
        out
    }
}

struct Geometry {
    vertices: Vec<P3>,
    faces: Vec<[usize; 3]>,
    capsules: Vec<Capsule>,
    drivers: Vec<&'static str>,
}

fn build_geometry(shape: &BodyShape, detail: MeshDetail) -> Geometry {
    let anat = anatomy(shape);
    let mut vertices: Vec<P3> = Vec::new();
    let mut faces = Vec::new();
    let mut capsules = Vec::new();
    let mut drivers = Vec::new();
    let mut last_part: Option<(usize, usize)> = None;

    for spec in part_specs(detail) {
        let start = point(&anat, spec.start);
        let end = point(&anat, spec.end);
        let base = vertices.len();
        let cap = Capsule {
            start,
            end,
            rings: spec.rings,
            segments: spec.segments,
            base,
        };
        let (ru, rw) = (spec.radii.0 * shape.girth * shape.stature, spec.radii.1 * shape.girth * shape.stature);

        if spec.mirrored {
            let (src_base, src_len) = last_part.expect("mirrored part follows its source");
            let src: Vec<P3> = vertices[src_base..src_base + src_len].to_vec();
            vertices.extend(src.into_iter().map(mirror));
            let src_faces: Vec<[usize; 3]> = faces
                .iter()
                .filter(|f: &&[usize; 3]| f[0] >= src_base && f[0] < src_base + src_len)
                .map(|f| [f[0] - src_base + base, f[2] - src_base + base, f[1] - src_base + base])
                .collect();
            faces.extend(src_faces);
        } else {
            let axis = normalize(sub(end, start));
            let reference = if dot(axis, [0.0, 0.0, 1.0]).abs() < 0.9 {
                [0.0, 0.0, 1.0]
            } else {
                [1.0, 0.0, 0.0]
            };
            let u = normalize(sub(reference, mul(axis, dot(reference, axis))));
            let w = cross(axis, u);
            let pole_len = 0.6 * ru.max(rw);
            vertices.push(sub(start, mul(axis, pole_len)));
            for i in 0..spec.rings {
                let t = i as f64 / (spec.rings - 1) as f64;
                let c = add(start, mul(sub(end, start), t));
                for j in 0..spec.segments {
                    let th = 2.0 * std::f64::consts::PI * j as f64 / spec.segments as f64;
                    vertices.push(add(c, add(mul(u, ru * th.cos()), mul(w, rw * th.sin()))));
                }
            }
            vertices.push(add(end, mul(axis, pole_len)));

            let s = spec.segments;
            for j in 0..s {
                let jn = (j + 1) % s;
                faces.push([base, cap.ring_vertex(0, jn), cap.ring_vertex(0, j)]);
            }
            for i in 0..spec.rings - 1 {
                for j in 0..s {
                    let jn = (j + 1) % s;
                    let (a, b) = (cap.ring_vertex(i, j), cap.ring_vertex(i, jn));
                    let (c, d) = (cap.ring_vertex(i + 1, jn), cap.ring_vertex(i + 1, j));
                    faces.push([a, b, c]);
                    faces.push([a, c, d]);
                }
            }
            let last = spec.rings - 1;
            for j in 0..s {
                let jn = (j + 1) % s;
                faces.push([cap.end_pole(), cap.ring_vertex(last, j), cap.ring_vertex(last, jn)]);
            }
        }
        last_part = Some((base, cap.vertex_count()));
        drivers.extend(std::iter::repeat_n(spec.driver, cap.vertex_count()));
        capsules.push(cap);
    }
    Geometry {
        vertices,
        faces,
        capsules,
        drivers,
    }
}

/// Regressor row that reproduces `target` from capsule rings lying on it, or
/// from the nearest capsule axis if none passes through the point.
fn axis_row(geom: &Geometry, target: P3, v: usize) -> Vec<f64> {
    let hits: Vec<(usize, f64)> = geom
        .capsules
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let (t, d) = c.project(target);
            (d < 1e-6).then_some((i, t))
        })
        .collect();
    let hits = if hits.is_empty() {
        let (i, t, _) = geom
            .capsules
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (t, d) = c.project(target);
                (i, t, d)
            })
            .min_by(|a, b| a.2.total_cmp(&b.2))
            .unwrap();
        vec![(i, t)]
    } else {
        hits
    };
    let mut row = vec![0.0; v];
    let share = 1.0 / hits.len() as f64;
    for (i, t) in hits {
        for (vi, w) in geom.capsules[i].axis_weights(t) {
            row[vi] += share * w;
        }
    }
    row
}

fn nearest_vertex_row(geom: &Geometry, target: P3) -> Vec<f64> {
    let best = geom
        .vertices
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = sub(*p, target);
            (i, dot(d, d))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0;
    let mut row = vec![0.0; geom.vertices.len()];
    row[best] = 1.0;
    row
}

fn vertex_mirror_map(vertices: &[P3]) -> Option<Vec<usize>> {
    vertices
        .iter()
        .map(|p| {
            let m = mirror(*p);
            vertices
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    let d = sub(m, *q);
                    (i, dot(d, d))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .filter(|&(_, d)| d.sqrt() < 1e-6)
                .map(|(i, _)| i)
        })
        .collect()
}

fn swap_side(name: &str) -> String {
    if let Some(rest) = name.strip_prefix("l_") {
        format!("r_{rest}")
    } else if let Some(rest) = name.strip_prefix("r_") {
        format!("l_{rest}")
    } else {
        name.to_string()
    }
}

/// Midpoint subdivision: original vertices followed by one midpoint per
/// unique mesh edge.
pub(crate) fn midpoint_upsample(vertex_count: usize, faces: &[[usize; 3]]) -> CsrMatrix {
    let edges = mesh_edges(faces);
    let triplets = (0..vertex_count)
        .map(|i| (i, i, 1.0))
        .chain(edges.iter().enumerate().flat_map(|(e, &(a, b))| {
            [(vertex_count + e, a, 0.5), (vertex_count + e, b, 0.5)]
        }));
    CsrMatrix::from_triplets(vertex_count + edges.len(), vertex_count, triplets)
        .expect("edge indices are valid vertices")
}

impl SyntheticBody {
    pub fn joint_names(&self) -> Vec<String> {
        match self.joint_set {
            JointSet::H36m17 => H36M_NAMES.iter().map(|s| s.to_string()).collect(),
            JointSet::Coco19 => COCO_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn skeleton(&self) -> Vec<(usize, usize)> {
        match self.joint_set {
            JointSet::H36m17 => H36M_EDGES.to_vec(),
            JointSet::Coco19 => COCO_EDGES.to_vec(),
        }
    }

    fn root_index(&self) -> usize {
        match self.joint_set {
            JointSet::H36m17 => 0,
            JointSet::Coco19 => 17,
        }
    }

    fn regressor(&self, geom: &Geometry, shape: &BodyShape) -> DenseMatrix {
        let anat = anatomy(shape);
        let v = geom.vertices.len();
        let names = self.joint_names();
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(names.len());
        for name in &names {
            let row = match name.as_str() {
                "nose" | "l_eye" | "r_eye" | "l_ear" | "r_ear" => {
                    let neck = point(&anat, "neck");
                    let head = point(&anat, "head");
                    let c = mul(add(neck, head), 0.5);
                    let r = 90.0 * shape.girth * shape.stature;
                    let offset = match name.as_str() {
                        "nose" => [0.0, 0.0, -r],
                        "l_eye" => [0.3 * r, -0.2 * r, -0.9 * r],
                        "r_eye" => [-0.3 * r, -0.2 * r, -0.9 * r],
                        "l_ear" => [r, 0.0, 0.0],
                        _ => [-r, 0.0, 0.0],
                    };
                    nearest_vertex_row(geom, add(c, offset))
                }
                "pelvis" if self.joint_set == JointSet::Coco19 => Vec::new(),
                "neck" if self.joint_set == JointSet::Coco19 => Vec::new(),
                _ => axis_row(geom, point(&anat, name), v),
            };
            rows.push(row);
        }
        if self.joint_set == JointSet::Coco19 {
            let mid = |a: usize, b: usize, rows: &Vec<Vec<f64>>| -> Vec<f64> {
                rows[a].iter().zip(&rows[b]).map(|(x, y)| 0.5 * (x + y)).collect()
            };
            rows[17] = mid(11, 12, &rows);
            rows[18] = mid(5, 6, &rows);
        }
        DenseMatrix::from_rows(&rows).expect("rows share the vertex count")
    }

    fn vertex_matrix(geom: &Geometry) -> DenseMatrix {
        DenseMatrix::from_rows(&geom.vertices).expect("3 columns")
    }

    /// Rest vertices for one body shape (same topology for every shape).
    pub fn vertices_for(&self, shape: &BodyShape) -> DenseMatrix {
        Self::vertex_matrix(&build_geometry(shape, self.detail))
    }

    /// Canonical template.
    pub fn template(&self) -> BodyTemplate {
        let shape = BodyShape::default();
        let geom = build_geometry(&shape, self.detail);
        let names = self.joint_names();
        let regressor = self.regressor(&geom, &shape);
        let vertex_symmetry = vertex_mirror_map(&geom.vertices);
        let joint_symmetry: Vec<usize> = names
            .iter()
            .map(|n| {
                let other = swap_side(n);
                names.iter().position(|m| *m == other).unwrap()
            })
            .collect();
        let drivers = geom
            .drivers
            .iter()
            .map(|d| names.iter().position(|n| n == d).expect("driver joint exists"))
            .collect();
        let v = geom.vertices.len();
        BodyTemplate::from_parts(
            Self::vertex_matrix(&geom),
            geom.faces.clone(),
            self.skeleton(),
            regressor,
            midpoint_upsample(v, &geom.faces),
            self.root_index(),
            names,
            Some(joint_symmetry),
            vertex_symmetry,
            Some(drivers),
        )
        .expect("synthetic template satisfies its invariants")
    }

    /// Canonical shape followed by `BANK_SIZE − 1` seeded variants.
    pub fn bank_shapes(&self) -> Vec<BodyShape> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.bank_seed);
        let mut shapes = vec![BodyShape::default()];
        for _ in 1..BANK_SIZE {
            shapes.push(BodyShape {
                stature: rng.random_range(0.88..1.12),
                torso: rng.random_range(0.9..1.1),
                arms: rng.random_range(0.9..1.1),
                legs: rng.random_range(0.9..1.1),
                girth: rng.random_range(0.85..1.2),
            });
        }
        shapes
    }

    pub fn bank(&self, template: &BodyTemplate) -> TemplateBank {
        let variants = self.bank_shapes().iter().map(|s| self.vertices_for(s)).collect();
        TemplateBank::new(template, variants).expect("variants share the template topology")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_template_counts() {
        let t = SyntheticBody::default().template();
        assert_eq!(t.vertex_count(), 431);
        assert_eq!(t.joint_count(), 17);
        assert_eq!(t.skeleton_edges.len(), 16);
        // closed genus-0 parts: F = 2V − 4 per part
        assert_eq!(t.faces.len(), 2 * 431 - 4 * 11);
        assert_eq!(t.full_vertex_count(), 431 + t.mesh_edges().len());
    }

    #[test]
    fn reduced_template_has_forty_vertices() {
        let body = SyntheticBody {
            detail: MeshDetail::Reduced,
            ..SyntheticBody::default()
        };
        let t = body.template();
        assert_eq!(t.vertex_count(), 40);
        assert_eq!(t.joint_count(), 17);
    }

    #[test]
    fn coco_variant_has_nineteen_joints_with_midpoints() {
        let body = SyntheticBody {
            joint_set: JointSet::Coco19,
            ..SyntheticBody::default()
        };
        let t = body.template();
        assert_eq!(t.joint_count(), 19);
        assert_eq!(t.root_index, 17);
        let j = t.regress_joints(&t.vertices).unwrap();
        for a in 0..3 {
            assert!((j[(17, a)] - 0.5 * (j[(11, a)] + j[(12, a)])).abs() < 1e-9);
            assert!((j[(18, a)] - 0.5 * (j[(5, a)] + j[(6, a)])).abs() < 1e-9);
        }
    }

    #[test]
    fn regressed_joints_land_on_skeleton() {
        let body = SyntheticBody::default();
        let t = body.template();
        let j = t.regress_joints(&t.vertices).unwrap();
        for (i, (_, p)) in anatomy(&BodyShape::default()).iter().enumerate() {
            for a in 0..3 {
                assert!((j[(i, a)] - p[a]).abs() < 1e-9, "joint {i}");
            }
        }
    }

    #[test]
    fn symmetry_maps_mirror_geometry() {
        let t = SyntheticBody::default().template();
        let vs = t.vertex_symmetry.as_ref().unwrap();
        for (v, &m) in vs.iter().enumerate() {
            assert!((t.vertices[(v, 0)] + t.vertices[(m, 0)]).abs() < 1e-9);
            assert!((t.vertices[(v, 1)] - t.vertices[(m, 1)]).abs() < 1e-9);
        }
        let js = t.joint_symmetry.as_ref().unwrap();
        assert_eq!(js[1], 4);
        assert_eq!(js[11], 14);
        assert_eq!(js[0], 0);
        // 𝒥[sym j][sym v] = 𝒥[j][v]
        for j in 0..t.joint_count() {
            for v in 0..t.vertex_count() {
                assert!((t.regressor[(js[j], vs[v])] - t.regressor[(j, v)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bank_is_seeded_and_shares_topology() {
        let body = SyntheticBody::default();
        let t = body.template();
        let b1 = body.bank(&t);
        let b2 = body.bank(&t);
        assert_eq!(b1, b2);
        assert_eq!(b1.len(), BANK_SIZE);
        assert_eq!(b1.variants[0], t.vertices);
        assert_ne!(b1.variants[1], b1.variants[2]);
    }
}
