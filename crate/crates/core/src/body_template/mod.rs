//! Rest-pose body geometry: coarse mesh, skeleton, joint regressor,
//! nearest-joint map and mesh upsampling.

mod builder;
mod io;

use std::collections::{BTreeSet, VecDeque};

use crate::error::{shape_err, MugError, Result};
use crate::numerics::{CsrMatrix, DenseMatrix};

pub use builder::{BodyShape, JointSet, MeshDetail, SyntheticBody};
pub use io::{load_template, save_template, SparseTriplets, TemplateFile};

/// Tolerance for regressor row sums and symmetry checks.
pub const VALIDATION_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct BodyTemplate {
    /// `V x 3`, millimeters.
    pub vertices: DenseMatrix,
    pub faces: Vec<[usize; 3]>,
    pub skeleton_edges: Vec<(usize, usize)>,
    /// `J x V`, rows are convex weights.
    pub regressor: DenseMatrix,
    /// Per vertex, the two closest rest-pose joints, nearest first.
    pub nearest_joints: Vec<(usize, usize)>,
    /// `V_full x V`.
    pub upsample: CsrMatrix,
    pub root_index: usize,
    pub joint_names: Vec<String>,
    /// Left/right relabeling of joints, when the template is mirror-symmetric.
    pub joint_symmetry: Option<Vec<usize>>,
    /// Left/right relabeling of vertices.
    pub vertex_symmetry: Option<Vec<usize>>,
    /// Joint whose frame carries each vertex during articulation.
    pub vertex_driver: Vec<usize>,
}

impl BodyTemplate {
    pub fn vertex_count(&self) -> usize {
        self.vertices.rows()
    }

    pub fn joint_count(&self) -> usize {
        self.regressor.rows()
    }

    pub fn full_vertex_count(&self) -> usize {
        self.upsample.rows()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn left_hip(&self) -> Option<usize> {
        self.joint_index("l_hip")
    }

    pub fn right_hip(&self) -> Option<usize> {
        self.joint_index("r_hip")
    }

    pub fn left_shoulder(&self) -> Option<usize> {
        self.joint_index("l_shoulder")
    }

    pub fn right_shoulder(&self) -> Option<usize> {
        self.joint_index("r_shoulder")
    }

    /// `𝒥 · T`.
    pub fn regress_joints(&self, vertices: &DenseMatrix) -> Result<DenseMatrix> {
        regress_joints(&self.regressor, vertices)
    }

    /// `upsample · coarse`.
    pub fn upsample_mesh(&self, coarse: &DenseMatrix) -> Result<DenseMatrix> {
        self.upsample.mul_dense(coarse)
    }

    /// Faces of the upsampled mesh, when the upsample operator keeps the
    /// coarse vertices and adds edge midpoints. Each face splits into four.
    pub fn full_faces(&self) -> Option<Vec<[usize; 3]>> {
        let v = self.vertex_count();
        let mut mid = std::collections::HashMap::new();
        for r in 0..self.upsample.rows() {
            let e: Vec<(usize, f64)> = self.upsample.row_entries(r).collect();
            match e.as_slice() {
                [(c, w)] if r < v && *c == r && *w == 1.0 => {}
                [(a, wa), (b, wb)] if *wa == 0.5 && *wb == 0.5 => {
                    mid.insert((*a.min(b), *a.max(b)), r);
                }
                _ => return None,
            }
        }
        let m = |a: usize, b: usize| mid.get(&(a.min(b), a.max(b))).copied();
        let mut out = Vec::with_capacity(4 * self.faces.len());
        for &[a, b, c] in &self.faces {
            let (ab, bc, ca) = (m(a, b)?, m(b, c)?, m(c, a)?);
            out.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        Some(out)
    }

    /// Parent of every joint in the skeleton tree rooted at `root_index`
    /// (`None` for the root).
    pub fn joint_parents(&self) -> Vec<Option<usize>> {
        tree_parents(self.joint_count(), &self.skeleton_edges, self.root_index)
            .expect("skeleton validated as a tree")
    }

    /// Unique undirected mesh edges `(a, b)` with `a < b`, sorted.
    pub fn mesh_edges(&self) -> Vec<(usize, usize)> {
        mesh_edges(&self.faces)
    }

    /// Assembles a template from raw parts, deriving the nearest-joint map
    /// and checking every invariant. All violations are reported together.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        vertices: DenseMatrix,
        faces: Vec<[usize; 3]>,
        skeleton_edges: Vec<(usize, usize)>,
        regressor: DenseMatrix,
        upsample: CsrMatrix,
        root_index: usize,
        joint_names: Vec<String>,
        joint_symmetry: Option<Vec<usize>>,
        vertex_symmetry: Option<Vec<usize>>,
        vertex_driver: Option<Vec<usize>>,
    ) -> Result<Self> {
        let problems = validate_parts(
            &vertices,
            &faces,
            &skeleton_edges,
            &regressor,
            &upsample,
            root_index,
            &joint_names,
            joint_symmetry.as_deref(),
            vertex_symmetry.as_deref(),
            vertex_driver.as_deref(),
        );
        if !problems.is_empty() {
            return Err(MugError::Template(problems));
        }
        let joints = regress_joints(&regressor, &vertices)?;
        let nearest_joints = compute_nearest_joints(&vertices, &joints);
        let vertex_driver = match vertex_driver {
            Some(d) => d,
            None => {
                let parents =
                    tree_parents(joints.rows(), &skeleton_edges, root_index).expect("validated");
                nearest_joints
                    .iter()
                    .map(|&(j, _)| parents[j].unwrap_or(j))
                    .collect()
            }
        };
        Ok(Self {
            vertices,
            faces,
            skeleton_edges,
            regressor,
            nearest_joints,
            upsample,
            root_index,
            joint_names,
            joint_symmetry,
            vertex_symmetry,
            vertex_driver,
        })
    }

    /// Same topology and regressor, different rest vertices.
    pub fn with_vertices(&self, vertices: DenseMatrix) -> Result<Self> {
        if vertices.shape() != self.vertices.shape() {
            return shape_err(
                "with_vertices",
                format!("{:?} vs {:?}", vertices.shape(), self.vertices.shape()),
            );
        }
        let joints = self.regress_joints(&vertices)?;
        Ok(Self {
            nearest_joints: compute_nearest_joints(&vertices, &joints),
            vertices,
            ..self.clone()
        })
    }
}

pub fn regress_joints(regressor: &DenseMatrix, vertices: &DenseMatrix) -> Result<DenseMatrix> {
    if regressor.cols() != vertices.rows() || vertices.cols() != 3 {
        return shape_err(
            "regress_joints",
            format!(
                "regressor {:?} with vertices {:?}",
                regressor.shape(),
                vertices.shape()
            ),
        );
    }
    regressor.matmul(vertices)
}

/// For every vertex, the two joints closest to it (ties to the lower index).
pub fn compute_nearest_joints(vertices: &DenseMatrix, joints: &DenseMatrix) -> Vec<(usize, usize)> {
    (0..vertices.rows())
        .map(|v| {
            let p = vertices.row(v);
            let mut order: Vec<(f64, usize)> = (0..joints.rows())
                .map(|j| {
                    let q = joints.row(j);
                    let d = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>();
                    (d, j)
                })
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            (order[0].1, order.get(1).map_or(order[0].1, |o| o.1))
        })
        .collect()
}

pub(crate) fn mesh_edges(faces: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    for f in faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            set.insert((a.min(b), a.max(b)));
        }
    }
    set.into_iter().collect()
}

/// Parents in the tree spanned by `edges`, or `None` if they do not form a
/// spanning tree over `n` nodes.
pub(crate) fn tree_parents(n: usize, edges: &[(usize, usize)], root: usize) -> Option<Vec<Option<usize>>> {
    if n == 0 || root >= n || edges.len() + 1 != n {
        return None;
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a >= n || b >= n || a == b {
            return None;
        }
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                parent[w] = Some(u);
                queue.push_back(w);
            }
        }
    }
    seen.iter().all(|&s| s).then_some(parent)
}

#[allow(clippy::too_many_arguments)]
fn validate_parts(
    vertices: &DenseMatrix,
    faces: &[[usize; 3]],
    skeleton_edges: &[(usize, usize)],
    regressor: &DenseMatrix,
    upsample: &CsrMatrix,
    root_index: usize,
    joint_names: &[String],
    joint_symmetry: Option<&[usize]>,
    vertex_symmetry: Option<&[usize]>,
    vertex_driver: Option<&[usize]>,
) -> Vec<String> {
    let mut problems = Vec::new();
    let v = vertices.rows();
    let j = regressor.rows();
    if vertices.cols() != 3 {
        problems.push(format!("vertices have {} columns, expected 3", vertices.cols()));
    }
    if !vertices.is_finite() {
        problems.push("vertices contain non-finite values".into());
    }
    for (fi, f) in faces.iter().enumerate() {
        if f.iter().any(|&i| i >= v) {
            problems.push(format!("face {fi} references a vertex outside 0..{v}"));
        } else if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            problems.push(format!("face {fi} repeats a vertex"));
        }
    }
    if regressor.cols() != v {
        problems.push(format!(
            "regressor has {} columns for {v} vertices",
            regressor.cols()
        ));
    }
    for r in 0..j {
        let row = regressor.row(r);
        if row.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            problems.push(format!("regressor row {r} has a negative or non-finite weight"));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > VALIDATION_TOL {
            problems.push(format!("regressor row {r} sums to {s:.6}"));
        }
    }
    if tree_parents(j, skeleton_edges, root_index.min(j.saturating_sub(1))).is_none() {
        problems.push("skeleton not a tree".into());
    }
    if root_index >= j {
        problems.push(format!("root_index {root_index} out of range for {j} joints"));
    }
    if joint_names.len() != j {
        problems.push(format!("{} joint names for {j} joints", joint_names.len()));
    }
    if upsample.cols() != v {
        problems.push(format!(
            "upsample matrix has {} columns for {v} vertices",
            upsample.cols()
        ));
    }
    let mut check_involution = |map: &[usize], n: usize, what: &str| {
        if map.len() != n || map.iter().any(|&i| i >= n) {
            problems.push(format!("{what} symmetry map has wrong length or range"));
        } else if map.iter().enumerate().any(|(i, &m)| map[m] != i) {
            problems.push(format!("{what} symmetry map is not an involution"));
        }
    };
    if let Some(m) = joint_symmetry {
        check_involution(m, j, "joint");
    }
    if let Some(m) = vertex_symmetry {
        check_involution(m, v, "vertex");
    }
    if let Some(d) = vertex_driver {
        if d.len() != v || d.iter().any(|&x| x >= j) {
            problems.push("vertex_driver has wrong length or range".into());
        }
    }
    problems
}

/// Shape variants sharing one topology: the canonical body first, then the
/// seeded variants.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateBank {
    pub variants: Vec<DenseMatrix>,
    /// `𝒥 · T` for every variant.
    pub regressed: Vec<DenseMatrix>,
}

pub const BANK_SIZE: usize = 11;

impl TemplateBank {
    pub fn new(template: &BodyTemplate, variants: Vec<DenseMatrix>) -> Result<Self> {
        let mut regressed = Vec::with_capacity(variants.len());
        for (i, v) in variants.iter().enumerate() {
            if v.shape() != template.vertices.shape() {
                return shape_err(
                    "TemplateBank",
                    format!("variant {i} is {:?}, template is {:?}", v.shape(), template.vertices.shape()),
                );
            }
            regressed.push(template.regress_joints(v)?);
        }
        Ok(Self {
            variants,
            regressed,
        })
    }

    /// Generic bank for any template: the rest pose plus seeded per-axis
    /// scalings about the root joint.
    pub fn scaled(template: &BodyTemplate, size: usize, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let root = template.regress_joints(&template.vertices)?.row(template.root_index).to_vec();
        let mut variants = vec![template.vertices.clone()];
        for _ in 1..size {
            let s: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.9..1.1));
            let mut v = template.vertices.clone();
            for r in 0..v.rows() {
                for a in 0..3 {
                    v[(r, a)] = root[a] + s[a] * (v[(r, a)] - root[a]);
                }
            }
            variants.push(v);
        }
        Self::new(template, variants)
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }
}
