//! Heterogeneous multi-human graph.
//!
//! Node order: all joints of human 0, …, human K−1, then all mesh vertices
//! of human 0, …, human K−1.

use serde::{Deserialize, Serialize};

use crate::body_template::BodyTemplate;
use crate::error::{MugError, Result};
use crate::numerics::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Joint,
    Mesh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub human: usize,
    pub kind: NodeKind,
    pub local: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InterKind {
    Root,
    Proximity,
}

/// Undirected joint–joint edge between two humans, stored with `a < b`
/// (global node indices).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InterEdge {
    pub a: usize,
    pub b: usize,
    pub kind: InterKind,
}

/// Inter-human edge settings. `root_edges = false` with `epsilon = 0` is the
/// fully disconnected ablation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterEdgeConfig {
    /// Proximity threshold in canonical-frame pixels (strict `<`).
    pub epsilon: f64,
    pub root_edges: bool,
}

impl Default for InterEdgeConfig {
    fn default() -> Self {
        Self {
            epsilon: 200.0,
            root_edges: true,
        }
    }
}

impl InterEdgeConfig {
    pub fn disconnected() -> Self {
        Self {
            epsilon: 0.0,
            root_edges: false,
        }
    }
}

/// Edge sets of a single human, in local indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    pub jj: Vec<(usize, usize)>,
    pub mm: Vec<(usize, usize)>,
    /// `(joint, vertex)`, directed joint → mesh.
    pub jm: Vec<(usize, usize)>,
}

pub fn build_subgraph(template: &BodyTemplate) -> Subgraph {
    let jm = template
        .nearest_joints
        .iter()
        .enumerate()
        .flat_map(|(v, &(j1, j2))| [(j1, v), (j2, v)])
        .collect();
    Subgraph {
        jj: template.skeleton_edges.clone(),
        mm: template.mesh_edges(),
        jm,
    }
}

/// Root-to-root edges between every pair of humans plus all cross-human
/// joint pairs closer than `epsilon`. Poses are `J x 2` canonical pixels.
pub fn build_inter_edges(
    poses_canonical: &[DenseMatrix],
    config: InterEdgeConfig,
    root_index: usize,
) -> Result<Vec<InterEdge>> {
    let k = poses_canonical.len();
    if k == 0 {
        return Err(MugError::Graph("scene has no humans".into()));
    }
    let j = poses_canonical[0].rows();
    if poses_canonical.iter().any(|p| p.shape() != (j, 2)) {
        return Err(MugError::Graph("poses must all be J x 2".into()));
    }
    if root_index >= j {
        return Err(MugError::Graph(format!("root index {root_index} out of range")));
    }
    let eps2 = config.epsilon * config.epsilon;
    let mut edges = Vec::new();
    for m in 0..k {
        for n in m + 1..k {
            for jm in 0..j {
                let pm = poses_canonical[m].row(jm);
                for jn in 0..j {
                    let a = m * j + jm;
                    let b = n * j + jn;
                    if config.root_edges && jm == root_index && jn == root_index {
                        edges.push(InterEdge {
                            a,
                            b,
                            kind: InterKind::Root,
                        });
                        continue;
                    }
                    if config.epsilon <= 0.0 {
                        continue;
                    }
                    let pn = poses_canonical[n].row(jn);
                    let d2 = (pm[0] - pn[0]).powi(2) + (pm[1] - pn[1]).powi(2);
                    if d2 < eps2 {
                        edges.push(InterEdge {
                            a,
                            b,
                            kind: InterKind::Proximity,
                        });
                    }
                }
            }
        }
    }
    edges.sort();
    Ok(edges)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub humans: usize,
    pub joints_per_human: usize,
    pub vertices_per_human: usize,
    pub root_index: usize,
    /// Undirected joint–joint edges within a human (global node indices).
    pub jj: Vec<(usize, usize)>,
    /// Undirected mesh–mesh edges within a human.
    pub mm: Vec<(usize, usize)>,
    /// Directed joint → mesh edges.
    pub jm: Vec<(usize, usize)>,
    pub inter: Vec<InterEdge>,
}

impl SceneGraph {
    pub fn node_count(&self) -> usize {
        self.joint_node_count() + self.mesh_node_count()
    }

    pub fn joint_node_count(&self) -> usize {
        self.humans * self.joints_per_human
    }

    pub fn mesh_node_count(&self) -> usize {
        self.humans * self.vertices_per_human
    }

    pub fn node_index(&self, id: NodeId) -> usize {
        match id.kind {
            NodeKind::Joint => id.human * self.joints_per_human + id.local,
            NodeKind::Mesh => {
                self.joint_node_count() + id.human * self.vertices_per_human + id.local
            }
        }
    }

    pub fn node_id(&self, index: usize) -> NodeId {
        if index < self.joint_node_count() {
            NodeId {
                human: index / self.joints_per_human,
                kind: NodeKind::Joint,
                local: index % self.joints_per_human,
            }
        } else {
            let m = index - self.joint_node_count();
            NodeId {
                human: m / self.vertices_per_human,
                kind: NodeKind::Mesh,
                local: m % self.vertices_per_human,
            }
        }
    }

    pub fn root_node(&self, human: usize) -> usize {
        human * self.joints_per_human + self.root_index
    }

    /// Inter edges restricted to one subtype.
    pub fn inter_of(&self, kind: InterKind) -> impl Iterator<Item = &InterEdge> {
        self.inter.iter().filter(move |e| e.kind == kind)
    }
}

/// Union of `K` per-human subgraphs and the inter-human edges.
pub fn assemble_scene_graph(
    template: &BodyTemplate,
    poses_canonical: &[DenseMatrix],
    config: InterEdgeConfig,
) -> Result<SceneGraph> {
    let sub = build_subgraph(template);
    assemble_with_subgraph(&sub, template, poses_canonical, config)
}

pub(crate) fn assemble_with_subgraph(
    sub: &Subgraph,
    template: &BodyTemplate,
    poses_canonical: &[DenseMatrix],
    config: InterEdgeConfig,
) -> Result<SceneGraph> {
    let inter = build_inter_edges(poses_canonical, config, template.root_index)?;
    let k = poses_canonical.len();
    let j = template.joint_count();
    let v = template.vertex_count();
    let mesh_base = k * j;
    let mut jj = Vec::with_capacity(k * sub.jj.len());
    let mut mm = Vec::with_capacity(k * sub.mm.len());
    let mut jm = Vec::with_capacity(k * sub.jm.len());
    for h in 0..k {
        jj.extend(sub.jj.iter().map(|&(a, b)| (h * j + a, h * j + b)));
        mm.extend(
            sub.mm
                .iter()
                .map(|&(a, b)| (mesh_base + h * v + a, mesh_base + h * v + b)),
        );
        jm.extend(
            sub.jm
                .iter()
                .map(|&(jt, vt)| (h * j + jt, mesh_base + h * v + vt)),
        );
    }
    Ok(SceneGraph {
        humans: k,
        joints_per_human: j,
        vertices_per_human: v,
        root_index: template.root_index,
        jj,
        mm,
        jm,
        inter,
    })
}
