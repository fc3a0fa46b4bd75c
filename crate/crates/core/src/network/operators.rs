use std::sync::Arc;

use super::EdgeTypeMode;
use crate::error::{MugError, Result};
use crate::graph_builder::{InterKind, SceneGraph};
use crate::numerics::{scaled_laplacian, CsrMatrix, SparseAdjacency};

/// Constant sparse operators derived from one scene graph.
#[derive(Clone, Debug)]
pub struct GraphOperators {
    pub humans: usize,
    pub joints_per_human: usize,
    pub vertices_per_human: usize,
    /// Scaled Laplacians over joint nodes, one per joint edge type.
    pub joint_laplacians: Vec<Arc<CsrMatrix>>,
    /// Scaled Laplacian over mesh nodes.
    pub mesh_laplacian: Arc<CsrMatrix>,
    /// `(K V) x (K J)` row-normalized joint-to-mesh propagation.
    pub joint_to_mesh: Arc<CsrMatrix>,
    /// `K x (K J)` picks each human's root node.
    pub root_selector: Arc<CsrMatrix>,
}

fn laplacian(n: usize, pairs: &[(usize, usize)]) -> Result<Arc<CsrMatrix>> {
    let adj = SparseAdjacency::from_undirected(n, pairs)?;
    Ok(Arc::new(scaled_laplacian(&adj).to_csr()))
}

impl GraphOperators {
    pub fn new(graph: &SceneGraph, mode: EdgeTypeMode) -> Result<Self> {
        let k = graph.humans;
        let j = graph.joints_per_human;
        let nj = graph.joint_node_count();
        let nm = graph.mesh_node_count();
        if graph.root_index >= j {
            return Err(MugError::Graph(format!(
                "root index {} missing from {j} joints",
                graph.root_index
            )));
        }
        let inter = |kind: Option<InterKind>| -> Vec<(usize, usize)> {
            graph
                .inter
                .iter()
                .filter(|e| kind.is_none_or(|k| e.kind == k))
                .map(|e| (e.a, e.b))
                .collect()
        };
        let joint_laplacians = match mode {
            EdgeTypeMode::Shared => vec![laplacian(nj, &graph.jj)?, laplacian(nj, &inter(None))?],
            EdgeTypeMode::SplitInter => vec![
                laplacian(nj, &graph.jj)?,
                laplacian(nj, &inter(Some(InterKind::Root)))?,
                laplacian(nj, &inter(Some(InterKind::Proximity)))?,
            ],
        };
        let mm: Vec<(usize, usize)> = graph.mm.iter().map(|&(a, b)| (a - nj, b - nj)).collect();
        let mesh_laplacian = laplacian(nm, &mm)?;

        let mut indegree = vec![0usize; nm];
        for &(_, m) in &graph.jm {
            indegree[m - nj] += 1;
        }
        let jm = graph
            .jm
            .iter()
            .map(|&(jn, m)| (m - nj, jn, 1.0 / indegree[m - nj] as f64));
        let joint_to_mesh = Arc::new(CsrMatrix::from_triplets(nm, nj, jm)?);
        let roots = (0..k).map(|h| (h, graph.root_node(h), 1.0));
        let root_selector = Arc::new(CsrMatrix::from_triplets(k, nj, roots)?);
        Ok(Self {
            humans: k,
            joints_per_human: j,
            vertices_per_human: graph.vertices_per_human,
            joint_laplacians,
            mesh_laplacian,
            joint_to_mesh,
            root_selector,
        })
    }
}
