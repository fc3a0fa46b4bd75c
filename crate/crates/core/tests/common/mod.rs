#![allow(dead_code)]

use std::collections::BTreeSet;

use mug_core::body_template::{BodyTemplate, MeshDetail, SyntheticBody};
use mug_core::features::Pose2D;
use mug_core::graph_builder::{InterKind, SceneGraph};
use mug_core::network::{NetworkConfig, NetworkParams};
use mug_core::numerics::DenseMatrix;
use mug_core::synthetic_data::{generate_scene, GeneratorConfig, Scene};
use mug_core::trainer::Assets;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn reduced_assets() -> Assets {
    Assets::synthetic(SyntheticBody {
        detail: MeshDetail::Reduced,
        ..SyntheticBody::default()
    })
}

pub fn to_mat(m: &DenseMatrix) -> Mat {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn scene(assets: &Assets, seed: u64, k: usize) -> Scene {
    generate_scene(seed, k, &assets.template, &assets.bank, &GeneratorConfig::default()).unwrap()
}

/// Parameters with every tensor (including norm gains and biases) drawn
/// uniformly, so no block degenerates to its initial identity.
pub fn random_params(cfg: NetworkConfig, seed: u64) -> NetworkParams {
    let mut p = NetworkParams::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    for t in p.tensors.iter_mut() {
        for x in t.data_mut() {
            *x = rng.random_range(-0.6..0.6);
        }
    }
    p
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for p in 0..k {
            let x = a[i][p];
            for j in 0..m {
                out[i][j] += x * b[p][j];
            }
        }
    }
    out
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn relu(a: &Mat) -> Mat {
    a.iter().map(|r| r.iter().map(|x| x.max(0.0)).collect()).collect()
}

/// `L − I` of the symmetric normalized Laplacian, isolated rows zero in `L`.
pub fn dense_scaled_laplacian(n: usize, edges: &[(usize, usize)]) -> Mat {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j) in edges {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let lij = if i == j {
                if deg[i] > 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else if a[i][j] != 0.0 {
                -a[i][j] / (deg[i] * deg[j]).sqrt()
            } else {
                0.0
            };
            l[i][j] = lij - if i == j { 1.0 } else { 0.0 };
        }
    }
    l
}

fn cheb(x: &Mat, lap: &Mat, w: &[Mat]) -> Mat {
    let mut t_prev = x.clone();
    let mut out = matmul(&t_prev, &w[0]);
    if w.len() == 1 {
        return out;
    }
    let mut t_cur = matmul(lap, x);
    out = add(&out, &matmul(&t_cur, &w[1]));
    for wk in &w[2..] {
        let lt = matmul(lap, &t_cur);
        let t_next: Mat = lt
            .iter()
            .zip(&t_prev)
            .map(|(r, s)| r.iter().zip(s).map(|(a, b)| 2.0 * a - b).collect())
            .collect();
        out = add(&out, &matmul(&t_next, wk));
        t_prev = t_cur;
        t_cur = t_next;
    }
    out
}

fn gn(x: &Mat, groups: usize, gain: &[f64], bias: &[f64]) -> Mat {
    let c = x[0].len();
    let m = c / groups;
    x.iter()
        .map(|row| {
            let mut out = vec![0.0; c];
            for g in 0..groups {
                let xs = &row[g * m..(g + 1) * m];
                let mu = xs.iter().sum::<f64>() / m as f64;
                let var = xs.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m as f64;
                for (o, ch) in (g * m..(g + 1) * m).enumerate() {
                    out[ch] = gain[ch] * (xs[o] - mu) / (var + 1e-5).sqrt() + bias[ch];
                }
            }
            out
        })
        .collect()
}

struct Dense<'a> {
    params: &'a NetworkParams,
    q: usize,
    groups: usize,
}

impl Dense<'_> {
    fn p(&self, name: &str) -> Mat {
        to_mat(self.params.get(name).unwrap_or_else(|| panic!("missing {name}")))
    }

    fn conv(&self, x: &Mat, block: &str, i: usize, laps: &[(&str, &Mat)]) -> Mat {
        let mut acc: Option<Mat> = None;
        for (edge, lap) in laps {
            let w: Vec<Mat> = (0..self.q).map(|k| self.p(&format!("{block}.conv{i}.{edge}.t{k}"))).collect();
            let y = cheb(x, lap, &w);
            acc = Some(match acc {
                Some(a) => add(&a, &y),
                None => y,
            });
        }
        let gain = self.p(&format!("{block}.conv{i}.gn.gain"));
        let bias = self.p(&format!("{block}.conv{i}.gn.bias"));
        gn(&acc.unwrap(), self.groups, &gain[0], &bias[0])
    }

    fn cascade(&self, x: &Mat, block: &str, laps: &[(&str, &Mat)]) -> Mat {
        let mut h = x.clone();
        for i in 0..3 {
            h = relu(&self.conv(&h, block, i, laps));
        }
        h
    }

    fn residual(&self, x: &Mat, block: &str, laps: &[(&str, &Mat)]) -> Mat {
        let y = relu(&self.conv(x, block, 0, laps));
        let y = self.conv(&y, block, 1, laps);
        relu(&add(&y, x))
    }

    fn linear(&self, x: &Mat, head: &str) -> Mat {
        let b = self.p(&format!("{head}.bias"));
        matmul(x, &self.p(&format!("{head}.weight")))
            .into_iter()
            .map(|r| r.iter().zip(&b[0]).map(|(a, c)| a + c).collect())
            .collect()
    }
}

/// Independent dense evaluation of the network: `(depth, joints, mesh)`.
pub fn dense_forward(graph: &SceneGraph, xj: &Mat, xm: &Mat, params: &NetworkParams) -> (Vec<f64>, Mat, Mat) {
    let cfg = params.config;
    let nj = graph.joint_node_count();
    let nm = graph.mesh_node_count();
    let inter: Vec<(usize, usize)> = graph.inter.iter().map(|e| (e.a, e.b)).collect();
    let root: Vec<(usize, usize)> = graph.inter_of(InterKind::Root).map(|e| (e.a, e.b)).collect();
    let prox: Vec<(usize, usize)> = graph.inter_of(InterKind::Proximity).map(|e| (e.a, e.b)).collect();
    let l_jj = dense_scaled_laplacian(nj, &graph.jj);
    let l_inter = dense_scaled_laplacian(nj, &inter);
    let l_root = dense_scaled_laplacian(nj, &root);
    let l_prox = dense_scaled_laplacian(nj, &prox);
    let mm: Vec<(usize, usize)> = graph.mm.iter().map(|&(a, b)| (a - nj, b - nj)).collect();
    let l_mm = dense_scaled_laplacian(nm, &mm);
    let jl: Vec<(&str, &Mat)> = match cfg.edge_type_mode {
        mug_core::network::EdgeTypeMode::Shared => vec![("jj", &l_jj), ("inter", &l_inter)],
        mug_core::network::EdgeTypeMode::SplitInter => vec![("jj", &l_jj), ("root", &l_root), ("prox", &l_prox)],
    };
    let ml: Vec<(&str, &Mat)> = vec![("mm", &l_mm)];
    let d = Dense {
        params,
        q: cfg.cheb_order,
        groups: cfg.gn_groups,
    };

    let hj = d.cascade(xj, "j1", &jl);
    let hj = d.residual(&hj, "j2", &jl);
    let per_joint = d.linear(&d.residual(&hj, "d", &jl), "d_out");
    let depth = (0..graph.humans).map(|k| per_joint[graph.root_node(k)][0]).collect();
    let joints = d.linear(&d.residual(&hj, "p", &jl), "p_out");

    let mut a = vec![vec![0.0; nj]; nm];
    let mut indeg = vec![0.0; nm];
    for &(_, m) in &graph.jm {
        indeg[m - nj] += 1.0;
    }
    for &(j, m) in &graph.jm {
        a[m - nj][j] = 1.0 / indeg[m - nj];
    }
    let hc = d.residual(&matmul(&a, &hj), "c", &ml);
    let mut hm = add(&d.cascade(xm, "m1", &ml), &hc);
    for b in ["m2", "m3", "m4"] {
        hm = d.residual(&hm, b, &ml);
    }
    let mesh = d.linear(&hm, "m_out");
    (depth, joints, mesh)
}

/// All inter-human edges by direct enumeration: `(a, b, is_root)`.
pub fn brute_force_inter(poses: &[DenseMatrix], epsilon: f64, root_edges: bool, root: usize) -> BTreeSet<(usize, usize, bool)> {
    let k = poses.len();
    let j = poses[0].rows();
    let mut out = BTreeSet::new();
    for m in 0..k {
        for n in m + 1..k {
            for a in 0..j {
                for b in 0..j {
                    let (u, v) = (m * j + a, n * j + b);
                    if root_edges && a == root && b == root {
                        out.insert((u, v, true));
                        continue;
                    }
                    let dx = poses[m][(a, 0)] - poses[n][(b, 0)];
                    let dy = poses[m][(a, 1)] - poses[n][(b, 1)];
                    if (dx * dx + dy * dy).sqrt() < epsilon {
                        out.insert((u, v, false));
                    }
                }
            }
        }
    }
    out
}

pub fn graph_inter_set(graph: &SceneGraph) -> BTreeSet<(usize, usize, bool)> {
    graph
        .inter
        .iter()
        .map(|e| (e.a, e.b, e.kind == InterKind::Root))
        .collect()
}

/// Random canonical poses for `k` humans, clustered so proximity edges occur.
pub fn random_canonical_poses(rng: &mut ChaCha8Rng, k: usize, j: usize) -> Vec<DenseMatrix> {
    (0..k)
        .map(|_| {
            let cx = rng.random_range(200.0..800.0);
            let cy = rng.random_range(200.0..800.0);
            let s = rng.random_range(30.0..250.0);
            let data = (0..j)
                .flat_map(|_| [cx + s * rng.random_range(-1.0..1.0), cy + s * rng.random_range(-1.0..1.0)])
                .collect();
            DenseMatrix::from_vec(j, 2, data).unwrap()
        })
        .collect()
}

pub fn pose_of(m: DenseMatrix) -> Pose2D {
    Pose2D::all_visible(m).unwrap()
}

/// Central differences of `f` over every scalar of every tensor.
pub fn finite_differences(tensors: &[DenseMatrix], step: f64, mut f: impl FnMut(&[DenseMatrix]) -> f64) -> Vec<DenseMatrix> {
    let mut work = tensors.to_vec();
    let mut out = Vec::with_capacity(tensors.len());
    for t in 0..tensors.len() {
        let mut g = DenseMatrix::zeros(tensors[t].rows(), tensors[t].cols());
        for i in 0..tensors[t].data().len() {
            let x = tensors[t].data()[i];
            work[t].data_mut()[i] = x + step;
            let up = f(&work);
            work[t].data_mut()[i] = x - step;
            let down = f(&work);
            work[t].data_mut()[i] = x;
            g.data_mut()[i] = (up - down) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn template_of(assets: &Assets) -> &BodyTemplate {
    &assets.template
}
