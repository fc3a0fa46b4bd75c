mod common;

use common::*;
use mug_core::graph_builder::InterEdgeConfig;
use mug_core::losses::LossWeights;
use mug_core::network::{forward, NetworkConfig, NetworkOutput, NetworkParams};
use mug_core::synthetic_data::Scene;
use mug_core::trainer::{loss_and_gradients, prepare_scene, Assets, TrainConfig};

fn net(assets: &Assets) -> NetworkConfig {
    NetworkConfig {
        input_dim: assets.feature_dim(),
        hidden: 8,
        cheb_order: 2,
        gn_groups: 2,
        ..NetworkConfig::default()
    }
}

fn run(scene: &Scene, assets: &Assets, params: &NetworkParams, inter: InterEdgeConfig) -> NetworkOutput {
    let prep = prepare_scene(scene, assets, inter, &params.config).unwrap();
    forward(&prep.ops, &prep.features.features, params).unwrap()
}

#[test]
fn disconnected_humans_do_not_interact() {
    let assets = reduced_assets();
    let pair = scene(&assets, 41, 2);
    let mut single = pair.clone();
    single.humans.truncate(1);
    let params = random_params(net(&assets), 5);
    let a = run(&single, &assets, &params, InterEdgeConfig::disconnected());
    let b = run(&pair, &assets, &params, InterEdgeConfig::disconnected());
    let (x, y) = (&a.humans[0], &b.humans[0]);
    assert!((x.depth_measure - y.depth_measure).abs() < 1e-10);
    assert!(x.joints.max_abs_diff(&y.joints) < 1e-10);
    assert!(x.mesh.max_abs_diff(&y.mesh) < 1e-10);
}

#[test]
fn permuting_humans_permutes_outputs() {
    let assets = reduced_assets();
    let s = scene(&assets, 43, 3);
    let params = random_params(net(&assets), 6);
    let order = [2, 0, 1];
    let mut p = s.clone();
    p.humans = order.iter().map(|&i| s.humans[i].clone()).collect();
    let a = run(&s, &assets, &params, InterEdgeConfig::default());
    let b = run(&p, &assets, &params, InterEdgeConfig::default());
    for (k, &i) in order.iter().enumerate() {
        let (x, y) = (&a.humans[i], &b.humans[k]);
        assert!((x.depth_measure - y.depth_measure).abs() < 1e-12);
        assert!(x.joints.max_abs_diff(&y.joints) < 1e-12);
        assert!(x.mesh.max_abs_diff(&y.mesh) < 1e-12);
    }
}

#[test]
fn depth_reads_other_humans_only_through_inter_edges() {
    let assets = reduced_assets();
    let s = scene(&assets, 47, 2);
    let params = random_params(net(&assets), 7);
    let j = assets.template.joint_count();
    let v = assets.template.vertex_count();
    let depth_with_bump = |inter: InterEdgeConfig, bump: f64| {
        let prep = prepare_scene(&s, &assets, inter, &params.config).unwrap();
        let mut f = prep.features.features.clone();
        for r in j..2 * j {
            for c in 0..f.dim {
                f.joint_features[(r, c)] += bump * ((r * 7 + c) % 5) as f64;
            }
        }
        for r in v..2 * v {
            f.mesh_features[(r, 0)] += bump;
        }
        forward(&prep.ops, &f, &params).unwrap().humans[0].depth_measure
    };
    let isolated = InterEdgeConfig::disconnected();
    assert_eq!(depth_with_bump(isolated, 0.0), depth_with_bump(isolated, 0.3));
    let roots = InterEdgeConfig {
        epsilon: 0.0,
        root_edges: true,
    };
    assert!((depth_with_bump(roots, 0.0) - depth_with_bump(roots, 0.3)).abs() > 1e-9);
}

#[test]
fn zero_parameters_give_zero_outputs() {
    let assets = reduced_assets();
    let s = scene(&assets, 53, 2);
    let params = NetworkParams::zeros(net(&assets)).unwrap();
    let out = run(&s, &assets, &params, InterEdgeConfig::default());
    for h in &out.humans {
        assert_eq!(h.depth_measure, 0.0);
        assert!(h.joints.data().iter().chain(h.mesh.data()).all(|&x| x == 0.0));
    }
}

#[test]
fn depth_and_joint_heads_do_not_touch_the_mesh() {
    let assets = reduced_assets();
    let s = scene(&assets, 59, 2);
    let params = random_params(net(&assets), 8);
    let mut other = params.clone();
    for (name, t) in other.names().into_iter().zip(other.tensors.iter_mut()) {
        if name.starts_with("d.") || name.starts_with("d_out") || name.starts_with("p.") || name.starts_with("p_out") {
            *t = t.map(|x| -2.0 * x + 0.1);
        }
    }
    let a = run(&s, &assets, &params, InterEdgeConfig::default());
    let b = run(&s, &assets, &other, InterEdgeConfig::default());
    for (x, y) in a.humans.iter().zip(&b.humans) {
        assert_eq!(x.mesh, y.mesh);
        assert_ne!(x.depth_measure, y.depth_measure);
        assert_ne!(x.joints, y.joints);
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let assets = reduced_assets();
    let s = scene(&assets, 61, 3);
    let cfg = TrainConfig {
        hidden: 8,
        gn_groups: 2,
        weights: LossWeights::default(),
        seed: 2,
        ..TrainConfig::default()
    };
    let params = NetworkParams::init(cfg.network(assets.feature_dim()), cfg.seed).unwrap();
    let (_, _, grads) = loss_and_gradients(&s, &params, &assets, &cfg).unwrap();
    for (g, name) in grads.iter().zip(params.names()) {
        assert!(g.squared_norm() > 0.0, "{name} has a zero gradient");
    }
}
