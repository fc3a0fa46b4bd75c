//! Acceptance criteria. Each test prints one PASS/FAIL line.

mod common;

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use mug_core::camera_depth::{backproject_root, depth_to_measure, measure_to_depth, project, CameraIntrinsics};
use mug_core::features::{assemble_features, CanonicalTransform};
use mug_core::graph_builder::{assemble_scene_graph, InterEdgeConfig};
use mug_core::losses::{compute_parts, loss_normal, loss_rel_depth, LossWeights};
use mug_core::metrics::{evaluate_scene, mpjpe, pa_mpjpe, root_align, Aggregate, EvalHuman, MetricConfig};
use mug_core::network::{forward, EdgeTypeMode, NetworkConfig};
use mug_core::numerics::DenseMatrix;
use mug_core::synthetic_data::{generate_dataset, GeneratorConfig, Scene};
use mug_core::trainer::{
    dataset_loss, evaluate, loss_and_gradients, prepare_scene, scene_ground_truth, train, Assets, TrainConfig,
    TrainOutputs,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRAIN_BASE: u64 = 20_240;
const HELD_OUT_BASE: u64 = 90_210;
const RUN_SEED: u64 = 7;

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

// Written past the test harness capture so passing lines show up too.
fn emit(line: String) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn report(n: &str, name: &str, ok: bool, detail: String) {
    emit(format!("criterion {n} {name}: {} ({detail})", verdict(ok)));
}

#[test]
fn criterion_1_gradient_fidelity() {
    let start = Instant::now();
    let assets = reduced_assets();
    let scene = scene(&assets, 11, 2);
    // Two-channel groups saturate at h=8 and put the loss on its kinks, so
    // the toy network uses two groups of four.
    let net = NetworkConfig {
        input_dim: assets.feature_dim(),
        hidden: 8,
        cheb_order: 2,
        gn_groups: 2,
        ..NetworkConfig::default()
    };
    let params = random_params(net, 3);
    let cfg = TrainConfig {
        weights: LossWeights::default(),
        hidden: 8,
        gn_groups: 2,
        ..TrainConfig::default()
    };
    let (_, _, grads) = loss_and_gradients(&scene, &params, &assets, &cfg).unwrap();
    let mut probe = params.clone();
    let fd = finite_differences(&params.tensors, 1e-6, |t| {
        probe.tensors = t.to_vec();
        dataset_loss(std::slice::from_ref(&scene), &probe, &assets, &cfg).unwrap()
    });
    let names = params.names();
    let mut worst = (0.0, String::new());
    for ((g, f), name) in grads.iter().zip(&fd).zip(&names) {
        let diff = g.sub(f).unwrap().squared_norm().sqrt();
        let scale = g.squared_norm().sqrt().max(f.squared_norm().sqrt());
        let rel = if scale == 0.0 { 0.0 } else { diff / scale };
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst.0 < 1e-4 && secs < 120.0;
    report(
        "1",
        "gradient fidelity",
        ok,
        format!(
            "{} tensors, {} scalars, worst relative error {:.2e} at {}, {secs:.1} s",
            names.len(),
            params.parameter_count(),
            worst.0,
            worst.1
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_2_forward_and_graph_oracles() {
    let assets = reduced_assets();
    let scene = scene(&assets, 5, 2);
    let mut worst_forward: f64 = 0.0;
    for (mode, q) in [(EdgeTypeMode::Shared, 2), (EdgeTypeMode::SplitInter, 3)] {
        let net = NetworkConfig {
            input_dim: assets.feature_dim(),
            hidden: 8,
            cheb_order: q,
            edge_type_mode: mode,
            ..NetworkConfig::default()
        };
        let params = random_params(net, 21);
        let prep = prepare_scene(&scene, &assets, InterEdgeConfig::default(), &net).unwrap();
        let out = forward(&prep.ops, &prep.features.features, &params).unwrap();
        let (depth, joints, mesh) = dense_forward(
            &prep.graph,
            &to_mat(&prep.features.features.joint_features),
            &to_mat(&prep.features.features.mesh_features),
            &params,
        );
        let j = assets.template.joint_count();
        let v = assets.template.vertex_count();
        for (k, h) in out.humans.iter().enumerate() {
            worst_forward = worst_forward.max((h.depth_measure - depth[k]).abs());
            worst_forward = worst_forward.max(max_abs_diff(&to_mat(&h.joints), &joints[k * j..(k + 1) * j].to_vec()));
            worst_forward = worst_forward.max(max_abs_diff(&to_mat(&h.mesh), &mesh[k * v..(k + 1) * v].to_vec()));
        }
    }

    let full = Assets::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut edges = 0;
    for _ in 0..100 {
        let k = rng.random_range(1..=4);
        let poses = random_canonical_poses(&mut rng, k, full.template.joint_count());
        let config = InterEdgeConfig {
            epsilon: [0.0, 25.0, 80.0, 200.0][rng.random_range(0..4)],
            root_edges: rng.random_bool(0.7),
        };
        let graph = assemble_scene_graph(&full.template, &poses, config).unwrap();
        let expect = brute_force_inter(&poses, config.epsilon, config.root_edges, full.template.root_index);
        edges += expect.len();
        if graph_inter_set(&graph) != expect || graph.inter.len() != expect.len() {
            mismatches += 1;
        }
    }
    let ok = worst_forward < 1e-10 && mismatches == 0;
    report(
        "2",
        "forward and graph oracles",
        ok,
        format!("forward max |diff| {worst_forward:.2e}; graph mismatches {mismatches}/100 over {edges} oracle edges"),
    );
    assert!(ok);
}

struct RunResult {
    train: Aggregate,
    held_out: Aggregate,
    seconds: f64,
    first_epoch_loss: f64,
    last_epoch_loss: f64,
}

fn reference_run(inter: InterEdgeConfig, rel_depth_weight: f64) -> RunResult {
    let assets = Assets::bundled();
    let gen = GeneratorConfig::default();
    let train_set = generate_dataset(TRAIN_BASE, 20, &assets.template, &assets.bank, &gen).unwrap();
    let held = generate_dataset(HELD_OUT_BASE, 50, &assets.template, &assets.bank, &gen).unwrap();
    let mut cfg = TrainConfig {
        epochs: 200,
        hidden: 32,
        seed: RUN_SEED,
        epsilon: inter.epsilon,
        root_edges: inter.root_edges,
        ..TrainConfig::default()
    };
    cfg.weights.rel_depth = rel_depth_weight;
    let start = Instant::now();
    let out = train(&train_set, &cfg, &assets, &TrainOutputs::default()).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let infer = cfg.infer_config();
    let metrics = MetricConfig::default();
    let eval = |s: &[Scene]| evaluate(s, &out.state.params, &assets, &infer, &metrics).unwrap().aggregate;
    RunResult {
        train: eval(&train_set),
        held_out: eval(&held),
        seconds,
        first_epoch_loss: out.epoch_means[0],
        last_epoch_loss: *out.epoch_means.last().unwrap(),
    }
}

fn runs() -> &'static BTreeMap<&'static str, OnceLock<RunResult>> {
    static RUNS: OnceLock<BTreeMap<&'static str, OnceLock<RunResult>>> = OnceLock::new();
    RUNS.get_or_init(|| {
        ["eps200", "eps0", "eps0plus", "no_rel_depth"]
            .into_iter()
            .map(|k| (k, OnceLock::new()))
            .collect()
    })
}

fn run(key: &'static str) -> &'static RunResult {
    runs()[key].get_or_init(|| match key {
        "eps200" => reference_run(InterEdgeConfig::default(), LossWeights::default().rel_depth),
        "eps0" => reference_run(
            InterEdgeConfig {
                epsilon: 0.0,
                root_edges: true,
            },
            LossWeights::default().rel_depth,
        ),
        "eps0plus" => reference_run(InterEdgeConfig::disconnected(), LossWeights::default().rel_depth),
        "no_rel_depth" => reference_run(InterEdgeConfig::default(), 0.0),
        _ => unreachable!(),
    })
}

fn pct(a: &Aggregate) -> f64 {
    a.d_percent.unwrap_or(f64::NAN)
}

#[test]
fn criterion_3_overfit() {
    let r = run("eps200");
    let ok = r.train.mpvpe < 30.0 && pct(&r.train) > 0.95 && r.seconds < 1800.0;
    report(
        "3",
        "overfit capability",
        ok,
        format!(
            "train MPVPE {:.1} mm (< 30), D% {:.3} (> 0.95), MPJPE {:.1} mm, training {:.0} s",
            r.train.mpvpe,
            pct(&r.train),
            r.train.mpjpe,
            r.seconds
        ),
    );
    assert!(ok);
}

#[test]
fn overfit_loss_drops_tenfold() {
    let r = run("eps200");
    let ratio = r.first_epoch_loss / r.last_epoch_loss;
    let ok = ratio >= 10.0;
    emit(format!(
        "check overfit loss drop: {} (epoch 1 mean {:.4}, epoch 200 mean {:.4}, ratio {ratio:.1})",
        verdict(ok),
        r.first_epoch_loss,
        r.last_epoch_loss
    ));
    assert!(ok);
}

#[test]
fn criterion_4_generalization() {
    let r = run("eps200");
    let ok = pct(&r.held_out) > 0.85 && r.held_out.mpvpe < 60.0;
    report(
        "4",
        "generalization smoke test",
        ok,
        format!(
            "held-out MPVPE {:.1} mm (< 60), D% {:.3} (> 0.85), {} humans matched of {}",
            r.held_out.mpvpe,
            pct(&r.held_out),
            r.held_out.matched,
            r.held_out.gt_humans
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_5_ablation_direction() {
    let (a, b, c) = (pct(&run("eps0plus").held_out), pct(&run("eps0").held_out), pct(&run("eps200").held_out));
    let ok = a < b && b <= c;
    report(
        "5",
        "ablation direction",
        ok,
        format!("held-out D%: eps=0+ {a:.3}, eps=0 {b:.3}, eps=200 {c:.3}"),
    );
    assert!(ok);
}

#[test]
fn relative_depth_loss_direction() {
    let with = pct(&run("eps200").held_out);
    let without = pct(&run("no_rel_depth").held_out);
    let ok = with >= without && with != without;
    emit(format!(
        "check relative depth loss direction: {} (held-out D% {with:.3} with weight 20, {without:.3} without)",
        verdict(ok)
    ));
    assert!(ok);
}

fn gt_eval_humans(scene: &Scene, assets: &Assets) -> Vec<EvalHuman> {
    let (cam, _) = scene.intrinsics();
    let t = CanonicalTransform::for_image(scene.image_width, scene.image_height).unwrap();
    let measures = scene.depth_measures(200.0).unwrap();
    scene
        .humans
        .iter()
        .zip(measures)
        .map(|(h, d)| {
            let g = h.gt.as_ref().unwrap();
            let r = g.joints.row(assets.template.root_index);
            let p = project([r[0], r[1], r[2]], &cam).unwrap();
            EvalHuman {
                root_2d: [p[0] * t.scale + t.offset[0], p[1] * t.scale + t.offset[1]],
                joints: g.joints.clone(),
                mesh: g.mesh.clone(),
                depth_measure: d,
            }
        })
        .collect()
}

#[test]
fn criterion_6_loss_and_metric_identities() {
    let assets = Assets::bundled();
    let t = &assets.template;
    let scenes = generate_dataset(606, 100, t, &assets.bank, &GeneratorConfig::default()).unwrap();
    let mut worst_loss: f64 = 0.0;
    let mut worst_metric: f64 = 0.0;
    for s in &scenes {
        let gt = scene_ground_truth(s, t, 200.0).unwrap();
        let parts = compute_parts(
            gt.depth.as_ref().unwrap(),
            gt.joints.as_ref().unwrap(),
            gt.mesh.as_ref().unwrap(),
            &gt,
            &t.faces,
            &t.regressor,
        )
        .unwrap();
        worst_loss = worst_loss.max(parts.total(&LossWeights::default()).abs());
        let humans = gt_eval_humans(s, &assets);
        let e = evaluate_scene(s.seed, &humans, &humans, t.root_index, &MetricConfig::default()).unwrap();
        for err in [e.mpjpe, e.pa_mpjpe, e.mpvpe, 1.0 - e.pck_all] {
            worst_metric = worst_metric.max(err.abs());
        }
        worst_metric = worst_metric.max((e.depth_pairs - e.depth_pairs_correct) as f64);
        worst_metric = worst_metric.max((s.human_count() - e.matched) as f64);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut pa_violations = 0;
    for _ in 0..1000 {
        let n = rng.random_range(3..30);
        let mut rand_pts = |s: f64| DenseMatrix::from_vec(n, 3, (0..3 * n).map(|_| rng.random_range(-s..s)).collect()).unwrap();
        let p = rand_pts(500.0);
        let g = rand_pts(500.0);
        let root = |m: &DenseMatrix| m.row(0).to_vec();
        let plain = mpjpe(&root_align(&p, &root(&p)), &root_align(&g, &root(&g))).unwrap();
        if pa_mpjpe(&p, &g).unwrap() > plain + 1e-9 {
            pa_violations += 1;
        }
    }

    let mut worst_invariance: f64 = 0.0;
    for s in scenes.iter().take(20) {
        let gt = scene_ground_truth(s, t, 200.0).unwrap();
        let d = gt.depth.clone().unwrap();
        let pred: Vec<f64> = d.iter().map(|x| x * rng.random_range(0.5..1.5)).collect();
        let shift = rng.random_range(-3.0..3.0);
        let shifted: Vec<f64> = pred.iter().map(|x| x + shift).collect();
        let base = loss_rel_depth(&pred, &d).unwrap();
        worst_invariance = worst_invariance.max((loss_rel_depth(&shifted, &d).unwrap() - base).abs());

        let v = t.vertex_count();
        let mesh = gt.mesh.clone().unwrap().slice_rows(0, v);
        let jitter = DenseMatrix::from_vec(v, 3, (0..3 * v).map(|_| rng.random_range(-0.02..0.02)).collect()).unwrap();
        let noisy = mesh.add(&jitter).unwrap();
        let n0 = loss_normal(&noisy, &mesh, &t.faces).unwrap();
        let scale = rng.random_range(0.2..5.0);
        let n1 = loss_normal(&noisy.scale(scale), &mesh, &t.faces).unwrap();
        worst_invariance = worst_invariance.max((n1 - n0).abs());
    }

    let ok = worst_loss < 1e-9 && worst_metric < 1e-9 && pa_violations == 0 && worst_invariance < 1e-9;
    report(
        "6",
        "loss and metric identities",
        ok,
        format!(
            "GT total loss max {worst_loss:.1e}, metric gap max {worst_metric:.1e}, PA > plain in {pa_violations}/1000, invariance gap {worst_invariance:.1e}"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_7_camera_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_depth: f64 = 0.0;
    let mut worst_proj: f64 = 0.0;
    for _ in 0..100_000 {
        let d = rng.random_range(100.0..100_000.0);
        let s = rng.random_range(100.0..8000.0);
        let f = rng.random_range(100.0..8000.0);
        let a = rng.random_range(1.0..1000.0);
        let back = measure_to_depth(depth_to_measure(d, s, f, a), s, f, a);
        worst_depth = worst_depth.max(((back - d) / d).abs());

        let cam = CameraIntrinsics::new(f, rng.random_range(0.0..4000.0), rng.random_range(0.0..4000.0)).unwrap();
        let z = rng.random_range(200.0..50_000.0);
        let p = [rng.random_range(-z..z), rng.random_range(-z..z), z];
        let uv = project(p, &cam).unwrap();
        let q = backproject_root(uv[0], uv[1], z, &cam).unwrap();
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let err = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt() / norm;
        worst_proj = worst_proj.max(err);
    }
    let worked = depth_to_measure(3000.0, 1000.0, 1500.0, 200.0);
    let ok = worst_depth < 1e-9 && worst_proj < 1e-9 && worked == 0.01;
    report(
        "7",
        "camera and depth arithmetic",
        ok,
        format!("depth round trip {worst_depth:.1e}, projection round trip {worst_proj:.1e}, worked example {worked}"),
    );
    assert!(ok);
}

#[test]
fn criterion_8_determinism() {
    let assets = Assets::bundled();
    let scenes = generate_dataset(808, 4, &assets.template, &assets.bank, &GeneratorConfig::default()).unwrap();
    let held = generate_dataset(809, 4, &assets.template, &assets.bank, &GeneratorConfig::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        hidden: 8,
        seed: 8,
        ..TrainConfig::default()
    };
    let run_once = || {
        let dir = tempfile::tempdir().unwrap();
        let out = TrainOutputs {
            dir: Some(dir.path().to_path_buf()),
        };
        let o = train(&scenes, &cfg, &assets, &out).unwrap();
        let ck = std::fs::read(dir.path().join("checkpoint_last.json")).unwrap();
        let csv = std::fs::read(dir.path().join("losses.csv")).unwrap();
        let report = evaluate(&held, &o.state.params, &assets, &cfg.infer_config(), &MetricConfig::default()).unwrap();
        (ck, csv, serde_json::to_vec(&report).unwrap())
    };
    let a = run_once();
    let b = run_once();
    let ok = a == b;
    report(
        "8",
        "determinism",
        ok,
        format!("checkpoint {} bytes, loss log {} bytes, report {} bytes", a.0.len(), a.1.len(), a.2.len()),
    );
    assert!(ok);
}

#[test]
fn feature_assembly_is_pure() {
    let assets = Assets::bundled();
    let s = &generate_dataset(1, 1, &assets.template, &assets.bank, &GeneratorConfig::default()).unwrap()[0];
    let a = assemble_features(&s.poses(), s.image_width, s.image_height, &assets.template, &assets.bank).unwrap();
    let b = assemble_features(&s.poses(), s.image_width, s.image_height, &assets.template, &assets.bank).unwrap();
    assert_eq!(a.features, b.features);
}
