//! Training loop, inference and evaluation.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body_template::{BodyTemplate, SyntheticBody, TemplateBank, BANK_SIZE};
use crate::camera_depth::{backproject_root, measure_to_depth, CameraIntrinsics, DEFAULT_ALPHA};
use crate::error::{MugError, Result};
use crate::features::{assemble_features, SceneFeatures};
use crate::graph_builder::{assemble_scene_graph, InterEdgeConfig, SceneGraph};
use crate::losses::{compute_parts, record_losses, GroundTruth, LossOperators, LossParts, LossWeights};
use crate::metrics::{evaluate_scene, EvalHuman, EvalReport, MetricConfig};
use crate::network::{forward, forward_on_tape, Checkpoint, ConfigEcho, GraphOperators, NetworkConfig, NetworkParams};
use crate::numerics::{AdamState, DenseMatrix, Tape, Var};
use crate::seed::rng_for;
use crate::synthetic_data::{flip_augment, perturb_scene, NoiseModel, Scene};

/// Edge-length weight used for training. The mean-normalized mesh term is
/// drowned out at the nominal weight of 20.
pub const TRAIN_EDGE_WEIGHT: f64 = 1.0;

const SHUFFLE_TAG: u64 = 0x5_u64;
const STEP_TAG: u64 = 0x7_u64;

/// Template plus its shape bank.
#[derive(Clone, Debug)]
pub struct Assets {
    pub template: BodyTemplate,
    pub bank: TemplateBank,
    pub template_hash: String,
}

impl Assets {
    pub fn new(template: BodyTemplate, bank: TemplateBank) -> Self {
        let template_hash = template.content_hash();
        Self {
            template,
            bank,
            template_hash,
        }
    }

    /// The bundled procedural body and its bank.
    pub fn bundled() -> Self {
        Self::synthetic(SyntheticBody::default())
    }

    pub fn synthetic(body: SyntheticBody) -> Self {
        let template = body.template();
        let bank = body.bank(&template);
        Self::new(template, bank)
    }

    /// A user template with a generic scaled bank.
    pub fn from_template(template: BodyTemplate, bank_seed: u64) -> Result<Self> {
        let bank = TemplateBank::scaled(&template, BANK_SIZE, bank_seed)?;
        Ok(Self::new(template, bank))
    }

    pub fn feature_dim(&self) -> usize {
        crate::features::feature_dim(self.template.joint_count(), self.bank.len())
    }
}

/// Training settings. Every key is optional in the TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Epochs completed before the learning rate drops. Unset means two
    /// thirds of `epochs`, rounded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_drop_epoch: Option<usize>,
    pub lr_drop_factor: f64,
    /// Proximity threshold, canonical pixels.
    pub epsilon: f64,
    pub root_edges: bool,
    pub alpha: f64,
    pub weights: LossWeights,
    pub noise: NoiseModel,
    pub flip_prob: f64,
    pub grad_clip: f64,
    pub shuffle: bool,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the last.
    pub checkpoint_every: usize,
    pub hidden: usize,
    pub cheb_order: usize,
    pub gn_groups: usize,
    pub edge_type_mode: crate::network::EdgeTypeMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let n = NetworkConfig::default();
        Self {
            epochs: 15,
            lr: 1e-3,
            lr_drop_epoch: None,
            lr_drop_factor: 10.0,
            epsilon: 200.0,
            root_edges: true,
            alpha: DEFAULT_ALPHA,
            weights: LossWeights {
                edge: TRAIN_EDGE_WEIGHT,
                ..LossWeights::default()
            },
            noise: NoiseModel::default(),
            flip_prob: 0.5,
            grad_clip: 5.0,
            shuffle: true,
            seed: 0,
            checkpoint_every: 1,
            hidden: n.hidden,
            cheb_order: n.cheb_order,
            gn_groups: n.gn_groups,
            edge_type_mode: n.edge_type_mode,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| MugError::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MugError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.epochs == 0 {
            p.push("epochs must be at least 1".to_string());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            p.push(format!("lr must be nonnegative, got {}", self.lr));
        }
        if !(self.lr_drop_factor > 0.0) {
            p.push("lr_drop_factor must be positive".to_string());
        }
        if !(self.epsilon >= 0.0) {
            p.push("epsilon must be nonnegative".to_string());
        }
        if !(self.alpha > 0.0) {
            p.push("alpha must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            p.push("flip_prob must lie in [0, 1]".to_string());
        }
        if !(self.grad_clip > 0.0) {
            p.push("grad_clip must be positive".to_string());
        }
        for r in [self.weights.validate(), self.noise.validate(), self.network(71).validate()] {
            if let Err(e) = r {
                p.push(e.to_string());
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(MugError::Config(p.join("; ")))
        }
    }

    pub fn network(&self, input_dim: usize) -> NetworkConfig {
        NetworkConfig {
            input_dim,
            hidden: self.hidden,
            cheb_order: self.cheb_order,
            gn_groups: self.gn_groups,
            edge_type_mode: self.edge_type_mode,
        }
    }

    pub fn inter_edges(&self) -> InterEdgeConfig {
        InterEdgeConfig {
            epsilon: self.epsilon,
            root_edges: self.root_edges,
        }
    }

    pub fn drop_epoch(&self) -> usize {
        self.lr_drop_epoch
            .unwrap_or_else(|| (2 * self.epochs + 1) / 3)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.drop_epoch() {
            self.lr / self.lr_drop_factor
        } else {
            self.lr
        }
    }

    pub fn infer_config(&self) -> InferConfig {
        InferConfig {
            inter_edges: self.inter_edges(),
            alpha: self.alpha,
            upsample: false,
        }
    }
}

/// Graph, features and operators of one scene.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    pub features: SceneFeatures,
    pub graph: SceneGraph,
    pub ops: GraphOperators,
}

pub fn prepare_scene(
    scene: &Scene,
    assets: &Assets,
    inter: InterEdgeConfig,
    net: &NetworkConfig,
) -> Result<PreparedScene> {
    scene.validate(&assets.template)?;
    let poses = scene.poses();
    let features = assemble_features(&poses, scene.image_width, scene.image_height, &assets.template, &assets.bank)?;
    let graph = assemble_scene_graph(&assets.template, &features.canonical, inter)?;
    let ops = GraphOperators::new(&graph, net.edge_type_mode)?;
    Ok(PreparedScene { features, graph, ops })
}

/// Root-relative targets in meters, or `None` without ground truth.
pub fn scene_ground_truth(scene: &Scene, template: &BodyTemplate, alpha: f64) -> Option<GroundTruth> {
    let depth = scene.depth_measures(alpha)?;
    let mut meshes = Vec::new();
    let mut joints = Vec::new();
    for h in &scene.humans {
        let (m, j) = h.gt.as_ref()?.root_relative(template.root_index);
        meshes.push(m.scale(1e-3));
        joints.push(j.scale(1e-3));
    }
    let mr: Vec<&DenseMatrix> = meshes.iter().collect();
    let jr: Vec<&DenseMatrix> = joints.iter().collect();
    Some(GroundTruth {
        mesh: Some(DenseMatrix::vstack(&mr).ok()?),
        joints: Some(DenseMatrix::vstack(&jr).ok()?),
        depth: Some(depth),
    })
}

/// Loss of the current parameters on one (already augmented) scene, with
/// gradients.
pub fn loss_and_gradients(
    scene: &Scene,
    params: &NetworkParams,
    assets: &Assets,
    cfg: &TrainConfig,
) -> Result<(LossParts, f64, Vec<DenseMatrix>)> {
    let prep = prepare_scene(scene, assets, cfg.inter_edges(), &params.config)?;
    let gt = scene_ground_truth(scene, &assets.template, cfg.alpha)
        .ok_or_else(|| MugError::Data(format!("scene {} has no ground truth", scene.seed)))?;
    let lops = LossOperators::new(&assets.template.regressor, &assets.template.faces, scene.human_count(), &gt)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors.iter().map(|t| tape.param(t.clone())).collect();
    let out = forward_on_tape(&mut tape, &prep.ops, &prep.features.features, params, &vars)?;
    let (total, parts) = record_losses(&mut tape, out, &gt, &lops, &cfg.weights)?;
    let total = total.expect("ground truth present");
    let value = tape.value(total).item();
    let parts = parts.values(&tape);
    if !value.is_finite() {
        return Err(MugError::Numeric(format!("non-finite loss on scene {}", scene.seed)));
    }
    let mut grads = tape.backward(total)?;
    let g = vars.iter().map(|&v| grads.take(v)).collect();
    Ok((parts, value, g))
}

fn clip(grads: &mut [DenseMatrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(DenseMatrix::squared_norm).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g = g.scale(s);
        }
    }
    norm
}

/// Scene as seen at a given step: optional flip, then 2D corruption.
pub fn augment(scene: &Scene, assets: &Assets, cfg: &TrainConfig, epoch: usize, step: u64) -> Result<Scene> {
    let mut rng = rng_for(cfg.seed, &[STEP_TAG, epoch as u64, step]);
    let flipped = if cfg.flip_prob > 0.0 && rng.random_bool(cfg.flip_prob) {
        flip_augment(scene, &assets.template)?
    } else {
        scene.clone()
    };
    Ok(perturb_scene(&flipped, &cfg.noise, &mut rng))
}

pub fn epoch_order(cfg: &TrainConfig, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if cfg.shuffle {
        order.shuffle(&mut rng_for(cfg.seed, &[SHUFFLE_TAG, epoch as u64]));
    }
    order
}

/// Where training writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    /// Directory for `losses.csv` and checkpoints; nothing is written if unset.
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: NetworkParams,
    pub optimizer: AdamState,
    /// Epochs completed.
    pub epoch: usize,
    pub step: u64,
}

impl TrainState {
    pub fn fresh(cfg: &TrainConfig, assets: &Assets) -> Result<Self> {
        let params = NetworkParams::init(cfg.network(assets.feature_dim()), cfg.seed)?;
        let optimizer = AdamState::new(&params.tensors, cfg.lr);
        Ok(Self {
            params,
            optimizer,
            epoch: 0,
            step: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint, cfg: &TrainConfig) -> Self {
        let optimizer = ck
            .optimizer
            .unwrap_or_else(|| AdamState::new(&ck.params.tensors, cfg.lr));
        Self {
            params: ck.params,
            optimizer,
            epoch: ck.epoch,
            step: ck.step,
        }
    }

    pub fn checkpoint(&self, template_hash: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(self.params.clone(), template_hash);
        ck.optimizer = Some(self.optimizer.clone());
        ck.epoch = self.epoch;
        ck.step = self.step;
        ck
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Loss parts of every step run in this call.
    pub steps: Vec<LossParts>,
    /// Mean total loss of every epoch run in this call.
    pub epoch_means: Vec<f64>,
}

pub fn config_echo(cfg: &TrainConfig, assets: &Assets) -> ConfigEcho {
    ConfigEcho::new(&cfg.network(assets.feature_dim()), &assets.template_hash)
}

/// Trains from scratch.
pub fn train(scenes: &[Scene], cfg: &TrainConfig, assets: &Assets, out: &TrainOutputs) -> Result<TrainOutcome> {
    cfg.validate()?;
    let state = TrainState::fresh(cfg, assets)?;
    train_from(scenes, cfg, assets, out, state)
}

/// Continues training from `state` until `cfg.epochs` epochs are complete.
pub fn train_from(
    scenes: &[Scene],
    cfg: &TrainConfig,
    assets: &Assets,
    out: &TrainOutputs,
    mut state: TrainState,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(MugError::Data("training needs at least one scene".into()));
    }
    state.params.check_layout()?;
    let mut csv = match &out.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("losses.csv");
            let fresh = state.step == 0 || !path.exists();
            let mut f = OpenOptions::new()
                .create(true)
                .write(true)
                .append(!fresh)
                .truncate(fresh)
                .open(&path)?;
            if fresh {
                writeln!(f, "{}", LossParts::CSV_HEADER)?;
            }
            Some(f)
        }
        None => None,
    };
    let mut steps = Vec::new();
    let mut epoch_means = Vec::new();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        state.optimizer.lr = cfg.lr_at(epoch);
        let mut sum = 0.0;
        for (i, &idx) in epoch_order(cfg, epoch, scenes.len()).iter().enumerate() {
            let scene = augment(&scenes[idx], assets, cfg, epoch, i as u64)?;
            let result = loss_and_gradients(&scene, &state.params, assets, cfg);
            let (parts, total, mut grads) = match result {
                Ok(r) => r,
                Err(e @ MugError::Numeric(_)) => {
                    if let Some(dir) = &out.dir {
                        state.checkpoint(&assets.template_hash).save(&dir.join("last_good.json"))?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            clip(&mut grads, cfg.grad_clip);
            state.optimizer.apply(&mut state.params.tensors, &grads)?;
            state.step += 1;
            if let Some(f) = csv.as_mut() {
                writeln!(f, "{}", parts.csv_row(state.step, &cfg.weights))?;
            }
            sum += total;
            steps.push(parts);
        }
        let mean = sum / scenes.len() as f64;
        epoch_means.push(mean);
        state.epoch += 1;
        info!("epoch {} mean loss {mean:.6} lr {}", state.epoch, state.optimizer.lr);
        if let Some(dir) = &out.dir {
            let last = state.epoch == cfg.epochs;
            if last || (cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0) {
                let ck = state.checkpoint(&assets.template_hash);
                ck.save(&dir.join(format!("checkpoint_epoch{:04}.json", state.epoch)))?;
                ck.save(&dir.join("checkpoint_last.json"))?;
            }
        }
    }
    Ok(TrainOutcome {
        state,
        steps,
        epoch_means,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    pub inter_edges: InterEdgeConfig,
    pub alpha: f64,
    /// Also produce the upsampled full-resolution mesh.
    pub upsample: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            inter_edges: InterEdgeConfig::default(),
            alpha: DEFAULT_ALPHA,
            upsample: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanReconstruction {
    pub depth_measure: f64,
    /// Root position in camera space, mm.
    pub root: [f64; 3],
    /// `V x 3` camera-space mesh, mm.
    pub mesh: DenseMatrix,
    /// `J x 3` camera-space joints from the joint head, mm.
    pub joints: DenseMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_full: Option<DenseMatrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    /// True when the scene had no intrinsics and the default was used.
    pub intrinsics_fallback: bool,
    pub inter_edges: usize,
    pub humans: Vec<HumanReconstruction>,
}

/// Full pipeline on one scene: features, graph, network, depth recovery
/// and root back-projection.
pub fn infer(scene: &Scene, params: &NetworkParams, assets: &Assets, cfg: &InferConfig) -> Result<Reconstruction> {
    let prep = prepare_scene(scene, assets, cfg.inter_edges, &params.config)?;
    let out = forward(&prep.ops, &prep.features.features, params)?;
    let (cam, fallback) = scene.intrinsics();
    let s = scene.long_edge();
    let root_index = assets.template.root_index;
    let mut humans = Vec::with_capacity(out.humans.len());
    for (k, h) in out.humans.into_iter().enumerate() {
        let mut depth = measure_to_depth(h.depth_measure, s, cam.focal, cfg.alpha);
        if !(depth > 1.0) {
            warn!("human {k}: predicted depth {depth:.1} mm clamped to 1 mm");
            depth = 1.0;
        }
        let imputed = scene.humans[k].pose.imputed()?;
        let r = imputed.row(root_index);
        let root = backproject_root(r[0], r[1], depth, &cam)?;
        let mesh = crate::camera_depth::absolute_mesh(&h.mesh.scale(1000.0), root);
        let joints = crate::camera_depth::absolute_mesh(&h.joints.scale(1000.0), root);
        let mesh_full = if cfg.upsample {
            Some(assets.template.upsample_mesh(&mesh)?)
        } else {
            None
        };
        humans.push(HumanReconstruction {
            depth_measure: h.depth_measure,
            root,
            mesh,
            joints,
            mesh_full,
        });
    }
    Ok(Reconstruction {
        seed: scene.seed,
        intrinsics: cam,
        intrinsics_fallback: fallback,
        inter_edges: prep.graph.inter.len(),
        humans,
    })
}

/// Scores reconstructions of scenes with ground truth. Scenes run in
/// parallel on the current rayon pool.
pub fn evaluate(
    scenes: &[Scene],
    params: &NetworkParams,
    assets: &Assets,
    cfg: &InferConfig,
    metrics: &MetricConfig,
) -> Result<EvalReport> {
    let t = &assets.template;
    let per_scene: Result<Vec<_>> = scenes
        .par_iter()
        .map(|scene| {
            let rec = infer(scene, params, assets, cfg)?;
            let (cam, _) = scene.intrinsics();
            let transform = crate::features::CanonicalTransform::for_image(scene.image_width, scene.image_height)?;
            let gt_measures = scene
                .depth_measures(cfg.alpha)
                .ok_or_else(|| MugError::Data(format!("scene {} has no ground truth", scene.seed)))?;
            let canon = |p: [f64; 2]| [p[0] * transform.scale + transform.offset[0], p[1] * transform.scale + transform.offset[1]];
            let mut preds = Vec::new();
            let mut truths = Vec::new();
            for (k, (h, r)) in scene.humans.iter().zip(&rec.humans).enumerate() {
                let imputed = h.pose.imputed()?;
                let pr = imputed.row(t.root_index);
                preds.push(EvalHuman {
                    root_2d: canon([pr[0], pr[1]]),
                    joints: t.regress_joints(&r.mesh)?,
                    mesh: r.mesh.clone(),
                    depth_measure: r.depth_measure,
                });
                let g = h.gt.as_ref().expect("checked by depth_measures");
                let gr = g.joints.row(t.root_index);
                let gp = crate::camera_depth::project([gr[0], gr[1], gr[2]], &cam)?;
                truths.push(EvalHuman {
                    root_2d: canon(gp),
                    joints: g.joints.clone(),
                    mesh: g.mesh.clone(),
                    depth_measure: gt_measures[k],
                });
            }
            evaluate_scene(scene.seed, &preds, &truths, t.root_index, metrics)
        })
        .collect();
    Ok(EvalReport::from_scenes(*metrics, per_scene?))
}

/// Value-only losses of the current parameters on clean scenes.
pub fn dataset_loss(scenes: &[Scene], params: &NetworkParams, assets: &Assets, cfg: &TrainConfig) -> Result<f64> {
    let mut sum = 0.0;
    for scene in scenes {
        let prep = prepare_scene(scene, assets, cfg.inter_edges(), &params.config)?;
        let out = forward(&prep.ops, &prep.features.features, params)?;
        let gt = scene_ground_truth(scene, &assets.template, cfg.alpha)
            .ok_or_else(|| MugError::Data(format!("scene {} has no ground truth", scene.seed)))?;
        let depth: Vec<f64> = out.humans.iter().map(|h| h.depth_measure).collect();
        let joints: Vec<&DenseMatrix> = out.humans.iter().map(|h| &h.joints).collect();
        let mesh: Vec<&DenseMatrix> = out.humans.iter().map(|h| &h.mesh).collect();
        let parts = compute_parts(
            &depth,
            &DenseMatrix::vstack(&joints)?,
            &DenseMatrix::vstack(&mesh)?,
            &gt,
            &assets.template.faces,
            &assets.template.regressor,
        )?;
        sum += parts.total(&cfg.weights);
    }
    Ok(sum / scenes.len().max(1) as f64)
}
