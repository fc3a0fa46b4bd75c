//! Command-line front end: data generation, graph inspection, training,
//! inference, evaluation and mesh export.

pub mod config;
pub mod export;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::warn;
use mug_core::features::{assemble_features, FeatureMatrix};
use mug_core::graph_builder::{assemble_scene_graph, InterEdge, InterKind};
use mug_core::metrics::EvalReport;
use mug_core::network::Checkpoint;
use mug_core::synthetic_data::{generate_dataset, read_dataset, write_dataset, Scene};
use mug_core::trainer::{
    config_echo, evaluate, infer, train_from, Assets, InferConfig, Reconstruction, TrainOutputs, TrainState,
};
use mug_core::{MugError, Result};
use serde::{Deserialize, Serialize};

use config::{Overrides, RunConfig, RunEcho};
use export::{mesh_objects, write_mesh, MeshFormat};

pub const EXIT_OK: i32 = 0;
/// Unexpected failure outside the classes below, such as an unwritable path.
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "mug", version, about = "Multi-human mesh reconstruction from 2D poses")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. They override `--config` keys.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML file with run settings
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Inter-human proximity threshold, canonical pixels
    #[arg(long, global = true, value_name = "PX")]
    pub epsilon: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    pub hidden: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    pub cheb_order: Option<usize>,
    /// Template JSON; the bundled body when omitted
    #[arg(long, global = true, value_name = "PATH")]
    pub template: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset
    GenData {
        #[arg(long, default_value_t = 10)]
        scenes: usize,
        /// Humans per scene; the configured range when omitted
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Print the heterogeneous graph of each scene as JSON
    DumpGraph {
        /// Dataset directory or scene file
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Train on a dataset
    Train {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from DIR/checkpoint_last.json
        #[arg(long)]
        resume: bool,
    },
    /// Reconstruct camera-space meshes for each scene
    Infer {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also produce the full-resolution mesh
        #[arg(long)]
        upsample: bool,
        /// Also write each scene's input feature rows
        #[arg(long)]
        dump_features: bool,
    },
    /// Score a checkpoint on scenes with ground truth
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Report JSON
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Write a reconstruction's meshes as OBJ or JSON
    ExportMesh {
        /// Reconstruction file written by `infer`
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = MeshFormat::Obj)]
        format: MeshFormat,
        /// Export the upsampled mesh
        #[arg(long)]
        full: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::DumpGraph { .. } => "dump-graph",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Eval { .. } => "eval",
            Command::ExportMesh { .. } => "export-mesh",
        }
    }
}

/// Edge counts and inter-human edges of one scene graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub seed: u64,
    pub humans: usize,
    pub joint_nodes: usize,
    pub mesh_nodes: usize,
    pub skeleton_edges: usize,
    pub mesh_edges: usize,
    pub joint_mesh_edges: usize,
    pub root_edges: usize,
    pub proximity_edges: usize,
    pub inter: Vec<InterEdge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub run: RunEcho,
    pub graphs: Vec<GraphSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconFile {
    pub run: RunEcho,
    pub reconstruction: Reconstruction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureFile {
    pub run: RunEcho,
    pub seed: u64,
    pub features: FeatureMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub run: RunEcho,
    pub checkpoint: PathBuf,
    pub report: EvalReport,
}

pub fn exit_code(e: &MugError) -> i32 {
    match e {
        MugError::Config(_) => EXIT_CONFIG,
        MugError::Data(_) | MugError::Template(_) | MugError::Graph(_) | MugError::Json(_) => EXIT_DATA,
        MugError::Numeric(_) | MugError::Shape { .. } => EXIT_NUMERIC,
        MugError::Io(_) => EXIT_IO,
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Failures print one diagnostic line to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("mug: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    config::init_threads()?;
    let c = &cli.common;
    let mut overrides = Overrides {
        seed: c.seed,
        epsilon: c.epsilon,
        hidden: c.hidden,
        cheb_order: c.cheb_order,
        template: c.template.clone(),
        epochs: None,
    };
    if let Command::Train { epochs, .. } = &cli.command {
        overrides.epochs = *epochs;
    }
    let mut cfg = RunConfig::resolve(c.config.as_deref(), &overrides)?;
    if let Command::GenData { k: Some(k), .. } = &cli.command {
        cfg.generator.humans_min = *k;
        cfg.generator.humans_max = *k;
        cfg.validate()?;
    }
    let echo = RunEcho::new(cli.command.name(), &cfg);
    match &cli.command {
        Command::GenData { scenes, out, .. } => gen_data(&cfg, &echo, *scenes, out),
        Command::DumpGraph { data, out } => dump_graph(&cfg, &echo, data, out.as_deref()),
        Command::Train { data, out, resume, .. } => train(&cfg, &echo, data, out, *resume),
        Command::Infer {
            checkpoint,
            data,
            out,
            upsample,
            dump_features,
        } => run_infer(&cfg, &echo, checkpoint, data, out, *upsample, *dump_features),
        Command::Eval { checkpoint, data, out } => run_eval(&cfg, &echo, checkpoint, data, out.as_deref()),
        Command::ExportMesh {
            input,
            out,
            format,
            full,
        } => export_mesh(&cfg, &echo, input, out, *format, *full),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    let scenes = read_dataset(path)?;
    if scenes.is_empty() {
        return Err(MugError::Data(format!("{} holds no scenes", path.display())));
    }
    Ok(scenes)
}

fn load_checkpoint(path: &Path, cfg: &RunConfig, assets: &Assets) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(MugError::Data(format!("checkpoint {} not found", path.display())));
    }
    Checkpoint::load(path, &config_echo(&cfg.train, assets))
}

fn gen_data(cfg: &RunConfig, echo: &RunEcho, count: usize, out: &Path) -> Result<()> {
    if count == 0 {
        return Err(MugError::Config("--scenes must be at least 1".into()));
    }
    let assets = cfg.assets()?;
    let scenes = generate_dataset(cfg.seed, count, &assets.template, &assets.bank, &cfg.generator)?;
    write_dataset(out, &scenes, cfg.seed, &cfg.generator, &assets.template_hash)?;
    write_json(&out.join("run.json"), echo)?;
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}

pub fn graph_summary(scene: &Scene, cfg: &RunConfig, assets: &Assets) -> Result<GraphSummary> {
    scene.validate(&assets.template)?;
    let f = assemble_features(
        &scene.poses(),
        scene.image_width,
        scene.image_height,
        &assets.template,
        &assets.bank,
    )?;
    let g = assemble_scene_graph(&assets.template, &f.canonical, cfg.train.inter_edges())?;
    Ok(GraphSummary {
        seed: scene.seed,
        humans: g.humans,
        joint_nodes: g.joint_node_count(),
        mesh_nodes: g.mesh_node_count(),
        skeleton_edges: g.jj.len(),
        mesh_edges: g.mm.len(),
        joint_mesh_edges: g.jm.len(),
        root_edges: g.inter_of(InterKind::Root).count(),
        proximity_edges: g.inter_of(InterKind::Proximity).count(),
        inter: g.inter.clone(),
    })
}

fn dump_graph(cfg: &RunConfig, echo: &RunEcho, data: &Path, out: Option<&Path>) -> Result<()> {
    let assets = cfg.assets()?;
    let graphs = load_scenes(data)?
        .iter()
        .map(|s| graph_summary(s, cfg, &assets))
        .collect::<Result<Vec<_>>>()?;
    let dump = GraphDump {
        run: echo.clone(),
        graphs,
    };
    match out {
        Some(p) => write_json(p, &dump),
        None => {
            println!("{}", serde_json::to_string_pretty(&dump)?);
            Ok(())
        }
    }
}

fn train(cfg: &RunConfig, echo: &RunEcho, data: &Path, out: &Path, resume: bool) -> Result<()> {
    let scenes = load_scenes(data)?;
    let assets = cfg.assets()?;
    let last = out.join("checkpoint_last.json");
    let state = if resume {
        if !last.is_file() {
            return Err(MugError::Data(format!("nothing to resume: {} not found", last.display())));
        }
        TrainState::from_checkpoint(load_checkpoint(&last, cfg, &assets)?, &cfg.train)
    } else {
        TrainState::fresh(&cfg.train, &assets)?
    };
    std::fs::create_dir_all(out)?;
    write_json(&out.join("run.json"), echo)?;
    let outputs = TrainOutputs {
        dir: Some(out.to_path_buf()),
    };
    let outcome = train_from(&scenes, &cfg.train, &assets, &outputs, state)?;
    match outcome.epoch_means.last() {
        Some(m) => println!(
            "trained to epoch {} ({} steps), last epoch mean loss {m:.6}",
            outcome.state.epoch, outcome.state.step
        ),
        None => println!("already trained to epoch {}", outcome.state.epoch),
    }
    Ok(())
}

fn run_infer(
    cfg: &RunConfig,
    echo: &RunEcho,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    upsample: bool,
    dump_features: bool,
) -> Result<()> {
    let assets = cfg.assets()?;
    let ck = load_checkpoint(checkpoint, cfg, &assets)?;
    let scenes = load_scenes(data)?;
    let icfg = InferConfig {
        upsample,
        ..cfg.train.infer_config()
    };
    std::fs::create_dir_all(out)?;
    for (i, scene) in scenes.iter().enumerate() {
        let reconstruction = infer(scene, &ck.params, &assets, &icfg)?;
        if reconstruction.intrinsics_fallback {
            warn!("scene {}: no intrinsics, used the default camera", scene.seed);
        }
        let file = ReconFile {
            run: echo.clone(),
            reconstruction,
        };
        write_json(&out.join(format!("recon_{i:04}.json")), &file)?;
        if dump_features {
            let f = assemble_features(
                &scene.poses(),
                scene.image_width,
                scene.image_height,
                &assets.template,
                &assets.bank,
            )?;
            let dump = FeatureFile {
                run: echo.clone(),
                seed: scene.seed,
                features: f.features,
            };
            write_json(&out.join(format!("features_{i:04}.json")), &dump)?;
        }
    }
    println!("wrote {} reconstructions to {}", scenes.len(), out.display());
    Ok(())
}

fn run_eval(cfg: &RunConfig, echo: &RunEcho, checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let assets = cfg.assets()?;
    let ck = load_checkpoint(checkpoint, cfg, &assets)?;
    let scenes = load_scenes(data)?;
    let report = evaluate(&scenes, &ck.params, &assets, &cfg.train.infer_config(), &cfg.metrics)?;
    print!("{}", report.table());
    if let Some(p) = out {
        write_json(
            p,
            &EvalFile {
                run: echo.clone(),
                checkpoint: checkpoint.to_path_buf(),
                report,
            },
        )?;
    }
    Ok(())
}

fn export_mesh(cfg: &RunConfig, echo: &RunEcho, input: &Path, out: &Path, format: MeshFormat, full: bool) -> Result<()> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| MugError::Data(format!("cannot read {}: {e}", input.display())))?;
    let file: ReconFile = serde_json::from_str(&text)
        .map_err(|e| MugError::Data(format!("malformed reconstruction {}: {e}", input.display())))?;
    let assets = cfg.assets()?;
    let mut run = echo.clone();
    // The mesh came from the run recorded in the reconstruction.
    run.seed = file.run.seed;
    run.config = file.run.config.clone();
    let mesh = mesh_objects(&file.reconstruction, &assets.template, full, &run)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_mesh(&mesh, out, format)?;
    println!("wrote {} humans to {}", mesh.objects.len(), out.display());
    Ok(())
}
