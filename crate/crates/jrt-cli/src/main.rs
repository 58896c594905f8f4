//! Command-line surface: synthetic scene generation, training,
//! evaluation, gradient checking, and attention export.

use clap::{Args, Parser, Subcommand};
use jrt::checkpoint::{peek_precision, Checkpoint};
use jrt::config::TrainConfig;
use jrt::model::model_gradcheck;
use jrt::scene::{synth_scene, write_scene_file, MotionKind};
use jrt::trainer::{attention_dump, evaluate, load_scene_set, train_dispatch};
use jrt::{Init, Model, ModelDims, Precision, Scalar};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "jrt", about = "Joint/relation transformer for multi-person motion prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic scene files.
    Synth(SynthArgs),
    /// Train a model from a config and a directory of scene files.
    Train(TrainArgs),
    /// Evaluate a checkpoint (and the zero-velocity baseline) on scenes.
    Eval(EvalArgs),
    /// Finite-difference check of all model gradients on the tiny config.
    Gradcheck(GradcheckArgs),
    /// Export post-softmax attention matrices for one scene as JSON.
    DumpAttn(DumpAttnArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for scene JSON files.
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes to generate.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// static | constant-velocity | circular | two-person-approach
    #[arg(long, default_value = "constant-velocity")]
    kind: String,
    #[arg(long, default_value_t = 2)]
    persons: usize,
    #[arg(long, default_value_t = 13)]
    joints: usize,
    /// Total frames per scene (history + future).
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = 15.0)]
    fps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Scene file or directory of scene files.
    #[arg(long)]
    data: PathBuf,
    /// Output directory (checkpoints, train_log.jsonl).
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config precision (f32 | f64).
    #[arg(long)]
    precision: Option<String>,
    /// Override the config epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Initialize parameters from an existing checkpoint (fine-tune).
    #[arg(long)]
    init_from: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    ckpt: PathBuf,
    /// Scene file or directory of scene files.
    #[arg(long)]
    scenes: PathBuf,
    /// Output directory (report.json, report.csv).
    #[arg(long)]
    out: PathBuf,
    /// Optional config overriding the checkpoint snapshot (report lists,
    /// unit scale).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write a per-scene CSV.
    #[arg(long, default_value_t = false)]
    csv: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Max relative error per block.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct DumpAttnArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Single scene JSON file.
    #[arg(long)]
    scene: PathBuf,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::DumpAttn(args) => cmd_dump_attn(args),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode, String> {
    let kind = MotionKind::parse(&args.kind)
        .ok_or_else(|| format!("unknown motion kind {:?}", args.kind))?;
    std::fs::create_dir_all(&args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    for i in 0..args.count {
        let scene = synth_scene(
            args.seed.wrapping_add(i as u64),
            args.persons,
            args.joints,
            args.frames,
            args.fps,
            kind,
        );
        let path = args.out.join(format!("scene_{i:04}.json"));
        write_scene_file(&scene, &path).map_err(|e| e.to_string())?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, String> {
    let mut config = TrainConfig::read_file(&args.config).map_err(|e| e.to_string())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(precision) = args.precision {
        config.precision = precision;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    config.validate().map_err(|e| e.to_string())?;
    let scenes = load_scene_set(&args.data).map_err(|e| e.to_string())?;
    let scene_list: Vec<_> = scenes.into_iter().map(|(_, s)| s).collect();
    let outcome = train_dispatch(&config, &scene_list, &args.out, args.init_from.as_deref())
        .map_err(|e| e.to_string())?;
    println!(
        "trained {} steps; checkpoint {}; log {}",
        outcome.steps,
        outcome.final_checkpoint.display(),
        outcome.log_path.display()
    );
    if let (Some(first), Some(last)) = (outcome.first_total, outcome.final_total) {
        println!("loss: {first} -> {last}");
    }
    Ok(ExitCode::SUCCESS)
}

/// A checkpointed model at whichever precision the file stores.
enum AnyModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

fn load_model(ckpt_path: &Path) -> Result<(TrainConfig, AnyModel), String> {
    fn typed<T: Scalar>(ckpt_path: &Path) -> Result<(TrainConfig, Model<T>), String> {
        let ckpt = Checkpoint::<T>::load(ckpt_path).map_err(|e| e.to_string())?;
        let config = TrainConfig::from_json(&ckpt.config_json)
            .map_err(|e| format!("checkpoint config snapshot: {e}"))?;
        let joints = ckpt
            .blocks
            .iter()
            .find(|(n, _)| n == "pos.joint")
            .map(|(_, t)| t.shape()[0])
            .ok_or("checkpoint missing pos.joint block")?;
        let dims: ModelDims = config.dims_with_joints(joints);
        let mut model =
            Model::<T>::new(dims, config.seed, Init::Training).map_err(|e| e.to_string())?;
        ckpt.load_into(&mut model.params).map_err(|e| e.to_string())?;
        Ok((config, model))
    }
    match peek_precision(ckpt_path).map_err(|e| e.to_string())? {
        Precision::F32 => typed::<f32>(ckpt_path).map(|(c, m)| (c, AnyModel::F32(m))),
        Precision::F64 => typed::<f64>(ckpt_path).map(|(c, m)| (c, AnyModel::F64(m))),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode, String> {
    let (mut config, model) = load_model(&args.ckpt)?;
    if let Some(path) = &args.config {
        config = TrainConfig::read_file(path).map_err(|e| e.to_string())?;
    }
    let scenes = load_scene_set(&args.scenes).map_err(|e| e.to_string())?;
    let report = match &model {
        AnyModel::F32(m) => evaluate(m, &config, &scenes),
        AnyModel::F64(m) => evaluate(m, &config, &scenes),
    }
    .map_err(|e| e.to_string())?;

    std::fs::create_dir_all(&args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    let json_path = args.out.join("report.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    std::fs::write(&json_path, &json).map_err(|e| format!("{}: {e}", json_path.display()))?;
    println!("wrote {}", json_path.display());
    if args.csv {
        let csv_path = args.out.join("report.csv");
        std::fs::write(&csv_path, report.to_csv())
            .map_err(|e| format!("{}: {e}", csv_path.display()))?;
        println!("wrote {}", csv_path.display());
    }
    println!(
        "model VIM avg {:.4} | zero-velocity VIM avg {:.4} (over {} scenes)",
        report.mean_model.vim_avg,
        report.mean_zero_velocity.vim_avg,
        report.scenes.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode, String> {
    let dims = ModelDims::tiny();
    println!(
        "gradcheck: tiny config (n=2, j={}, t_h={}, t_f={}, d={}, heads={}, layers={}), f64, h={}, tol={}",
        dims.joints, dims.t_h, dims.t_f, dims.d, dims.d_h, dims.layers, args.h, args.tol
    );
    let report =
        model_gradcheck(&dims, 2, args.seed, args.h, args.tol).map_err(|e| e.to_string())?;
    for block in &report.blocks {
        let status = if block.max_rel_err <= args.tol { "ok" } else { "FAIL" };
        println!(
            "  {status:4} {:32} len {:5}  max rel err {:.3e}",
            block.name, block.len, block.max_rel_err
        );
    }
    if report.passed() {
        println!("gradcheck passed: {} blocks within tol {}", report.blocks.len(), args.tol);
        Ok(ExitCode::SUCCESS)
    } else {
        let worst = report.worst().expect("non-empty report");
        eprintln!(
            "gradcheck FAILED: block {} rel err {:.3e} > tol {}",
            worst.name, worst.max_rel_err, args.tol
        );
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_dump_attn(args: DumpAttnArgs) -> Result<ExitCode, String> {
    let (config, model) = load_model(&args.ckpt)?;
    let scene = jrt::scene::read_scene_file(&args.scene).map_err(|e| e.to_string())?;
    let value = match &model {
        AnyModel::F32(m) => attention_dump(m, &config, &scene),
        AnyModel::F64(m) => attention_dump(m, &config, &scene),
    }
    .map_err(|e| e.to_string())?;
    let text = serde_json::to_string_pretty(&value).map_err(|e| e.to_string())?;
    std::fs::write(&args.out, text).map_err(|e| format!("{}: {e}", args.out.display()))?;
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}
