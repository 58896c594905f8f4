//! Training loop: batching, augmentation, AdamW updates, JSON-line loss
//! logging, periodic checkpoints, and evaluation over scene sets.

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, TrainConfig};
use crate::heads::{LossBreakdown, LossNodes, TermIds};
use crate::metrics::{self, EvalReport, MetricError, SceneReport};
use crate::model::{Model, ModelError, SceneInputs};
use crate::numerics::{Graph, Precision, Scalar, TensorId};
use crate::optim::{AdamW, AdamWHyper, OptimError};
use crate::params::{Init, ModelPar, ParamTree};
use crate::rng::Rng;
use crate::scene::{augment, Augment, SceneError, SceneSequence, SplitSpec};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("optimizer: {0}")]
    Optim(#[from] OptimError),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.display().to_string(), source }
}

/// One JSON line per optimizer step. The loss-breakdown keys come first,
/// then the step context.
#[derive(Debug, Clone, Serialize)]
pub struct LogLine {
    pub step: u64,
    pub joint_recon: f64,
    pub joint_pred: f64,
    pub rel_recon: f64,
    pub rel_pred: f64,
    pub deep_sup: f64,
    pub total: f64,
    pub epoch: usize,
    pub lr: f64,
}

/// Paths and summary scalars of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub steps: u64,
    pub first_total: Option<f64>,
    pub final_total: Option<f64>,
}

/// A finished run with the trained model still in memory.
pub struct TrainRun<T: Scalar> {
    pub model: Model<T>,
    pub optimizer: AdamW<T>,
    pub outcome: TrainOutcome,
}

/// Check every scene against the configured split and each other.
/// Fails before the first step on any inconsistency.
fn validate_dataset(config: &TrainConfig, scenes: &[SceneSequence]) -> Result<usize, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::Dataset("no scenes provided".into()));
    }
    let joints = scenes[0].joints();
    for (i, s) in scenes.iter().enumerate() {
        if s.joints() != joints {
            return Err(TrainError::Dataset(format!(
                "scene {i} has {} joints per person, scene 0 has {joints}",
                s.joints()
            )));
        }
        if s.frames() != config.t_h + config.t_f {
            return Err(TrainError::Dataset(format!(
                "scene {i} has {} frames, config needs t_h + t_f = {}",
                s.frames(),
                config.t_h + config.t_f
            )));
        }
        if s.persons() > config.n_max {
            return Err(TrainError::Dataset(format!(
                "scene {i} has {} persons, config allows n_max = {}",
                s.persons(),
                config.n_max
            )));
        }
    }
    Ok(joints)
}

/// Deterministic batch plan for one epoch: scenes grouped by person count
/// (shapes must match within a batch), shuffled within groups, chunked,
/// then chunk order shuffled.
fn batch_plan(scenes: &[SceneSequence], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut keys: Vec<usize> = scenes.iter().map(|s| s.persons()).collect();
    keys.sort_unstable();
    keys.dedup();
    let mut batches = Vec::new();
    for key in keys {
        let mut idx: Vec<usize> =
            (0..scenes.len()).filter(|&i| scenes[i].persons() == key).collect();
        rng.shuffle(&mut idx);
        for chunk in idx.chunks(batch_size) {
            batches.push(chunk.to_vec());
        }
    }
    rng.shuffle(&mut batches);
    batches
}

fn apply_augmentations(
    scene: &SceneSequence,
    toggles: &crate::config::AugmentToggles,
    rng: &mut Rng,
) -> Result<SceneSequence, SceneError> {
    let mut out = scene.clone();
    if toggles.rotate {
        let angle = rng.uniform_in(0.0, std::f64::consts::TAU);
        out = augment(&out, &Augment::RotateZ { angle })?;
    }
    if toggles.permute {
        let perm = rng.permutation(out.persons());
        out = augment(&out, &Augment::PermutePersons { perm })?;
    }
    if toggles.reverse && rng.uniform() < 0.5 {
        out = augment(&out, &Augment::ReverseTime)?;
    }
    Ok(out)
}

/// Mean of per-scene scalar nodes: `(a1 + ... + aB) * (1/B)`.
fn mean_of<T: Scalar>(
    g: &mut Graph<T>,
    nodes: &[TensorId],
) -> Result<TensorId, crate::numerics::NumericsError> {
    let mut acc = nodes[0];
    for &n in &nodes[1..] {
        acc = g.add(acc, n)?;
    }
    g.scale(acc, T::ONE / T::from_f64(nodes.len() as f64))
}

/// Run training at a fixed precision. Deterministic in `config.seed`.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    scenes: &[SceneSequence],
    out_dir: &Path,
    init_from: Option<&Path>,
) -> Result<TrainRun<T>, TrainError> {
    config.validate()?;
    let joints = validate_dataset(config, scenes)?;
    let dims = config.dims_with_joints(joints);
    let rel_space = config.parsed_rel_target_space().expect("validated");
    let split = SplitSpec { t_h: config.t_h, t_f: config.t_f };
    let (lambda_j, lambda_r) = (T::from_f64(config.lambda_j), T::from_f64(config.lambda_r));

    let mut model = Model::<T>::new(dims, config.seed, Init::Training)?;
    if let Some(path) = init_from {
        // Fine-tune: load parameters, start a fresh optimizer.
        let ckpt = Checkpoint::<T>::load(path)?;
        ckpt.load_into(&mut model.params)?;
    }
    let mut optimizer = AdamW::new(AdamWHyper::default(), &model.params);

    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(io_err(&log_path))?,
    );

    let config_json = config.to_json();
    let save = |params: &ModelPar<crate::numerics::Tensor<T>>,
                opt: &AdamW<T>,
                step: u64,
                epoch: usize,
                name: String|
     -> Result<PathBuf, TrainError> {
        let path = out_dir.join(name);
        Checkpoint::from_params(params, Some(opt), step, epoch as u64, config_json.clone())
            .save(&path)?;
        Ok(path)
    };

    let mut rng = Rng::new(config.seed);
    let mut step: u64 = 0;
    let mut first_total = None;
    let mut final_total = None;

    for epoch in 0..config.epochs {
        let lr = crate::optim::lr_schedule(
            epoch,
            config.lr0,
            config.decay_factor,
            config.decay_every_epochs,
        );
        for batch in batch_plan(scenes, config.batch_size, &mut rng) {
            let mut g: Graph<T> = Graph::new();
            let ids = model.register(&mut g);

            let mut per_scene: Vec<(TermIds, TensorId)> = Vec::with_capacity(batch.len());
            for &scene_idx in &batch {
                let scene = apply_augmentations(&scenes[scene_idx], &config.augment, &mut rng)?;
                let inputs = SceneInputs::<T>::build(&scene, split, rel_space)?;
                let fwd = model.forward(&mut g, &ids, &inputs)?;
                let loss = model.loss(&mut g, &ids, &fwd, lambda_j, lambda_r)?;
                per_scene.push((loss.terms, loss.deep_sup));
            }

            // Batch loss: component means combined in the documented order,
            // so the logged breakdown is exactly the optimized scalar.
            let terms = TermIds {
                joint_recon: mean_of(
                    &mut g,
                    &per_scene.iter().map(|(t, _)| t.joint_recon).collect::<Vec<_>>(),
                )
                .map_err(ModelError::from)?,
                joint_pred: mean_of(
                    &mut g,
                    &per_scene.iter().map(|(t, _)| t.joint_pred).collect::<Vec<_>>(),
                )
                .map_err(ModelError::from)?,
                rel_recon: mean_of(
                    &mut g,
                    &per_scene.iter().map(|(t, _)| t.rel_recon).collect::<Vec<_>>(),
                )
                .map_err(ModelError::from)?,
                rel_pred: mean_of(
                    &mut g,
                    &per_scene.iter().map(|(t, _)| t.rel_pred).collect::<Vec<_>>(),
                )
                .map_err(ModelError::from)?,
            };
            let deep_sup =
                mean_of(&mut g, &per_scene.iter().map(|(_, d)| *d).collect::<Vec<_>>())
                    .map_err(ModelError::from)?;
            let loss = LossNodes::assemble(&mut g, terms, deep_sup, lambda_j, lambda_r)
                .map_err(ModelError::from)?;
            let breakdown: LossBreakdown<f64> = loss.breakdown(&g).to_f64();

            g.backward(loss.total).map_err(ModelError::from)?;
            let mut grads: Vec<Vec<T>> = Vec::new();
            ids.walk("", &mut |_, id: &TensorId| {
                let n = g.value(*id).numel();
                grads.push(match g.grad(*id) {
                    Some(gr) => gr.to_vec(),
                    None => vec![T::ZERO; n],
                });
            });

            match optimizer.step(&mut model.params, &grads, lr) {
                Ok(()) => {}
                Err(OptimError::NonFiniteGrad { block }) => {
                    eprintln!("step {step}: non-finite gradient in {block}, step skipped");
                    continue;
                }
                Err(e) => return Err(e.into()),
            }

            step += 1;
            let line = LogLine {
                step,
                epoch,
                lr,
                joint_recon: breakdown.joint_recon,
                joint_pred: breakdown.joint_pred,
                rel_recon: breakdown.rel_recon,
                rel_pred: breakdown.rel_pred,
                deep_sup: breakdown.deep_sup,
                total: breakdown.total,
            };
            let encoded = serde_json::to_string(&line).expect("log line serializes");
            writeln!(log, "{encoded}").map_err(io_err(&log_path))?;
            if first_total.is_none() {
                first_total = Some(breakdown.total);
            }
            final_total = Some(breakdown.total);
        }

        let done = epoch + 1;
        if done % config.checkpoint_every_epochs == 0 && done < config.epochs {
            save(&model.params, &optimizer, step, done, format!("checkpoint_ep{done:05}.bin"))?;
        }
    }

    log.flush().map_err(io_err(&log_path))?;
    let final_checkpoint =
        save(&model.params, &optimizer, step, config.epochs, "checkpoint.bin".to_string())?;

    Ok(TrainRun {
        model,
        optimizer,
        outcome: TrainOutcome {
            final_checkpoint,
            log_path,
            steps: step,
            first_total,
            final_total,
        },
    })
}

/// Precision-dispatching wrapper for the CLI.
pub fn train_dispatch(
    config: &TrainConfig,
    scenes: &[SceneSequence],
    out_dir: &Path,
    init_from: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    match config.parsed_precision().expect("validated") {
        Precision::F32 => train::<f32>(config, scenes, out_dir, init_from).map(|r| r.outcome),
        Precision::F64 => train::<f64>(config, scenes, out_dir, init_from).map(|r| r.outcome),
    }
}

/// Evaluate a model and the zero-velocity baseline over named scenes.
/// Metrics are computed in normalized coordinates (translation cancels in
/// every error term) and scaled by `unit_scale`.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    config: &TrainConfig,
    scenes: &[(String, SceneSequence)],
) -> Result<EvalReport, TrainError> {
    let split = SplitSpec { t_h: config.t_h, t_f: config.t_f };
    let rel_space = config.parsed_rel_target_space().expect("validated");
    let mut reports = Vec::with_capacity(scenes.len());
    for (name, scene) in scenes {
        let inputs = SceneInputs::<T>::build(scene, split, rel_space)?;
        let mut g = Graph::new();
        let ids = model.register(&mut g);
        let fwd = model.forward(&mut g, &ids, &inputs)?;
        let pred = model.prediction(&g, &fwd, inputs.offset);

        let gt_y = inputs.gt_y.to_f64_vec();
        let model_pred = pred.pred_y.to_f64_vec();
        let history = inputs.gt_x.to_f64_vec();
        let zv_pred = metrics::zero_velocity_baseline(&history, config.t_h, config.t_f);

        let model_set = metrics::metric_set(
            &model_pred,
            &gt_y,
            scene.persons(),
            scene.joints(),
            config.t_f,
            scene.fps(),
            &config.vim_report_ms,
            &config.mpjpe_horizons_s,
            config.unit_scale,
        )?;
        let zv_set = metrics::metric_set(
            &zv_pred,
            &gt_y,
            scene.persons(),
            scene.joints(),
            config.t_f,
            scene.fps(),
            &config.vim_report_ms,
            &config.mpjpe_horizons_s,
            config.unit_scale,
        )?;
        reports.push(SceneReport {
            scene: name.clone(),
            persons: scene.persons(),
            joints: scene.joints(),
            model: model_set,
            zero_velocity: zv_set,
        });
    }
    Ok(EvalReport::aggregate(config.unit_scale, reports))
}

/// Post-softmax attention matrices for one scene as JSON:
/// one entry per (layer, head) with an `[NJ][NJ]` matrix.
pub fn attention_dump<T: Scalar>(
    model: &Model<T>,
    config: &TrainConfig,
    scene: &SceneSequence,
) -> Result<serde_json::Value, TrainError> {
    let split = SplitSpec { t_h: config.t_h, t_f: config.t_f };
    let rel_space = config.parsed_rel_target_space().expect("validated");
    let inputs = SceneInputs::<T>::build(scene, split, rel_space)?;
    let mut g = Graph::new();
    let ids = model.register(&mut g);
    let fwd = model.forward(&mut g, &ids, &inputs)?;
    let nj = inputs.nj();
    let mut entries = Vec::new();
    for (layer, &attn_id) in fwd.attention.iter().enumerate() {
        let a = g.value(attn_id);
        for head in 0..model.dims.d_h {
            let matrix: Vec<Vec<f64>> = (0..nj)
                .map(|i| (0..nj).map(|j| a.at3(head, i, j).to_f64()).collect())
                .collect();
            entries.push(serde_json::json!({
                "layer": layer,
                "head": head,
                "matrix": matrix,
            }));
        }
    }
    Ok(serde_json::json!({
        "persons": scene.persons(),
        "joints": scene.joints(),
        "attention": entries,
    }))
}

/// Load every `*.json` scene in a directory (sorted by file name), or the
/// single file if the path is not a directory.
pub fn load_scene_set(path: &Path) -> Result<Vec<(String, SceneSequence)>, TrainError> {
    let mut out = Vec::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for f in files {
            let name =
                f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            out.push((name, crate::scene::read_scene_file(&f)?));
        }
    } else {
        let name =
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.push((name, crate::scene::read_scene_file(path)?));
    }
    Ok(out)
}
