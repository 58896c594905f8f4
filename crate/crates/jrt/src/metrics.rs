//! Evaluation metrics (VIM, MPJPE) and the zero-velocity baseline.
//!
//! Metrics run on flat `[NJ][T_f*3]` prediction/target arrays in scene
//! units; reports multiply by a configurable `unit_scale`.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("frame index {t} outside horizon of {t_f} frames")]
    FrameOutOfRange { t: usize, t_f: usize },
    #[error("prediction and target sizes differ: {pred} vs {gt}")]
    SizeMismatch { pred: usize, gt: usize },
}

/// Displacement of the flattened `J*3` joint vector at frame `t`
/// (0-based within the horizon), averaged over persons.
pub fn vim(
    pred: &[f64],
    gt: &[f64],
    persons: usize,
    joints: usize,
    t_f: usize,
    t: usize,
) -> Result<f64, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::SizeMismatch { pred: pred.len(), gt: gt.len() });
    }
    if t >= t_f {
        return Err(MetricError::FrameOutOfRange { t, t_f });
    }
    debug_assert_eq!(pred.len(), persons * joints * t_f * 3);
    let row_w = t_f * 3;
    let mut acc = 0.0;
    for n in 0..persons {
        let mut sq = 0.0;
        for j in 0..joints {
            let g = n * joints + j;
            for c in 0..3 {
                let e = pred[g * row_w + t * 3 + c] - gt[g * row_w + t * 3 + c];
                sq += e * e;
            }
        }
        acc += sq.sqrt();
    }
    Ok(acc / persons as f64)
}

/// Mean per-joint position error over all frames, persons, and joints.
pub fn mpjpe(
    pred: &[f64],
    gt: &[f64],
    persons: usize,
    joints: usize,
    t_f: usize,
) -> Result<f64, MetricError> {
    mpjpe_prefix(pred, gt, persons, joints, t_f, t_f)
}

/// MPJPE over the first `k` horizon frames (the 1s/2s/3s reporting style).
pub fn mpjpe_prefix(
    pred: &[f64],
    gt: &[f64],
    persons: usize,
    joints: usize,
    t_f: usize,
    k: usize,
) -> Result<f64, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::SizeMismatch { pred: pred.len(), gt: gt.len() });
    }
    if k == 0 || k > t_f {
        return Err(MetricError::FrameOutOfRange { t: k, t_f });
    }
    let row_w = t_f * 3;
    let nj = persons * joints;
    let mut acc = 0.0;
    for g in 0..nj {
        for t in 0..k {
            let mut sq = 0.0;
            for c in 0..3 {
                let e = pred[g * row_w + t * 3 + c] - gt[g * row_w + t * 3 + c];
                sq += e * e;
            }
            acc += sq.sqrt();
        }
    }
    Ok(acc / (nj * k) as f64)
}

/// Predict every future frame as the last observed frame. `history` is
/// `[NJ][T_h*3]` joint-major; the output is `[NJ][T_f*3]`.
pub fn zero_velocity_baseline(history: &[f64], t_h: usize, t_f: usize) -> Vec<f64> {
    let nj = history.len() / (t_h * 3);
    debug_assert_eq!(history.len(), nj * t_h * 3);
    let mut out = vec![0.0; nj * t_f * 3];
    for g in 0..nj {
        let last = &history[g * t_h * 3 + (t_h - 1) * 3..g * t_h * 3 + t_h * 3];
        for t in 0..t_f {
            out[g * t_f * 3 + t * 3..g * t_f * 3 + t * 3 + 3].copy_from_slice(last);
        }
    }
    out
}

/// Map a report timestamp in milliseconds to a 1-based horizon frame
/// (rounded, clamped to `[1, t_f]`).
pub fn ms_to_frame(ms: f64, fps: f64, t_f: usize) -> usize {
    let frame = (ms * fps / 1000.0).round() as i64;
    frame.clamp(1, t_f as i64) as usize
}

/// Metrics for one prediction source on one scene.
#[derive(Debug, Clone, Serialize)]
pub struct MetricSet {
    /// VIM per requested timestamp, keyed by millisecond label.
    pub vim_at: Vec<(String, f64)>,
    /// 1-based horizon frame each timestamp resolved to at this scene's fps.
    pub vim_frames: Vec<usize>,
    pub vim_avg: f64,
    /// MPJPE per requested horizon, keyed by seconds label.
    pub mpjpe_at: Vec<(String, f64)>,
    /// MPJPE over the full horizon.
    pub mpjpe_full: f64,
}

/// Compute the configured metric set for one scene.
#[allow(clippy::too_many_arguments)]
pub fn metric_set(
    pred: &[f64],
    gt: &[f64],
    persons: usize,
    joints: usize,
    t_f: usize,
    fps: f64,
    vim_ms: &[f64],
    mpjpe_horizons_s: &[f64],
    unit_scale: f64,
) -> Result<MetricSet, MetricError> {
    let mut vim_at = Vec::with_capacity(vim_ms.len());
    let mut vim_frames = Vec::with_capacity(vim_ms.len());
    let mut sum = 0.0;
    for &ms in vim_ms {
        let frame = ms_to_frame(ms, fps, t_f);
        let v = vim(pred, gt, persons, joints, t_f, frame - 1)? * unit_scale;
        sum += v;
        vim_at.push((format!("{}", ms as i64), v));
        vim_frames.push(frame);
    }
    let vim_avg = if vim_at.is_empty() { 0.0 } else { sum / vim_at.len() as f64 };

    let mut mpjpe_at = Vec::with_capacity(mpjpe_horizons_s.len());
    for &secs in mpjpe_horizons_s {
        let k = ms_to_frame(secs * 1000.0, fps, t_f);
        let v = mpjpe_prefix(pred, gt, persons, joints, t_f, k)? * unit_scale;
        mpjpe_at.push((format!("{secs}"), v));
    }
    let mpjpe_full = mpjpe(pred, gt, persons, joints, t_f)? * unit_scale;
    Ok(MetricSet { vim_at, vim_frames, vim_avg, mpjpe_at, mpjpe_full })
}

/// Per-scene entry of an evaluation report.
#[derive(Debug, Clone, Serialize)]
pub struct SceneReport {
    pub scene: String,
    pub persons: usize,
    pub joints: usize,
    pub model: MetricSet,
    pub zero_velocity: MetricSet,
}

/// Full evaluation report: per-scene metrics plus unweighted means.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub unit_scale: f64,
    pub scenes: Vec<SceneReport>,
    pub mean_model: MetricSet,
    pub mean_zero_velocity: MetricSet,
}

impl EvalReport {
    pub fn aggregate(unit_scale: f64, scenes: Vec<SceneReport>) -> Self {
        let mean_model = mean_metric_set(scenes.iter().map(|s| &s.model));
        let mean_zero_velocity = mean_metric_set(scenes.iter().map(|s| &s.zero_velocity));
        EvalReport { unit_scale, scenes, mean_model, mean_zero_velocity }
    }

    /// CSV with one row per scene (model and baseline columns).
    pub fn to_csv(&self) -> String {
        let mut head = vec!["scene".to_string(), "persons".to_string(), "joints".to_string()];
        if let Some(first) = self.scenes.first() {
            for (label, _) in &first.model.vim_at {
                head.push(format!("vim_{label}ms"));
            }
            head.push("vim_avg".to_string());
            for (label, _) in &first.model.mpjpe_at {
                head.push(format!("mpjpe_{label}s"));
            }
            head.push("mpjpe_full".to_string());
            for (label, _) in &first.zero_velocity.vim_at {
                head.push(format!("zv_vim_{label}ms"));
            }
            head.push("zv_vim_avg".to_string());
            for (label, _) in &first.zero_velocity.mpjpe_at {
                head.push(format!("zv_mpjpe_{label}s"));
            }
            head.push("zv_mpjpe_full".to_string());
        }
        let mut out = head.join(",");
        out.push('\n');
        for s in &self.scenes {
            let mut row = vec![s.scene.clone(), s.persons.to_string(), s.joints.to_string()];
            for set in [&s.model, &s.zero_velocity] {
                for (_, v) in &set.vim_at {
                    row.push(format!("{v}"));
                }
                row.push(format!("{}", set.vim_avg));
                for (_, v) in &set.mpjpe_at {
                    row.push(format!("{v}"));
                }
                row.push(format!("{}", set.mpjpe_full));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn mean_metric_set<'a>(sets: impl Iterator<Item = &'a MetricSet> + Clone) -> MetricSet {
    let count = sets.clone().count().max(1) as f64;
    let mut vim_at: Vec<(String, f64)> = Vec::new();
    let mut vim_frames: Vec<usize> = Vec::new();
    let mut mpjpe_at: Vec<(String, f64)> = Vec::new();
    let mut vim_avg = 0.0;
    let mut mpjpe_full = 0.0;
    for s in sets {
        if vim_at.is_empty() {
            vim_at = s.vim_at.iter().map(|(l, _)| (l.clone(), 0.0)).collect();
            vim_frames = s.vim_frames.clone();
            mpjpe_at = s.mpjpe_at.iter().map(|(l, _)| (l.clone(), 0.0)).collect();
        }
        for (slot, (_, v)) in vim_at.iter_mut().zip(&s.vim_at) {
            slot.1 += v / count;
        }
        for (slot, (_, v)) in mpjpe_at.iter_mut().zip(&s.mpjpe_at) {
            slot.1 += v / count;
        }
        vim_avg += s.vim_avg / count;
        mpjpe_full += s.mpjpe_full / count;
    }
    MetricSet { vim_at, vim_frames, vim_avg, mpjpe_at, mpjpe_full }
}
