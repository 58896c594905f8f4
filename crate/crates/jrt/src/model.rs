//! Full pipeline composition: scene tensors in, predictions and losses
//! out, plus the whole-model finite-difference check.

use crate::encoders;
use crate::fusion;
use crate::heads::{self, LossNodes, TargetIds, TermIds};
use crate::numerics::{
    finite_diff_check, Graph, GradCheckReport, NumericsError, Scalar, Tensor, TensorId,
};
use crate::params::{Init, ModelDims, ModelPar, ParamTree};
use crate::relation::RelationTensor;
use crate::scene::{normalize, SceneError, SceneSequence, SplitSpec};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("scene has {n} persons but the model supports at most {n_max}")]
    TooManyPersons { n: usize, n_max: usize },
    #[error("scene has {got} joints per person, model expects {expect}")]
    JointMismatch { got: usize, expect: usize },
    #[error("invalid model dimensions: {0}")]
    BadDims(String),
    #[error("gradient check could not find a kink-safe sample after {0} attempts")]
    NoKinkSafeSample(usize),
}

/// Space in which relation targets are supervised: `Exp` matches the
/// encoder input transform `exp(-d)`; `Raw` supervises plain meters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RelTargetSpace {
    #[default]
    Exp,
    Raw,
}

impl RelTargetSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            RelTargetSpace::Exp => "exp",
            RelTargetSpace::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exp" => Some(RelTargetSpace::Exp),
            "raw" => Some(RelTargetSpace::Raw),
            _ => None,
        }
    }
}

/// Model-ready tensors for one scene, built from the normalized scene.
#[derive(Debug, Clone)]
pub struct SceneInputs<T> {
    pub persons: usize,
    pub joints: usize,
    /// `[NJ][6*T_h]` position+velocity rows.
    pub joint_rows: Tensor<T>,
    /// `[NJ*NJ][T_h+2]` stacked relation channels.
    pub relation_rows: Tensor<T>,
    /// `[NJ][T_h*3]` normalized history positions.
    pub gt_x: Tensor<T>,
    /// `[NJ][T_f*3]` normalized future positions.
    pub gt_y: Tensor<T>,
    /// `[NJ*NJ][T_h]` history distance targets in the chosen space.
    pub gt_dx: Tensor<T>,
    /// `[NJ*NJ][T_f]` future distance targets.
    pub gt_dy: Tensor<T>,
    /// Normalization offset to restore world coordinates.
    pub offset: [f64; 3],
}

impl<T: Scalar> SceneInputs<T> {
    pub fn nj(&self) -> usize {
        self.persons * self.joints
    }

    /// Normalize the scene, split history/future, and assemble every
    /// model input and supervision target.
    pub fn build(
        scene: &SceneSequence,
        split: SplitSpec,
        space: RelTargetSpace,
    ) -> Result<Self, ModelError> {
        let (centered, offset) = normalize(scene);
        let (n, j) = (centered.persons(), centered.joints());
        let nj = n * j;
        let (t_h, t_f) = (split.t_h, split.t_f);

        let history = centered.frame_slice(0, t_h).to_vec();
        let future = centered.frame_slice(t_h, t_f).to_vec();

        let joint_rows = encoders::joint_input_matrix(&history, t_h, n, j);
        let rel = RelationTensor::build(&history, t_h, n, centered.skeleton());
        let relation_rows = rel.stacked();

        let gt_x = frames_to_joint_rows(&history, t_h, nj);
        let gt_y = frames_to_joint_rows(&future, t_f, nj);
        let gt_dx = distance_targets(&history, t_h, nj, space);
        let gt_dy = distance_targets(&future, t_f, nj, space);

        Ok(SceneInputs {
            persons: n,
            joints: j,
            joint_rows: Tensor::from_f64(vec![nj, 6 * t_h], &joint_rows)?,
            relation_rows: Tensor::from_f64(vec![nj * nj, t_h + 2], &relation_rows)?,
            gt_x: Tensor::from_f64(vec![nj, t_h * 3], &gt_x)?,
            gt_y: Tensor::from_f64(vec![nj, t_f * 3], &gt_y)?,
            gt_dx: Tensor::from_f64(vec![nj * nj, t_h], &gt_dx)?,
            gt_dy: Tensor::from_f64(vec![nj * nj, t_f], &gt_dy)?,
            offset,
        })
    }
}

/// `[T][NJ][3]` frame-major positions to `[NJ][T*3]` joint-major rows.
fn frames_to_joint_rows(frames: &[f64], t_len: usize, nj: usize) -> Vec<f64> {
    let mut out = vec![0.0; nj * t_len * 3];
    for t in 0..t_len {
        for g in 0..nj {
            for c in 0..3 {
                out[g * t_len * 3 + t * 3 + c] = frames[(t * nj + g) * 3 + c];
            }
        }
    }
    out
}

/// `[NJ*NJ][T]` distance targets in the requested space.
fn distance_targets(frames: &[f64], t_len: usize, nj: usize, space: RelTargetSpace) -> Vec<f64> {
    let mut out = vec![0.0; nj * nj * t_len];
    for t in 0..t_len {
        let frame = &frames[t * nj * 3..(t + 1) * nj * 3];
        for i in 0..nj {
            for j in 0..nj {
                let dx = frame[i * 3] - frame[j * 3];
                let dy = frame[i * 3 + 1] - frame[j * 3 + 1];
                let dz = frame[i * 3 + 2] - frame[j * 3 + 2];
                let d = (dx * dx + dy * dy + dz * dz).sqrt();
                out[(i * nj + j) * t_len + t] = match space {
                    RelTargetSpace::Exp => (-d).exp(),
                    RelTargetSpace::Raw => d,
                };
            }
        }
    }
    out
}

/// Graph handles produced by one forward pass.
pub struct ForwardIds {
    /// `(F_J, F_R)` per layer boundary; index 0 is the encoder output.
    pub states: Vec<(TensorId, TensorId)>,
    /// Post-softmax attention `[D_H][NJ][NJ]` per fusion layer.
    pub attention: Vec<TensorId>,
    pub recon_x: TensorId,
    pub pred_y: TensorId,
    pub recon_d: TensorId,
    pub pred_d: TensorId,
    pub targets: TargetIds,
}

/// Decoded values of one forward pass, ready for metrics or export.
#[derive(Debug, Clone)]
pub struct Prediction<T> {
    pub recon_x: Tensor<T>,
    pub pred_y: Tensor<T>,
    pub recon_d: Tensor<T>,
    pub pred_d: Tensor<T>,
    pub offset: [f64; 3],
}

impl<T: Scalar> Prediction<T> {
    /// Future joint positions back in world coordinates (offset re-added),
    /// as flat `[NJ][T_f*3]` f64.
    pub fn pred_y_world(&self) -> Vec<f64> {
        self.pred_y
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v.to_f64() + self.offset[i % 3])
            .collect()
    }
}

/// The model: dimensions plus parameter storage.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub dims: ModelDims,
    pub params: ModelPar<Tensor<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn new(dims: ModelDims, seed: u64, init: Init) -> Result<Self, ModelError> {
        dims.validate().map_err(ModelError::BadDims)?;
        Ok(Model { dims, params: ModelPar::init(&dims, seed, init) })
    }

    /// Register every parameter on a fresh graph.
    pub fn register(&self, g: &mut Graph<T>) -> ModelPar<TensorId> {
        self.params.map(&mut |t| g.param(t))
    }

    /// Full forward pass for one scene: encode, fuse L times, decode.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        ids: &ModelPar<TensorId>,
        inputs: &SceneInputs<T>,
    ) -> Result<ForwardIds, ModelError> {
        if inputs.persons > self.dims.n_max {
            return Err(ModelError::TooManyPersons {
                n: inputs.persons,
                n_max: self.dims.n_max,
            });
        }
        if inputs.joints != self.dims.joints {
            return Err(ModelError::JointMismatch {
                got: inputs.joints,
                expect: self.dims.joints,
            });
        }
        let nj = inputs.nj();
        let dims = &self.dims;

        let joint_rows = g.input(inputs.joint_rows.clone());
        let relation_rows = g.input(inputs.relation_rows.clone());
        let targets = TargetIds {
            gt_x: g.input(inputs.gt_x.clone()),
            gt_y: g.input(inputs.gt_y.clone()),
            gt_dx: g.input(inputs.gt_dx.clone()),
            gt_dy: g.input(inputs.gt_dy.clone()),
        };

        let f_j0 = encoders::encode_joints(g, &ids.joint_enc, joint_rows)?;
        let f_r0 = encoders::encode_relations(g, &ids.rel_enc, relation_rows)?;
        let pe_rows = encoders::positional_rows(g, &ids.pos, inputs.persons, inputs.joints)?;
        let pe_pairs = encoders::positional_pairs(g, pe_rows, nj)?;

        let (states, attention) =
            fusion::fusion_stack(g, &ids.fusion, f_j0, f_r0, pe_rows, pe_pairs, dims, nj)?;

        let (f_j_last, f_r_last) = *states.last().expect("stack returns L+1 states");
        let (recon_x, pred_y) = heads::decode_joints(g, &ids.joint_dec, f_j_last, dims)?;
        let (recon_d, pred_d) = heads::decode_relations(g, &ids.rel_dec, f_r_last, dims)?;

        Ok(ForwardIds { states, attention, recon_x, pred_y, recon_d, pred_d, targets })
    }

    /// Final-state loss terms plus deep supervision over layer inputs.
    pub fn loss(
        &self,
        g: &mut Graph<T>,
        ids: &ModelPar<TensorId>,
        fwd: &ForwardIds,
        lambda_j: T,
        lambda_r: T,
    ) -> Result<LossNodes, ModelError> {
        let terms = TermIds {
            joint_recon: heads::joint_error_term(g, fwd.recon_x, fwd.targets.gt_x)?,
            joint_pred: heads::joint_error_term(g, fwd.pred_y, fwd.targets.gt_y)?,
            rel_recon: heads::relation_error_term(g, fwd.recon_d, fwd.targets.gt_dx)?,
            rel_pred: heads::relation_error_term(g, fwd.pred_d, fwd.targets.gt_dy)?,
        };
        let deep_sup = heads::deep_supervision(
            g,
            &ids.joint_dec,
            &ids.rel_dec,
            &fwd.states,
            self.dims.layers,
            &fwd.targets,
            &self.dims,
            lambda_j,
            lambda_r,
        )?;
        Ok(LossNodes::assemble(g, terms, deep_sup, lambda_j, lambda_r)?)
    }

    /// Extract decoded values from an evaluated graph.
    pub fn prediction(
        &self,
        g: &Graph<T>,
        fwd: &ForwardIds,
        offset: [f64; 3],
    ) -> Prediction<T> {
        Prediction {
            recon_x: g.value(fwd.recon_x).clone(),
            pred_y: g.value(fwd.pred_y).clone(),
            recon_d: g.value(fwd.recon_d).clone(),
            pred_d: g.value(fwd.pred_d).clone(),
            offset,
        }
    }
}

/// Analytic gradients for every block, in walk order. Blocks the loss
/// never touches get zero gradients.
pub fn analytic_block_grads<T: Scalar>(
    model: &Model<T>,
    inputs: &SceneInputs<T>,
    lambda_j: T,
    lambda_r: T,
) -> Result<(f64, Vec<Vec<f64>>), ModelError> {
    let mut g = Graph::new();
    let ids = model.register(&mut g);
    let fwd = model.forward(&mut g, &ids, inputs)?;
    let loss = model.loss(&mut g, &ids, &fwd, lambda_j, lambda_r)?;
    let value = g.value(loss.total).item().expect("scalar loss").to_f64();
    g.backward(loss.total)?;
    let mut grads = Vec::new();
    ids.walk("", &mut |_, id: &TensorId| {
        let n = g.value(*id).numel();
        grads.push(match g.grad(*id) {
            Some(gr) => gr.iter().map(|v| v.to_f64()).collect(),
            None => vec![0.0; n],
        });
    });
    Ok((value, grads))
}

/// Scalar loss at the current parameters (no gradient bookkeeping).
pub fn loss_value(
    model: &Model<f64>,
    inputs: &SceneInputs<f64>,
    lambda_j: f64,
    lambda_r: f64,
) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let ids = model.register(&mut g);
    let fwd = model.forward(&mut g, &ids, inputs)?;
    let loss = model.loss(&mut g, &ids, &fwd, lambda_j, lambda_r)?;
    Ok(g.value(loss.total).item().expect("scalar loss"))
}

/// Forward once and report the smallest |x| seen at any kinked op.
fn forward_kink_gap(
    model: &Model<f64>,
    inputs: &SceneInputs<f64>,
    lambda_j: f64,
    lambda_r: f64,
) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let ids = model.register(&mut g);
    let fwd = model.forward(&mut g, &ids, inputs)?;
    let _ = model.loss(&mut g, &ids, &fwd, lambda_j, lambda_r)?;
    Ok(g.kink_gap())
}

/// Whole-model finite-difference check at 64-bit on a synthetic scene.
///
/// Parameters are drawn fully random (zero-initialized blocks would
/// trivially self-agree), and the sampled (weights, scene) pair is
/// rejected while any relu/abs input sits within 1e-3 of its kink,
/// where a central-difference probe could straddle nondifferentiability.
pub fn model_gradcheck(
    dims: &ModelDims,
    persons: usize,
    seed: u64,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, ModelError> {
    const MAX_ATTEMPTS: usize = 64;
    const KINK_GUARD: f64 = 1e-3;
    let (lambda_j, lambda_r) = (10.0, 10.0);
    let split = SplitSpec { t_h: dims.t_h, t_f: dims.t_f };

    let mut chosen: Option<(Model<f64>, SceneInputs<f64>)> = None;
    for attempt in 0..MAX_ATTEMPTS {
        let s = seed.wrapping_add(attempt as u64);
        let model = Model::<f64>::new(*dims, s, Init::RandomAll { std: 0.2 })?;
        let scene = crate::scene::synth_scene(
            s ^ 0xA5A5,
            persons,
            dims.joints,
            dims.t_h + dims.t_f,
            15.0,
            crate::scene::MotionKind::TwoPersonApproach,
        );
        let inputs = SceneInputs::build(&scene, split, RelTargetSpace::Exp)?;
        if forward_kink_gap(&model, &inputs, lambda_j, lambda_r)? > KINK_GUARD {
            chosen = Some((model, inputs));
            break;
        }
    }
    let (mut model, inputs) =
        chosen.ok_or(ModelError::NoKinkSafeSample(MAX_ATTEMPTS))?;

    let report = finite_diff_check(
        &mut model.params,
        |params: &ModelPar<Tensor<f64>>| {
            let probe = Model { dims: *dims, params: params.clone() };
            loss_value(&probe, &inputs, lambda_j, lambda_r)
        },
        |params: &ModelPar<Tensor<f64>>| {
            let probe = Model { dims: *dims, params: params.clone() };
            analytic_block_grads(&probe, &inputs, lambda_j, lambda_r).map(|(_, g)| g)
        },
        h,
        tol,
    )
    .map_err(|e| match e {
        crate::numerics::gradcheck::FiniteDiffError::Eval(inner) => inner,
        other => ModelError::BadDims(other.to_string()),
    })?;
    Ok(report)
}
