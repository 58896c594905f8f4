//! Decoders from fused features to motion/distance predictions, and the
//! three-part training loss (joint, relation, deep supervision).

use crate::numerics::{Graph, NumericsError, Scalar, TensorId};
use crate::params::{LinearPar, Mlp3Par, ModelDims};

/// Graph handles of the supervision targets for one scene.
#[derive(Debug, Clone, Copy)]
pub struct TargetIds {
    /// `[NJ][T_h*3]` normalized history positions.
    pub gt_x: TensorId,
    /// `[NJ][T_f*3]` normalized future positions.
    pub gt_y: TensorId,
    /// `[NJ*NJ][T_h]` history distance targets.
    pub gt_dx: TensorId,
    /// `[NJ*NJ][T_f]` future distance targets.
    pub gt_dy: TensorId,
}

/// Joint decoder: shared 3-layer perceptron `D -> D -> D -> (T_h+T_f)*3`
/// per joint; the first `T_h*3` channels reconstruct history, the rest
/// predict the future.
pub fn decode_joints<T: Scalar>(
    g: &mut Graph<T>,
    dec: &Mlp3Par<TensorId>,
    f_j: TensorId,
    dims: &ModelDims,
) -> Result<(TensorId, TensorId), NumericsError> {
    let h = g.matmul(f_j, dec.l1.w)?;
    let h = g.add_row(h, dec.l1.b)?;
    let h = g.relu(h)?;
    let h = g.matmul(h, dec.l2.w)?;
    let h = g.add_row(h, dec.l2.b)?;
    let h = g.relu(h)?;
    let h = g.matmul(h, dec.l3.w)?;
    let out = g.add_row(h, dec.l3.b)?;
    let recon = g.slice_last(out, 0, dims.t_h * 3)?;
    let pred = g.slice_last(out, dims.t_h * 3, dims.t_f * 3)?;
    Ok((recon, pred))
}

/// Relation decoder: shared linear map `D -> T_h+T_f` per pair; first
/// `T_h` channels reconstruct, the rest predict.
pub fn decode_relations<T: Scalar>(
    g: &mut Graph<T>,
    dec: &LinearPar<TensorId>,
    f_r: TensorId,
    dims: &ModelDims,
) -> Result<(TensorId, TensorId), NumericsError> {
    let h = g.matmul(f_r, dec.w)?;
    let out = g.add_row(h, dec.b)?;
    let recon = g.slice_last(out, 0, dims.t_h)?;
    let pred = g.slice_last(out, dims.t_h, dims.t_f)?;
    Ok((recon, pred))
}

/// Joint error term: per (joint, frame) Euclidean norm of the 3-vector
/// error, averaged over joints and frames.
pub fn joint_error_term<T: Scalar>(
    g: &mut Graph<T>,
    prediction: TensorId,
    target: TensorId,
) -> Result<TensorId, NumericsError> {
    let diff = g.sub(prediction, target)?;
    let n = g.value(diff).numel();
    debug_assert_eq!(n % 3, 0);
    let vectors = g.reshape(diff, vec![n / 3, 3])?;
    let norms = g.l2_norm_last(vectors)?;
    g.mean_all(norms)
}

/// Relation error term: mean absolute error over all (i, j, t).
pub fn relation_error_term<T: Scalar>(
    g: &mut Graph<T>,
    prediction: TensorId,
    target: TensorId,
) -> Result<TensorId, NumericsError> {
    let diff = g.sub(prediction, target)?;
    let mag = g.abs(diff)?;
    g.mean_all(mag)
}

/// The four supervision terms for one decoded state.
#[derive(Debug, Clone, Copy)]
pub struct TermIds {
    pub joint_recon: TensorId,
    pub joint_pred: TensorId,
    pub rel_recon: TensorId,
    pub rel_pred: TensorId,
}

/// Decode a `(F_J, F_R)` state with the shared decoders and compute all
/// four loss terms against the targets.
pub fn decode_and_score<T: Scalar>(
    g: &mut Graph<T>,
    joint_dec: &Mlp3Par<TensorId>,
    rel_dec: &LinearPar<TensorId>,
    f_j: TensorId,
    f_r: TensorId,
    targets: &TargetIds,
    dims: &ModelDims,
) -> Result<TermIds, NumericsError> {
    let (recon_x, pred_y) = decode_joints(g, joint_dec, f_j, dims)?;
    let (recon_d, pred_d) = decode_relations(g, rel_dec, f_r, dims)?;
    Ok(TermIds {
        joint_recon: joint_error_term(g, recon_x, targets.gt_x)?,
        joint_pred: joint_error_term(g, pred_y, targets.gt_y)?,
        rel_recon: relation_error_term(g, recon_d, targets.gt_dx)?,
        rel_pred: relation_error_term(g, pred_d, targets.gt_dy)?,
    })
}

/// Weighted single-state loss `(recon + lambda_j * pred) + (rel_recon +
/// lambda_r * rel_pred)`, as used per layer by deep supervision.
pub fn combine_terms<T: Scalar>(
    g: &mut Graph<T>,
    terms: &TermIds,
    lambda_j: T,
    lambda_r: T,
) -> Result<TensorId, NumericsError> {
    let jp = g.scale(terms.joint_pred, lambda_j)?;
    let j = g.add(terms.joint_recon, jp)?;
    let rp = g.scale(terms.rel_pred, lambda_r)?;
    let r = g.add(terms.rel_recon, rp)?;
    g.add(j, r)
}

/// Deep supervision: apply the shared decoders to the input of every
/// fusion layer (states `0..L`) and sum the weighted losses.
#[allow(clippy::too_many_arguments)]
pub fn deep_supervision<T: Scalar>(
    g: &mut Graph<T>,
    joint_dec: &Mlp3Par<TensorId>,
    rel_dec: &LinearPar<TensorId>,
    states: &[(TensorId, TensorId)],
    layer_count: usize,
    targets: &TargetIds,
    dims: &ModelDims,
    lambda_j: T,
    lambda_r: T,
) -> Result<TensorId, NumericsError> {
    debug_assert!(states.len() > layer_count);
    let mut total: Option<TensorId> = None;
    for &(f_j, f_r) in states.iter().take(layer_count) {
        let terms = decode_and_score(g, joint_dec, rel_dec, f_j, f_r, targets, dims)?;
        let layer_loss = combine_terms(g, &terms, lambda_j, lambda_r)?;
        total = Some(match total {
            Some(t) => g.add(t, layer_loss)?,
            None => layer_loss,
        });
    }
    total.ok_or_else(|| NumericsError::ShapeMismatch {
        op: "deep_supervision",
        details: "no states".to_string(),
    })
}

/// Scalar values of one training step's loss, with the exact total
/// identity `total = joint_recon + lambda_j*joint_pred + rel_recon +
/// lambda_r*rel_pred + deep_sup` evaluated left to right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub joint_recon: T,
    pub joint_pred: T,
    pub rel_recon: T,
    pub rel_pred: T,
    pub deep_sup: T,
    pub total: T,
}

impl<T: Scalar> LossBreakdown<T> {
    /// The documented evaluation order of the total.
    pub fn total_of(
        joint_recon: T,
        joint_pred: T,
        rel_recon: T,
        rel_pred: T,
        deep_sup: T,
        lambda_j: T,
        lambda_r: T,
    ) -> T {
        (((joint_recon + joint_pred * lambda_j) + rel_recon) + rel_pred * lambda_r) + deep_sup
    }

    /// Bitwise check of the sum identity at this breakdown's precision.
    pub fn identity_holds(&self, lambda_j: T, lambda_r: T) -> bool {
        self.total
            == Self::total_of(
                self.joint_recon,
                self.joint_pred,
                self.rel_recon,
                self.rel_pred,
                self.deep_sup,
                lambda_j,
                lambda_r,
            )
    }

    pub fn to_f64(&self) -> LossBreakdown<f64> {
        LossBreakdown {
            joint_recon: self.joint_recon.to_f64(),
            joint_pred: self.joint_pred.to_f64(),
            rel_recon: self.rel_recon.to_f64(),
            rel_pred: self.rel_pred.to_f64(),
            deep_sup: self.deep_sup.to_f64(),
            total: self.total.to_f64(),
        }
    }
}

/// Graph nodes of the full training loss.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub terms: TermIds,
    pub deep_sup: TensorId,
    pub total: TensorId,
}

impl LossNodes {
    /// Assemble the total in the documented order:
    /// `(((jr + jp*lj) + rr) + rp*lr) + ds`.
    pub fn assemble<T: Scalar>(
        g: &mut Graph<T>,
        terms: TermIds,
        deep_sup: TensorId,
        lambda_j: T,
        lambda_r: T,
    ) -> Result<Self, NumericsError> {
        let jp = g.scale(terms.joint_pred, lambda_j)?;
        let s = g.add(terms.joint_recon, jp)?;
        let s = g.add(s, terms.rel_recon)?;
        let rp = g.scale(terms.rel_pred, lambda_r)?;
        let s = g.add(s, rp)?;
        let total = g.add(s, deep_sup)?;
        Ok(LossNodes { terms, deep_sup, total })
    }

    pub fn breakdown<T: Scalar>(&self, g: &Graph<T>) -> LossBreakdown<T> {
        LossBreakdown {
            joint_recon: g.value(self.terms.joint_recon).item().expect("scalar"),
            joint_pred: g.value(self.terms.joint_pred).item().expect("scalar"),
            rel_recon: g.value(self.terms.rel_recon).item().expect("scalar"),
            rel_pred: g.value(self.terms.rel_pred).item().expect("scalar"),
            deep_sup: g.value(self.deep_sup).item().expect("scalar"),
            total: g.value(self.total).item().expect("scalar"),
        }
    }
}
