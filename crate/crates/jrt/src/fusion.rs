//! Joint-relation fusion layer: relation-aware attention updates joint
//! features, then a message-collecting local update refreshes relation
//! features. Stacked L times with positional embeddings re-injected at
//! every layer input.

use crate::numerics::{Graph, NumericsError, Scalar, TensorId};
use crate::params::{FusionLayerPar, LayerNormPar, Mlp2Par, ModelDims};

/// Variance epsilon for every layer normalization in the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

fn layer_norm_affine<T: Scalar>(
    g: &mut Graph<T>,
    ln: &LayerNormPar<TensorId>,
    x: TensorId,
) -> Result<TensorId, NumericsError> {
    let normed = g.layer_norm(x, T::from_f64(LAYER_NORM_EPS))?;
    let scaled = g.mul_row(normed, ln.gamma)?;
    g.add_row(scaled, ln.beta)
}

fn mlp2<T: Scalar>(
    g: &mut Graph<T>,
    p: &Mlp2Par<TensorId>,
    x: TensorId,
) -> Result<TensorId, NumericsError> {
    let h = g.matmul(x, p.l1.w)?;
    let h = g.add_row(h, p.l1.b)?;
    let h = g.relu(h)?;
    let h = g.matmul(h, p.l2.w)?;
    g.add_row(h, p.l2.b)
}

/// Per-head relation scores from relation features: a linear projection
/// plus a quadratic term summed over its hidden width.
/// `[NJ*NJ][D] -> [D_H][NJ][NJ]`.
pub fn relation_score<T: Scalar>(
    g: &mut Graph<T>,
    layer: &FusionLayerPar<TensorId>,
    f_r: TensorId,
    dims: &ModelDims,
    nj: usize,
) -> Result<TensorId, NumericsError> {
    let linear = g.matmul(f_r, layer.w_l)?; // [NJ*NJ, D_H]
    let q1 = g.matmul(f_r, layer.w_q1)?; // [NJ*NJ, D_H*D'] head-major
    let q2 = g.matmul(f_r, layer.w_q2)?;
    let prod = g.mul(q1, q2)?;
    let prod = g.reshape(prod, vec![nj * nj, dims.d_h, dims.d_prime])?;
    let quad = g.sum_axis(prod, 2)?; // [NJ*NJ, D_H]
    let scores = g.add(linear, quad)?;
    let scores = g.transpose01(scores)?; // [D_H, NJ*NJ]
    g.reshape(scores, vec![dims.d_h, nj, nj])
}

/// Split a `[NJ][D_K]` projection into per-head batches `[D_H][NJ][F_K]`.
fn split_heads<T: Scalar>(
    g: &mut Graph<T>,
    x: TensorId,
    dims: &ModelDims,
    nj: usize,
) -> Result<TensorId, NumericsError> {
    let x = g.reshape(x, vec![nj, dims.d_h, dims.f_k()])?;
    g.transpose01(x)
}

/// Multi-head attention over joints with per-pair relation scores added to
/// the pre-softmax logits. Returns the projected update (before residual)
/// and the post-softmax attention matrices `[D_H][NJ][NJ]`.
pub fn relation_aware_attention<T: Scalar>(
    g: &mut Graph<T>,
    layer: &FusionLayerPar<TensorId>,
    f_j: TensorId,
    scores: TensorId,
    dims: &ModelDims,
    nj: usize,
) -> Result<(TensorId, TensorId), NumericsError> {
    let q = g.matmul(f_j, layer.w_q)?;
    let k = g.matmul(f_j, layer.w_k)?;
    let v = g.matmul(f_j, layer.w_v)?;
    let q = split_heads(g, q, dims, nj)?;
    let k = split_heads(g, k, dims, nj)?;
    let v = split_heads(g, v, dims, nj)?;

    let logits = g.bmm_nt(q, k)?; // [D_H, NJ, NJ]
    let logits = g.add(logits, scores)?;
    let inv_sqrt = T::from_f64(1.0 / (dims.f_k() as f64).sqrt());
    let logits = g.scale(logits, inv_sqrt)?;
    let attn = g.softmax(logits, 2)?;

    let ctx = g.bmm(attn, v)?; // [D_H, NJ, F_K]
    let ctx = g.transpose01(ctx)?; // [NJ, D_H, F_K]
    let ctx = g.reshape(ctx, vec![nj, dims.d_k])?;
    let out = g.matmul(ctx, layer.w_o)?;
    Ok((out, attn))
}

/// Residual + feed-forward + post-norm on the joint stream:
/// `LayerNorm(x + FFN(x))` with `x = input + attention output`.
pub fn joint_local_update<T: Scalar>(
    g: &mut Graph<T>,
    layer: &FusionLayerPar<TensorId>,
    f_j_in: TensorId,
    attn_out: TensorId,
) -> Result<TensorId, NumericsError> {
    let x = g.add(f_j_in, attn_out)?;
    let ff = mlp2(g, &layer.ffn, x)?;
    let y = g.add(x, ff)?;
    layer_norm_affine(g, &layer.ln_joint, y)
}

/// Joint-aware relation refresh: broadcast both endpoints' joint features,
/// concatenate with both relation directions, then two residual local
/// updates with pre-normalization.
///
/// Message layout per pair `(i, j)`: `[F_J[i], F_J[j], F_R[i][j], F_R[j][i]]`.
pub fn relation_update<T: Scalar>(
    g: &mut Graph<T>,
    layer: &FusionLayerPar<TensorId>,
    f_j_next: TensorId,
    f_r: TensorId,
    dims: &ModelDims,
    nj: usize,
) -> Result<TensorId, NumericsError> {
    let f_j_rows = g.repeat_rows(f_j_next, nj)?; // row (i*NJ+j) = F_J[i]
    let f_j_cols = g.tile_rows(f_j_next, nj)?; // row (i*NJ+j) = F_J[j]
    let f_r_3 = g.reshape(f_r, vec![nj, nj, dims.d])?;
    let f_r_t = g.transpose01(f_r_3)?;
    let f_r_t = g.reshape(f_r_t, vec![nj * nj, dims.d])?;
    let message = g.concat_last(&[f_j_rows, f_j_cols, f_r, f_r_t])?; // [NJ*NJ, 4D]

    let normed = layer_norm_affine(g, &layer.ln_msg, message)?;
    let update = mlp2(g, &layer.lu1, normed)?;
    let f_r = g.add(f_r, update)?;

    let normed = layer_norm_affine(g, &layer.ln_rel, f_r)?;
    let update = mlp2(g, &layer.lu2, normed)?;
    g.add(f_r, update)
}

/// One full fusion layer on positional-embedded inputs. Returns the next
/// `(F_J, F_R)` state and the attention matrices.
pub fn fusion_layer<T: Scalar>(
    g: &mut Graph<T>,
    layer: &FusionLayerPar<TensorId>,
    j_in: TensorId,
    r_in: TensorId,
    dims: &ModelDims,
    nj: usize,
) -> Result<(TensorId, TensorId, TensorId), NumericsError> {
    let scores = relation_score(g, layer, r_in, dims, nj)?;
    let (attn_out, attn) = relation_aware_attention(g, layer, j_in, scores, dims, nj)?;
    let f_j_next = joint_local_update(g, layer, j_in, attn_out)?;
    let f_r_next = relation_update(g, layer, f_j_next, r_in, dims, nj)?;
    Ok((f_j_next, f_r_next, attn))
}

/// Apply `layers` in sequence with positional embeddings re-added at every
/// layer input, recording every intermediate state. The returned list has
/// length `L + 1`: index `l < L` holds layer `l`'s input after positional
/// injection (what deep supervision decodes), index `L` the final output.
#[allow(clippy::type_complexity, clippy::too_many_arguments)]
pub fn fusion_stack<T: Scalar>(
    g: &mut Graph<T>,
    layers: &[FusionLayerPar<TensorId>],
    f_j0: TensorId,
    f_r0: TensorId,
    pe_rows: TensorId,
    pe_pairs: TensorId,
    dims: &ModelDims,
    nj: usize,
) -> Result<(Vec<(TensorId, TensorId)>, Vec<TensorId>), NumericsError> {
    assert!(!layers.is_empty(), "fusion stack needs at least one layer");
    let mut states = Vec::with_capacity(layers.len() + 1);
    let mut attns = Vec::with_capacity(layers.len());
    let (mut f_j, mut f_r) = (f_j0, f_r0);
    for layer in layers {
        let (j_in, r_in) =
            crate::encoders::add_positional(g, f_j, f_r, pe_rows, pe_pairs)?;
        states.push((j_in, r_in));
        let (j_next, r_next, attn) = fusion_layer(g, layer, j_in, r_in, dims, nj)?;
        f_j = j_next;
        f_r = r_next;
        attns.push(attn);
    }
    states.push((f_j, f_r));
    Ok((states, attns))
}
