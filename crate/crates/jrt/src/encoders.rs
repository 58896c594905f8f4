//! Input encoders: joint motion/velocity projection, relation-channel
//! projection, and learnable positional embeddings.

use crate::numerics::{Graph, NumericsError, Scalar, TensorId};
use crate::params::{EmbeddingPar, LinearPar, Mlp2Par};

/// Per-joint input vector layout: for each history frame, 6 channels
/// `[x, y, z, vx, vy, vz]` where velocity is the backward difference and
/// zero at the first frame. Output is flat `[NJ][6*T_h]`.
pub fn joint_input_matrix(history: &[f64], t_h: usize, persons: usize, joints: usize) -> Vec<f64> {
    assert!(t_h >= 2, "history must hold at least 2 frames");
    let nj = persons * joints;
    debug_assert_eq!(history.len(), t_h * nj * 3);
    let mut out = vec![0.0; nj * 6 * t_h];
    for g in 0..nj {
        for t in 0..t_h {
            let cur = &history[(t * nj + g) * 3..(t * nj + g) * 3 + 3];
            let row = &mut out[g * 6 * t_h + t * 6..g * 6 * t_h + t * 6 + 6];
            row[..3].copy_from_slice(cur);
            if t > 0 {
                let prev = &history[((t - 1) * nj + g) * 3..((t - 1) * nj + g) * 3 + 3];
                for c in 0..3 {
                    row[3 + c] = cur[c] - prev[c];
                }
            }
        }
    }
    out
}

fn linear<T: Scalar>(
    g: &mut Graph<T>,
    p: &LinearPar<TensorId>,
    x: TensorId,
) -> Result<TensorId, NumericsError> {
    let y = g.matmul(x, p.w)?;
    g.add_row(y, p.b)
}

/// Shared 2-layer perceptron over per-joint input vectors:
/// `6*T_h -> D -> D` with ReLU between.
pub fn encode_joints<T: Scalar>(
    g: &mut Graph<T>,
    enc: &Mlp2Par<TensorId>,
    joint_inputs: TensorId,
) -> Result<TensorId, NumericsError> {
    let h = linear(g, &enc.l1, joint_inputs)?;
    let h = g.relu(h)?;
    linear(g, &enc.l2, h)
}

/// Shared linear map over the stacked relation channels, applied
/// independently at each pair: `[NJ*NJ][T_h+2] -> [NJ*NJ][D]`.
pub fn encode_relations<T: Scalar>(
    g: &mut Graph<T>,
    enc: &LinearPar<TensorId>,
    relation_inputs: TensorId,
) -> Result<TensorId, NumericsError> {
    linear(g, enc, relation_inputs)
}

/// Combined per-joint embedding rows: joint `(n, j)` gets
/// `person_emb[n] + joint_emb[j]`, shape `[N*J][D]`.
pub fn positional_rows<T: Scalar>(
    g: &mut Graph<T>,
    pos: &EmbeddingPar<TensorId>,
    persons: usize,
    joints: usize,
) -> Result<TensorId, NumericsError> {
    let person_used = g.narrow_rows(pos.person, 0, persons)?;
    let person_rows = g.repeat_rows(person_used, joints)?;
    let joint_rows = g.tile_rows(pos.joint, persons)?;
    g.add(person_rows, joint_rows)
}

/// Pairwise embedding: relation `(a, b)` gets `PE[a] + PE[b]`, flat
/// `[NJ*NJ][D]`. Symmetric under pair swap by construction.
pub fn positional_pairs<T: Scalar>(
    g: &mut Graph<T>,
    pe_rows: TensorId,
    nj: usize,
) -> Result<TensorId, NumericsError> {
    let a = g.repeat_rows(pe_rows, nj)?;
    let b = g.tile_rows(pe_rows, nj)?;
    g.add(a, b)
}

/// Inject positional information into both streams: joint features get the
/// combined per-joint embedding, relation features the pairwise sum.
pub fn add_positional<T: Scalar>(
    g: &mut Graph<T>,
    f_j: TensorId,
    f_r: TensorId,
    pe_rows: TensorId,
    pe_pairs: TensorId,
) -> Result<(TensorId, TensorId), NumericsError> {
    Ok((g.add(f_j, pe_rows)?, g.add(f_r, pe_pairs)?))
}
