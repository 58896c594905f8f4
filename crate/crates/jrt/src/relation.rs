//! Raw relation tensor across all NJ global joints of a scene:
//! per-frame exponential-distance maps, bone adjacency, and path
//! connectivity. Global joint index = person * J + joint.

use crate::scene::Skeleton;

/// Per-pair relation channels for one scene history.
///
/// `dist` is `[NJ][NJ][T_h]` with entries `exp(-||x_i - x_j||)`; `adj` and
/// `conn` are `[NJ][NJ]` 0/1 indicators (bone edge / bone path). The
/// stacked layout feeds the relation encoder as `T_h + 2` channels in the
/// order distances, adjacency, connectivity.
#[derive(Debug, Clone)]
pub struct RelationTensor {
    pub nj: usize,
    pub t_h: usize,
    /// `[NJ][NJ][T_h]`, row-major.
    pub dist: Vec<f64>,
    /// `[NJ][NJ]`.
    pub adj: Vec<f64>,
    /// `[NJ][NJ]`.
    pub conn: Vec<f64>,
}

impl RelationTensor {
    pub fn build(history: &[f64], t_h: usize, persons: usize, skeleton: &Skeleton) -> Self {
        let nj = persons * skeleton.joint_count();
        RelationTensor {
            nj,
            t_h,
            dist: distance_tensor(history, t_h, persons, skeleton.joint_count()),
            adj: adjacency(skeleton, persons),
            conn: connectivity(skeleton, persons),
        }
    }

    pub fn dist_at(&self, i: usize, j: usize, t: usize) -> f64 {
        self.dist[(i * self.nj + j) * self.t_h + t]
    }

    /// Stacked `[NJ*NJ][T_h+2]` channel matrix for the relation encoder.
    pub fn stacked(&self) -> Vec<f64> {
        let nj = self.nj;
        let ch = self.t_h + 2;
        let mut out = vec![0.0; nj * nj * ch];
        for p in 0..nj * nj {
            out[p * ch..p * ch + self.t_h]
                .copy_from_slice(&self.dist[p * self.t_h..(p + 1) * self.t_h]);
            out[p * ch + self.t_h] = self.adj[p];
            out[p * ch + self.t_h + 1] = self.conn[p];
        }
        out
    }
}

/// `exp(-||x_i^t - x_j^t||_2)` for every global joint pair and history
/// frame. `history` is flat `[T_h][N][J][3]`.
pub fn distance_tensor(history: &[f64], t_h: usize, persons: usize, joints: usize) -> Vec<f64> {
    let nj = persons * joints;
    debug_assert_eq!(history.len(), t_h * nj * 3);
    let mut out = vec![0.0; nj * nj * t_h];
    for t in 0..t_h {
        let frame = &history[t * nj * 3..(t + 1) * nj * 3];
        for i in 0..nj {
            let pi = &frame[i * 3..i * 3 + 3];
            for j in 0..nj {
                let pj = &frame[j * 3..j * 3 + 3];
                let dx = pi[0] - pj[0];
                let dy = pi[1] - pj[1];
                let dz = pi[2] - pj[2];
                out[(i * nj + j) * t_h + t] = (-(dx * dx + dy * dy + dz * dz).sqrt()).exp();
            }
        }
    }
    out
}

/// Block-diagonal replication of the skeleton's symmetric edge indicator
/// across persons. Diagonal is 0 (no self-bone); cross-person entries 0.
pub fn adjacency(skeleton: &Skeleton, persons: usize) -> Vec<f64> {
    let j = skeleton.joint_count();
    let nj = persons * j;
    let mut out = vec![0.0; nj * nj];
    for n in 0..persons {
        for &(a, b) in skeleton.edges() {
            let (ga, gb) = (n * j + a, n * j + b);
            out[ga * nj + gb] = 1.0;
            out[gb * nj + ga] = 1.0;
        }
    }
    out
}

/// Reflexive-transitive closure of adjacency within each person block:
/// 1 iff a bone path links the joints. Diagonal is 1.
pub fn connectivity(skeleton: &Skeleton, persons: usize) -> Vec<f64> {
    let j = skeleton.joint_count();
    let nj = persons * j;
    let comp = skeleton.components();
    let mut out = vec![0.0; nj * nj];
    for n in 0..persons {
        for a in 0..j {
            for b in 0..j {
                if a == b || comp[a] == comp[b] {
                    out[(n * j + a) * nj + (n * j + b)] = 1.0;
                }
            }
        }
    }
    out
}
