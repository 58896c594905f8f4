//! Central finite-difference verification of analytic gradients.
//!
//! Runs at 64-bit only: callers instantiate their model at f64 before
//! checking. Relative error per scalar is
//! `|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)`.

use thiserror::Error;

/// Floor in the relative-error denominator; keeps zero-gradient blocks
/// from dividing by zero.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Mutable view of named parameter blocks as flat f64 arrays.
pub trait BlockAccess {
    /// Block (name, length) pairs in a stable order.
    fn blocks(&self) -> Vec<(String, usize)>;
    fn get(&self, block: usize, idx: usize) -> f64;
    fn set(&mut self, block: usize, idx: usize, value: f64);
}

/// Worst relative error observed within one parameter block.
#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_err: f64,
}

/// Per-block report of a finite-difference check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_err <= self.tol)
    }

    /// Block with the largest relative error, if any were checked.
    pub fn worst(&self) -> Option<&BlockCheck> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).expect("finite errors"))
    }
}

#[derive(Debug, Error)]
pub enum FiniteDiffError<E> {
    #[error("evaluation failed: {0}")]
    Eval(E),
    #[error("non-finite evaluation while perturbing block {block}")]
    NonFinite { block: String },
    #[error("analytic gradients missing or mis-sized for block {block}")]
    GradLayout { block: String },
}

pub fn relative_error(g_ad: f64, g_fd: f64) -> f64 {
    (g_ad - g_fd).abs() / g_ad.abs().max(g_fd.abs()).max(REL_ERR_FLOOR)
}

/// Compare analytic gradients against central finite differences for every
/// scalar of every block.
///
/// `analytic` evaluates the function once with AD and returns per-block
/// gradients in the same order as `params.blocks()`. `loss` evaluates the
/// function value only; it is called twice per scalar at `theta +- h`.
pub fn finite_diff_check<P: BlockAccess, E>(
    params: &mut P,
    mut loss: impl FnMut(&P) -> Result<f64, E>,
    analytic: impl FnOnce(&P) -> Result<Vec<Vec<f64>>, E>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, FiniteDiffError<E>> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let layout = params.blocks();
    let grads = analytic(params).map_err(FiniteDiffError::Eval)?;
    if grads.len() != layout.len() {
        return Err(FiniteDiffError::GradLayout { block: "<count>".to_string() });
    }

    let mut blocks = Vec::with_capacity(layout.len());
    for (bi, (name, len)) in layout.iter().enumerate() {
        if grads[bi].len() != *len {
            return Err(FiniteDiffError::GradLayout { block: name.clone() });
        }
        let mut max_rel = 0.0_f64;
        for (idx, &g_ad) in grads[bi].iter().enumerate() {
            let original = params.get(bi, idx);
            params.set(bi, idx, original + h);
            let up = loss(params).map_err(FiniteDiffError::Eval)?;
            params.set(bi, idx, original - h);
            let down = loss(params).map_err(FiniteDiffError::Eval)?;
            params.set(bi, idx, original);
            if !up.is_finite() || !down.is_finite() {
                return Err(FiniteDiffError::NonFinite { block: name.clone() });
            }
            let g_fd = (up - down) / (2.0 * h);
            max_rel = max_rel.max(relative_error(g_ad, g_fd));
        }
        blocks.push(BlockCheck { name: name.clone(), len: *len, max_rel_err: max_rel });
    }
    Ok(GradCheckReport { h, tol, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    struct FlatBlocks {
        names: Vec<String>,
        values: Vec<Vec<f64>>,
    }

    impl BlockAccess for FlatBlocks {
        fn blocks(&self) -> Vec<(String, usize)> {
            self.names.iter().cloned().zip(self.values.iter().map(|v| v.len())).collect()
        }
        fn get(&self, block: usize, idx: usize) -> f64 {
            self.values[block][idx]
        }
        fn set(&mut self, block: usize, idx: usize, value: f64) {
            self.values[block][idx] = value;
        }
    }

    #[test]
    fn quadratic_gradient_matches() {
        // f(w) = w . w at w = [1, -1]: gradient [2, -2] both ways.
        let mut p = FlatBlocks { names: vec!["w".into()], values: vec![vec![1.0, -1.0]] };
        let report = finite_diff_check(
            &mut p,
            |p| Ok::<_, Infallible>(p.values[0].iter().map(|v| v * v).sum()),
            |p| Ok(vec![p.values[0].iter().map(|v| 2.0 * v).collect()]),
            1e-5,
            1e-9,
        )
        .unwrap();
        assert!(report.passed(), "max err {:?}", report.worst());
        assert!(report.blocks[0].max_rel_err <= 1e-9);
    }

    #[test]
    fn zero_block_passes_under_floor() {
        // f does not depend on the block; both gradients are exactly zero.
        let mut p = FlatBlocks { names: vec!["dead".into()], values: vec![vec![0.0; 4]] };
        let report = finite_diff_check(
            &mut p,
            |_| Ok::<_, Infallible>(3.5),
            |_| Ok(vec![vec![0.0; 4]]),
            1e-5,
            1e-12,
        )
        .unwrap();
        assert_eq!(report.blocks[0].max_rel_err, 0.0);
        assert!(report.passed());
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut p = FlatBlocks { names: vec!["w".into()], values: vec![vec![2.0]] };
        let report = finite_diff_check(
            &mut p,
            |p| Ok::<_, Infallible>(p.values[0][0] * p.values[0][0]),
            |_| Ok(vec![vec![3.0]]), // true gradient is 4.0
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn non_finite_evaluation_names_block() {
        let mut p = FlatBlocks { names: vec!["w".into()], values: vec![vec![1.0]] };
        let err = finite_diff_check(
            &mut p,
            |p| Ok::<_, Infallible>((p.values[0][0] - 1.0).ln()),
            |_| Ok(vec![vec![0.0]]),
            1e-5,
            1e-4,
        )
        .unwrap_err();
        match err {
            FiniteDiffError::NonFinite { block } => assert_eq!(block, "w"),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
