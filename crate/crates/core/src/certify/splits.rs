use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DEFAULT_EXACT_LIMIT;
use crate::frames::lower_bound;
use crate::linalg::select_columns;

/// How to search over two-way splits `Omega | Omega^c` of a set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSearch {
    /// Sets up to this size are enumerated exhaustively.
    pub exact_limit: usize,
    /// Number of random splits tried for larger sets.
    pub samples: usize,
    pub seed: u64,
}

impl Default for SplitSearch {
    fn default() -> Self {
        SplitSearch {
            exact_limit: DEFAULT_EXACT_LIMIT,
            samples: 4096,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitMinimum {
    pub value: f64,
    /// Minimising `Omega`, as positions in the searched set.
    pub omega: Vec<usize>,
    pub exact: bool,
    pub evaluated: usize,
}

/// Minimises a split-symmetric objective over the splits of `{0..m}`.
///
/// Exhaustive search visits each unordered split once by never putting the
/// last element in `Omega`. The reduction is by `(value, split index)`, so
/// the result does not depend on the thread count.
pub(crate) fn minimize_splits<F>(m: usize, search: &SplitSearch, eval: F) -> SplitMinimum
where
    F: Fn(&[bool]) -> f64 + Sync,
{
    if m == 0 {
        return SplitMinimum {
            value: eval(&[]),
            omega: Vec::new(),
            exact: true,
            evaluated: 1,
        };
    }
    let exact = m <= search.exact_limit.min(40);
    let candidates: Vec<Vec<bool>> = if exact {
        Vec::new()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
        std::iter::once(vec![false; m])
            .chain((0..search.samples).map(|_| (0..m).map(|_| rng.random::<bool>()).collect()))
            .collect()
    };
    let count = if exact { 1usize << (m - 1) } else { candidates.len() };
    let member = |idx: usize| -> Vec<bool> {
        if exact {
            (0..m).map(|i| idx >> i & 1 == 1).collect()
        } else {
            candidates[idx].clone()
        }
    };
    let (value, best) = (0..count)
        .into_par_iter()
        .map(|idx| (eval(&member(idx)), idx))
        .reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| if (b.0, b.1) < (a.0, a.1) { b } else { a },
        );
    let omega = member(best)
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    SplitMinimum {
        value,
        omega,
        exact,
        evaluated: count,
    }
}

/// `min over Omega of sqrt(lambda_-^2(C_Omega) + lambda_-^2(C_Omega^c))`
/// for the columns of `cols`, with ambient lower frame bounds.
pub fn split_minimum(cols: &DMatrix<f64>, search: &SplitSearch) -> SplitMinimum {
    let m = cols.ncols();
    minimize_splits(m, search, |member| {
        let (inside, outside): (Vec<usize>, Vec<usize>) = (0..m).partition(|&i| member[i]);
        let a = lower_bound(&select_columns(cols, &inside));
        let b = lower_bound(&select_columns(cols, &outside));
        (a * a + b * b).sqrt()
    })
}
