//! Frames of `R^N` organised into equal-size pools.
//!
//! A frame is stored as an `N x M` matrix whose columns are the analysis
//! vectors; the forward map is `x -> F^T x`. Pool `k` owns the contiguous
//! columns `k*L .. (k+1)*L`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;

/// Largest pool size accepted by [`hadamard_lift`]; the lift has `2^L`
/// columns per pool.
pub const MAX_LIFT_POOL: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    matrix: DMatrix<f64>,
    pool_size: usize,
}

impl Frame {
    pub fn new(matrix: DMatrix<f64>, pool_size: usize) -> Result<Self> {
        let (n, m) = matrix.shape();
        if n == 0 {
            return Err(Error::invalid("frame must have at least one row"));
        }
        if pool_size == 0 {
            return Err(Error::invalid("pool size must be positive"));
        }
        if m == 0 || m % pool_size != 0 {
            return Err(Error::invalid(format!(
                "{m} columns cannot be split into pools of size {pool_size}"
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("frame contains NaN or infinite entries"));
        }
        Ok(Frame { matrix, pool_size })
    }

    /// Frame with one pool per column.
    pub fn ungrouped(matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix, 1)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Signal dimension `N`.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of frame vectors `M`.
    pub fn len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.ncols() == 0
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn num_pools(&self) -> usize {
        self.matrix.ncols() / self.pool_size
    }

    pub fn pool_range(&self, k: usize) -> Range<usize> {
        k * self.pool_size..(k + 1) * self.pool_size
    }

    pub fn pool_of(&self, column: usize) -> usize {
        column / self.pool_size
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.matrix.column(i).into_owned()
    }

    /// `F^T x`, the vector of inner products `<x, f_i>`.
    pub fn analysis(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("signal", self.dim(), x.len())?;
        Ok(self.matrix.tr_mul(x))
    }

    /// Sub-frame made of the columns in `cols`, regrouped as singletons.
    pub fn columns(&self, cols: &[usize]) -> DMatrix<f64> {
        linalg::select_columns(&self.matrix, cols)
    }

    /// All columns belonging to the listed pools.
    pub fn pool_columns(&self, pools: &[usize]) -> Vec<usize> {
        pools.iter().flat_map(|&k| self.pool_range(k)).collect()
    }

    pub fn with_pool_size(&self, pool_size: usize) -> Result<Frame> {
        Frame::new(self.matrix.clone(), pool_size)
    }
}

/// Lower and upper frame bounds of a set of vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
}

/// A strictly increasing set of indices below some bound.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexSubset(Vec<usize>);

impl IndexSubset {
    /// Sorts and deduplicates `indices`; fails if any index is `>= bound`.
    pub fn new(mut indices: Vec<usize>, bound: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            if last >= bound {
                return Err(Error::invalid(format!(
                    "index {last} out of range for {bound} elements"
                )));
            }
        }
        Ok(IndexSubset(indices))
    }

    pub fn full(bound: usize) -> Self {
        IndexSubset((0..bound).collect())
    }

    /// Subset encoded by the set bits of `mask` (bit `i` selects index `i`).
    pub fn from_mask(mask: u64, bound: usize) -> Self {
        IndexSubset((0..bound).filter(|&i| mask >> i & 1 == 1).collect())
    }

    pub fn complement(&self, bound: usize) -> Self {
        let mut out = Vec::with_capacity(bound.saturating_sub(self.0.len()));
        let mut it = self.0.iter().peekable();
        for i in 0..bound {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        IndexSubset(out)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Gaussian i.i.d. frame with `k` pools of size `l` in `R^n`.
///
/// With `pairwise_orthogonal` (only valid for `l == 2`) the two columns of
/// every pool are Gram-Schmidt orthonormalised, keeping the direction of the
/// first one.
pub fn make_random_frame(
    n: usize,
    k: usize,
    l: usize,
    pairwise_orthogonal: bool,
    seed: u64,
) -> Result<Frame> {
    if n == 0 || k == 0 || l == 0 {
        return Err(Error::invalid("n, k and l must all be at least 1"));
    }
    if pairwise_orthogonal && l != 2 {
        return Err(Error::invalid(format!(
            "pairwise orthogonalisation needs pools of size 2, got {l}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matrix = linalg::gaussian_matrix(&mut rng, n, k * l);
    if pairwise_orthogonal {
        for pool in 0..k {
            let (a, b) = (2 * pool, 2 * pool + 1);
            let first = matrix.column(a).normalize();
            let mut second = matrix.column(b).into_owned();
            second -= &first * first.dot(&second);
            let second = second.normalize();
            matrix.set_column(a, &first);
            matrix.set_column(b, &second);
        }
    }
    Frame::new(matrix, l)
}

/// Frame bounds of the columns selected by `omega`.
///
/// In ambient mode `lambda_minus` is the lower frame bound in `R^N`, which is
/// zero whenever the selected columns do not span. With `restrict_to_span`
/// it is the smallest nonzero singular value, i.e. the lower bound of the
/// sub-frame on its own span. An empty selection yields `(0, 0)`.
pub fn frame_bounds(f: &Frame, omega: &IndexSubset, restrict_to_span: bool) -> SpectralBounds {
    column_bounds(&f.columns(omega.indices()), restrict_to_span)
}

/// [`frame_bounds`] on an explicit matrix of column vectors.
pub fn column_bounds(cols: &DMatrix<f64>, restrict_to_span: bool) -> SpectralBounds {
    let sv = linalg::singular_values(cols);
    if sv.is_empty() {
        return SpectralBounds {
            lambda_minus: 0.0,
            lambda_plus: 0.0,
        };
    }
    let lambda_plus = sv.iter().copied().fold(0.0, f64::max);
    let lambda_minus = if restrict_to_span {
        sv.iter()
            .copied()
            .filter(|&s| s > linalg::RANK_TOL * lambda_plus)
            .fold(f64::INFINITY, f64::min)
    } else if cols.ncols() < cols.nrows() {
        0.0
    } else {
        sv.iter().copied().fold(f64::INFINITY, f64::min)
    };
    SpectralBounds {
        lambda_minus: if lambda_minus.is_finite() { lambda_minus } else { 0.0 },
        lambda_plus,
    }
}

/// Ambient lower frame bound of the given columns; 0 for an empty set.
pub fn lower_bound(cols: &DMatrix<f64>) -> f64 {
    column_bounds(cols, false).lambda_minus
}

/// Minimum-norm least-squares solution of `F^T x = y`.
pub fn apply_pseudoinverse(f: &Frame, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("measurement vector", f.len(), y.len())?;
    Ok(linalg::pseudoinverse(&f.matrix.transpose()) * y)
}

/// The `L x 2^L` matrix whose columns are all sign vectors in `{-1, 1}^L`.
/// Column `e` has `-1` in row `i` exactly when bit `i` of `e` is set.
pub fn sign_matrix(l: usize) -> DMatrix<f64> {
    DMatrix::from_fn(l, 1 << l, |i, e| if e >> i & 1 == 1 { -1.0 } else { 1.0 })
}

/// Replaces every pool `F_k` by the `2^L` vectors `sum_i eps_i f_{k,i}`,
/// turning l1 pooling on `f` into max pooling on the result.
pub fn hadamard_lift(f: &Frame) -> Result<Frame> {
    let l = f.pool_size();
    if l > MAX_LIFT_POOL {
        return Err(Error::Capacity(format!(
            "hadamard lift of pools of size {l} exceeds the limit of {MAX_LIFT_POOL}"
        )));
    }
    let signs = sign_matrix(l);
    let width = signs.ncols();
    let mut out = DMatrix::zeros(f.dim(), f.num_pools() * width);
    for k in 0..f.num_pools() {
        let block = f.matrix.columns(k * l, l) * &signs;
        out.columns_mut(k * width, width).copy_from(&block);
    }
    Frame::new(out, width)
}

#[cfg(test)]
mod tests {
    use super::*;
    fn identity2() -> Frame {
        Frame::ungrouped(DMatrix::identity(2, 2)).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Frame::new(DMatrix::zeros(2, 3), 2).is_err());
        assert!(Frame::new(DMatrix::zeros(0, 2), 1).is_err());
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(Frame::new(m, 1).is_err());
    }

    #[test]
    fn orthogonalised_pair() {
        let f = make_random_frame(2, 1, 2, true, 7).unwrap();
        assert_close!(f.column(0).dot(&f.column(1)), 0.0, 1e-12);
        assert_close!(f.column(0).norm(), 1.0, 1e-12);
        assert_close!(f.column(1).norm(), 1.0, 1e-12);
    }

    #[test]
    fn orthogonalisation_needs_pairs() {
        assert!(matches!(
            make_random_frame(3, 2, 3, true, 1),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn mnist_protocol_shape() {
        let f = make_random_frame(100, 65, 2, true, 3).unwrap();
        assert_eq!((f.dim(), f.len(), f.num_pools()), (100, 130, 65));
    }

    #[test]
    fn random_frame_is_deterministic() {
        let a = make_random_frame(5, 4, 3, false, 99).unwrap();
        let b = make_random_frame(5, 4, 3, false, 99).unwrap();
        assert_eq!(a.matrix().as_slice(), b.matrix().as_slice());
        let c = make_random_frame(5, 4, 3, false, 100).unwrap();
        assert_ne!(a.matrix().as_slice(), c.matrix().as_slice());
    }

    #[test]
    fn identity_bounds() {
        let f = identity2();
        let b = frame_bounds(&f, &IndexSubset::full(2), false);
        assert_close!(b.lambda_minus, 1.0, 1e-12);
        assert_close!(b.lambda_plus, 1.0, 1e-12);

        let one = IndexSubset::new(vec![0], 2).unwrap();
        let b = frame_bounds(&f, &one, false);
        assert_eq!(b.lambda_minus, 0.0);
        assert_close!(b.lambda_plus, 1.0, 1e-12);

        let b = frame_bounds(&f, &one, true);
        assert_close!(b.lambda_minus, 1.0, 1e-12);
    }

    #[test]
    fn empty_subset_convention() {
        let b = frame_bounds(&identity2(), &IndexSubset::new(vec![], 2).unwrap(), true);
        assert_eq!((b.lambda_minus, b.lambda_plus), (0.0, 0.0));
    }

    #[test]
    fn bounds_match_explicit_2x2_svd() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let m = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, s, s]);
        let f = Frame::ungrouped(m).unwrap();
        let omega = IndexSubset::new(vec![0, 2], 3).unwrap();
        let b = frame_bounds(&f, &omega, false);
        // Oracle: singular values of [[1, s], [0, s]] from the eigenvalues of
        // its 2x2 Gram matrix via the closed-form quadratic.
        let (a11, a12, a22) = (1.0, s, s * s + s * s);
        let tr = a11 + a22;
        let det = a11 * a22 - a12 * a12;
        let disc = (tr * tr / 4.0 - det).sqrt();
        assert_close!(b.lambda_minus, (tr / 2.0 - disc).sqrt(), 1e-12);
        assert_close!(b.lambda_plus, (tr / 2.0 + disc).sqrt(), 1e-12);
    }

    #[test]
    fn span_restricted_bound_positive_for_independent_columns() {
        let f = make_random_frame(6, 8, 1, false, 11).unwrap();
        for mask in 1u64..16 {
            let omega = IndexSubset::from_mask(mask, 8);
            assert!(frame_bounds(&f, &omega, true).lambda_minus > 0.0);
        }
    }

    #[test]
    fn subset_upper_bound_never_exceeds_full() {
        let mut seed = 0;
        for trial in 0..100u64 {
            seed += 1;
            let f = make_random_frame(3, 6, 1, false, seed).unwrap();
            let full = frame_bounds(&f, &IndexSubset::full(6), false);
            let omega = IndexSubset::from_mask(trial * 7919 % 63 + 1, 6);
            let sub = frame_bounds(&f, &omega, false);
            assert!(sub.lambda_plus <= full.lambda_plus + 1e-12);
        }
    }

    #[test]
    fn pseudoinverse_identity_and_exact_recovery() {
        let y = DVector::from_vec(vec![3.0, 4.0]);
        let x = apply_pseudoinverse(&identity2(), &y).unwrap();
        assert_close!(x[0], 3.0, 1e-12);
        assert_close!(x[1], 4.0, 1e-12);

        let f = make_random_frame(4, 9, 1, false, 5).unwrap();
        let truth = DVector::from_vec(vec![0.3, -1.2, 2.0, 0.7]);
        let y = f.analysis(&truth).unwrap();
        let x = apply_pseudoinverse(&f, &y).unwrap();
        assert!((x - truth).norm() < 1e-10);
    }

    #[test]
    fn pseudoinverse_rank_deficient_matches_normal_equations() {
        // Two identical columns plus one independent: rank 2 in R^3.
        let m = DMatrix::from_column_slice(
            3,
            4,
            &[1.0, 2.0, 0.0, 1.0, 2.0, 0.0, 0.0, 1.0, 1.0, 1.0, 3.0, 1.0],
        );
        let f = Frame::ungrouped(m.clone()).unwrap();
        let y = DVector::from_vec(vec![1.0, -1.0, 0.5, 2.0]);
        let x = apply_pseudoinverse(&f, &y).unwrap();
        // Oracle: the minimum-norm solution lies in the row space of
        // A = m^T, spanned by columns 0 and 2 of m. Solve the full-rank
        // 2x2 normal equations in that basis.
        let a = m.transpose();
        let basis = DMatrix::from_columns(&[m.column(0), m.column(2)]);
        let ab = &a * &basis;
        let c = (ab.transpose() * &ab).try_inverse().unwrap() * ab.transpose() * &y;
        let oracle = &basis * c;
        assert!((&x - &oracle).norm() < 1e-10, "{x} vs {oracle}");
        // Residual is orthogonal to the range.
        let r = &a * &x - &y;
        assert!((a.transpose() * r).norm() < 1e-10);
    }

    #[test]
    fn lift_of_single_vector() {
        let m = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let lifted = hadamard_lift(&Frame::ungrouped(m).unwrap()).unwrap();
        assert_eq!(lifted.pool_size(), 2);
        assert_eq!(lifted.matrix().as_slice(), &[1.0, 2.0, -1.0, -2.0]);
    }

    #[test]
    fn sign_matrix_rows_are_orthogonal() {
        let h = sign_matrix(3);
        let gram = &h * h.transpose();
        assert_eq!(gram, DMatrix::identity(3, 3) * 8.0);
    }

    #[test]
    fn lift_capacity_guard() {
        let f = Frame::new(DMatrix::from_element(2, 13, 1.0), 13).unwrap();
        assert!(matches!(hadamard_lift(&f), Err(Error::Capacity(_))));
    }

    #[test]
    fn subset_complement() {
        let s = IndexSubset::new(vec![3, 1, 1], 5).unwrap();
        assert_eq!(s.indices(), &[1, 3]);
        assert_eq!(s.complement(5).indices(), &[0, 2, 4]);
        assert!(IndexSubset::new(vec![5], 5).is_err());
    }
}
