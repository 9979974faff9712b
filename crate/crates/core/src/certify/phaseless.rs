use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::splits::{split_minimum, SplitMinimum, SplitSearch};
use super::{BoundName, CertificateReport, Flag, Method, Witness};
use crate::error::{check_len, Result};
use crate::frames::{column_bounds, lower_bound, Frame};
use crate::linalg;

fn method_of(split: &SplitMinimum) -> Method {
    if split.exact {
        Method::Exact
    } else {
        Method::Sampled
    }
}

/// Lower Lipschitz bound of the phaseless map `x -> |F^T x|` with respect
/// to the sign-quotient distance: the smallest value of
/// `sqrt(lambda_-^2(F_Omega) + lambda_-^2(F_Omega^c))` over all splits.
/// The matching upper bound is `lambda_+(F)`.
pub fn phaseless_bound(f: &Frame, search: &SplitSearch) -> CertificateReport {
    let split = split_minimum(f.matrix(), search);
    let mut report = CertificateReport::new(
        BoundName::PhaselessA,
        split.value,
        method_of(&split),
        Witness::Split {
            omega: split.omega.clone(),
        },
    );
    report.samples_used = split.evaluated;
    report.upper_bound = Some(column_bounds(f.matrix(), false).lambda_plus);
    if !split.exact {
        report.flag(Flag::UpperEstimate);
    }
    report
}

/// Estimate of the l2-pooling lower bound: the phaseless bound minimised
/// over frames whose pools are rotated by orthogonal `L x L` matrices.
///
/// Rotations are drawn Haar-uniformly, one independent stream per sample,
/// and the minimum over samples is reported. With singleton pools the
/// rotations are signs, which leave every frame bound unchanged, so the
/// phaseless bound is returned as is.
pub fn l2pool_bound(f: &Frame, rotation_samples: usize, search: &SplitSearch) -> CertificateReport {
    let l = f.pool_size();
    if l == 1 {
        let mut report = phaseless_bound(f, search);
        report.bound_name = BoundName::L2poolA2;
        return report;
    }
    let samples = rotation_samples.max(1);
    let k = f.num_pools();

    let evaluate = |sample: usize| -> (SplitMinimum, Vec<DMatrix<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
        rng.set_stream(sample as u64 + 1);
        let rotations: Vec<DMatrix<f64>> =
            (0..k).map(|_| linalg::haar_orthogonal(&mut rng, l)).collect();
        let mut rotated = f.matrix().clone();
        for (pool, u) in rotations.iter().enumerate() {
            let block = f.matrix().columns(pool * l, l) * u;
            rotated.columns_mut(pool * l, l).copy_from(&block);
        }
        (split_minimum(&rotated, search), rotations)
    };

    let (best_sample, best_value) = (0..samples)
        .into_par_iter()
        .map(|s| (s, evaluate(s).0.value))
        .reduce(
            || (usize::MAX, f64::INFINITY),
            |a, b| if (b.1, b.0) < (a.1, a.0) { b } else { a },
        );
    let (split, rotations) = evaluate(best_sample);

    let mut report = CertificateReport::new(
        BoundName::L2poolA2,
        best_value,
        Method::Sampled,
        Witness::Rotation {
            sample: best_sample,
            omega: split.omega,
            rotations: rotations
                .iter()
                .map(|u| u.transpose().iter().copied().collect())
                .collect(),
        },
    );
    report.samples_used = samples;
    report.upper_bound = Some(column_bounds(f.matrix(), false).lambda_plus);
    report.flag(Flag::UpperEstimate);
    report
}

fn active_set(f: &Frame, alpha: &[f64], x: &DVector<f64>) -> Vec<usize> {
    let z = f.matrix().tr_mul(x);
    (0..f.len()).filter(|&j| z[j] > alpha[j]).collect()
}

/// Estimate of the rectified l2-pooling lower bound for pools of size 2.
///
/// For each sampled pair `(x, x')` let `S` be the columns active for both
/// and `P` those active for exactly one. The pair contributes
/// `sqrt(lambda_-^2(F_P) + min_Omega [lambda_-^2(F'_Omega) + lambda_-^2(F'_Omega^c)])`
/// where `F'` is `F_S` with each pool's surviving columns rotated, and the
/// minimum also runs over `rotation_samples` Haar rotations. Distinct
/// `(S, P)` pairs are evaluated once. Other pool sizes are flagged
/// unsupported and reported as 0.
pub fn rectified_l2pool_bound(
    f: &Frame,
    alpha: &[f64],
    pair_samples: usize,
    rotation_samples: usize,
    search: &SplitSearch,
) -> Result<CertificateReport> {
    check_len("threshold vector", f.len(), alpha.len())?;
    let upper = column_bounds(f.matrix(), false).lambda_plus;
    if f.pool_size() != 2 {
        let mut report = CertificateReport::new(
            BoundName::L2poolA2,
            0.0,
            Method::Sampled,
            Witness::None {
                reason: "rectified l2 bound covers pools of size 2 only".into(),
            },
        );
        report.flag(Flag::Unsupported);
        report.details.insert("rectified".into(), 1.0);
        return Ok(report);
    }

    // Scale signals so thresholds are neither negligible nor dominant.
    let min_norm = (0..f.len())
        .map(|j| f.matrix().column(j).norm())
        .fold(f64::INFINITY, f64::min);
    let max_alpha = alpha.iter().fold(0.0f64, |m, a| m.max(*a));
    let scale = if min_norm > 0.0 { (max_alpha / min_norm).max(1.0) } else { 1.0 };

    let mut keys: BTreeSet<(Vec<usize>, Vec<usize>)> = BTreeSet::new();
    for i in 0..pair_samples.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
        rng.set_stream(i as u64 + 1);
        let x = linalg::gaussian_vector(&mut rng, f.dim()) * scale;
        let x2 = if i % 2 == 0 {
            linalg::gaussian_vector(&mut rng, f.dim()) * scale
        } else {
            let t = 10f64.powf(-rng.random_range(0.0..2.0));
            &x + linalg::gaussian_vector(&mut rng, f.dim()) * (t * scale)
        };
        let (a, b) = (active_set(f, alpha, &x), active_set(f, alpha, &x2));
        let shared: Vec<usize> = a.iter().copied().filter(|j| b.contains(j)).collect();
        let differ: Vec<usize> = a
            .iter()
            .chain(b.iter())
            .copied()
            .filter(|j| !shared.contains(j))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        keys.insert((shared, differ));
    }
    let keys: Vec<(Vec<usize>, Vec<usize>)> = keys.into_iter().collect();
    let rotations = rotation_samples.max(1);

    // Value for one (S, P) key and one rotation sample, with the minimising
    // Omega as original column indices.
    let evaluate = |shared: &[usize], differ: &[usize], sample: usize| -> (f64, Vec<usize>) {
        let c = lower_bound(&f.columns(differ));
        let mut cols = f.columns(shared);
        let mut rng = ChaCha8Rng::seed_from_u64(search.seed ^ 0x5eed);
        rng.set_stream(sample as u64 + 1);
        let mut j = 0;
        while j < shared.len() {
            let u = linalg::haar_orthogonal(&mut rng, 2);
            if j + 1 < shared.len() && f.pool_of(shared[j]) == f.pool_of(shared[j + 1]) {
                let block = cols.columns(j, 2) * u;
                cols.columns_mut(j, 2).copy_from(&block);
                j += 2;
            } else {
                j += 1;
            }
        }
        let split = split_minimum(&cols, search);
        let omega = split.omega.iter().map(|&i| shared[i]).collect();
        ((c * c + split.value * split.value).sqrt(), omega)
    };

    let (best, value) = (0..keys.len() * rotations)
        .into_par_iter()
        .map(|idx| {
            let (shared, differ) = &keys[idx / rotations];
            (idx, evaluate(shared, differ, idx % rotations).0)
        })
        .reduce(
            || (usize::MAX, f64::INFINITY),
            |a, b| if (b.1, b.0) < (a.1, a.0) { b } else { a },
        );
    let (shared, differ) = &keys[best / rotations];
    let (_, omega) = evaluate(shared, differ, best % rotations);

    let mut report = CertificateReport::new(BoundName::L2poolA2, value, Method::Sampled, Witness::Split { omega });
    report.samples_used = keys.len() * rotations;
    report.upper_bound = Some(upper);
    report.flag(Flag::UpperEstimate);
    report.details.insert("rectified".into(), 1.0);
    report.details.insert("activation_pairs".into(), keys.len() as f64);
    report.details.insert("shared_columns".into(), shared.len() as f64);
    report.details.insert("differing_columns".into(), differ.len() as f64);
    Ok(report)
}
