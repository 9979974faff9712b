use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{to_vec, BoundName, CertificateReport, Flag, Method, Witness};
use crate::error::{Error, Result};
use crate::frames::{make_random_frame, Frame};
use crate::linalg;
use crate::pooling::{maxout_switches, Operator, PoolNorm, PoolingSpec};
use crate::recovery::{alt_min, RecoveryConfig};

/// Pairs closer than this (in the operator's distance) are skipped.
const MIN_DISTANCE: f64 = 1e-12;

/// `|Phi(x) - Phi(x')| / D(x, x')`, or `None` when `D` vanishes.
pub fn lipschitz_ratio(
    op: &Operator,
    f: &Frame,
    x: &DVector<f64>,
    x_prime: &DVector<f64>,
) -> Result<Option<f64>> {
    let d = op.distance(x, x_prime)?;
    if d < MIN_DISTANCE {
        return Ok(None);
    }
    Ok(Some((op.apply(f, x)? - op.apply(f, x_prime)?).norm() / d))
}

/// Pair `i` of the empirical sampler. Even pairs are independent
/// Gaussians; odd ones are local perturbations at scales `10^-3..1`.
fn sample_pair(n: usize, seed: u64, i: usize) -> (DVector<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    let x = linalg::gaussian_vector(&mut rng, n);
    let y = if i % 2 == 0 {
        linalg::gaussian_vector(&mut rng, n)
    } else {
        let t = 10f64.powf(-rng.random_range(0.0..3.0));
        &x + linalg::gaussian_vector(&mut rng, n) * t
    };
    (x, y)
}

/// Smallest and largest sampled Lipschitz ratio of `op` over `pairs`
/// pairs. The report value is the minimum; `details["max_ratio"]` the
/// maximum and `details["skipped"]` the number of degenerate pairs.
pub fn empirical_lipschitz(
    f: &Frame,
    op: &Operator,
    pairs: usize,
    seed: u64,
) -> Result<CertificateReport> {
    if pairs == 0 {
        return Err(Error::invalid("pairs must be at least 1"));
    }
    let ratios: Vec<Option<f64>> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let (x, y) = sample_pair(f.dim(), seed, i);
            lipschitz_ratio(op, f, &x, &y)
        })
        .collect::<Result<_>>()?;

    let mut min: Option<(f64, usize)> = None;
    let mut max = 0.0f64;
    let mut skipped = 0usize;
    for (i, r) in ratios.iter().enumerate() {
        match r {
            Some(r) => {
                if min.is_none_or(|(m, _)| *r < m) {
                    min = Some((*r, i));
                }
                max = max.max(*r);
            }
            None => skipped += 1,
        }
    }

    let mut report = match min {
        Some((value, i)) => {
            let (x, y) = sample_pair(f.dim(), seed, i);
            CertificateReport::new(
                BoundName::Empirical,
                value,
                Method::Sampled,
                Witness::Pair {
                    x: to_vec(&x),
                    x_prime: to_vec(&y),
                },
            )
        }
        None => {
            let mut r = CertificateReport::new(
                BoundName::Empirical,
                0.0,
                Method::Sampled,
                Witness::None {
                    reason: "every sampled pair was degenerate".into(),
                },
            );
            r.flag(Flag::Degenerate);
            r
        }
    };
    report.samples_used = pairs;
    report.empirical_min_ratio = Some(report.value);
    report.detail("max_ratio", max);
    report.detail("skipped", skipped as f64);
    Ok(report)
}

/// Outcome of [`injectivity_probe`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub trials: usize,
    /// Pairs that passed the minimum-distance filter.
    pub pairs_checked: usize,
    pub collisions: usize,
    pub min_ratio: f64,
    pub verdict: String,
    pub witness: Option<Witness>,
}

const PROBE_MIN_DISTANCE: f64 = 0.1;
const COLLISION_RATIO: f64 = 1e-9;
const PROBE_ITERS: usize = 100;

/// Searches for a second preimage of `op(x)` from a random start: alternating
/// minimization for the pooling operators, switch-wise least squares for
/// maxout.
fn preimage_candidate(
    f: &Frame,
    op: &Operator,
    x: &DVector<f64>,
    seed: u64,
) -> Result<DVector<f64>> {
    let (frame, spec) = match op {
        Operator::Pool(spec) => (f.clone(), spec.clone()),
        Operator::Modulus => (f.with_pool_size(1)?, PoolingSpec::new(PoolNorm::L2, false)),
        Operator::HalfRect { alpha } => (
            f.with_pool_size(1)?,
            PoolingSpec::new(PoolNorm::L2, true).with_alpha(alpha.clone()),
        ),
        Operator::Maxout => {
            let target = op.apply(f, x)?;
            let mut y = linalg::gaussian_vector(&mut ChaCha8Rng::seed_from_u64(seed), f.dim());
            for _ in 0..PROBE_ITERS {
                let s = maxout_switches(f, &y)?;
                let cols = f.columns(&s.indices);
                let next = linalg::pseudoinverse(&cols.transpose()) * &target;
                let done = (&next - &y).norm() <= 1e-12 * y.norm().max(1.0);
                y = next;
                if done {
                    break;
                }
            }
            return Ok(y);
        }
    };
    let meas = crate::pooling::pool(&frame, &spec, x)?;
    let cfg = RecoveryConfig::new(spec).seed(seed).max_iter(PROBE_ITERS);
    match alt_min(&frame, &meas, &cfg) {
        Ok(r) => Ok(r.reconstruction),
        Err(Error::DegenerateIterate) => Ok(DVector::zeros(f.dim())),
        Err(e) => Err(e),
    }
}

/// Looks for pairs `x, x'` with `D(x, x') >= 0.1` but
/// `|Phi(x) - Phi(x')| <= 1e-9 D(x, x')` on a random frame with `k` pools
/// of size `l` in dimension `n`.
///
/// Each trial checks an independent Gaussian pair and the pair formed by
/// `x` and the output of a preimage search started elsewhere. Finding no
/// collision supports injectivity but does not prove it.
pub fn injectivity_probe(
    n: usize,
    k: usize,
    l: usize,
    op: &Operator,
    trials: usize,
    seed: u64,
) -> Result<ProbeReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let f = make_random_frame(n, k, l, false, seed)?;
    if let Operator::HalfRect { alpha } | Operator::Pool(PoolingSpec { alpha: Some(alpha), .. }) = op {
        crate::error::check_len("threshold vector", f.len(), alpha.len())?;
    }

    let per_trial: Vec<Vec<(f64, DVector<f64>, DVector<f64>)>> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<_> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64 + 1);
            let x = linalg::gaussian_vector(&mut rng, n);
            let y = linalg::gaussian_vector(&mut rng, n);
            let candidate = preimage_candidate(&f, op, &x, rng.random())?;
            let mut out = Vec::with_capacity(2);
            for other in [y, candidate] {
                let d = op.distance(&x, &other)?;
                if d >= PROBE_MIN_DISTANCE {
                    let gap = (op.apply(&f, &x)? - op.apply(&f, &other)?).norm();
                    out.push((gap / d, x.clone(), other));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut pairs_checked = 0;
    let mut collisions = 0;
    let mut min_ratio = f64::INFINITY;
    let mut witness = None;
    for (ratio, x, y) in per_trial.into_iter().flatten() {
        pairs_checked += 1;
        if ratio <= COLLISION_RATIO {
            collisions += 1;
        }
        if ratio < min_ratio {
            min_ratio = ratio;
            witness = Some(Witness::Pair {
                x: to_vec(&x),
                x_prime: to_vec(&y),
            });
        }
    }
    let verdict = if collisions == 0 {
        "no collision found".to_string()
    } else {
        format!("{collisions} collisions found")
    };
    Ok(ProbeReport {
        n,
        k,
        l,
        trials,
        pairs_checked,
        collisions,
        min_ratio,
        verdict,
        witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn identity_l2_max_ratio_is_at_most_one() {
        let f = Frame::ungrouped(DMatrix::identity(3, 3)).unwrap();
        let op = Operator::Pool(PoolingSpec::new(PoolNorm::L2, false));
        let r = empirical_lipschitz(&f, &op, 2000, 1).unwrap();
        assert!(r.details["max_ratio"] <= 1.0 + 1e-9);
        assert!(r.value <= r.details["max_ratio"]);
    }

    #[test]
    fn antipodal_pairs_are_skipped() {
        let f = make_random_frame(3, 4, 1, false, 2).unwrap();
        let x = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        assert_eq!(lipschitz_ratio(&Operator::Modulus, &f, &x, &-&x).unwrap(), None);
        // Maxout is not sign symmetric, so the same pair counts.
        assert!(lipschitz_ratio(&Operator::Maxout, &f, &x, &-&x).unwrap().is_some());
    }

    #[test]
    fn reproducible_bit_for_bit() {
        let f = make_random_frame(3, 5, 2, false, 3).unwrap();
        let op = Operator::Pool(PoolingSpec::new(PoolNorm::Inf, false));
        let a = empirical_lipschitz(&f, &op, 500, 9).unwrap();
        let b = empirical_lipschitz(&f, &op, 500, 9).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.witness, b.witness);
    }

    #[test]
    fn zero_pairs_rejected() {
        let f = make_random_frame(2, 2, 1, false, 3).unwrap();
        assert!(empirical_lipschitz(&f, &Operator::Modulus, 0, 0).is_err());
    }

    #[test]
    fn single_modulus_collides() {
        let op = Operator::Pool(PoolingSpec::new(PoolNorm::L2, false));
        let r = injectivity_probe(2, 1, 1, &op, 200, 4).unwrap();
        assert!(r.collisions > 0);
        assert!(r.verdict.contains("collisions"));
    }

    #[test]
    fn redundant_l2_pooling_has_no_collisions() {
        let op = Operator::Pool(PoolingSpec::new(PoolNorm::L2, false));
        let r = injectivity_probe(2, 3, 2, &op, 500, 5).unwrap();
        assert_eq!(r.collisions, 0);
        assert!(r.pairs_checked >= 500);
    }
}
