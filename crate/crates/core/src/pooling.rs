//! Forward operators: the phaseless map, half-rectification, lp pooling
//! (optionally rectified), maxout, and the switch patterns that describe
//! which linear regime each of them is in.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::frames::Frame;

/// Pool norm exponent. Only 1, 2 and infinity are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PoolNorm {
    #[serde(rename = "1")]
    L1,
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    Inf,
}

impl PoolNorm {
    pub const ALL: [PoolNorm; 3] = [PoolNorm::L1, PoolNorm::L2, PoolNorm::Inf];

    pub fn norm<'a, I: IntoIterator<Item = &'a f64>>(self, values: I) -> f64 {
        let it = values.into_iter();
        match self {
            PoolNorm::L1 => it.map(|v| v.abs()).sum(),
            PoolNorm::L2 => it.map(|v| v * v).sum::<f64>().sqrt(),
            PoolNorm::Inf => it.fold(0.0, |m, v| m.max(v.abs())),
        }
    }
}

impl fmt::Display for PoolNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolNorm::L1 => "1",
            PoolNorm::L2 => "2",
            PoolNorm::Inf => "inf",
        })
    }
}

impl FromStr for PoolNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "l1" => Ok(PoolNorm::L1),
            "2" | "l2" => Ok(PoolNorm::L2),
            "inf" | "linf" | "max" => Ok(PoolNorm::Inf),
            other => Err(Error::invalid(format!("unsupported pool norm {other:?}"))),
        }
    }
}

/// Which pooled operator to apply: `P_p` or, with `rectify`, `R_p` using the
/// thresholds `alpha` (all zero when absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingSpec {
    pub p: PoolNorm,
    #[serde(default)]
    pub rectify: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
}

impl PoolingSpec {
    pub fn new(p: PoolNorm, rectify: bool) -> Self {
        PoolingSpec {
            p,
            rectify,
            alpha: None,
        }
    }

    pub fn with_alpha(mut self, alpha: Vec<f64>) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn threshold(&self, i: usize) -> f64 {
        self.alpha.as_ref().map_or(0.0, |a| a[i])
    }

    pub fn validate(&self, f: &Frame) -> Result<()> {
        match &self.alpha {
            Some(a) => check_len("threshold vector", f.len(), a.len()),
            None => Ok(()),
        }
    }

    /// Rectified values `max(0, <x, f_i> - alpha_i)` if rectifying, raw
    /// inner products otherwise.
    pub(crate) fn responses(&self, f: &Frame, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.validate(f)?;
        let mut z = f.analysis(x)?;
        if self.rectify {
            for (i, v) in z.iter_mut().enumerate() {
                *v = (*v - self.threshold(i)).max(0.0);
            }
        }
        Ok(z)
    }
}

/// One pooled value per pool, tagged with the spec that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledMeasurement {
    pub values: DVector<f64>,
    pub spec: PoolingSpec,
}

/// Per-pool switch index (a global column index inside the pool), plus
/// whether the pool is active. Pools are always active except under
/// rectification, where a pool whose responses are all at or below
/// threshold has no switch.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Switches {
    pub indices: Vec<usize>,
    pub active: Vec<bool>,
}

impl Switches {
    /// Switch pattern with inactive pools erased, suitable as a cone key.
    pub fn pattern(&self) -> Vec<Option<usize>> {
        self.indices
            .iter()
            .zip(&self.active)
            .map(|(&s, &a)| a.then_some(s))
            .collect()
    }
}

/// `|<x, f_i>|` for every frame vector.
pub fn modulus(f: &Frame, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(f.analysis(x)?.abs())
}

/// `max(0, <x, f_i> - alpha_i)` for every frame vector.
pub fn half_rect(f: &Frame, alpha: &[f64], x: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("threshold vector", f.len(), alpha.len())?;
    let mut z = f.analysis(x)?;
    for (v, a) in z.iter_mut().zip(alpha) {
        *v = (*v - a).max(0.0);
    }
    Ok(z)
}

/// `P_p(x)` or `R_p(x)` depending on `spec.rectify`.
pub fn pool(f: &Frame, spec: &PoolingSpec, x: &DVector<f64>) -> Result<PooledMeasurement> {
    let z = spec.responses(f, x)?;
    Ok(PooledMeasurement {
        values: pool_responses(f, spec.p, &z),
        spec: spec.clone(),
    })
}

pub(crate) fn pool_responses(f: &Frame, p: PoolNorm, z: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(f.num_pools(), |k, _| {
        p.norm(z.as_slice()[f.pool_range(k)].iter())
    })
}

/// Per-pool maximum of the signed inner products.
pub fn maxout(f: &Frame, x: &DVector<f64>) -> Result<DVector<f64>> {
    let z = f.analysis(x)?;
    Ok(DVector::from_fn(f.num_pools(), |k, _| {
        z.as_slice()[f.pool_range(k)]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }))
}

/// First index attaining the maximum of `key` over `range`.
fn argmax(range: std::ops::Range<usize>, key: impl Fn(usize) -> f64) -> (usize, f64) {
    let mut best = (range.start, key(range.start));
    for j in range.skip(1) {
        let v = key(j);
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

/// Switches of `x`: for plain pooling the index of the largest `|<x, f_j>|`
/// in each pool; under rectification the index of the largest rectified
/// response, with the pool marked inactive when that response is zero.
/// Ties go to the smallest index.
pub fn switches(f: &Frame, spec: &PoolingSpec, x: &DVector<f64>) -> Result<Switches> {
    let z = f.analysis(x)?;
    spec.validate(f)?;
    let mut indices = Vec::with_capacity(f.num_pools());
    let mut active = Vec::with_capacity(f.num_pools());
    for k in 0..f.num_pools() {
        if spec.rectify {
            let (j, v) = argmax(f.pool_range(k), |j| (z[j] - spec.threshold(j)).max(0.0));
            indices.push(j);
            active.push(v > 0.0);
        } else {
            indices.push(argmax(f.pool_range(k), |j| z[j].abs()).0);
            active.push(true);
        }
    }
    Ok(Switches { indices, active })
}

/// Maxout switches: index of the largest signed inner product per pool.
pub fn maxout_switches(f: &Frame, x: &DVector<f64>) -> Result<Switches> {
    let z = f.analysis(x)?;
    let indices: Vec<usize> = (0..f.num_pools())
        .map(|k| argmax(f.pool_range(k), |j| z[j]).0)
        .collect();
    let active = vec![true; indices.len()];
    Ok(Switches { indices, active })
}

/// `min(|x - y|, |x + y|)`, the distance modulo a global sign.
pub fn signed_distance(x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    check_len("signal", x.len(), y.len())?;
    Ok((x - y).norm().min((x + y).norm()))
}

/// Any of the nonlinear maps studied here, as a single callable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Modulus,
    HalfRect { alpha: Vec<f64> },
    Pool(PoolingSpec),
    Maxout,
}

impl Operator {
    pub fn apply(&self, f: &Frame, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Operator::Modulus => modulus(f, x),
            Operator::HalfRect { alpha } => half_rect(f, alpha, x),
            Operator::Pool(spec) => Ok(pool(f, spec, x)?.values),
            Operator::Maxout => maxout(f, x),
        }
    }

    /// Whether `apply(x) == apply(-x)`, so distances are taken modulo sign.
    pub fn sign_symmetric(&self) -> bool {
        match self {
            Operator::Modulus => true,
            Operator::Pool(spec) => !spec.rectify,
            Operator::HalfRect { .. } | Operator::Maxout => false,
        }
    }

    /// Input-space distance matched to the operator's symmetry.
    pub fn distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        if self.sign_symmetric() {
            signed_distance(x, y)
        } else {
            check_len("signal", x.len(), y.len())?;
            Ok((x - y).norm())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::make_random_frame;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_pool() -> Frame {
        Frame::new(DMatrix::identity(2, 2), 2).unwrap()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn modulus_examples() {
        let f = Frame::ungrouped(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(modulus(&f, &v(&[3.0, -4.0])).unwrap(), v(&[3.0, 4.0]));

        let f = make_random_frame(3, 5, 1, false, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = crate::linalg::gaussian_vector(&mut rng, 3);
        let got = modulus(&f, &x).unwrap();
        assert_eq!(got, modulus(&f, &-&x).unwrap());
        for i in 0..5 {
            let direct: f64 = (0..3).map(|r| f.matrix()[(r, i)] * x[r]).sum();
            assert_close!(got[i], direct.abs(), 1e-12);
        }
    }

    #[test]
    fn half_rect_examples() {
        let f = Frame::ungrouped(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(
            half_rect(&f, &[0.0, 0.0], &v(&[3.0, -4.0])).unwrap(),
            v(&[3.0, 0.0])
        );
        assert_eq!(
            half_rect(&f, &[1e6, 1e6], &v(&[3.0, -4.0])).unwrap(),
            v(&[0.0, 0.0])
        );
        let f = make_random_frame(4, 6, 1, false, 8).unwrap();
        let alpha = [0.1, -0.2, 0.3, 0.0, 0.5, -1.0];
        let x = v(&[0.5, -1.0, 2.0, 0.25]);
        let got = half_rect(&f, &alpha, &x).unwrap();
        for i in 0..6 {
            let ip: f64 = (0..4).map(|r| f.matrix()[(r, i)] * x[r]).sum();
            assert_close!(got[i], (ip - alpha[i]).max(0.0), 1e-12);
        }
        assert!(half_rect(&f, &alpha[..5], &x).is_err());
    }

    #[test]
    fn pool_examples() {
        let f = identity_pool();
        let l2 = PoolingSpec::new(PoolNorm::L2, false);
        assert_close!(pool(&f, &l2, &v(&[3.0, 4.0])).unwrap().values[0], 5.0, 1e-12);
        let inf = PoolingSpec::new(PoolNorm::Inf, false);
        assert_eq!(pool(&f, &inf, &v(&[3.0, -4.0])).unwrap().values[0], 4.0);
        let r1 = PoolingSpec::new(PoolNorm::L1, true).with_alpha(vec![0.0, 0.0]);
        assert_eq!(pool(&f, &r1, &v(&[3.0, -4.0])).unwrap().values[0], 3.0);
        assert!(pool(&f, &l2, &v(&[1.0])).is_err());
    }

    #[test]
    fn rectified_max_below_threshold_is_zero() {
        let f = identity_pool();
        let spec = PoolingSpec::new(PoolNorm::Inf, true).with_alpha(vec![10.0, 10.0]);
        assert_eq!(pool(&f, &spec, &v(&[3.0, -4.0])).unwrap().values[0], 0.0);
        let s = switches(&f, &spec, &v(&[3.0, -4.0])).unwrap();
        assert_eq!(s.pattern(), vec![None]);
    }

    #[test]
    fn maxout_examples() {
        let f = identity_pool();
        assert_eq!(maxout(&f, &v(&[3.0, -4.0])).unwrap()[0], 3.0);
        let f = make_random_frame(3, 4, 3, false, 17).unwrap();
        let x = v(&[1.0, -0.5, 0.25]);
        let neg = maxout(&f, &-&x).unwrap();
        let z = f.analysis(&x).unwrap();
        for k in 0..4 {
            let r = f.pool_range(k);
            let min = z.as_slice()[r.clone()].iter().copied().fold(f64::INFINITY, f64::min);
            let max = z.as_slice()[r].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_close!(neg[k], -min, 1e-12);
            assert_close!(maxout(&f, &x).unwrap()[k], max, 1e-12);
        }
    }

    #[test]
    fn switch_examples() {
        let f = identity_pool();
        let inf = PoolingSpec::new(PoolNorm::Inf, false);
        assert_eq!(switches(&f, &inf, &v(&[3.0, -4.0])).unwrap().indices, vec![1]);
        assert_eq!(switches(&f, &inf, &v(&[2.0, -2.0])).unwrap().indices, vec![0]);
        assert_eq!(maxout_switches(&f, &v(&[2.0, 2.0])).unwrap().indices, vec![0]);
        assert_eq!(maxout_switches(&f, &v(&[3.0, -4.0])).unwrap().indices, vec![0]);

        let f = make_random_frame(4, 5, 3, false, 4).unwrap();
        let x = v(&[0.3, 1.0, -2.0, 0.7]);
        let z = f.analysis(&x).unwrap();
        let s = switches(&f, &inf, &x).unwrap();
        for k in 0..5 {
            let best = f
                .pool_range(k)
                .max_by(|&a, &b| z[a].abs().partial_cmp(&z[b].abs()).unwrap())
                .unwrap();
            assert_eq!(s.indices[k], best);
        }
    }

    #[test]
    fn signed_distance_examples() {
        let x = v(&[1.0, 0.0]);
        let y = v(&[0.0, 1.0]);
        assert_close!(signed_distance(&x, &y).unwrap(), 2f64.sqrt(), 1e-15);
        assert_eq!(signed_distance(&x, &x).unwrap(), 0.0);
        assert_eq!(signed_distance(&x, &-&x).unwrap(), 0.0);
        let a = v(&[0.5, -1.5, 2.0]);
        let b = v(&[-0.25, 1.0, 3.0]);
        let direct = ((0.75f64).powi(2) + 2.5f64.powi(2) + 1.0).sqrt()
            .min((0.25f64.powi(2) + 0.25 + 25.0).sqrt());
        assert_close!(signed_distance(&a, &b).unwrap(), direct, 1e-12);
    }

    #[test]
    fn norm_parsing() {
        assert_eq!("inf".parse::<PoolNorm>().unwrap(), PoolNorm::Inf);
        assert_eq!("2".parse::<PoolNorm>().unwrap(), PoolNorm::L2);
        assert!("3".parse::<PoolNorm>().is_err());
        assert_eq!(PoolNorm::Inf.to_string(), "inf");
    }

    #[test]
    fn rectified_pooling_is_not_sign_symmetric() {
        let f = make_random_frame(3, 4, 2, false, 5).unwrap();
        let spec = PoolingSpec::new(PoolNorm::L2, true);
        let x = v(&[1.0, 2.0, -0.5]);
        let a = pool(&f, &spec, &x).unwrap().values;
        let b = pool(&f, &spec, &-&x).unwrap().values;
        assert!((a - b).norm() > 1e-6);
    }
}
