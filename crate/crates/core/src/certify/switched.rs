use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::splits::{minimize_splits, split_minimum, SplitSearch};
use super::{BoundName, CertificateReport, Flag, Method, Witness};
use crate::error::{check_len, Result};
use crate::frames::{hadamard_lift, lower_bound, Frame};
use crate::linalg;

pub type Pattern = Vec<Option<usize>>;

/// Which switch rule partitions the input space into cones.
#[derive(Debug, Clone, PartialEq)]
pub enum SwitchKind {
    /// Largest `|<x, f_j>|` per pool (max-pooling).
    Abs,
    /// Largest `<x, f_j> - alpha_j` per pool, inactive when none is positive.
    Rectified(Vec<f64>),
    /// Largest signed `<x, f_j>` per pool (maxout).
    Signed,
}

impl SwitchKind {
    pub fn pattern(&self, f: &Frame, x: &DVector<f64>) -> Pattern {
        let z = f.matrix().tr_mul(x);
        (0..f.num_pools())
            .map(|k| {
                let key = |j: usize| match self {
                    SwitchKind::Abs => z[j].abs(),
                    SwitchKind::Rectified(alpha) => (z[j] - alpha[j]).max(0.0),
                    SwitchKind::Signed => z[j],
                };
                let range = f.pool_range(k);
                let mut best = (range.start, key(range.start));
                for j in range.skip(1) {
                    if key(j) > best.1 {
                        best = (j, key(j));
                    }
                }
                match self {
                    SwitchKind::Rectified(_) if best.1 <= 0.0 => None,
                    _ => Some(best.0),
                }
            })
            .collect()
    }

    /// Gap between the winning key and the runner-up in pool `k`.
    fn margin(&self, f: &Frame, z: &DVector<f64>, k: usize) -> f64 {
        let mut keys: Vec<f64> = f
            .pool_range(k)
            .map(|j| match self {
                SwitchKind::Abs => z[j].abs(),
                SwitchKind::Rectified(alpha) => (z[j] - alpha[j]).max(0.0),
                SwitchKind::Signed => z[j],
            })
            .collect();
        keys.sort_by(|a, b| b.total_cmp(a));
        if keys.len() < 2 {
            f64::INFINITY
        } else {
            keys[0] - keys[1]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchedOptions {
    /// Random input pairs whose switch patterns are compared.
    pub pair_samples: usize,
    /// Directions kept per cone for angle estimation.
    pub cone_samples: usize,
    pub seed: u64,
    /// Split search used for the same-switch term.
    pub search: SplitSearch,
}

impl Default for SwitchedOptions {
    fn default() -> Self {
        SwitchedOptions {
            pair_samples: 2000,
            cone_samples: 64,
            seed: 0,
            search: SplitSearch::default(),
        }
    }
}

/// Sampled points of one cone `C_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeSample {
    pub pattern: Pattern,
    /// Unit vectors with this pattern. Rectified cones are not scale
    /// invariant, so their samples are kept at their drawn scale.
    pub directions: Vec<DVector<f64>>,
    /// Per pool, the smallest winner/runner-up gap over the directions.
    pub margins: Vec<f64>,
}

impl ConeSample {
    fn new(pattern: Pattern, pools: usize) -> Self {
        ConeSample {
            pattern,
            directions: Vec::new(),
            margins: vec![f64::INFINITY; pools],
        }
    }

    fn push(&mut self, f: &Frame, kind: &SwitchKind, x: DVector<f64>) {
        let z = f.matrix().tr_mul(&x);
        for (k, m) in self.margins.iter_mut().enumerate() {
            *m = m.min(kind.margin(f, &z, k));
        }
        self.directions.push(x);
    }
}

/// `arccos(|<u, v>| / (|u| |v|))`, in `[0, pi/2]`. A zero vector is taken
/// to be orthogonal to everything.
pub fn cone_angle(u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    angle_from(u.dot(v), u.norm(), v.norm())
}

fn angle_from(dot: f64, nu: f64, nv: f64) -> f64 {
    if nu == 0.0 || nv == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    (dot.abs() / (nu * nv)).min(1.0).acos()
}

fn prepare(x: DVector<f64>, kind: &SwitchKind) -> DVector<f64> {
    match kind {
        SwitchKind::Rectified(_) => x,
        _ => x.normalize(),
    }
}

/// Groups `samples` Gaussian draws by switch pattern, sorted by pattern.
pub fn sample_cones(f: &Frame, kind: &SwitchKind, samples: usize, seed: u64) -> Vec<ConeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cones: BTreeMap<Pattern, ConeSample> = BTreeMap::new();
    for _ in 0..samples {
        let x = prepare(linalg::gaussian_vector(&mut rng, f.dim()), kind);
        let s = kind.pattern(f, &x);
        cones
            .entry(s.clone())
            .or_insert_with(|| ConeSample::new(s, f.num_pools()))
            .push(f, kind, x);
    }
    cones.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Formula {
    /// Max-pooling: split-minimised same-switch term plus the angle term
    /// over splits of the differing pools.
    MaxPool,
    /// Rectified max-pooling and maxout: no splits, Euclidean distance.
    Unsplit,
    /// l1 pooling through the lift: the larger of the two terms.
    Lifted,
}

struct Context<'a> {
    f: &'a Frame,
    formula: Formula,
    search: SplitSearch,
    cones: BTreeMap<Pattern, Vec<DVector<f64>>>,
    same_switch: Mutex<HashMap<Vec<usize>, (f64, Vec<usize>)>>,
    pool_lower: Mutex<HashMap<Vec<usize>, f64>>,
}

#[derive(Debug, Clone)]
struct PairBound {
    value: f64,
    same_term: f64,
    angle_term: f64,
    omega: Vec<usize>,
}

impl Context<'_> {
    /// `lambda_-` of all columns of the given pools.
    fn pool_lambda(&self, pools: &[usize]) -> f64 {
        if let Some(v) = self.pool_lower.lock().unwrap().get(pools) {
            return *v;
        }
        let v = lower_bound(&self.f.columns(&self.f.pool_columns(pools)));
        self.pool_lower.lock().unwrap().insert(pools.to_vec(), v);
        v
    }

    /// Same-switch term on the switch columns `cols`: the split minimum
    /// (or the plain `lambda_-` for the unsplit formula) and the minimising
    /// positions.
    fn same_switch(&self, cols: &[usize]) -> (f64, Vec<usize>) {
        if let Some(v) = self.same_switch.lock().unwrap().get(cols) {
            return v.clone();
        }
        let m = self.f.columns(cols);
        let v = match self.formula {
            Formula::Unsplit => (lower_bound(&m), Vec::new()),
            _ => {
                let s = split_minimum(&m, &self.search);
                (s.value, s.omega)
            }
        };
        self.same_switch.lock().unwrap().insert(cols.to_vec(), v.clone());
        v
    }

    /// Cone-image vectors `(<x, f_{s_k}>)_k` for every sampled direction.
    fn images(&self, s: &Pattern) -> DMatrix<f64> {
        let dirs = &self.cones[s];
        let mut out = DMatrix::zeros(dirs.len(), s.len());
        for (a, x) in dirs.iter().enumerate() {
            for (k, sk) in s.iter().enumerate() {
                if let Some(j) = sk {
                    out[(a, k)] = self.f.matrix().column(*j).dot(x);
                }
            }
        }
        out
    }

    /// `Lambda^2` over `pools`: `(lambda_-(F|Omega) sin beta)^2`.
    fn lambda_sq(&self, u: &DMatrix<f64>, v: &DMatrix<f64>, pools: &[usize]) -> f64 {
        if pools.is_empty() {
            return 0.0;
        }
        let lam = self.pool_lambda(pools);
        if lam == 0.0 {
            return 0.0;
        }
        let mut max_cos = 0.0f64;
        for a in 0..u.nrows() {
            let nu = pools.iter().map(|&k| u[(a, k)] * u[(a, k)]).sum::<f64>().sqrt();
            for b in 0..v.nrows() {
                let nv = pools.iter().map(|&k| v[(b, k)] * v[(b, k)]).sum::<f64>().sqrt();
                let dot: f64 = pools.iter().map(|&k| u[(a, k)] * v[(b, k)]).sum();
                let cos = angle_from(dot, nu, nv).cos();
                max_cos = max_cos.max(cos);
            }
        }
        let beta = max_cos.min(1.0).acos();
        (lam * beta.sin()).powi(2)
    }

    fn split_lambda(&self, u: &DMatrix<f64>, v: &DMatrix<f64>, pools: &[usize]) -> f64 {
        minimize_splits(pools.len(), &self.search, |member| {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (i, &p) in pools.iter().enumerate() {
                if member[i] {
                    a.push(p);
                } else {
                    b.push(p);
                }
            }
            self.lambda_sq(u, v, &a) + self.lambda_sq(u, v, &b)
        })
        .value
    }

    fn evaluate(&self, s: &Pattern, t: &Pattern) -> PairBound {
        let k = s.len();
        let (same, differ): (Vec<usize>, Vec<usize>) = (0..k).partition(|&i| s[i] == t[i]);
        let same_pools: Vec<usize> = same.iter().copied().filter(|&i| s[i].is_some()).collect();
        let cols: Vec<usize> = same_pools.iter().map(|&i| s[i].unwrap()).collect();
        let (same_term, positions) = self.same_switch(&cols);
        let omega: Vec<usize> = positions.iter().map(|&p| same_pools[p]).collect();

        let u = self.images(s);
        let v = self.images(t);
        let l = self.f.pool_size() as f64;
        let (value, angle_term) = match self.formula {
            Formula::MaxPool => {
                let angle = if differ.is_empty() {
                    0.0
                } else {
                    self.split_lambda(&u, &v, &differ) / (4.0 * l)
                };
                ((same_term * same_term + angle).sqrt(), angle)
            }
            Formula::Unsplit => {
                let angle = self.lambda_sq(&u, &v, &differ) / (4.0 * l);
                ((same_term * same_term + angle).sqrt(), angle)
            }
            Formula::Lifted => {
                let all: Vec<usize> = (0..k).collect();
                let angle = 0.5 * self.split_lambda(&u, &v, &all).sqrt();
                (same_term.max(angle), angle)
            }
        };
        PairBound {
            value,
            same_term,
            angle_term,
            omega,
        }
    }
}

fn switched_bound(
    f: &Frame,
    kind: &SwitchKind,
    formula: Formula,
    name: BoundName,
    opts: &SwitchedOptions,
) -> CertificateReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = f.dim();
    let cap = opts.cone_samples.max(1);
    let mut cones: BTreeMap<Pattern, ConeSample> = BTreeMap::new();
    let mut record = |x: DVector<f64>| -> Pattern {
        let s = kind.pattern(f, &x);
        let cone = cones
            .entry(s.clone())
            .or_insert_with(|| ConeSample::new(s.clone(), f.num_pools()));
        if cone.directions.len() < cap {
            cone.push(f, kind, x);
        }
        s
    };

    // Half independent pairs, half close pairs, which tend to share most
    // of their switches.
    let mut pairs: BTreeSet<(Pattern, Pattern)> = BTreeSet::new();
    for i in 0..opts.pair_samples.max(1) {
        let x = prepare(linalg::gaussian_vector(&mut rng, n), kind);
        let y = if i % 2 == 0 {
            prepare(linalg::gaussian_vector(&mut rng, n), kind)
        } else {
            let t = 10f64.powf(-rng.random_range(0.0..2.0));
            prepare(&x + linalg::gaussian_vector(&mut rng, n) * t, kind)
        };
        let (s, t) = (record(x), record(y));
        pairs.insert(if s <= t { (s, t) } else { (t, s) });
    }
    for _ in 0..cap {
        record(prepare(linalg::gaussian_vector(&mut rng, n), kind));
    }

    let patterns = cones.len();
    let ctx = Context {
        f,
        formula,
        search: opts.search,
        cones: cones
            .into_iter()
            .map(|(s, c)| (s, c.directions))
            .collect(),
        same_switch: Mutex::new(HashMap::new()),
        pool_lower: Mutex::new(HashMap::new()),
    };
    let pairs: Vec<(Pattern, Pattern)> = pairs.into_iter().collect();
    let (best, idx) = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (s, t))| (ctx.evaluate(s, t), i))
        .reduce_with(|a, b| {
            if (b.0.value, b.1) < (a.0.value, a.1) {
                b
            } else {
                a
            }
        })
        .expect("at least one pair is sampled");
    let (s, t) = pairs[idx].clone();

    let mut report = CertificateReport::new(
        name,
        best.value,
        Method::Sampled,
        Witness::SwitchPair {
            s,
            s_prime: t,
            omega: best.omega,
        },
    );
    report.samples_used = opts.pair_samples.max(1);
    report.flag(Flag::UpperEstimate);
    if patterns < 2 {
        report.flag(Flag::Partial);
    }
    report.detail("patterns", patterns as f64);
    report.detail("pattern_pairs", pairs.len() as f64);
    report.detail("same_switch_term", best.same_term);
    report.detail("angle_term", best.angle_term);
    report
}

/// Sampled lower bound for max-pooling, or for rectified max-pooling when
/// `alpha` is given (then with respect to the Euclidean distance).
pub fn maxpool_bound(
    f: &Frame,
    opts: &SwitchedOptions,
    alpha: Option<&[f64]>,
) -> Result<CertificateReport> {
    Ok(match alpha {
        None => switched_bound(f, &SwitchKind::Abs, Formula::MaxPool, BoundName::MaxpoolA, opts),
        Some(a) => {
            check_len("threshold vector", f.len(), a.len())?;
            let mut r = switched_bound(
                f,
                &SwitchKind::Rectified(a.to_vec()),
                Formula::Unsplit,
                BoundName::MaxpoolA,
                opts,
            );
            r.detail("rectified", 1.0);
            r
        }
    })
}

/// Sampled lower bound for maxout, with respect to the Euclidean distance.
pub fn maxout_bound(f: &Frame, opts: &SwitchedOptions) -> Result<CertificateReport> {
    Ok(switched_bound(
        f,
        &SwitchKind::Signed,
        Formula::Unsplit,
        BoundName::MaxoutA,
        opts,
    ))
}

/// Sampled lower bound for l1 pooling, computed as max-pooling over the
/// Hadamard lift. `details["lift_scaling_error"]` is the largest deviation
/// from `lambda_-(lift|Omega) = 2^(L/2) lambda_-(F|Omega)` over up to 20
/// pool subsets.
pub fn l1pool_bound(f: &Frame, opts: &SwitchedOptions) -> Result<CertificateReport> {
    let lifted = hadamard_lift(f)?;
    let mut report = switched_bound(
        &lifted,
        &SwitchKind::Abs,
        Formula::Lifted,
        BoundName::L1poolA,
        opts,
    );

    let k = f.num_pools();
    let scale = 2f64.powf(f.pool_size() as f64 / 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let pools: Vec<usize> = (0..k).filter(|_| rng.random::<bool>()).collect();
        let a = lower_bound(&lifted.columns(&lifted.pool_columns(&pools)));
        let b = lower_bound(&f.columns(&f.pool_columns(&pools)));
        worst = worst.max((a - scale * b).abs());
    }
    report.detail("lift_scaling_error", worst);
    Ok(report)
}
