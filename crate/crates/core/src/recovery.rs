//! Inversion of pooled measurements by alternating minimization.
//!
//! Each iteration rescales the current per-pool response directions to the
//! measured pool norms, then maps the result back to signal space with a
//! least-squares solve (or a least-squares solve on the unit sphere).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::frames::Frame;
use crate::init::{knn_init, TrainingIndex};
use crate::linalg;
use crate::pooling::{PoolNorm, PooledMeasurement, PoolingSpec};

/// Largest pool count accepted by [`sign_oracle`].
pub const MAX_ORACLE_POOLS: usize = 16;

const REINIT_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub enum Init {
    /// Gaussian vector drawn from the config seed.
    Random,
    Vector(DVector<f64>),
    Knn(Arc<TrainingIndex>),
}

#[derive(Debug, Clone)]
pub struct RecoveryConfig {
    pub spec: PoolingSpec,
    pub init: Init,
    pub max_iter: usize,
    /// Stop once `|x_{n+1} - x_n| / |x_n|` drops below this.
    pub tol: f64,
    /// Solve step 2 on the unit sphere instead of by pseudoinverse.
    pub unit_norm: bool,
    pub seed: u64,
}

impl RecoveryConfig {
    pub fn new(spec: PoolingSpec) -> Self {
        RecoveryConfig {
            spec,
            init: Init::Random,
            max_iter: 500,
            tol: 1e-8,
            unit_norm: false,
            seed: 0,
        }
    }

    pub fn init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn unit_norm(mut self, unit_norm: bool) -> Self {
        self.unit_norm = unit_norm;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub reconstruction: DVector<f64>,
    pub iterations_used: usize,
    /// `|F_S^T x_{n+1} - y_n|` after each iteration, where `S` is the set of
    /// rows used in the least-squares step.
    pub residual_trace: Vec<f64>,
}

impl RecoveryResult {
    pub fn final_residual(&self) -> f64 {
        self.residual_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// Recovery angle of the reconstruction against a reference signal.
    pub fn angle_to(&self, truth: &DVector<f64>) -> Result<f64> {
        recovery_angle(&self.reconstruction, truth)
    }
}

/// `|r^T x|^2 / (|r|^2 |x|^2)`, which is 1 exactly when `r = c x`.
pub fn recovery_angle(r: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    check_len("signal", x.len(), r.len())?;
    let (rr, xx) = (r.norm_squared(), x.norm_squared());
    if rr == 0.0 || xx == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    let c = r.dot(x);
    Ok((c * c / (rr * xx)).clamp(0.0, 1.0))
}

fn random_signal(n: usize, seed: u64) -> DVector<f64> {
    linalg::gaussian_vector(&mut ChaCha8Rng::seed_from_u64(seed), n)
}

/// Per-pool rescaling `m_k * z_k / |z_k|_p`; pools with zero response get
/// a zero target.
fn rescale(f: &Frame, p: PoolNorm, z: &DVector<f64>, meas: &DVector<f64>) -> DVector<f64> {
    let mut y = z.clone();
    for k in 0..f.num_pools() {
        let range = f.pool_range(k);
        let norm = p.norm(z.as_slice()[range.clone()].iter());
        let scale = if norm > 0.0 { meas[k] / norm } else { 0.0 };
        for i in range {
            y[i] *= scale;
        }
    }
    y
}

/// Recovers a signal from pooled measurements by alternating minimization.
///
/// For rectified specs only the coordinates whose current rectified
/// response is strictly positive take part in the least-squares step, and
/// their target is shifted back by the threshold.
pub fn alt_min(
    f: &Frame,
    meas: &PooledMeasurement,
    cfg: &RecoveryConfig,
) -> Result<RecoveryResult> {
    cfg.validate()?;
    cfg.spec.validate(f)?;
    check_len("measurement", f.num_pools(), meas.values.len())?;
    if meas.spec.p != cfg.spec.p || meas.spec.rectify != cfg.spec.rectify {
        return Err(Error::invalid(format!(
            "measurements were taken with p={} rectify={} but recovery uses p={} rectify={}",
            meas.spec.p, meas.spec.rectify, cfg.spec.p, cfg.spec.rectify
        )));
    }
    let n = f.dim();
    let spec = &cfg.spec;

    let mut x = match &cfg.init {
        Init::Random => random_signal(n, cfg.seed),
        Init::Vector(v) => {
            check_len("initial signal", n, v.len())?;
            v.clone()
        }
        Init::Knn(index) => knn_init(index, meas)?,
    };
    let mut reinitialised = false;
    if x.norm() == 0.0 {
        reinitialised = true;
        x = random_signal(n, cfg.seed ^ REINIT_SALT);
    }

    let all_rows: Vec<usize> = (0..f.len()).collect();
    let full_pinv = (!spec.rectify && !cfg.unit_norm)
        .then(|| linalg::pseudoinverse(&f.matrix().transpose()));

    let mut trace = Vec::new();
    for _ in 0..cfg.max_iter {
        let z = spec.responses(f, &x)?;
        let y = rescale(f, spec.p, &z, &meas.values);

        let (rows, target) = if spec.rectify {
            let rows: Vec<usize> = (0..f.len()).filter(|&i| z[i] > 0.0).collect();
            let target =
                DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i] + spec.threshold(i)));
            (rows, target)
        } else {
            (all_rows.clone(), y)
        };

        let cols = f.columns(&rows);
        let next = if cfg.unit_norm {
            sphere_ls_columns(&cols, &target).x
        } else if let Some(pinv) = &full_pinv {
            pinv * &target
        } else {
            linalg::pseudoinverse(&cols.transpose()) * &target
        };
        trace.push((cols.tr_mul(&next) - &target).norm());

        if next.norm() == 0.0 || !next.iter().all(|v| v.is_finite()) {
            if reinitialised {
                return Err(Error::DegenerateIterate);
            }
            reinitialised = true;
            x = random_signal(n, cfg.seed ^ REINIT_SALT);
            continue;
        }

        let change = (&next - &x).norm() / x.norm();
        x = next;
        if change < cfg.tol {
            break;
        }
    }

    Ok(RecoveryResult {
        reconstruction: x,
        iterations_used: trace.len(),
        residual_trace: trace,
    })
}

#[derive(Debug, Clone)]
pub struct SphereSolution {
    pub x: DVector<f64>,
    /// Set when `y = 0` and the objective does not single out a direction.
    pub degenerate: bool,
}

/// Exact minimiser of `|F^T x - y|^2` over the unit sphere.
pub fn sphere_constrained_ls(f: &Frame, y: &DVector<f64>) -> Result<SphereSolution> {
    check_len("measurement vector", f.len(), y.len())?;
    Ok(sphere_ls_columns(f.matrix(), y))
}

/// Sphere-constrained least squares for the system `cols^T x = y`.
///
/// Stationary points satisfy `(C C^T + mu I) x = C y`; the global minimiser
/// has `mu >= -lambda_min(C C^T)`, where the secular function
/// `sum_i c_i^2 / (lambda_i + mu)^2` is decreasing, so `mu` is found by
/// bisection. When the bottom eigen-component of `C y` vanishes and the
/// secular function never reaches 1 (the hard case), the remaining norm is
/// put along the bottom eigenvector.
pub(crate) fn sphere_ls_columns(cols: &DMatrix<f64>, y: &DVector<f64>) -> SphereSolution {
    let n = cols.nrows();
    if y.norm() == 0.0 || cols.ncols() == 0 {
        let mut e = DVector::zeros(n);
        e[0] = 1.0;
        return SphereSolution {
            x: e,
            degenerate: true,
        };
    }

    let unconstrained = linalg::pseudoinverse(&cols.transpose()) * y;
    let un = unconstrained.norm();
    if (un - 1.0).abs() <= 1e-9 {
        return SphereSolution {
            x: unconstrained / un,
            degenerate: false,
        };
    }

    let eig = SymmetricEigen::new(cols * cols.transpose());
    let g = cols * y;
    let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let coeffs: Vec<f64> = (0..n).map(|i| eig.eigenvectors.column(i).dot(&g)).collect();
    let lmax = lambdas.iter().copied().fold(0.0, f64::max);
    let lmin = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let gnorm = g.norm();

    let bottom: Vec<usize> = (0..n)
        .filter(|&i| lambdas[i] - lmin <= 1e-12 * lmax.max(1.0))
        .collect();
    let bottom_mass: f64 = bottom.iter().map(|&i| coeffs[i] * coeffs[i]).sum();

    let assemble = |mu: f64, skip: &[usize]| -> DVector<f64> {
        let mut x = DVector::zeros(n);
        for i in 0..n {
            if !skip.contains(&i) {
                x += eig.eigenvectors.column(i) * (coeffs[i] / (lambdas[i] + mu));
            }
        }
        x
    };

    if bottom_mass.sqrt() <= 1e-12 * gnorm.max(f64::MIN_POSITIVE) {
        let partial = assemble(-lmin, &bottom);
        let pn2 = partial.norm_squared();
        if pn2 <= 1.0 {
            let x = partial + eig.eigenvectors.column(bottom[0]) * (1.0 - pn2).sqrt();
            return SphereSolution {
                x,
                degenerate: false,
            };
        }
    }

    let secular = |mu: f64| -> f64 {
        (0..n)
            .map(|i| {
                let d = lambdas[i] + mu;
                coeffs[i] * coeffs[i] / (d * d)
            })
            .sum()
    };
    let mut lo = -lmin;
    let mut hi = gnorm - lmin;
    while secular(hi) > 1.0 {
        hi = lo + 2.0 * (hi - lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if secular(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = assemble(hi, &[]);
    let xn = x.norm();
    SphereSolution {
        x: x / xn,
        degenerate: false,
    }
}

/// Brute-force inversion of the phaseless map for small instances: tries
/// every sign pattern on the measurements and keeps the least-squares
/// solution with the smallest residual (first pattern on ties).
pub fn sign_oracle(f: &Frame, meas: &PooledMeasurement) -> Result<DVector<f64>> {
    if f.pool_size() != 1 || meas.spec.p != PoolNorm::L2 || meas.spec.rectify {
        return Err(Error::invalid(
            "sign oracle needs singleton pools and non-rectified l2 measurements",
        ));
    }
    let k = f.num_pools();
    if k > MAX_ORACLE_POOLS {
        return Err(Error::Capacity(format!(
            "sign oracle enumerates 2^{k} patterns; limit is 2^{MAX_ORACLE_POOLS}"
        )));
    }
    check_len("measurement", k, meas.values.len())?;
    Ok(sign_search(f, &meas.values).1)
}

/// Smallest residual over all sign patterns and the matching solution.
fn sign_search(f: &Frame, values: &DVector<f64>) -> (f64, DVector<f64>) {
    let k = values.len();
    let a = f.matrix().transpose();
    let pinv = linalg::pseudoinverse(&a);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut signed = values.clone();
    for mask in 0u64..(1 << k) {
        for i in 0..k {
            let m = values[i];
            signed[i] = if mask >> i & 1 == 1 { -m } else { m };
        }
        let x = &pinv * &signed;
        let res = (&a * &x - &signed).norm();
        if best.as_ref().is_none_or(|(r, _)| res < *r) {
            best = Some((res, x));
        }
    }
    best.expect("at least one sign pattern")
}
