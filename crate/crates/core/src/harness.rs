//! Recovery experiments: sweep the number of pools, recover held-out
//! signals with each method and average the recovery angle.
//!
//! A config is JSON, for example:
//!
//! ```json
//! {
//!   "data": {"kind": "synthetic", "n": 20, "count": 2050, "seed": 1},
//!   "preprocess": ["mean_removal", {"pca": 10}],
//!   "frame": {"kind": "random", "pairwise_orthogonal": true},
//!   "pool_size": 2,
//!   "sweep": [10, 20, 40],
//!   "p": ["1", "2", "inf"],
//!   "rectify": [false, true],
//!   "methods": ["altmin-random", "altmin-knn", "knn-only"],
//!   "trials": 50,
//!   "q": 10,
//!   "seed": 7
//! }
//! ```
//!
//! Datasets such as image patches are supplied as `{"kind": "file",
//! "path": ...}`, a CSV with one signal per column (e.g. 100 x T after PCA
//! or 256 x T for 16x16 patches). The sweep variable is the pool count K;
//! with pools of size 2 the frame has 2K columns.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{make_random_frame, Frame};
use crate::init::{build_index, knn_init, TrainingIndex};
use crate::io;
use crate::linalg;
use crate::pooling::{pool, PoolNorm, PoolingSpec};
use crate::recovery::{alt_min, recovery_angle, Init, RecoveryConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// i.i.d. standard Gaussian signals.
    Synthetic { n: usize, count: usize, seed: u64 },
    /// Gaussian mixture: `clusters` unit-norm centres scaled by `radius`,
    /// each signal a centre plus isotropic noise of standard deviation
    /// `spread`.
    Clusters {
        n: usize,
        count: usize,
        clusters: usize,
        #[serde(default = "one")]
        radius: f64,
        spread: f64,
        seed: u64,
    },
    /// Headerless CSV, one signal per column.
    File { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    /// Subtracts from each signal its own mean.
    MeanRemoval,
    UnitNorm,
    /// Projects onto the top principal directions of the training split.
    Pca(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FrameSource {
    Random {
        #[serde(default = "yes")]
        pairwise_orthogonal: bool,
    },
    /// A stored frame, e.g. a learned dictionary.
    File { path: PathBuf },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RecoveryMethod {
    #[serde(rename = "altmin-random")]
    AltminRandom,
    #[serde(rename = "altmin-knn")]
    AltminKnn,
    #[serde(rename = "knn-only")]
    KnnOnly,
}

impl RecoveryMethod {
    fn needs_index(self) -> bool {
        self != RecoveryMethod::AltminRandom
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub preprocess: Vec<Preprocess>,
    pub frame: FrameSource,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    pub sweep: Vec<usize>,
    #[serde(default = "default_p")]
    pub p: Vec<PoolNorm>,
    #[serde(default = "default_rectify")]
    pub rectify: Vec<bool>,
    /// Threshold applied to every coordinate under rectification.
    #[serde(default)]
    pub alpha: f64,
    pub methods: Vec<RecoveryMethod>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_q")]
    pub q: usize,
    /// Training signals kept after the test split; all remaining by default.
    #[serde(default)]
    pub train_count: Option<usize>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub unit_norm: bool,
    /// Initial signals for `altmin-random`, one column per trial, instead
    /// of random draws.
    #[serde(default)]
    pub init_file: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; the rayon default when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Record wall-clock time per point. Off by default so that output is
    /// reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
}

fn default_pool_size() -> usize {
    2
}
fn default_p() -> Vec<PoolNorm> {
    vec![PoolNorm::L2]
}
fn default_rectify() -> Vec<bool> {
    vec![false]
}
fn default_trials() -> usize {
    50
}
fn default_q() -> usize {
    10
}
fn default_max_iter() -> usize {
    500
}
fn default_tol() -> f64 {
    1e-8
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        // Relative paths are resolved against the config's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::File { path } = &mut cfg.data {
            fix(path);
        }
        if let FrameSource::File { path } = &mut cfg.frame {
            fix(path);
        }
        if let Some(p) = &mut cfg.init_file {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() || self.sweep.contains(&0) {
            return Err(Error::invalid("sweep must be a nonempty list of positive pool counts"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.p.is_empty() || self.rectify.is_empty() || self.methods.is_empty() {
            return Err(Error::invalid("p, rectify and methods must be nonempty"));
        }
        if self.pool_size == 0 {
            return Err(Error::invalid("pool_size must be at least 1"));
        }
        if let FrameSource::Random { pairwise_orthogonal: true } = self.frame {
            if self.pool_size != 2 {
                return Err(Error::invalid("pairwise orthogonal frames need pool_size 2"));
            }
        }
        let mut files: Vec<&Path> = Vec::new();
        if let DataSource::File { path } = &self.data {
            files.push(path);
        }
        if let FrameSource::File { path } = &self.frame {
            files.push(path);
        }
        if let Some(p) = &self.init_file {
            files.push(p);
        }
        for p in files {
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub p: PoolNorm,
    pub rectify: bool,
    pub method: RecoveryMethod,
    pub mean_angle: f64,
    pub stderr: f64,
    pub mean_iters: f64,
    pub wall_ms: f64,
}

/// Generates or loads the raw data matrix.
pub fn load_data(source: &DataSource) -> Result<DMatrix<f64>> {
    match source {
        DataSource::Synthetic { n, count, seed } => {
            if *n == 0 || *count == 0 {
                return Err(Error::invalid("synthetic data needs n, count >= 1"));
            }
            Ok(linalg::gaussian_matrix(&mut ChaCha8Rng::seed_from_u64(*seed), *n, *count))
        }
        DataSource::Clusters {
            n,
            count,
            clusters,
            radius,
            spread,
            seed,
        } => {
            if *n == 0 || *count == 0 || *clusters == 0 {
                return Err(Error::invalid("cluster data needs n, count, clusters >= 1"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let centres: Vec<DVector<f64>> = (0..*clusters)
                .map(|_| linalg::gaussian_vector(&mut rng, *n).normalize() * *radius)
                .collect();
            let mut out = DMatrix::zeros(*n, *count);
            for j in 0..*count {
                let x = &centres[j % clusters] + linalg::gaussian_vector(&mut rng, *n) * *spread;
                out.set_column(j, &x);
            }
            Ok(out)
        }
        DataSource::File { path } => io::read_matrix(path),
    }
}

/// Applies `ops` in order, fitting PCA on all columns.
pub fn preprocess(data: &DMatrix<f64>, ops: &[Preprocess]) -> Result<DMatrix<f64>> {
    let all: Vec<usize> = (0..data.ncols()).collect();
    preprocess_fitted(data, ops, &all)
}

/// Applies `ops` in order, fitting PCA on the columns `fit` only. PCA
/// subtracts the mean of the fitted columns and projects onto their top
/// principal directions.
pub fn preprocess_fitted(
    data: &DMatrix<f64>,
    ops: &[Preprocess],
    fit: &[usize],
) -> Result<DMatrix<f64>> {
    let mut x = data.clone();
    for op in ops {
        match *op {
            Preprocess::MeanRemoval => {
                for mut c in x.column_iter_mut() {
                    let mean = c.mean();
                    c.add_scalar_mut(-mean);
                }
            }
            Preprocess::UnitNorm => {
                for mut c in x.column_iter_mut() {
                    let norm = c.norm();
                    if norm > 0.0 {
                        c /= norm;
                    }
                }
            }
            Preprocess::Pca(dim) => {
                let (n, t) = (x.nrows(), fit.len());
                if dim == 0 || dim > n.min(t) {
                    return Err(Error::invalid(format!(
                        "PCA dimension {dim} must lie in 1..={}",
                        n.min(t)
                    )));
                }
                let sub = linalg::select_columns(&x, fit);
                let mean = sub.column_mean();
                let centred = DMatrix::from_fn(n, t, |i, j| sub[(i, j)] - mean[i]);
                let eig = SymmetricEigen::new(&centred * centred.transpose());
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
                let basis = linalg::select_columns(&eig.eigenvectors, &order[..dim]);
                let shifted = DMatrix::from_fn(n, x.ncols(), |i, j| x[(i, j)] - mean[i]);
                x = basis.tr_mul(&shifted);
            }
        }
    }
    Ok(x)
}

/// Preprocessed training and test signals. The split is a seeded shuffle:
/// the first `trials` columns become the test set.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let raw = load_data(&cfg.data)?;
    let t = raw.ncols();
    let need_train = cfg.methods.iter().any(|m| m.needs_index());
    if t < cfg.trials + usize::from(need_train) * cfg.q {
        return Err(Error::invalid(format!(
            "{t} signals cannot supply {} test signals and q={} neighbours",
            cfg.trials, cfg.q
        )));
    }
    let mut order: Vec<usize> = (0..t).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let test_idx = &order[..cfg.trials];
    let mut train_idx = order[cfg.trials..].to_vec();
    if let Some(c) = cfg.train_count {
        train_idx.truncate(c);
    }
    let fit = if train_idx.is_empty() { test_idx.to_vec() } else { train_idx.clone() };
    let data = preprocess_fitted(&raw, &cfg.preprocess, &fit)?;
    Ok((
        linalg::select_columns(&data, &train_idx),
        linalg::select_columns(&data, test_idx),
    ))
}

const FRAME_SALT: u64 = 0xF4A3_E5C1_0000_0000;

fn frame_for(cfg: &ExperimentConfig, n: usize, k: usize, stored: Option<&Frame>) -> Result<Frame> {
    match (&cfg.frame, stored) {
        (FrameSource::Random { pairwise_orthogonal }, _) => make_random_frame(
            n,
            k,
            cfg.pool_size,
            *pairwise_orthogonal,
            cfg.seed ^ FRAME_SALT ^ k as u64,
        ),
        (FrameSource::File { path }, Some(f)) => {
            if f.num_pools() != k || f.pool_size() != cfg.pool_size || f.dim() != n {
                return Err(Error::data(
                    path,
                    format!(
                        "frame has {} pools of size {} in dimension {}, but the sweep asks for {k} pools of size {} in dimension {n}",
                        f.num_pools(),
                        f.pool_size(),
                        f.dim(),
                        cfg.pool_size
                    ),
                ));
            }
            Ok(f.clone())
        }
        (FrameSource::File { .. }, None) => unreachable!("stored frame is loaded up front"),
    }
}

struct Trial {
    angle: f64,
    iters: f64,
}

fn run_trial(
    f: &Frame,
    spec: &PoolingSpec,
    method: RecoveryMethod,
    x: &DVector<f64>,
    index: Option<&Arc<TrainingIndex>>,
    init: Option<DVector<f64>>,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Trial> {
    let meas = pool(f, spec, x)?;
    let base = RecoveryConfig {
        spec: spec.clone(),
        init: Init::Random,
        max_iter: cfg.max_iter,
        tol: cfg.tol,
        unit_norm: cfg.unit_norm,
        seed,
    };
    let outcome = match method {
        RecoveryMethod::KnnOnly => {
            let idx = index.expect("index is built for knn methods");
            return Ok(Trial {
                angle: angle_or_zero(&knn_init(idx, &meas)?, x)?,
                iters: 0.0,
            });
        }
        RecoveryMethod::AltminKnn => {
            let idx = index.expect("index is built for knn methods");
            alt_min(f, &meas, &base.init(Init::Knn(idx.clone())))
        }
        RecoveryMethod::AltminRandom => match init {
            Some(v) => alt_min(f, &meas, &base.init(Init::Vector(v))),
            None => alt_min(f, &meas, &base),
        },
    };
    match outcome {
        Ok(r) => Ok(Trial {
            angle: angle_or_zero(&r.reconstruction, x)?,
            iters: r.iterations_used as f64,
        }),
        Err(Error::DegenerateIterate) => Ok(Trial {
            angle: 0.0,
            iters: cfg.max_iter as f64,
        }),
        Err(e) => Err(e),
    }
}

fn angle_or_zero(r: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    match recovery_angle(r, x) {
        Ok(a) => Ok(a),
        Err(Error::UndefinedMetric) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Runs every (K, p, rectify, method) point of the sweep. Trial `t` uses
/// seed `cfg.seed ^ t`, and each frame depends only on the seed and K, so
/// any point can be recomputed on its own. Output is sorted by
/// (p, rectify, method, K).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(|| run_inner(cfg)),
        None => run_inner(cfg),
    }
}

fn run_inner(cfg: &ExperimentConfig) -> Result<Vec<CurvePoint>> {
    let (train, test) = prepare_data(cfg)?;
    let n = test.nrows();
    let stored = match &cfg.frame {
        FrameSource::File { path } => Some(io::read_frame(path)?),
        FrameSource::Random { .. } => None,
    };
    let inits = match &cfg.init_file {
        Some(path) => {
            let m = io::read_matrix(path)?;
            if m.nrows() != n || m.ncols() < cfg.trials {
                return Err(Error::data(
                    path,
                    format!("expected {n} rows and at least {} columns", cfg.trials),
                ));
            }
            Some(m)
        }
        None => None,
    };

    let mut frames = BTreeMap::new();
    for &k in &cfg.sweep {
        frames.insert(k, frame_for(cfg, n, k, stored.as_ref())?);
    }

    let mut points = Vec::new();
    for &p in &cfg.p {
        for &rectify in &cfg.rectify {
            for &k in &cfg.sweep {
                let f = &frames[&k];
                let mut spec = PoolingSpec::new(p, rectify);
                if rectify && cfg.alpha != 0.0 {
                    spec = spec.with_alpha(vec![cfg.alpha; f.len()]);
                }
                let index = if cfg.methods.iter().any(|m| m.needs_index()) {
                    Some(Arc::new(build_index(f, &spec, &train, cfg.q)?))
                } else {
                    None
                };
                for &method in &cfg.methods {
                    points.push(run_point(cfg, f, &spec, method, &test, index.as_ref(), inits.as_ref())?);
                }
            }
        }
    }
    points.sort_by(|a, b| {
        (a.p, a.rectify, a.method, a.k).cmp(&(b.p, b.rectify, b.method, b.k))
    });
    Ok(points)
}

fn run_point(
    cfg: &ExperimentConfig,
    f: &Frame,
    spec: &PoolingSpec,
    method: RecoveryMethod,
    test: &DMatrix<f64>,
    index: Option<&Arc<TrainingIndex>>,
    inits: Option<&DMatrix<f64>>,
) -> Result<CurvePoint> {
    let start = Instant::now();
    let trials: Vec<Trial> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let x = test.column(t).into_owned();
            let init = inits.map(|m| m.column(t).into_owned());
            run_trial(f, spec, method, &x, index, init, cfg, cfg.seed ^ t as u64)
        })
        .collect::<Result<_>>()?;
    let count = trials.len() as f64;
    let mean = trials.iter().map(|t| t.angle).sum::<f64>() / count;
    let stderr = if trials.len() > 1 {
        let var = trials.iter().map(|t| (t.angle - mean).powi(2)).sum::<f64>() / (count - 1.0);
        (var / count).sqrt()
    } else {
        0.0
    };
    Ok(CurvePoint {
        k: f.num_pools(),
        p: spec.p,
        rectify: spec.rectify,
        method,
        mean_angle: mean.clamp(0.0, 1.0),
        stderr,
        mean_iters: trials.iter().map(|t| t.iters).sum::<f64>() / count,
        wall_ms: if cfg.timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        },
    })
}

/// Writes curves with the header `k,p,rectify,method,mean_angle,stderr,mean_iters,wall_ms`.
pub fn write_curves(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    for p in points {
        w.serialize(p).map_err(|e| Error::data(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curves(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::data(path, format!("row {}: {e}", i + 2))))
        .collect()
}
