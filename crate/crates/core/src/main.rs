use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use poolinv::certify::{self, CertificateReport, SplitSearch, SwitchedOptions};
use poolinv::dictlearn::{learn_dictionary, DictConfig};
use poolinv::error::{Error, Result};
use poolinv::frames::Frame;
use poolinv::harness::{run_experiment, write_curves, ExperimentConfig};
use poolinv::init::{build_index, knn_init};
use poolinv::io::{self, FrameEncoding};
use poolinv::pooling::{pool, Operator, PoolNorm, PoolingSpec, PooledMeasurement};
use poolinv::recovery::{alt_min, Init, RecoveryConfig};

#[derive(Parser)]
#[command(name = "poolinv", version, about = "Lp pooling: forward maps, recovery and certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pool signals (one per CSV column).
    Pool {
        #[command(flatten)]
        op: OpArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover signals from pooled measurements.
    Recover {
        #[command(flatten)]
        op: OpArgs,
        #[arg(long)]
        meas: PathBuf,
        /// random, knn, or file:<path>
        #[arg(long, default_value = "random")]
        init: String,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        q: usize,
        #[arg(long)]
        unit_norm: bool,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nearest-neighbour initial guesses for pooled measurements.
    KnnInit {
        #[command(flatten)]
        op: OpArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        meas: PathBuf,
        #[arg(long, default_value_t = 10)]
        q: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a lower Lipschitz bound or run an empirical check.
    Certify {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long, value_enum)]
        bound: Bound,
        #[arg(long)]
        alpha: Option<PathBuf>,
        /// Splits, cells, rotations or cone directions, depending on the bound.
        #[arg(long)]
        samples: Option<usize>,
        /// Input pairs for empirical checks and switch-pattern sampling.
        #[arg(long, default_value_t = 10000)]
        pairs: usize,
        #[arg(long, default_value_t = certify::DEFAULT_EXACT_LIMIT)]
        exact_limit: usize,
        /// Operator for `empirical` and `probe`.
        #[arg(long, value_enum, default_value_t = OpKind::Pool)]
        op: OpKind,
        #[arg(long, default_value = "2")]
        p: PoolNorm,
        #[arg(long)]
        rectify: bool,
        /// Also fill `empirical_min_ratio` from `--pairs` sampled pairs.
        #[arg(long)]
        validate: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a block dictionary from data columns.
    DictLearn {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        blocks: usize,
        #[arg(long, default_value_t = 2)]
        block_size: usize,
        #[arg(long, default_value_t = 5)]
        nonzero_blocks: usize,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Store the frame data as raw little-endian f64 instead of CSV.
        #[arg(long)]
        binary: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a recovery sweep described by a JSON config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's thread count.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct OpArgs {
    #[arg(long)]
    frame: PathBuf,
    #[arg(long)]
    p: PoolNorm,
    #[arg(long)]
    rectify: bool,
    #[arg(long)]
    alpha: Option<PathBuf>,
}

impl OpArgs {
    fn load(&self) -> Result<(Frame, PoolingSpec)> {
        let f = io::read_frame(&self.frame)?;
        let mut spec = PoolingSpec::new(self.p, self.rectify);
        if let Some(path) = &self.alpha {
            spec = spec.with_alpha(io::read_vector(path)?);
        }
        spec.validate(&f)?;
        Ok((f, spec))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Bound {
    Phaseless,
    Halfrect,
    L2pool,
    Maxpool,
    L1pool,
    Maxout,
    Empirical,
    Probe,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum OpKind {
    Modulus,
    Halfrect,
    Pool,
    Maxout,
}

fn columns(m: &DMatrix<f64>) -> impl Iterator<Item = DVector<f64>> + '_ {
    m.column_iter().map(|c| c.into_owned())
}

fn check_measurements(meas: &DMatrix<f64>, f: &Frame, path: &Path) -> Result<()> {
    if meas.nrows() != f.num_pools() {
        return Err(Error::data(
            path,
            format!("expected {} rows (one per pool), found {}", f.num_pools(), meas.nrows()),
        ));
    }
    Ok(())
}

fn wrap(values: DVector<f64>, spec: &PoolingSpec) -> PooledMeasurement {
    PooledMeasurement {
        values,
        spec: spec.clone(),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pool { op, input, out } => {
            let (f, spec) = op.load()?;
            let signals = io::read_matrix(&input)?;
            if signals.nrows() != f.dim() {
                return Err(Error::data(
                    &input,
                    format!("expected {} rows, found {}", f.dim(), signals.nrows()),
                ));
            }
            let mut result = DMatrix::zeros(f.num_pools(), signals.ncols());
            for (j, x) in columns(&signals).enumerate() {
                result.set_column(j, &pool(&f, &spec, &x)?.values);
            }
            io::write_matrix(&out, &result)
        }
        Command::Recover {
            op,
            meas,
            init,
            train,
            q,
            unit_norm,
            max_iter,
            tol,
            seed,
            out,
        } => {
            let (f, spec) = op.load()?;
            let m = io::read_matrix(&meas)?;
            check_measurements(&m, &f, &meas)?;
            let mut base = RecoveryConfig::new(spec.clone())
                .max_iter(max_iter)
                .unit_norm(unit_norm)
                .seed(seed);
            base.tol = tol;
            let starts: Option<DMatrix<f64>> = match init.as_str() {
                "random" => None,
                "knn" => {
                    let path = train
                        .as_ref()
                        .ok_or_else(|| Error::InvalidConfig("--init knn needs --train".into()))?;
                    let index = build_index(&f, &spec, &io::read_matrix(path)?, q)?;
                    base = base.init(Init::Knn(Arc::new(index)));
                    None
                }
                other => match other.strip_prefix("file:") {
                    Some(path) => {
                        let path = PathBuf::from(path);
                        let s = io::read_matrix(&path)?;
                        if s.nrows() != f.dim() || (s.ncols() != 1 && s.ncols() != m.ncols()) {
                            return Err(Error::data(
                                &path,
                                format!("expected {} rows and 1 or {} columns", f.dim(), m.ncols()),
                            ));
                        }
                        Some(s)
                    }
                    None => {
                        return Err(Error::invalid(format!(
                            "unknown --init {other:?}; use random, knn or file:<path>"
                        )))
                    }
                },
            };
            let mut result = DMatrix::zeros(f.dim(), m.ncols());
            let mut meta = Vec::with_capacity(2 * m.ncols());
            for (j, y) in columns(&m).enumerate() {
                let mut cfg = base.clone().seed(seed ^ j as u64);
                if let Some(s) = &starts {
                    cfg = cfg.init(Init::Vector(s.column(j.min(s.ncols() - 1)).into_owned()));
                }
                let r = alt_min(&f, &wrap(y, &spec), &cfg)?;
                result.set_column(j, &r.reconstruction);
                meta.push(r.iterations_used as f64);
                meta.push(r.final_residual());
            }
            io::write_matrix_with_meta(&out, &result, &meta)
        }
        Command::KnnInit {
            op,
            train,
            meas,
            q,
            out,
        } => {
            let (f, spec) = op.load()?;
            let m = io::read_matrix(&meas)?;
            check_measurements(&m, &f, &meas)?;
            let index = build_index(&f, &spec, &io::read_matrix(&train)?, q)?;
            let mut result = DMatrix::zeros(f.dim(), m.ncols());
            for (j, y) in columns(&m).enumerate() {
                result.set_column(j, &knn_init(&index, &wrap(y, &spec))?);
            }
            io::write_matrix(&out, &result)
        }
        Command::Certify {
            frame,
            bound,
            alpha,
            samples,
            pairs,
            exact_limit,
            op,
            p,
            rectify,
            validate,
            seed,
            out,
        } => {
            let f = io::read_frame(&frame)?;
            let alpha = match &alpha {
                Some(path) => Some(io::read_vector(path)?),
                None => None,
            };
            let search = SplitSearch {
                exact_limit,
                samples: samples.unwrap_or(4096),
                seed,
            };
            let switched = SwitchedOptions {
                pair_samples: pairs,
                cone_samples: samples.unwrap_or(64),
                seed,
                search: SplitSearch { samples: 4096, ..search },
            };
            let zeros = vec![0.0; f.len()];
            let thresholds = alpha.clone().unwrap_or(zeros);
            let operator = |kind: OpKind| -> Operator {
                match kind {
                    OpKind::Modulus => Operator::Modulus,
                    OpKind::Halfrect => Operator::HalfRect {
                        alpha: thresholds.clone(),
                    },
                    OpKind::Maxout => Operator::Maxout,
                    OpKind::Pool => {
                        let mut spec = PoolingSpec::new(p, rectify);
                        if let Some(a) = &alpha {
                            spec = spec.with_alpha(a.clone());
                        }
                        Operator::Pool(spec)
                    }
                }
            };
            if let Bound::Probe = bound {
                let report = certify::injectivity_probe(
                    f.dim(),
                    f.num_pools(),
                    f.pool_size(),
                    &operator(op),
                    pairs,
                    seed,
                )?;
                return write_json(&out, &report);
            }
            let (mut report, checked): (CertificateReport, Operator) = match bound {
                Bound::Phaseless => (certify::phaseless_bound(&f, &search), Operator::Modulus),
                Bound::Halfrect => (
                    certify::halfrect_bound(&f, &thresholds, samples.unwrap_or(10000), seed)?,
                    operator(OpKind::Halfrect),
                ),
                Bound::L2pool if rectify => (
                    certify::rectified_l2pool_bound(
                        &f,
                        &thresholds,
                        pairs,
                        samples.unwrap_or(20),
                        &SplitSearch { samples: 4096, ..search },
                    )?,
                    Operator::Pool(PoolingSpec::new(PoolNorm::L2, true).with_alpha(thresholds.clone())),
                ),
                Bound::L2pool => (
                    certify::l2pool_bound(&f, samples.unwrap_or(1000), &SplitSearch { samples: 4096, ..search }),
                    Operator::Pool(PoolingSpec::new(PoolNorm::L2, false)),
                ),
                Bound::Maxpool => {
                    let mut spec = PoolingSpec::new(PoolNorm::Inf, rectify);
                    if rectify {
                        spec = spec.with_alpha(thresholds.clone());
                    }
                    let a = rectify.then_some(thresholds.as_slice());
                    (certify::maxpool_bound(&f, &switched, a)?, Operator::Pool(spec))
                }
                Bound::L1pool => (
                    certify::l1pool_bound(&f, &switched)?,
                    Operator::Pool(PoolingSpec::new(PoolNorm::L1, false)),
                ),
                Bound::Maxout => (certify::maxout_bound(&f, &switched)?, Operator::Maxout),
                Bound::Empirical => {
                    let o = operator(op);
                    (certify::empirical_lipschitz(&f, &o, pairs, seed)?, o)
                }
                Bound::Probe => unreachable!("handled above"),
            };
            if validate && !matches!(bound, Bound::Empirical) {
                report.validate_against(&f, &checked, pairs, seed)?;
            }
            write_json(&out, &report)
        }
        Command::DictLearn {
            data,
            blocks,
            block_size,
            nonzero_blocks,
            iters,
            seed,
            binary,
            out,
        } => {
            let cfg = DictConfig {
                num_blocks: blocks,
                block_size,
                nonzero_blocks,
                iterations: iters,
                seed,
            };
            let dict = learn_dictionary(&io::read_matrix(&data)?, &cfg)?;
            let encoding = if binary {
                FrameEncoding::Binary
            } else {
                FrameEncoding::Csv
            };
            io::write_frame(&out, &dict, encoding)
        }
        Command::Bench {
            config,
            threads,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if threads.is_some() {
                cfg.threads = threads;
            }
            let curves = run_experiment(&cfg)?;
            write_curves(&out, &curves)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
