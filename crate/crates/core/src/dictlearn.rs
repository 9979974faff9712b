//! Block-sparse dictionary learning: block OMP coding alternated with
//! rank-`L` SVD updates of each block.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::frames::Frame;
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictConfig {
    pub num_blocks: usize,
    pub block_size: usize,
    /// Blocks used per signal.
    pub nonzero_blocks: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for DictConfig {
    fn default() -> Self {
        DictConfig {
            num_blocks: 50,
            block_size: 2,
            nonzero_blocks: 5,
            iterations: 20,
            seed: 0,
        }
    }
}

impl DictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 || self.num_blocks == 0 {
            return Err(Error::invalid("num_blocks and block_size must be positive"));
        }
        if self.nonzero_blocks > self.num_blocks {
            return Err(Error::invalid(format!(
                "nonzero_blocks={} exceeds num_blocks={}",
                self.nonzero_blocks, self.num_blocks
            )));
        }
        Ok(())
    }
}

/// Coefficients supported on a few blocks. `coeffs` holds `L` entries per
/// selected block, in the order of `blocks`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCode {
    pub blocks: Vec<usize>,
    pub coeffs: DVector<f64>,
}

impl BlockCode {
    fn empty() -> Self {
        BlockCode {
            blocks: Vec::new(),
            coeffs: DVector::zeros(0),
        }
    }

    pub fn reconstruct(&self, dict: &Frame) -> DVector<f64> {
        let cols = dict.pool_columns(&self.blocks);
        dict.columns(&cols) * &self.coeffs
    }
}

/// Greedy block-sparse coding: repeatedly adds the block with the largest
/// `|D_k^T r|` and refits all selected blocks by least squares. Stops early
/// once the residual vanishes.
pub fn block_omp(dict: &Frame, x: &DVector<f64>, nonzero_blocks: usize) -> Result<BlockCode> {
    check_len("signal", dict.dim(), x.len())?;
    let mut code = BlockCode::empty();
    let mut residual = x.clone();
    let floor = 1e-12 * x.norm();
    let target = nonzero_blocks.min(dict.num_pools());
    while code.blocks.len() < target {
        if residual.norm() <= floor {
            break;
        }
        let corr = dict.matrix().tr_mul(&residual);
        let mut best: Option<(f64, usize)> = None;
        for k in (0..dict.num_pools()).filter(|k| !code.blocks.contains(k)) {
            let e = corr.as_slice()[dict.pool_range(k)].iter().map(|v| v * v).sum::<f64>();
            if best.is_none_or(|(b, _)| e > b) {
                best = Some((e, k));
            }
        }
        let Some((_, k)) = best else { break };
        code.blocks.push(k);
        let sub = dict.columns(&dict.pool_columns(&code.blocks));
        code.coeffs = linalg::pseudoinverse(&sub) * x;
        residual = x - sub * &code.coeffs;
    }
    Ok(code)
}

fn code_all(dict: &Frame, data: &DMatrix<f64>, s: usize) -> Result<Vec<BlockCode>> {
    (0..data.ncols())
        .into_par_iter()
        .map(|j| block_omp(dict, &data.column(j).into_owned(), s))
        .collect()
}

fn objective(dict: &Frame, data: &DMatrix<f64>, codes: &[BlockCode]) -> f64 {
    codes
        .iter()
        .enumerate()
        .map(|(j, c)| (data.column(j) - c.reconstruct(dict)).norm_squared())
        .sum()
}

/// Columns spanning a random `l`-dimensional subspace, orthonormal, with
/// the first one along `lead` when given.
fn orthonormal_block(
    rng: &mut ChaCha8Rng,
    n: usize,
    l: usize,
    lead: Option<&DVector<f64>>,
) -> DMatrix<f64> {
    let mut out = DMatrix::<f64>::zeros(n, l);
    let mut j = 0;
    if let Some(v) = lead {
        if v.norm() > 0.0 {
            out.set_column(0, &v.normalize());
            j = 1;
        }
    }
    while j < l {
        let mut v = linalg::gaussian_vector(rng, n);
        for i in 0..j {
            let c = out.column(i).dot(&v);
            v -= out.column(i) * c;
        }
        if v.norm() > 1e-8 {
            out.set_column(j, &v.normalize());
            j += 1;
        }
    }
    out
}

fn initial_dictionary(n: usize, cfg: &DictConfig) -> Result<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut m = linalg::gaussian_matrix(&mut rng, n, cfg.num_blocks * cfg.block_size);
    for mut c in m.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
    Frame::new(m, cfg.block_size)
}

/// Learns a block dictionary from the columns of `data`; see
/// [`learn_dictionary_traced`].
pub fn learn_dictionary(data: &DMatrix<f64>, cfg: &DictConfig) -> Result<Frame> {
    Ok(learn_dictionary_traced(data, cfg)?.0)
}

/// Learns a dictionary and returns it with the coding objective
/// `sum_i |x_i - D c_i|^2` before the first iteration and after each one.
///
/// Each iteration updates every block in turn to the best rank-`L` fit of
/// the residual of the signals using it, then recodes all signals; a signal
/// keeps its previous code when the new one fits worse. A block no signal
/// uses is reseeded along the worst-fitted signal's residual. Atoms stay
/// unit norm throughout.
pub fn learn_dictionary_traced(
    data: &DMatrix<f64>,
    cfg: &DictConfig,
) -> Result<(Frame, Vec<f64>)> {
    cfg.validate()?;
    let (n, t) = data.shape();
    if n == 0 || t == 0 {
        return Err(Error::invalid("training data is empty"));
    }
    if t < cfg.num_blocks {
        return Err(Error::invalid(format!(
            "need at least num_blocks={} training signals, got {t}",
            cfg.num_blocks
        )));
    }
    let l = cfg.block_size;
    let mut dict = initial_dictionary(n, cfg)?;
    let mut codes = code_all(&dict, data, cfg.nonzero_blocks)?;
    let mut trace = vec![objective(&dict, data, &codes)];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED);

    for _ in 0..cfg.iterations {
        let mut d = dict.matrix().clone();
        let mut residual = data.clone();
        for (j, c) in codes.iter().enumerate() {
            let r = data.column(j) - c.reconstruct(&dict);
            residual.set_column(j, &r);
        }

        for k in 0..cfg.num_blocks {
            let users: Vec<(usize, usize)> = codes
                .iter()
                .enumerate()
                .filter_map(|(j, c)| c.blocks.iter().position(|&b| b == k).map(|p| (j, p)))
                .collect();
            let block = d.columns(k * l, l).into_owned();

            if users.is_empty() {
                let worst = (0..t)
                    .max_by(|&a, &b| {
                        residual.column(a).norm_squared().total_cmp(&residual.column(b).norm_squared()).then(b.cmp(&a))
                    })
                    .expect("data is nonempty");
                let fresh = orthonormal_block(&mut rng, n, l, Some(&residual.column(worst).into_owned()));
                d.columns_mut(k * l, l).copy_from(&fresh);
                continue;
            }

            // Residual of each user with this block's contribution added back.
            let mut e = DMatrix::zeros(n, users.len());
            for (col, &(j, p)) in users.iter().enumerate() {
                let c = codes[j].coeffs.rows(p * l, l);
                e.set_column(col, &(residual.column(j) + &block * c));
            }
            let svd = e.clone().svd(true, false);
            let u = svd.u.expect("requested U");
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
            let keep: Vec<usize> = order.into_iter().take(l).collect();
            let mut fresh = linalg::select_columns(&u, &keep);
            if fresh.ncols() < l {
                let extra = orthonormal_block(&mut rng, n, l, None);
                let mut full = DMatrix::zeros(n, l);
                full.columns_mut(0, fresh.ncols()).copy_from(&fresh);
                // Complete to an orthonormal basis of an l-dim subspace.
                let mut j = fresh.ncols();
                for i in 0..l {
                    if j == l {
                        break;
                    }
                    let mut v = extra.column(i).into_owned();
                    for q in 0..j {
                        let c = full.column(q).dot(&v);
                        v -= full.column(q) * c;
                    }
                    if v.norm() > 1e-8 {
                        full.set_column(j, &v.normalize());
                        j += 1;
                    }
                }
                fresh = full;
            }
            let new_coeffs = fresh.tr_mul(&e);
            for (col, &(j, p)) in users.iter().enumerate() {
                codes[j].coeffs.rows_mut(p * l, l).copy_from(&new_coeffs.column(col));
                let r = e.column(col) - &fresh * new_coeffs.column(col);
                residual.set_column(j, &r);
            }
            d.columns_mut(k * l, l).copy_from(&fresh);
        }
        dict = Frame::new(d, l)?;

        let fresh_codes = code_all(&dict, data, cfg.nonzero_blocks)?;
        for (j, c) in fresh_codes.into_iter().enumerate() {
            let new_err = (data.column(j) - c.reconstruct(&dict)).norm_squared();
            if new_err < residual.column(j).norm_squared() {
                codes[j] = c;
            }
        }
        trace.push(objective(&dict, data, &codes));
    }
    Ok((dict, trace))
}
