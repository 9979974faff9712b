//! Nearest-neighbour regression initializer: look up the training signals
//! whose pooled measurements are closest to the query and return their
//! leading (uncentered) principal direction.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::frames::Frame;
use crate::linalg;
use crate::pooling::{pool, PooledMeasurement, PoolingSpec};

/// Training signals with their precomputed pooled measurements.
#[derive(Debug, Clone)]
pub struct TrainingIndex {
    frame: Frame,
    spec: PoolingSpec,
    signals: DMatrix<f64>,
    measurements: DMatrix<f64>,
    q: usize,
}

impl TrainingIndex {
    pub fn signals(&self) -> &DMatrix<f64> {
        &self.signals
    }

    pub fn measurements(&self) -> &DMatrix<f64> {
        &self.measurements
    }

    pub fn spec(&self) -> &PoolingSpec {
        &self.spec
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Column indices of the `q` training measurements nearest to `query`,
    /// closest first; equal distances keep column order.
    pub fn nearest(&self, query: &DVector<f64>) -> Result<Vec<usize>> {
        check_len("query measurement", self.measurements.nrows(), query.len())?;
        let mut dist: Vec<(f64, usize)> = self
            .measurements
            .column_iter()
            .enumerate()
            .map(|(j, g)| ((g - query).norm_squared(), j))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(dist.into_iter().take(self.q).map(|(_, j)| j).collect())
    }
}

/// Pools every training column under `spec`. Search is exhaustive.
pub fn build_index(
    f: &Frame,
    spec: &PoolingSpec,
    signals: &DMatrix<f64>,
    q: usize,
) -> Result<TrainingIndex> {
    check_len("training signal", f.dim(), signals.nrows())?;
    let t = signals.ncols();
    if q == 0 || q > t {
        return Err(Error::invalid(format!(
            "neighbour count q={q} must lie in 1..={t}"
        )));
    }
    spec.validate(f)?;
    let mut measurements = DMatrix::zeros(f.num_pools(), t);
    for (j, x) in signals.column_iter().enumerate() {
        let g = pool(f, spec, &x.into_owned())?;
        measurements.set_column(j, &g.values);
    }
    Ok(TrainingIndex {
        frame: f.clone(),
        spec: spec.clone(),
        signals: signals.clone(),
        measurements,
        q,
    })
}

/// Initial guess for [`crate::recovery::alt_min`] from the neighbours of
/// `meas`. The result has unit norm.
///
/// Non-rectified measurements cannot tell `x` from `-x`, so the sign is
/// fixed by making the first nonzero coordinate positive. Rectified ones
/// can, and the sign whose rescaled copy best reproduces `meas` is kept.
pub fn knn_init(idx: &TrainingIndex, meas: &PooledMeasurement) -> Result<DVector<f64>> {
    if meas.spec.p != idx.spec.p || meas.spec.rectify != idx.spec.rectify {
        return Err(Error::invalid(
            "measurement spec differs from the spec the index was built with",
        ));
    }
    let nearest = idx.nearest(&meas.values)?;
    let neighbours = linalg::select_columns(&idx.signals, &nearest);

    let n = neighbours.nrows();
    let scatter = &neighbours * neighbours.transpose();
    let (top, mut u) = linalg::top_eigenvector(&scatter);
    if top <= 0.0 {
        // Every neighbour is the zero signal.
        u = DVector::zeros(n);
        u[0] = 1.0;
    }
    u.normalize_mut();

    if idx.spec.rectify {
        let scale = neighbours.column_iter().map(|c| c.norm()).sum::<f64>() / nearest.len() as f64;
        let misfit = |cand: &DVector<f64>| -> Result<f64> {
            Ok((pool(&idx.frame, &idx.spec, &(cand * scale))?.values - &meas.values).norm())
        };
        let flipped = -&u;
        if misfit(&flipped)? < misfit(&u)? {
            u = flipped;
        }
    } else if let Some(first) = u.iter().copied().find(|v| *v != 0.0) {
        if first < 0.0 {
            u.neg_mut();
        }
    }
    Ok(u)
}
