use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{to_vec, BoundName, CertificateReport, Flag, Method, Witness};
use crate::error::{check_len, Result};
use crate::frames::{column_bounds, Frame};
use crate::linalg;

/// Activation pattern `{i : <x, f_i> > alpha_i}`, or `None` when `x` sits
/// exactly on one of the hyperplanes.
fn activation(f: &Frame, alpha: &[f64], x: &DVector<f64>) -> Option<Vec<bool>> {
    let z = f.matrix().tr_mul(x);
    let mut out = Vec::with_capacity(z.len());
    for (v, a) in z.iter().zip(alpha) {
        if v == a {
            return None;
        }
        out.push(v > a);
    }
    Some(out)
}

fn members(pattern: &[bool]) -> Vec<usize> {
    pattern
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect()
}

/// Sampled lower bound of the half-rectification `x -> max(0, F^T x - alpha)`.
///
/// Cells of the hyperplane arrangement are discovered by drawing Gaussian
/// signals at five scales around the threshold magnitude. The reported
/// value is the smallest span-restricted `lambda_-` over the nonempty cells
/// found. `details` also carries:
///
/// * `cells_found`, `rank_deficient_cells` (cells whose vectors do not span)
/// * `ambient_A0`: the same minimum with ambient frame bounds, counting the
///   empty cell as 0; it is positive exactly when no discovered cell breaks
///   injectivity
/// * `tilde_A`: `min max(lambda_-(F_Omega), lambda_-(F_Omega^c))` over the
///   discovered cells, the bound for the sign-folded variant.
pub fn halfrect_bound(
    f: &Frame,
    alpha: &[f64],
    cell_samples: usize,
    seed: u64,
) -> Result<CertificateReport> {
    check_len("threshold vector", f.len(), alpha.len())?;
    let n = f.dim();
    let min_norm = (0..f.len())
        .map(|i| f.matrix().column(i).norm())
        .fold(f64::INFINITY, f64::min);
    let max_alpha = alpha.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let base = if min_norm > 0.0 {
        (max_alpha / min_norm).max(1.0)
    } else {
        1.0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: BTreeMap<Vec<bool>, DVector<f64>> = BTreeMap::new();
    for j in 0..cell_samples.max(1) {
        let scale = base * 10f64.powi((j % 5) as i32 - 2);
        let x = linalg::gaussian_vector(&mut rng, n) * scale;
        if let Some(pattern) = activation(f, alpha, &x) {
            cells.entry(pattern).or_insert(x);
        }
    }

    let mut best: Option<(f64, Vec<usize>, &DVector<f64>)> = None;
    let mut ambient = f64::INFINITY;
    let mut tilde = f64::INFINITY;
    let mut upper = 0.0f64;
    let mut deficient = 0usize;
    for (pattern, x) in &cells {
        let inside = members(pattern);
        let outside: Vec<usize> = (0..f.len()).filter(|i| !pattern[*i]).collect();
        let restricted = column_bounds(&f.columns(&inside), true);
        let amb_in = column_bounds(&f.columns(&inside), false).lambda_minus;
        let amb_out = column_bounds(&f.columns(&outside), false).lambda_minus;
        ambient = ambient.min(amb_in);
        tilde = tilde.min(amb_in.max(amb_out));
        upper = upper.max(restricted.lambda_plus);
        if amb_in == 0.0 {
            deficient += 1;
        }
        if inside.is_empty() {
            continue;
        }
        let better = best.as_ref().is_none_or(|(v, _, _)| restricted.lambda_minus < *v);
        if better {
            best = Some((restricted.lambda_minus, inside, x));
        }
    }

    let mut report = match best {
        Some((value, omega, x)) => CertificateReport::new(
            BoundName::HalfrectA0,
            value,
            Method::Sampled,
            Witness::Cell {
                omega,
                x: to_vec(x),
            },
        ),
        None => {
            let mut r = CertificateReport::new(
                BoundName::HalfrectA0,
                0.0,
                Method::Sampled,
                Witness::None {
                    reason: "no admissible set".into(),
                },
            );
            r.flag(Flag::Degenerate);
            r
        }
    };
    report.samples_used = cell_samples.max(1);
    report.upper_bound = Some(upper);
    report.flag(Flag::UpperEstimate);
    report.detail("cells_found", cells.len() as f64);
    report.detail("rank_deficient_cells", deficient as f64);
    report.detail("ambient_A0", if ambient.is_finite() { ambient } else { 0.0 });
    report.detail("tilde_A", if tilde.is_finite() { tilde } else { 0.0 });
    Ok(report)
}

/// All discovered cells with their witnesses; exposed for tests.
#[cfg(test)]
pub(crate) fn discover_cells(
    f: &Frame,
    alpha: &[f64],
    samples: usize,
    seed: u64,
) -> BTreeMap<Vec<bool>, DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = BTreeMap::new();
    for _ in 0..samples {
        let x = linalg::gaussian_vector(&mut rng, f.dim());
        if let Some(p) = activation(f, alpha, &x) {
            cells.entry(p).or_insert(x);
        }
    }
    cells
}
