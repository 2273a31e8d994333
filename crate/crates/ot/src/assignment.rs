//! O(n^3) assignment solver for the uniform equal-size case: shortest
//! augmenting paths with dual potentials (Kuhn-Munkres family).

use ndarray::Array2;

use crate::measure::{CostMatrix, DiscreteMeasure, TransportPlan};
use crate::{OtError, Result};

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns the row-to-column permutation and the sum of matched costs.
pub fn solve_assignment(cost: &Array2<f64>) -> Result<(Vec<usize>, f64)> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(OtError::InvalidArgument(format!(
            "assignment needs a square matrix, got {n}x{m}"
        )));
    }
    if n == 0 {
        return Err(OtError::InvalidArgument("assignment needs at least one row".into()));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(OtError::InvalidArgument("assignment costs must be finite".into()));
    }

    // Potentials and matching over 1-based indices; column 0 is the
    // virtual start of each augmenting path.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_row = vec![0usize; n + 1]; // col_row[j] = row matched to column j, 0 = free
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        // Augment along the recorded path.
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_col = vec![usize::MAX; n];
    for j in 1..=n {
        row_col[col_row[j] - 1] = j - 1;
    }
    let total: f64 = row_col.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Ok((row_col, total))
}

/// Optimal transport between two uniform equal-size measures via the
/// assignment fast path. The optimal plan is a permutation scaled by 1/n
/// and its cost equals the exact Kantorovich optimum.
pub fn assignment_ot(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<TransportPlan> {
    if mu.len() != nu.len() {
        return Err(OtError::InvalidArgument(format!(
            "assignment fast path needs equal sizes, got {} and {}",
            mu.len(),
            nu.len()
        )));
    }
    if !mu.is_uniform() || !nu.is_uniform() {
        return Err(OtError::InvalidArgument(
            "assignment fast path needs uniform weights".into(),
        ));
    }
    cost.check_shape(mu.len(), nu.len())?;
    let n = mu.len();
    let (perm, total) = solve_assignment(cost.entries())?;
    let mut plan = Array2::zeros((n, n));
    for (i, &j) in perm.iter().enumerate() {
        plan[(i, j)] = 1.0 / n as f64;
    }
    Ok(TransportPlan { plan, cost: total / n as f64 })
}
