//! Discrete optimal transport between weighted point sets.
//!
//! The exact Kantorovich problem is solved by a transportation simplex
//! with Vogel initialization; uniform equal-size instances take an
//! O(n^3) assignment fast path; an entropic log-domain Sinkhorn solver
//! provides a fast approximation; brute-force enumeration over
//! permutations and spanning-tree supports serves as the test oracle.

mod assignment;
mod brute;
mod measure;
mod simplex;
mod sinkhorn;

pub use assignment::{assignment_ot, solve_assignment};
pub use brute::brute_force_ot;
pub use measure::{l1_cost, CostMatrix, DiscreteMeasure, Metric, TransportPlan};
pub use simplex::{exact_ot, solve_transport};
pub use sinkhorn::{sinkhorn_ot, SinkhornResult, DEFAULT_MAX_ITER, DEFAULT_TOL};

use thiserror::Error;

/// Default feasibility/optimality tolerance for exact-path assertions.
pub const EXACT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OtError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Source and target masses do not match, so no coupling exists.
    #[error("infeasible weights: {0}")]
    Infeasible(String),

    /// A map failed the pushforward check, so it is not a transport map.
    #[error("not a transport map: {0}")]
    NotTransportMap(String),

    /// Instance exceeds the documented brute-force limits.
    #[error("instance too large: {0}")]
    TooLarge(String),

    /// The solver exceeded its iteration budget (exact path only;
    /// Sinkhorn reports non-convergence through its flag).
    #[error("solver stalled: {0}")]
    Stalled(String),
}

pub type Result<T> = std::result::Result<T, OtError>;

/// Cost of pushing `mu` through an explicit source-to-target index map:
/// `sum_i mu_i * C[i][T(i)]`.
///
/// Errors unless the map pushes `mu` forward to `nu` exactly (within
/// `EXACT_TOL` per target atom).
pub fn monge_cost(
    assignment: &[usize],
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<f64> {
    if assignment.len() != mu.len() {
        return Err(OtError::InvalidArgument(format!(
            "map covers {} atoms, source has {}",
            assignment.len(),
            mu.len()
        )));
    }
    cost.check_shape(mu.len(), nu.len())?;
    let mut pushed = vec![0.0f64; nu.len()];
    for (i, &j) in assignment.iter().enumerate() {
        if j >= nu.len() {
            return Err(OtError::InvalidArgument(format!("target index {j} out of range")));
        }
        pushed[j] += mu.weights()[i];
    }
    for (j, (&p, &w)) in pushed.iter().zip(nu.weights()).enumerate() {
        if (p - w).abs() > EXACT_TOL {
            return Err(OtError::NotTransportMap(format!(
                "target atom {j} receives mass {p}, needs {w}"
            )));
        }
    }
    Ok(assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| mu.weights()[i] * cost.entries()[(i, j)])
        .sum())
}
