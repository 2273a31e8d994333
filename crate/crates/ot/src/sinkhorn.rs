//! Entropic-regularized optimal transport: log-domain Sinkhorn scaling
//! with epsilon annealing for small regularization strengths.

use ndarray::Array2;

use crate::measure::{CostMatrix, DiscreteMeasure, TransportPlan};
use crate::{OtError, Result};

/// Default maximum iterations across all annealing stages.
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Default marginal-violation tolerance.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Outcome of a Sinkhorn solve.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub plan: TransportPlan,
    /// True when the marginal violation reached `tol` at the target
    /// epsilon within the iteration budget.
    pub converged: bool,
    /// Iterations actually spent (all stages combined).
    pub iterations: usize,
}

/// Solves entropic OT at regularization `epsilon`.
///
/// Potentials are iterated in the log domain; for small epsilon the
/// solver anneals from a large regularization down to the target, which
/// keeps iteration counts modest. The reported cost is the transport
/// part `sum_ij plan_ij C_ij` without the entropy term.
pub fn sinkhorn_ot(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SinkhornResult> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(OtError::InvalidArgument(format!(
            "regularization must be positive, got {epsilon}"
        )));
    }
    if !(tol > 0.0) {
        return Err(OtError::InvalidArgument("tolerance must be positive".into()));
    }
    cost.check_shape(mu.len(), nu.len())?;

    let n = mu.len();
    let m = nu.len();
    let c = cost.entries();
    let log_a: Vec<f64> = mu.weights().iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = nu.weights().iter().map(|w| w.ln()).collect();

    // Annealing schedule: halve from the cost scale down to the target.
    let c_max = c.iter().fold(0.0f64, |acc, &v| acc.max(v));
    let mut stages = Vec::new();
    let mut eps_k = c_max.max(epsilon);
    while eps_k > epsilon * 1.5 {
        stages.push(eps_k);
        eps_k *= 0.5;
    }
    stages.push(epsilon);

    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; m];
    let mut spent = 0usize;
    let mut converged = false;

    'stages: for (si, &eps) in stages.iter().enumerate() {
        let last = si == stages.len() - 1;
        // Intermediate stages only warm-start the potentials; a loose
        // tolerance there is enough.
        let stage_tol = if last { tol } else { (tol * 100.0).min(1e-3) };
        loop {
            if spent >= max_iter {
                break 'stages;
            }
            spent += 1;

            // Row update: after it, row marginals are exact.
            for i in 0..n {
                let mut max_e = f64::NEG_INFINITY;
                for j in 0..m {
                    max_e = max_e.max((g[j] - c[(i, j)]) / eps);
                }
                let lse = if max_e.is_infinite() {
                    max_e
                } else {
                    let s: f64 =
                        (0..m).map(|j| ((g[j] - c[(i, j)]) / eps - max_e).exp()).sum();
                    max_e + s.ln()
                };
                f[i] = eps * (log_a[i] - lse);
            }
            // Column update: after it, column marginals are exact.
            for j in 0..m {
                let mut max_e = f64::NEG_INFINITY;
                for i in 0..n {
                    max_e = max_e.max((f[i] - c[(i, j)]) / eps);
                }
                let lse = if max_e.is_infinite() {
                    max_e
                } else {
                    let s: f64 =
                        (0..n).map(|i| ((f[i] - c[(i, j)]) / eps - max_e).exp()).sum();
                    max_e + s.ln()
                };
                g[j] = eps * (log_b[j] - lse);
            }

            // Row-marginal violation of the current plan.
            let mut worst = 0.0f64;
            for i in 0..n {
                let row: f64 =
                    (0..m).map(|j| ((f[i] + g[j] - c[(i, j)]) / eps).exp()).sum();
                worst = worst.max((row - mu.weights()[i]).abs());
            }
            if worst <= stage_tol {
                if last {
                    converged = true;
                }
                break;
            }
        }
    }

    let mut plan = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            plan[(i, j)] = ((f[i] + g[j] - c[(i, j)]) / epsilon).exp();
        }
    }
    let transport_cost = (&plan * c).sum();
    Ok(SinkhornResult {
        plan: TransportPlan { plan, cost: transport_cost },
        converged,
        iterations: spent,
    })
}
