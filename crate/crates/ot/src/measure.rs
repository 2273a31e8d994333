//! Weighted point sets, cost matrices, and transport plans.

use ndarray::Array2;

use crate::{OtError, Result};

/// Tolerance on the total-mass invariant of a measure.
const MASS_TOL: f64 = 1e-12;

/// A discrete probability measure: `n` points of dimension `D` with
/// positive weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(OtError::InvalidArgument("measure needs at least one point".into()));
        }
        if points.len() != weights.len() {
            return Err(OtError::InvalidArgument(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(OtError::InvalidArgument("points must have dimension >= 1".into()));
        }
        for p in &points {
            if p.len() != dim {
                return Err(OtError::InvalidArgument("points have mixed dimensions".into()));
            }
            if !p.iter().all(|v| v.is_finite()) {
                return Err(OtError::InvalidArgument("points must be finite".into()));
            }
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(OtError::InvalidArgument("weights must all be positive".into()));
        }
        if (total - 1.0).abs() > MASS_TOL {
            return Err(OtError::InvalidArgument(format!(
                "weights must sum to 1 within {MASS_TOL}, got {total}"
            )));
        }
        Ok(Self { points, weights })
    }

    /// Uniform measure over the given points.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(OtError::InvalidArgument("measure needs at least one point".into()));
        }
        // Summing n copies of 1/n is not exactly 1 for every n, so the
        // last weight absorbs the rounding remainder.
        let w = 1.0 / n as f64;
        let mut weights = vec![w; n];
        let partial: f64 = weights[..n - 1].iter().sum();
        weights[n - 1] = 1.0 - partial;
        Self::new(points, weights)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when all weights are equal within `MASS_TOL`.
    pub fn is_uniform(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|&w| (w - w0).abs() <= MASS_TOL)
    }
}

/// Ground metric used to fill a cost matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    L1,
}

/// Pairwise non-negative transport costs between two point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Array2<f64>,
    metric: Metric,
}

impl CostMatrix {
    pub fn new(entries: Array2<f64>, metric: Metric) -> Result<Self> {
        if entries.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(OtError::InvalidArgument(
                "cost entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self { entries, metric })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn mean(&self) -> f64 {
        self.entries.sum() / self.entries.len() as f64
    }

    pub fn check_shape(&self, n: usize, m: usize) -> Result<()> {
        if self.entries.dim() != (n, m) {
            return Err(OtError::InvalidArgument(format!(
                "cost matrix is {:?}, measures need ({n}, {m})",
                self.entries.dim()
            )));
        }
        Ok(())
    }

    /// Rescaled cost matrix `alpha * C`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(OtError::InvalidArgument("scale must be positive".into()));
        }
        CostMatrix::new(&self.entries * alpha, self.metric)
    }

    /// Transposed matrix for the reversed problem.
    pub fn transposed(&self) -> Self {
        Self { entries: self.entries.t().to_owned(), metric: self.metric }
    }
}

/// Entrywise L1 distances between two point sets of equal dimension.
pub fn l1_cost(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<CostMatrix> {
    if a.is_empty() || b.is_empty() {
        return Err(OtError::InvalidArgument("point sets must be non-empty".into()));
    }
    let dim = a[0].len();
    if a.iter().chain(b.iter()).any(|p| p.len() != dim) {
        return Err(OtError::InvalidArgument(format!(
            "all points must have dimension {dim}"
        )));
    }
    let mut entries = Array2::zeros((a.len(), b.len()));
    for (i, pa) in a.iter().enumerate() {
        for (j, pb) in b.iter().enumerate() {
            entries[(i, j)] =
                pa.iter().zip(pb.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>();
        }
    }
    CostMatrix::new(entries, Metric::L1)
}

/// A coupling between two measures together with its transport cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub cost: f64,
}

impl TransportPlan {
    /// Builds a plan from a coupling matrix, computing its cost.
    pub fn from_plan(plan: Array2<f64>, cost_matrix: &CostMatrix) -> Result<Self> {
        if plan.dim() != cost_matrix.entries().dim() {
            return Err(OtError::InvalidArgument("plan/cost shape mismatch".into()));
        }
        let cost = (&plan * cost_matrix.entries()).sum();
        Ok(Self { plan, cost })
    }

    /// Maximum violation of the marginal constraints.
    pub fn marginal_violation(&self, a: &[f64], b: &[f64]) -> f64 {
        let (n, m) = self.plan.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            let row: f64 = (0..m).map(|j| self.plan[(i, j)]).sum();
            worst = worst.max((row - a[i]).abs());
        }
        for j in 0..m {
            let col: f64 = (0..n).map(|i| self.plan[(i, j)]).sum();
            worst = worst.max((col - b[j]).abs());
        }
        worst
    }

    /// Asserts feasibility within `tol` against the two measures.
    pub fn check_marginals(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure, tol: f64) -> Result<()> {
        let v = self.marginal_violation(mu.weights(), nu.weights());
        if v > tol {
            return Err(OtError::Infeasible(format!(
                "plan violates marginals by {v}, tolerance {tol}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_cost_basic_example() {
        // a = (0,0), b = (1,2): |1| + |2| = 3.
        let c = l1_cost(&[vec![0.0, 0.0]], &[vec![1.0, 2.0]]).unwrap();
        assert_eq!(c.entries()[(0, 0)], 3.0);
    }

    #[test]
    fn l1_cost_zero_on_identical_points() {
        let pts = vec![vec![0.5, -0.25, 4.0]];
        let c = l1_cost(&pts, &pts).unwrap();
        assert_eq!(c.entries()[(0, 0)], 0.0);
    }

    #[test]
    fn l1_cost_symmetry_via_transpose() {
        let a = vec![vec![0.0, 1.0], vec![2.0, 2.0], vec![-1.0, 0.5]];
        let b = vec![vec![1.0, -1.0], vec![0.25, 0.75]];
        let cab = l1_cost(&a, &b).unwrap();
        let cba = l1_cost(&b, &a).unwrap();
        assert_eq!(cab.entries().t().to_owned(), *cba.entries());
    }

    #[test]
    fn l1_cost_rejects_dimension_mismatch() {
        assert!(l1_cost(&[vec![0.0, 0.0]], &[vec![1.0]]).is_err());
    }

    #[test]
    fn measure_invariants() {
        assert!(DiscreteMeasure::new(vec![vec![0.0]], vec![0.5]).is_err());
        assert!(DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![1.0, 0.0]).is_err());
        assert!(DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.25, 0.75]).is_ok());
        for n in 1..40 {
            let pts = (0..n).map(|i| vec![i as f64]).collect();
            let m = DiscreteMeasure::uniform(pts).unwrap();
            assert!((m.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(m.is_uniform());
        }
    }

    #[test]
    fn plan_cost_matches_recomputation() {
        let c = l1_cost(&[vec![0.0], vec![4.0]], &[vec![1.0], vec![3.0]]).unwrap();
        let plan = Array2::from_shape_vec((2, 2), vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let tp = TransportPlan::from_plan(plan.clone(), &c).unwrap();
        let recomputed = (&plan * c.entries()).sum();
        assert!((tp.cost - recomputed).abs() < 1e-12);
        assert!((tp.cost - 1.0).abs() < 1e-12);
    }
}
