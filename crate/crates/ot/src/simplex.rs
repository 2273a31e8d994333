//! Exact solver for the discrete transportation problem: a transportation
//! simplex over the bipartite supply/demand graph, initialized with
//! Vogel's approximation method.

use ndarray::Array2;

use crate::measure::{CostMatrix, DiscreteMeasure, TransportPlan};
use crate::{OtError, Result};

/// Exact zero detection for residual masses after subtracting the exact
/// minimum of supply and demand.
const MASS_EPS: f64 = 1e-14;

/// Globally optimal coupling between two discrete measures.
pub fn exact_ot(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<TransportPlan> {
    cost.check_shape(mu.len(), nu.len())?;
    solve_transport(mu.weights(), nu.weights(), cost)
}

/// Solves the transportation linear program for raw weight vectors.
///
/// Errors if the two masses do not balance within 1e-9.
pub fn solve_transport(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<TransportPlan> {
    let n = a.len();
    let m = b.len();
    if n == 0 || m == 0 {
        return Err(OtError::InvalidArgument("weight vectors must be non-empty".into()));
    }
    cost.check_shape(n, m)?;
    if a.iter().chain(b.iter()).any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(OtError::InvalidArgument("weights must all be positive".into()));
    }
    let sum_a: f64 = a.iter().sum();
    let sum_b: f64 = b.iter().sum();
    if (sum_a - sum_b).abs() > 1e-9 * sum_a.max(sum_b) {
        return Err(OtError::Infeasible(format!(
            "total masses differ: {sum_a} vs {sum_b}"
        )));
    }

    let mut state = Tableau::new(a, b, cost.entries());
    state.vogel_init();
    state.complete_basis();
    state.optimize()?;

    let plan = state.into_plan();
    let total_cost = (&plan * cost.entries()).sum();
    Ok(TransportPlan { plan, cost: total_cost })
}

struct Tableau<'c> {
    n: usize,
    m: usize,
    cost: &'c Array2<f64>,
    flow: Array2<f64>,
    in_basis: Array2<bool>,
    /// Basis adjacency: columns touching each row and rows touching each
    /// column, kept sorted for deterministic traversal.
    row_adj: Vec<Vec<usize>>,
    col_adj: Vec<Vec<usize>>,
    supply: Vec<f64>,
    demand: Vec<f64>,
}

impl<'c> Tableau<'c> {
    fn new(a: &[f64], b: &[f64], cost: &'c Array2<f64>) -> Self {
        let n = a.len();
        let m = b.len();
        // Rescale demand so both sides balance exactly in f64.
        let scale: f64 = a.iter().sum::<f64>() / b.iter().sum::<f64>();
        Self {
            n,
            m,
            cost,
            flow: Array2::zeros((n, m)),
            in_basis: Array2::from_elem((n, m), false),
            row_adj: vec![Vec::new(); n],
            col_adj: vec![Vec::new(); m],
            supply: a.to_vec(),
            demand: b.iter().map(|&w| w * scale).collect(),
        }
    }

    fn add_basis(&mut self, i: usize, j: usize) {
        self.in_basis[(i, j)] = true;
        self.row_adj[i].push(j);
        self.col_adj[j].push(i);
    }

    fn remove_basis(&mut self, i: usize, j: usize) {
        self.in_basis[(i, j)] = false;
        self.row_adj[i].retain(|&c| c != j);
        self.col_adj[j].retain(|&r| r != i);
    }

    /// Vogel's approximation: repeatedly allocate along the line with the
    /// largest regret (difference between its two cheapest costs).
    fn vogel_init(&mut self) {
        let mut row_active = vec![true; self.n];
        let mut col_active = vec![true; self.m];
        let mut rows_left = self.n;
        let mut cols_left = self.m;

        while rows_left > 0 && cols_left > 0 {
            // Penalty of a line: second-cheapest minus cheapest active
            // cost. A line with a single active cell gets top priority.
            let mut best: Option<(f64, bool, usize)> = None; // (penalty, is_row, index)
            let mut consider = |penalty: f64, is_row: bool, idx: usize| {
                let better = match best {
                    None => true,
                    Some((p, _, _)) => penalty > p,
                };
                if better {
                    best = Some((penalty, is_row, idx));
                }
            };
            for i in 0..self.n {
                if !row_active[i] {
                    continue;
                }
                let (c1, c2, count) = two_smallest(
                    (0..self.m).filter(|&j| col_active[j]).map(|j| self.cost[(i, j)]),
                );
                let penalty = if count == 1 { f64::INFINITY } else { c2 - c1 };
                consider(penalty, true, i);
            }
            for j in 0..self.m {
                if !col_active[j] {
                    continue;
                }
                let (c1, c2, count) = two_smallest(
                    (0..self.n).filter(|&i| row_active[i]).map(|i| self.cost[(i, j)]),
                );
                let penalty = if count == 1 { f64::INFINITY } else { c2 - c1 };
                consider(penalty, false, j);
            }
            let (_, is_row, idx) = best.expect("active lines remain");

            // Cheapest active cell within the chosen line.
            let (i, j) = if is_row {
                let i = idx;
                let j = (0..self.m)
                    .filter(|&j| col_active[j])
                    .min_by(|&x, &y| self.cost[(i, x)].partial_cmp(&self.cost[(i, y)]).unwrap())
                    .expect("active column exists");
                (i, j)
            } else {
                let j = idx;
                let i = (0..self.n)
                    .filter(|&i| row_active[i])
                    .min_by(|&x, &y| self.cost[(x, j)].partial_cmp(&self.cost[(y, j)]).unwrap())
                    .expect("active row exists");
                (i, j)
            };

            let q = self.supply[i].min(self.demand[j]);
            self.flow[(i, j)] = q;
            self.add_basis(i, j);
            self.supply[i] -= q;
            self.demand[j] -= q;

            let row_done = self.supply[i] <= MASS_EPS;
            let col_done = self.demand[j] <= MASS_EPS;
            // Exactly one line leaves per allocation, except the final
            // one; that keeps the basis a spanning tree of n+m-1 cells.
            if row_done && col_done {
                if rows_left == 1 && cols_left == 1 {
                    row_active[i] = false;
                    col_active[j] = false;
                    rows_left -= 1;
                    cols_left -= 1;
                } else if rows_left > 1 {
                    row_active[i] = false;
                    rows_left -= 1;
                    self.demand[j] = 0.0;
                } else {
                    col_active[j] = false;
                    cols_left -= 1;
                    self.supply[i] = 0.0;
                }
            } else if row_done {
                row_active[i] = false;
                rows_left -= 1;
            } else {
                col_active[j] = false;
                cols_left -= 1;
            }
        }
    }

    /// Adds zero-flow cells until the basis has n+m-1 cells, never
    /// creating a cycle.
    fn complete_basis(&mut self) {
        let target = self.n + self.m - 1;
        let mut count: usize = self.in_basis.iter().filter(|&&b| b).count();
        if count >= target {
            return;
        }
        // Union-find over rows [0, n) and columns [n, n+m).
        let mut parent: Vec<usize> = (0..self.n + self.m).collect();
        fn find(parent: &mut Vec<usize>, x: usize) -> usize {
            if parent[x] != x {
                let r = find(parent, parent[x]);
                parent[x] = r;
            }
            parent[x]
        }
        for i in 0..self.n {
            for j in 0..self.m {
                if self.in_basis[(i, j)] {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, self.n + j));
                    parent[ri] = rj;
                }
            }
        }
        'outer: for i in 0..self.n {
            for j in 0..self.m {
                if self.in_basis[(i, j)] {
                    continue;
                }
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, self.n + j));
                if ri != rj {
                    parent[ri] = rj;
                    self.add_basis(i, j);
                    count += 1;
                    if count == target {
                        break 'outer;
                    }
                }
            }
        }
    }

    /// Dual variables from the basis tree, rooted at row 0 with u[0] = 0.
    fn duals(&self) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![f64::NAN; self.n];
        let mut v = vec![f64::NAN; self.m];
        u[0] = 0.0;
        let mut stack: Vec<(bool, usize)> = vec![(true, 0)];
        while let Some((is_row, idx)) = stack.pop() {
            if is_row {
                for &j in &self.row_adj[idx] {
                    if v[j].is_nan() {
                        v[j] = self.cost[(idx, j)] - u[idx];
                        stack.push((false, j));
                    }
                }
            } else {
                for &i in &self.col_adj[idx] {
                    if u[i].is_nan() {
                        u[i] = self.cost[(i, idx)] - v[idx];
                        stack.push((true, i));
                    }
                }
            }
        }
        (u, v)
    }

    /// Pivots until no reduced cost is negative.
    fn optimize(&mut self) -> Result<()> {
        let cost_scale = self.cost.iter().fold(0.0f64, |acc, &c| acc.max(c.abs())).max(1.0);
        let tol = 1e-11 * cost_scale;
        let max_iter = 1000 + 50 * (self.n + self.m) * (self.n + self.m);

        for iter in 0..max_iter {
            let (u, v) = self.duals();
            // Entering cell: most negative reduced cost, after a long
            // stall the first negative one (Bland-style) to break any
            // degenerate cycling.
            let bland = iter > max_iter / 2;
            let mut entering: Option<(usize, usize, f64)> = None;
            'scan: for i in 0..self.n {
                for j in 0..self.m {
                    if self.in_basis[(i, j)] {
                        continue;
                    }
                    let r = self.cost[(i, j)] - u[i] - v[j];
                    if r < -tol {
                        match entering {
                            Some((_, _, best)) if r >= best => {}
                            _ => entering = Some((i, j, r)),
                        }
                        if bland {
                            break 'scan;
                        }
                    }
                }
            }
            let Some((ei, ej, _)) = entering else {
                return Ok(());
            };
            self.pivot(ei, ej);
        }
        Err(OtError::Stalled(format!(
            "transportation simplex exceeded {max_iter} pivots on a {}x{} instance",
            self.n, self.m
        )))
    }

    /// Brings cell (ei, ej) into the basis along the unique tree cycle.
    fn pivot(&mut self, ei: usize, ej: usize) {
        // Path from row node ei to column node ej through the tree.
        // prev[node] = (parent node, edge) with rows as 0..n and columns
        // as n..n+m.
        let total = self.n + self.m;
        let mut prev: Vec<Option<(usize, (usize, usize))>> = vec![None; total];
        let mut visited = vec![false; total];
        visited[ei] = true;
        let mut queue = std::collections::VecDeque::from([ei]);
        while let Some(node) = queue.pop_front() {
            if node == self.n + ej {
                break;
            }
            if node < self.n {
                for &j in &self.row_adj[node] {
                    let nb = self.n + j;
                    if !visited[nb] {
                        visited[nb] = true;
                        prev[nb] = Some((node, (node, j)));
                        queue.push_back(nb);
                    }
                }
            } else {
                let j = node - self.n;
                for &i in &self.col_adj[j] {
                    if !visited[i] {
                        visited[i] = true;
                        prev[i] = Some((node, (i, j)));
                        queue.push_back(i);
                    }
                }
            }
        }

        // Walk back from ej to ei collecting the path edges in order
        // starting at the ei end.
        let mut path = Vec::new();
        let mut node = self.n + ej;
        while node != ei {
            let (parent, edge) = prev[node].expect("tree is connected");
            path.push(edge);
            node = parent;
        }
        path.reverse();

        // Cycle signs alternate starting from the entering edge (+);
        // path edges at even positions (0-based) carry the minus sign.
        let mut theta = f64::INFINITY;
        let mut leaving: Option<(usize, usize)> = None;
        for (t, &(i, j)) in path.iter().enumerate() {
            if t % 2 == 0 {
                let f = self.flow[(i, j)];
                if f < theta {
                    theta = f;
                    leaving = Some((i, j));
                }
            }
        }
        let (li, lj) = leaving.expect("cycle has at least one minus edge");

        self.flow[(ei, ej)] += theta;
        for (t, &(i, j)) in path.iter().enumerate() {
            if t % 2 == 0 {
                self.flow[(i, j)] -= theta;
            } else {
                self.flow[(i, j)] += theta;
            }
        }
        self.flow[(li, lj)] = 0.0;
        self.remove_basis(li, lj);
        self.add_basis(ei, ej);
    }

    fn into_plan(mut self) -> Array2<f64> {
        // Clear sub-roundoff negatives left by pivoting.
        self.flow.mapv_inplace(|f| if f < 0.0 { 0.0 } else { f });
        self.flow
    }
}

/// Smallest and second-smallest of an iterator, with the element count.
fn two_smallest(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let mut c1 = f64::INFINITY;
    let mut c2 = f64::INFINITY;
    let mut count = 0;
    for v in values {
        count += 1;
        if v < c1 {
            c2 = c1;
            c1 = v;
        } else if v < c2 {
            c2 = v;
        }
    }
    (c1, c2, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::l1_cost;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identical_measures_cost_zero() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![-3.0, 0.5]];
        let mu = DiscreteMeasure::uniform(pts.clone()).unwrap();
        let c = l1_cost(mu.points(), mu.points()).unwrap();
        let plan = exact_ot(&mu, &mu, &c).unwrap();
        assert!(plan.cost.abs() < 1e-12, "cost {}", plan.cost);
        plan.check_marginals(&mu, &mu, 1e-9).unwrap();
    }

    #[test]
    fn point_masses_unique_coupling() {
        let mu = DiscreteMeasure::new(vec![vec![0.0, 0.0]], vec![1.0]).unwrap();
        let nu = DiscreteMeasure::new(vec![vec![1.0, 2.0]], vec![1.0]).unwrap();
        let c = l1_cost(mu.points(), nu.points()).unwrap();
        let plan = exact_ot(&mu, &nu, &c).unwrap();
        assert!((plan.cost - 3.0).abs() < 1e-12);
        assert!((plan.plan[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_uniform_pair() {
        // mu on {0, 4}, nu on {1, 3}: couplings cost 1 (parallel) or 3
        // (crossed); the optimum is 1 with 0->1 and 4->3.
        let mu = DiscreteMeasure::uniform(vec![vec![0.0], vec![4.0]]).unwrap();
        let nu = DiscreteMeasure::uniform(vec![vec![1.0], vec![3.0]]).unwrap();
        let c = l1_cost(mu.points(), nu.points()).unwrap();
        let plan = exact_ot(&mu, &nu, &c).unwrap();
        assert!((plan.cost - 1.0).abs() < 1e-12);
        assert!((plan.plan[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((plan.plan[(1, 1)] - 0.5).abs() < 1e-12);
        assert!(plan.plan[(0, 1)].abs() < 1e-12);
        assert!(plan.plan[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn infeasible_weights_rejected() {
        let c = l1_cost(&[vec![0.0]], &[vec![1.0]]).unwrap();
        assert!(matches!(
            solve_transport(&[1.0], &[0.5], &c),
            Err(OtError::Infeasible(_))
        ));
    }

    #[test]
    fn marginals_hold_on_general_weights() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let n = rng.gen_range(2..=6);
            let m = rng.gen_range(2..=6);
            let mu = random_measure(&mut rng, n);
            let nu = random_measure(&mut rng, m);
            let c = l1_cost(mu.points(), nu.points()).unwrap();
            let plan = exact_ot(&mu, &nu, &c).unwrap();
            plan.check_marginals(&mu, &nu, 1e-9).unwrap();
            assert!(plan.cost >= -1e-12);
        }
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let mu = random_measure(&mut rng, 5);
            let nu = random_measure(&mut rng, 4);
            let c = l1_cost(mu.points(), nu.points()).unwrap();
            let alpha = rng.gen_range(0.1..10.0);
            let base = exact_ot(&mu, &nu, &c).unwrap();
            let scaled = exact_ot(&mu, &nu, &c.scaled(alpha).unwrap()).unwrap();
            assert!(
                (scaled.cost - alpha * base.cost).abs() <= 1e-9 * (1.0 + alpha * base.cost),
                "alpha {alpha}: {} vs {}",
                scaled.cost,
                alpha * base.cost
            );
        }
    }

    #[test]
    fn symmetry_under_transpose() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        for _ in 0..50 {
            let mu = random_measure(&mut rng, 4);
            let nu = random_measure(&mut rng, 6);
            let c = l1_cost(mu.points(), nu.points()).unwrap();
            let fwd = exact_ot(&mu, &nu, &c).unwrap();
            let bwd = exact_ot(&nu, &mu, &c.transposed()).unwrap();
            assert!((fwd.cost - bwd.cost).abs() < 1e-9);
        }
    }

    fn random_measure(rng: &mut impl Rng, n: usize) -> DiscreteMeasure {
        let pts: Vec<Vec<f64>> =
            (0..n).map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let mut w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        for v in &mut w {
            *v /= total;
        }
        // Absorb rounding so the sum is exactly 1.
        let partial: f64 = w[..n - 1].iter().sum();
        w[n - 1] = 1.0 - partial;
        DiscreteMeasure::new(pts, w).unwrap()
    }
}
