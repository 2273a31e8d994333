//! Brute-force oracles: permutation enumeration for uniform equal-size
//! instances and spanning-tree vertex enumeration for small general
//! instances. Provably optimal, used to certify the real solvers.

use ndarray::Array2;

use crate::measure::{CostMatrix, DiscreteMeasure, TransportPlan};
use crate::{OtError, Result};

const MAX_PERM_N: usize = 6;
const MAX_TREE_NODES: usize = 7;

/// Exhaustively optimal transport plan for small instances.
///
/// Uniform equal-size instances up to n = 6 enumerate all permutations;
/// general instances with n + m <= 7 enumerate every spanning-tree
/// support of the transportation polytope (every basic feasible
/// solution lives on one). Anything larger is rejected.
pub fn brute_force_ot(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<TransportPlan> {
    cost.check_shape(mu.len(), nu.len())?;
    let uniform_square = mu.len() == nu.len() && mu.is_uniform() && nu.is_uniform();
    if uniform_square && mu.len() <= MAX_PERM_N {
        return permutation_search(mu.len(), cost);
    }
    if mu.len() + nu.len() <= MAX_TREE_NODES {
        return tree_vertex_search(mu.weights(), nu.weights(), cost);
    }
    Err(OtError::TooLarge(format!(
        "brute force handles uniform n <= {MAX_PERM_N} or n+m <= {MAX_TREE_NODES}; \
         got {}x{}",
        mu.len(),
        nu.len()
    )))
}

/// Minimum over all n! permutation couplings of a uniform instance.
fn permutation_search(n: usize, cost: &CostMatrix) -> Result<TransportPlan> {
    let c = cost.entries();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best_perm = perm.clone();
    let mut best = f64::INFINITY;
    // Heap's algorithm over the permutation buffer.
    let mut stack = vec![0usize; n];
    let eval = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum() };
    let consider = |p: &[usize], best: &mut f64, best_perm: &mut Vec<usize>| {
        let v = eval(p);
        if v < *best {
            *best = v;
            best_perm.copy_from_slice(p);
        }
    };
    consider(&perm, &mut best, &mut best_perm);
    let mut i = 0;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            consider(&perm, &mut best, &mut best_perm);
            stack[i] += 1;
            i = 0;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    let mut plan = Array2::zeros((n, n));
    for (i, &j) in best_perm.iter().enumerate() {
        plan[(i, j)] = 1.0 / n as f64;
    }
    Ok(TransportPlan { plan, cost: best / n as f64 })
}

/// Enumerates every spanning tree of the complete bipartite graph on
/// (rows, columns); each tree determines a unique flow from the
/// marginals, and non-negative ones are exactly the polytope vertices.
fn tree_vertex_search(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<TransportPlan> {
    let n = a.len();
    let m = b.len();
    let c = cost.entries();
    let num_edges = n * m;
    let tree_edges = n + m - 1;
    let sum_a: f64 = a.iter().sum();
    let sum_b: f64 = b.iter().sum();
    if (sum_a - sum_b).abs() > 1e-9 * sum_a.max(sum_b) {
        return Err(OtError::Infeasible(format!(
            "total masses differ: {sum_a} vs {sum_b}"
        )));
    }

    let edge = |e: usize| (e / m, e % m);
    let mut best: Option<(f64, Vec<(usize, usize, f64)>)> = None;

    for mask in 0u32..(1 << num_edges) {
        if mask.count_ones() as usize != tree_edges {
            continue;
        }
        // Acyclic + connected check over rows [0, n) and cols [n, n+m).
        let mut parent: Vec<usize> = (0..n + m).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        let mut acyclic = true;
        for e in 0..num_edges {
            if mask & (1 << e) == 0 {
                continue;
            }
            let (i, j) = edge(e);
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, n + j));
            if ri == rj {
                acyclic = false;
                break;
            }
            parent[ri] = rj;
        }
        if !acyclic {
            continue;
        }

        // Solve the tree flows by repeatedly peeling leaves.
        let mut degree = vec![0usize; n + m];
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + m]; // (other node, edge id)
        for e in 0..num_edges {
            if mask & (1 << e) == 0 {
                continue;
            }
            let (i, j) = edge(e);
            degree[i] += 1;
            degree[n + j] += 1;
            adj[i].push((n + j, e));
            adj[n + j].push((i, e));
        }
        let mut residual: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
        let mut removed_edge = vec![false; num_edges];
        let mut removed_node = vec![false; n + m];
        let mut flows = vec![0.0f64; num_edges];
        let mut feasible = true;
        for _ in 0..tree_edges {
            let Some(leaf) = (0..n + m)
                .find(|&v| !removed_node[v] && degree[v] == 1) else { break };
            let &(other, e) =
                adj[leaf].iter().find(|&&(_, e)| !removed_edge[e]).expect("leaf has an edge");
            let flow = residual[leaf];
            if flow < -1e-12 {
                feasible = false;
                break;
            }
            flows[e] = flow;
            residual[leaf] = 0.0;
            residual[other] -= flow;
            removed_edge[e] = true;
            removed_node[leaf] = true;
            degree[leaf] -= 1;
            degree[other] -= 1;
        }
        if !feasible || flows.iter().any(|&f| f < -1e-12) {
            continue;
        }

        let total: f64 = (0..num_edges)
            .filter(|&e| mask & (1 << e) != 0)
            .map(|e| {
                let (i, j) = edge(e);
                flows[e].max(0.0) * c[(i, j)]
            })
            .sum();
        let better = match &best {
            None => true,
            Some((cost, _)) => total < *cost,
        };
        if better {
            let cells = (0..num_edges)
                .filter(|&e| mask & (1 << e) != 0)
                .map(|e| {
                    let (i, j) = edge(e);
                    (i, j, flows[e].max(0.0))
                })
                .collect();
            best = Some((total, cells));
        }
    }

    let (cost_value, cells) =
        best.ok_or_else(|| OtError::Infeasible("no feasible vertex found".into()))?;
    let mut plan = Array2::zeros((n, m));
    for (i, j, f) in cells {
        plan[(i, j)] = f;
    }
    Ok(TransportPlan { plan, cost: cost_value })
}
