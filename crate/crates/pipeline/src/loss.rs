//! Training losses: absolute and pose-centered keypoint errors, and the
//! batch optimal-transport alignment loss with a frozen plan.

use ndarray::Array2;

use rfpose_core::types::NUM_KEYPOINTS;
use rfpose_neural::{Graph, Real, Var};
use rfpose_ot::{l1_cost, solve_assignment};

use crate::{PipelineError, Result};

/// Mean over the batch of the Frobenius norm of the 14x3 coordinate
/// difference.
pub fn loss_abs<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    check_pose_rows(g, pred)?;
    check_pose_rows(g, gt)?;
    let diff = g.sub(pred, gt)?;
    let sq = g.square(diff);
    let per_sample = g.sum_rows(sq)?;
    let norms = g.sqrt(per_sample)?;
    Ok(g.mean_all(norms))
}

/// Same norm after subtracting each pose's own 14-joint centroid from
/// both sides; invariant to any translation of either input.
pub fn loss_centered<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    check_pose_rows(g, pred)?;
    check_pose_rows(g, gt)?;
    let b = g.value(pred).shape()[0];
    let p3 = g.reshape(pred, &[b, NUM_KEYPOINTS, 3])?;
    let g3 = g.reshape(gt, &[b, NUM_KEYPOINTS, 3])?;
    let pc = g.center_rows(p3)?;
    let gc = g.center_rows(g3)?;
    let diff = g.sub(pc, gc)?;
    let flat = g.reshape(diff, &[b, NUM_KEYPOINTS * 3])?;
    let sq = g.square(flat);
    let per_sample = g.sum_rows(sq)?;
    let norms = g.sqrt(per_sample)?;
    Ok(g.mean_all(norms))
}

fn check_pose_rows<T: Real>(g: &Graph<T>, v: Var) -> Result<()> {
    let shape = g.value(v).shape();
    if shape.len() != 2 || shape[1] != NUM_KEYPOINTS * 3 {
        return Err(PipelineError::InvalidArgument(format!(
            "pose batch must be (B, {}), got {shape:?}",
            NUM_KEYPOINTS * 3
        )));
    }
    Ok(())
}

/// Batch OT loss: solves the optimal assignment between the RF feature
/// batch and the (constant) pose feature batch under the entrywise L1
/// cost, freezes that plan, and returns `sum_ij plan_ij * ||Zr_i -
/// Zp_j||_1` with gradients flowing through the cost entries only.
///
/// Returns the loss node and the frozen row-to-row assignment.
pub fn ot_batch_loss<T: Real>(
    g: &mut Graph<T>,
    zr: Var,
    zp: &Array2<f64>,
) -> Result<(Var, Vec<usize>)> {
    let zr_shape = g.value(zr).shape().to_vec();
    if zr_shape.len() != 2 || zr_shape[0] != zp.dim().0 || zr_shape[1] != zp.dim().1 {
        return Err(PipelineError::InvalidArgument(format!(
            "feature batches must match: Zr {zr_shape:?} vs Zp {:?}",
            zp.dim()
        )));
    }
    let b = zr_shape[0];
    if b < 2 {
        return Err(PipelineError::InvalidArgument(
            "the OT loss needs a batch of at least 2".into(),
        ));
    }
    // Solve the assignment on detached values.
    let zr_pts: Vec<Vec<f64>> = (0..b)
        .map(|i| g.value(zr).as_slice().expect("layout")[i * zr_shape[1]..(i + 1) * zr_shape[1]]
            .iter()
            .map(|v| v.into_f64())
            .collect())
        .collect();
    let zp_pts: Vec<Vec<f64>> =
        (0..b).map(|j| zp.row(j).iter().copied().collect()).collect();
    let cost = l1_cost(&zr_pts, &zp_pts).map_err(|e| PipelineError::Ot(e.to_string()))?;
    let (perm, _) = solve_assignment(cost.entries()).map_err(|e| PipelineError::Ot(e.to_string()))?;
    let loss = ot_batch_loss_with_plan(g, zr, zp, &perm)?;
    Ok((loss, perm))
}

/// The same loss with an already-frozen assignment; used by the gradient
/// checks, which must perturb inputs without re-solving the plan.
pub fn ot_batch_loss_with_plan<T: Real>(
    g: &mut Graph<T>,
    zr: Var,
    zp: &Array2<f64>,
    plan: &[usize],
) -> Result<Var> {
    let b = zp.dim().0;
    if plan.len() != b {
        return Err(PipelineError::InvalidArgument("plan length must match batch".into()));
    }
    // Permute the constant targets so matched pairs align by row.
    let dim = zp.dim().1;
    let mut permuted = Array2::<f64>::zeros((b, dim));
    for (i, &j) in plan.iter().enumerate() {
        permuted.row_mut(i).assign(&zp.row(j));
    }
    let zp_var = {
        let data: Vec<T> = permuted.iter().map(|&v| T::from_f64(v)).collect();
        let arr = ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[b, dim]), data).expect("shape");
        g.constant(arr)
    };
    let diff = g.sub(zr, zp_var)?;
    let absd = g.abs(diff);
    let total = g.sum_all(absd);
    // The plan carries weight 1/b per matched pair.
    Ok(g.mul_scalar(total, T::from_f64(1.0 / b as f64)))
}
