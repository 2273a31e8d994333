//! 3D Gaussian pose heatmaps: one unit-peak kernel per keypoint, summed
//! into a volume on a voxel grid.

use ndarray::Array3;

use crate::error::{CoreError, Result};
use crate::types::{Grid3D, Keypoints3D};

/// Default kernel width in meters.
pub const DEFAULT_SIGMA: f64 = 0.08;

/// Pose volume on a voxel grid; values lie in [0, K] where K is the
/// keypoint count.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseVolume {
    pub values: Array3<f64>,
    pub grid: Grid3D,
    pub sigma: f64,
}

/// Evaluates one unit-peak Gaussian kernel centered at `kp` on every
/// voxel center: `exp(-||v - kp||^2 / (2 sigma^2))`.
///
/// The squared distance separates per axis, so the volume is an outer
/// product of three axis profiles; this is exact up to rounding and
/// avoids an `exp` per voxel.
pub fn point_heatmap(kp: [f64; 3], grid: &Grid3D, sigma: f64) -> Result<Array3<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CoreError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let profile = |axis: usize| -> Vec<f64> {
        grid.axis_centers(axis)
            .iter()
            .map(|&c| {
                let d = c - kp[axis];
                (-d * d * inv).exp()
            })
            .collect()
    };
    let px = profile(0);
    let py = profile(1);
    let pz = profile(2);
    let dims = grid.dims();
    let mut out = Array3::zeros((dims[0], dims[1], dims[2]));
    for (i, &vx) in px.iter().enumerate() {
        for (j, &vy) in py.iter().enumerate() {
            let vxy = vx * vy;
            for (k, &vz) in pz.iter().enumerate() {
                out[(i, j, k)] = vxy * vz;
            }
        }
    }
    Ok(out)
}

/// Sums the 14 per-keypoint heatmaps into the pose volume.
///
/// Keypoints outside the grid simply contribute their (small) in-grid
/// tail; no error is raised.
pub fn pose_heatmap(pose: &Keypoints3D, grid: &Grid3D, sigma: f64) -> Result<PoseVolume> {
    let dims = grid.dims();
    let mut values = Array3::zeros((dims[0], dims[1], dims[2]));
    for &kp in pose.coords() {
        values += &point_heatmap(kp, grid, sigma)?;
    }
    Ok(PoseVolume { values, grid: *grid, sigma })
}

/// Grid for person-centered pose volumes: a cube of `extent` meters
/// centered on `center`.
pub fn centered_grid(center: [f64; 3], extent: f64, cell: f64) -> Result<Grid3D> {
    let n = (extent / cell).round() as usize;
    if n < 1 {
        return Err(CoreError::InvalidArgument("extent smaller than one cell".into()));
    }
    let origin = [
        center[0] - extent / 2.0,
        center[1] - extent / 2.0,
        center[2] - extent / 2.0,
    ];
    Grid3D::new(origin, [cell; 3], [n; 3])
}
