//! Raw frames to RF heatmaps: matched-filter back-projection onto a
//! spatial grid, then temporal differencing to remove static multipath.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::radar::{ArrayConfig, ComplexFrame, Plane};
use crate::types::{Grid2D, PoseFrame};

/// Magnitude heatmap on a spatial grid, max-normalized to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RfHeatmap {
    pub values: Array2<f64>,
    pub grid: Grid2D,
    pub plane: Plane,
    pub timestamp: f64,
}

impl RfHeatmap {
    pub fn argmax(&self) -> [usize; 2] {
        let mut best = [0, 0];
        let mut best_v = f64::NEG_INFINITY;
        for ((i, j), &v) in self.values.indexed_iter() {
            if v > best_v {
                best_v = v;
                best = [i, j];
            }
        }
        best
    }
}

/// Back-projects one frame onto the grid: each cell accumulates the
/// samples multiplied by the conjugate steering phasor of the cell
/// center. Linear in the frame samples.
///
/// Errors if the grid's in-plane extent contains the array reference
/// point (cells there would have zero range).
pub fn beamform(
    frame: &ComplexFrame,
    grid: &Grid2D,
    cfg: &ArrayConfig,
) -> Result<Array2<Complex64>> {
    cfg.validate()?;
    frame.check_shape(cfg)?;
    if frame.plane != cfg.plane {
        return Err(CoreError::InvalidArgument(
            "frame plane does not match array config plane".into(),
        ));
    }
    let origin_in_plane = cfg.world_to_plane(cfg.origin);
    if grid.contains_point(origin_in_plane) {
        return Err(CoreError::Domain(
            "grid extent contains the array reference point".into(),
        ));
    }

    let (num_elements, num_freqs) = frame.samples.dim();
    let freq_step = cfg.bandwidth_hz / (cfg.num_freqs - 1) as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let centers_a = grid.axis_centers(0);
    let centers_b = grid.axis_centers(1);

    let rows: Vec<Vec<Complex64>> = centers_a
        .par_iter()
        .map(|&ca| {
            let mut row = Vec::with_capacity(grid.dims()[1]);
            for &cb in &centers_b {
                let pos = cfg.plane_to_world([ca, cb]);
                let rel = [
                    pos[0] - cfg.origin[0],
                    pos[1] - cfg.origin[1],
                    pos[2] - cfg.origin[2],
                ];
                let range = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt();
                let axis = cfg.axis();
                let cos_theta = (rel[0] * axis[0] + rel[1] * axis[1] + rel[2] * axis[2]) / range;
                let tau = 2.0 * range / cfg.propagation_speed;
                let unit_m = cfg.element_spacing * cos_theta / cfg.propagation_speed;

                // Conjugate steering phasors via the same recurrences as
                // synthesis, with positive phase signs.
                let step_n0 = Complex64::from_polar(1.0, two_pi * freq_step * tau);
                let elem_base0 = Complex64::from_polar(1.0, two_pi * cfg.carrier_hz * unit_m);
                let elem_step = Complex64::from_polar(1.0, two_pi * freq_step * unit_m);

                let mut base = Complex64::from_polar(1.0, two_pi * cfg.carrier_hz * tau);
                let mut elem_base = elem_base0;
                let mut acc = Complex64::new(0.0, 0.0);
                for n in 0..num_freqs {
                    let mut phasor = base;
                    for m in 0..num_elements {
                        acc += frame.samples[(m, n)] * phasor;
                        phasor *= elem_base;
                    }
                    base *= step_n0;
                    elem_base *= elem_step;
                }
                row.push(acc);
            }
            row
        })
        .collect();

    let mut out = Array2::zeros((grid.dims()[0], grid.dims()[1]));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Differences two complex maps and max-normalizes the magnitude.
///
/// Static multipath is identical in both maps and cancels; an all-zero
/// difference passes through as zeros.
pub fn remove_static(
    curr: &Array2<Complex64>,
    prev: &Array2<Complex64>,
    grid: &Grid2D,
    plane: Plane,
    timestamp: f64,
) -> Result<RfHeatmap> {
    if curr.dim() != prev.dim() {
        return Err(CoreError::InvalidArgument(format!(
            "map shapes differ: {:?} vs {:?}",
            curr.dim(),
            prev.dim()
        )));
    }
    if curr.dim() != (grid.dims()[0], grid.dims()[1]) {
        return Err(CoreError::InvalidArgument("map shape does not match grid dims".into()));
    }
    let mut mag = Array2::zeros(curr.dim());
    let mut max = 0.0f64;
    for ((i, j), v) in curr.indexed_iter() {
        let d = (v - prev[(i, j)]).norm();
        mag[(i, j)] = d;
        max = max.max(d);
    }
    if max > 0.0 {
        mag.mapv_inplace(|v| v / max);
    }
    Ok(RfHeatmap { values: mag, grid: *grid, plane, timestamp })
}

/// Beamforms and differences a synchronized dual-plane sequence.
///
/// Each output heatmap is aligned to the later timestamp of its frame
/// pair; the caller drops the first pose label to stay aligned.
pub fn preprocess_sequence(
    frames_h: &[ComplexFrame],
    frames_v: &[ComplexFrame],
    grid_h: &Grid2D,
    grid_v: &Grid2D,
    cfg_h: &ArrayConfig,
    cfg_v: &ArrayConfig,
) -> Result<(Vec<RfHeatmap>, Vec<RfHeatmap>)> {
    if frames_h.len() != frames_v.len() {
        return Err(CoreError::InvalidArgument(format!(
            "plane sequences differ in length: {} vs {}",
            frames_h.len(),
            frames_v.len()
        )));
    }
    if frames_h.len() < 2 {
        return Err(CoreError::InvalidArgument("need at least 2 frames per plane".into()));
    }
    let plane_maps = |frames: &[ComplexFrame], grid: &Grid2D, cfg: &ArrayConfig| -> Result<Vec<_>> {
        frames.iter().map(|f| beamform(f, grid, cfg)).collect()
    };
    let maps_h = plane_maps(frames_h, grid_h, cfg_h)?;
    let maps_v = plane_maps(frames_v, grid_v, cfg_v)?;

    let diff = |maps: &[Array2<Complex64>],
                frames: &[ComplexFrame],
                grid: &Grid2D,
                plane: Plane|
     -> Result<Vec<RfHeatmap>> {
        (1..maps.len())
            .map(|i| remove_static(&maps[i], &maps[i - 1], grid, plane, frames[i].timestamp))
            .collect()
    };
    Ok((
        diff(&maps_h, frames_h, grid_h, cfg_h.plane)?,
        diff(&maps_v, frames_v, grid_v, cfg_v.plane)?,
    ))
}

/// Drops the first pose of a sequence so labels align with differenced
/// heatmaps.
pub fn align_poses_to_heatmaps(poses: &[PoseFrame]) -> Result<Vec<PoseFrame>> {
    if poses.len() < 2 {
        return Err(CoreError::InvalidArgument("need at least 2 poses".into()));
    }
    Ok(poses[1..].to_vec())
}

/// Default horizontal heatmap grid: 4 m x 4 m at 0.1 m cells, axes (x, y).
pub fn default_grid_h() -> Grid2D {
    Grid2D::new([-2.0, 0.3], [0.1, 0.1], [40, 40]).expect("static grid")
}

/// Default vertical heatmap grid: 4 m x 2.6 m at 0.1 m cells, axes (y, z).
pub fn default_grid_v() -> Grid2D {
    Grid2D::new([0.3, 0.0], [0.1, 0.1], [40, 26]).expect("static grid")
}
