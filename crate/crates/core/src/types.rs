//! Shared domain types: body keypoints, world grids, pose frames, and
//! feature vectors.
//!
//! Everything here is an immutable value type; producers and consumers
//! across the workspace agree on the keypoint ordering and feature
//! dimension defined in this module.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Number of body keypoints in a pose.
pub const NUM_KEYPOINTS: usize = 14;

/// Dimension of pose and RF feature vectors.
pub const FEATURE_DIM: usize = 256;

/// Canonical keypoint order used by every producer and consumer.
///
/// The order is fixed so that serialized poses, network outputs, and
/// metric groupings all index the same joints.
pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "neck",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_ankle",
    "r_ankle",
];

/// Metric report groups in fixed order: (label, member keypoint indices).
pub const KEYPOINT_GROUPS: [(&str, &[usize]); 8] = [
    ("Nose", &[0]),
    ("Neck", &[1]),
    ("Shoulders", &[2, 3]),
    ("Elbows", &[4, 5]),
    ("Wrists", &[6, 7]),
    ("Hips", &[8, 9]),
    ("Knees", &[10, 11]),
    ("Ankles", &[12, 13]),
];

/// Axis-aligned scene bounding box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoundingBox {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// 14 three-dimensional body-joint coordinates in meters, ordered as
/// [`KEYPOINT_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoints3D {
    coords: [[f64; 3]; NUM_KEYPOINTS],
}

impl Keypoints3D {
    /// Builds a pose, rejecting non-finite coordinates.
    pub fn new(coords: [[f64; 3]; NUM_KEYPOINTS]) -> Result<Self> {
        for (k, c) in coords.iter().enumerate() {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(CoreError::InvalidArgument(format!(
                    "keypoint {} ({}) has non-finite coordinates",
                    k, KEYPOINT_NAMES[k]
                )));
            }
        }
        Ok(Self { coords })
    }

    /// Builds a pose from a flat `[x0,y0,z0, x1,...]` slice of length 42.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != NUM_KEYPOINTS * 3 {
            return Err(CoreError::InvalidArgument(format!(
                "expected {} coordinates, got {}",
                NUM_KEYPOINTS * 3,
                flat.len()
            )));
        }
        let mut coords = [[0.0; 3]; NUM_KEYPOINTS];
        for k in 0..NUM_KEYPOINTS {
            coords[k] = [flat[3 * k], flat[3 * k + 1], flat[3 * k + 2]];
        }
        Self::new(coords)
    }

    pub fn coords(&self) -> &[[f64; 3]; NUM_KEYPOINTS] {
        &self.coords
    }

    pub fn keypoint(&self, k: usize) -> [f64; 3] {
        self.coords[k]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.coords.iter().flatten().copied().collect()
    }

    /// Mean of the 14 keypoints.
    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for kp in &self.coords {
            for a in 0..3 {
                c[a] += kp[a];
            }
        }
        for v in &mut c {
            *v /= NUM_KEYPOINTS as f64;
        }
        c
    }

    /// Same pose translated by `offset`.
    pub fn translated(&self, offset: [f64; 3]) -> Self {
        let mut coords = self.coords;
        for kp in &mut coords {
            for a in 0..3 {
                kp[a] += offset[a];
            }
        }
        Self { coords }
    }

    /// Checks every keypoint against a scene bounding box.
    pub fn check_in_bounds(&self, bounds: &BoundingBox) -> Result<()> {
        for (k, c) in self.coords.iter().enumerate() {
            if !bounds.contains(*c) {
                return Err(CoreError::OutOfRange(format!(
                    "keypoint {} ({}) at {:?} outside scene bounds",
                    k, KEYPOINT_NAMES[k], c
                )));
            }
        }
        Ok(())
    }
}

/// Regular axis-aligned grid with `D` axes: a world origin, per-axis cell
/// size, and per-axis cell counts. World/index conversion is floor-based
/// and pure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid<const D: usize> {
    origin: [f64; D],
    cell_size: [f64; D],
    dims: [usize; D],
}

// Serde's fixed-size array impls cannot be named for a generic `D`, so
// grids serialize through a Vec-based representation.
#[derive(Serialize, Deserialize)]
struct GridRepr {
    origin: Vec<f64>,
    cell_size: Vec<f64>,
    dims: Vec<usize>,
}

impl<const D: usize> Serialize for Grid<D> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        GridRepr {
            origin: self.origin.to_vec(),
            cell_size: self.cell_size.to_vec(),
            dims: self.dims.to_vec(),
        }
        .serialize(serializer)
    }
}

impl<'de, const D: usize> Deserialize<'de> for Grid<D> {
    fn deserialize<Dz: serde::Deserializer<'de>>(deserializer: Dz) -> std::result::Result<Self, Dz::Error> {
        let repr = GridRepr::deserialize(deserializer)?;
        let to_arr = |v: &[f64]| -> std::result::Result<[f64; D], Dz::Error> {
            v.try_into().map_err(|_| serde::de::Error::custom(format!("expected {D} axes")))
        };
        let dims: [usize; D] = repr
            .dims
            .as_slice()
            .try_into()
            .map_err(|_| serde::de::Error::custom(format!("expected {D} axes")))?;
        Grid::new(to_arr(&repr.origin)?, to_arr(&repr.cell_size)?, dims)
            .map_err(serde::de::Error::custom)
    }
}

pub type Grid2D = Grid<2>;
pub type Grid3D = Grid<3>;

impl<const D: usize> Grid<D> {
    pub fn new(origin: [f64; D], cell_size: [f64; D], dims: [usize; D]) -> Result<Self> {
        for a in 0..D {
            if !(cell_size[a] > 0.0 && cell_size[a].is_finite()) {
                return Err(CoreError::InvalidArgument(format!(
                    "cell_size[{a}] must be positive, got {}",
                    cell_size[a]
                )));
            }
            if dims[a] < 1 {
                return Err(CoreError::InvalidArgument(format!("dims[{a}] must be >= 1")));
            }
            if !origin[a].is_finite() {
                return Err(CoreError::InvalidArgument(format!("origin[{a}] must be finite")));
            }
        }
        Ok(Self { origin, cell_size, dims })
    }

    pub fn origin(&self) -> [f64; D] {
        self.origin
    }

    pub fn cell_size(&self) -> [f64; D] {
        self.cell_size
    }

    pub fn dims(&self) -> [usize; D] {
        self.dims
    }

    pub fn num_cells(&self) -> usize {
        self.dims.iter().product()
    }

    /// Upper corner of the grid extent.
    pub fn extent_max(&self) -> [f64; D] {
        let mut m = self.origin;
        for a in 0..D {
            m[a] += self.cell_size[a] * self.dims[a] as f64;
        }
        m
    }

    pub fn contains_point(&self, p: [f64; D]) -> bool {
        let max = self.extent_max();
        (0..D).all(|a| p[a] >= self.origin[a] && p[a] < max[a])
    }

    /// Floor-based cell index of an in-bounds world point.
    pub fn world_to_index(&self, p: [f64; D]) -> Result<[usize; D]> {
        if !self.contains_point(p) {
            return Err(CoreError::OutOfRange(format!(
                "point {:?} outside grid extent {:?}..{:?}",
                p,
                self.origin,
                self.extent_max()
            )));
        }
        let mut idx = [0usize; D];
        for a in 0..D {
            let i = ((p[a] - self.origin[a]) / self.cell_size[a]).floor() as isize;
            // A point epsilon below the upper boundary can floor onto dims[a].
            idx[a] = (i.max(0) as usize).min(self.dims[a] - 1);
        }
        Ok(idx)
    }

    /// World coordinates of a cell center.
    pub fn index_to_center(&self, idx: [usize; D]) -> Result<[f64; D]> {
        let mut p = [0.0; D];
        for a in 0..D {
            if idx[a] >= self.dims[a] {
                return Err(CoreError::OutOfRange(format!(
                    "index {:?} outside grid dims {:?}",
                    idx, self.dims
                )));
            }
            p[a] = self.origin[a] + (idx[a] as f64 + 0.5) * self.cell_size[a];
        }
        Ok(p)
    }

    /// Per-axis cell-center coordinates, used by separable evaluations.
    pub fn axis_centers(&self, axis: usize) -> Vec<f64> {
        (0..self.dims[axis])
            .map(|i| self.origin[axis] + (i as f64 + 0.5) * self.cell_size[axis])
            .collect()
    }
}

/// One time-stamped ground-truth pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub timestamp: f64,
    pub frame_id: u64,
    pub keypoints: Keypoints3D,
}

/// Validates that a pose sequence is strictly increasing in time.
pub fn check_timestamps_strictly_increasing(frames: &[PoseFrame]) -> Result<()> {
    for w in frames.windows(2) {
        if w[1].timestamp <= w[0].timestamp {
            return Err(CoreError::InvalidArgument(format!(
                "timestamps not strictly increasing at frame {}: {} -> {}",
                w[1].frame_id, w[0].timestamp, w[1].timestamp
            )));
        }
    }
    Ok(())
}

/// Fixed-length embedding vector; holds either a pose feature or an RF
/// feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVec {
    values: Vec<f64>,
}

impl FeatureVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(CoreError::InvalidArgument(format!(
                "feature vector must have length {}, got {}",
                FEATURE_DIM,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(CoreError::InvalidArgument(
                "feature vector has non-finite entries".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn keypoint_groups_cover_all_indices_once() {
        let mut seen = [false; NUM_KEYPOINTS];
        for (_, members) in KEYPOINT_GROUPS {
            for &k in members {
                assert!(!seen[k], "keypoint {k} in two groups");
                seen[k] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn world_to_index_floor_arithmetic() {
        let g = Grid2D::new([0.0, 0.0], [0.1, 0.1], [10, 10]).unwrap();
        assert_eq!(g.world_to_index([0.25, 0.05]).unwrap(), [2, 0]);
    }

    #[test]
    fn world_to_index_at_origin() {
        let g = Grid2D::new([0.0, 0.0], [0.1, 0.1], [10, 10]).unwrap();
        assert_eq!(g.world_to_index([0.0, 0.0]).unwrap(), [0, 0]);
    }

    #[test]
    fn world_to_index_out_of_bounds_errors() {
        let g = Grid2D::new([0.0, 0.0], [0.1, 0.1], [10, 10]).unwrap();
        assert!(g.world_to_index([1.5, 0.0]).is_err());
        assert!(g.world_to_index([-0.01, 0.0]).is_err());
        assert!(g.world_to_index([0.0, 1.0]).is_err());
    }

    #[test]
    fn index_round_trip_within_half_cell() {
        // Round trip over 10^4 random in-bounds points.
        let g = Grid3D::new([-1.0, 0.5, -2.0], [0.05, 0.1, 0.2], [40, 30, 20]).unwrap();
        let max = g.extent_max();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let p = [
                rng.gen_range(g.origin()[0]..max[0]),
                rng.gen_range(g.origin()[1]..max[1]),
                rng.gen_range(g.origin()[2]..max[2]),
            ];
            let idx = g.world_to_index(p).unwrap();
            let c = g.index_to_center(idx).unwrap();
            for a in 0..3 {
                assert!(
                    (c[a] - p[a]).abs() <= g.cell_size()[a] / 2.0 + 1e-12,
                    "axis {a}: center {} vs point {}",
                    c[a],
                    p[a]
                );
            }
        }
    }

    #[test]
    fn grid_rejects_bad_construction() {
        assert!(Grid2D::new([0.0, 0.0], [0.0, 0.1], [10, 10]).is_err());
        assert!(Grid2D::new([0.0, 0.0], [-0.1, 0.1], [10, 10]).is_err());
        assert!(Grid2D::new([0.0, 0.0], [0.1, 0.1], [0, 10]).is_err());
    }

    #[test]
    fn keypoints_require_finite_coords() {
        let mut coords = [[0.0; 3]; NUM_KEYPOINTS];
        coords[3][1] = f64::NAN;
        assert!(Keypoints3D::new(coords).is_err());
    }

    #[test]
    fn keypoints_flat_round_trip() {
        let mut coords = [[0.0; 3]; NUM_KEYPOINTS];
        for (k, c) in coords.iter_mut().enumerate() {
            *c = [k as f64, 0.5 * k as f64, -(k as f64)];
        }
        let kp = Keypoints3D::new(coords).unwrap();
        let back = Keypoints3D::from_flat(&kp.to_flat()).unwrap();
        assert_eq!(kp, back);
    }

    #[test]
    fn centroid_of_translated_pose_shifts() {
        let kp = Keypoints3D::new([[1.0, 2.0, 3.0]; NUM_KEYPOINTS]).unwrap();
        let t = kp.translated([0.5, -1.0, 0.25]);
        let c = t.centroid();
        assert!((c[0] - 1.5).abs() < 1e-12);
        assert!((c[1] - 1.0).abs() < 1e-12);
        assert!((c[2] - 3.25).abs() < 1e-12);
    }

    #[test]
    fn timestamps_must_increase() {
        let kp = Keypoints3D::new([[0.0; 3]; NUM_KEYPOINTS]).unwrap();
        let mk = |t: f64, id: u64| PoseFrame { timestamp: t, frame_id: id, keypoints: kp };
        assert!(check_timestamps_strictly_increasing(&[mk(0.0, 0), mk(0.05, 1)]).is_ok());
        assert!(check_timestamps_strictly_increasing(&[mk(0.0, 0), mk(0.0, 1)]).is_err());
    }

    #[test]
    fn feature_vec_length_fixed() {
        assert!(FeatureVec::new(vec![0.0; FEATURE_DIM]).is_ok());
        assert!(FeatureVec::new(vec![0.0; 255]).is_err());
    }
}
