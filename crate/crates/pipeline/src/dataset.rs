//! Dataset directories: raw frames, preprocessed heatmaps, splits, and
//! pose-volume assembly for training batches.

use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use rfpose_core::blob::{read_blob_f32, read_blob_f64, write_blob_f32, write_blob_f64, BlobEntry, Manifest};
use rfpose_core::pose_field::{centered_grid, pose_heatmap};
use rfpose_core::preprocess::RfHeatmap;
use rfpose_core::radar::{ArrayConfig, RenderedSequence, SceneParams};
use rfpose_core::types::{Grid2D, Grid3D, Keypoints3D, PoseFrame, NUM_KEYPOINTS};

use crate::{PipelineError, Result};

/// Train/test fraction: first 80% of frames train, the rest test, split
/// by contiguous blocks so 20 Hz adjacency cannot leak across the split.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Deterministic metadata stored in every dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// "raw" for frame datasets, "preprocessed" for heatmap datasets.
    pub kind: String,
    pub seed: u64,
    pub frame_rate_hz: f64,
    pub scene: SceneParams,
    pub array_h: ArrayConfig,
    pub array_v: ArrayConfig,
    pub grid_h: Grid2D,
    pub grid_v: Grid2D,
    pub n_frames: usize,
}

/// Writes a rendered raw sequence as a dataset directory.
pub fn save_raw_dataset(
    dir: &Path,
    seq: &RenderedSequence,
    meta: &DatasetMeta,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let n = seq.frames_h.len();
    let (m, nf) = seq.frames_h[0].samples.dim();

    let frames_to_blob = |frames: &[rfpose_core::radar::ComplexFrame]| -> ArrayD<f32> {
        let mut data = Vec::with_capacity(n * m * nf * 2);
        for f in frames {
            for v in f.samples.iter() {
                data.push(v.re as f32);
                data.push(v.im as f32);
            }
        }
        ArrayD::from_shape_vec(IxDyn(&[n, m, nf, 2]), data).expect("shape")
    };
    write_blob_f32(&dir.join("frames_h.rfot"), &frames_to_blob(&seq.frames_h))?;
    write_blob_f32(&dir.join("frames_v.rfot"), &frames_to_blob(&seq.frames_v))?;
    write_blob_f64(&dir.join("poses.rfot"), &poses_to_blob(&seq.poses))?;
    write_blob_f64(&dir.join("timestamps.rfot"), &times_to_blob(&seq.poses))?;

    let manifest = Manifest {
        format_version: 1,
        meta: serde_json::to_value(meta).map_err(|e| PipelineError::Manifest(e.to_string()))?,
        blobs: vec![
            entry("frames_h.rfot", "frames_h", &[n, m, nf, 2], "f32"),
            entry("frames_v.rfot", "frames_v", &[n, m, nf, 2], "f32"),
            entry("poses.rfot", "poses", &[n, NUM_KEYPOINTS, 3], "f64"),
            entry("timestamps.rfot", "timestamps", &[n], "f64"),
        ],
    };
    manifest.save(dir)?;
    Ok(())
}

/// A raw dataset loaded back into memory.
pub struct RawDataset {
    pub frames_h: Vec<rfpose_core::radar::ComplexFrame>,
    pub frames_v: Vec<rfpose_core::radar::ComplexFrame>,
    pub poses: Vec<PoseFrame>,
    pub meta: DatasetMeta,
}

pub fn load_raw_dataset(dir: &Path) -> Result<RawDataset> {
    let manifest = Manifest::load(dir)?;
    let meta: DatasetMeta = serde_json::from_value(manifest.meta.clone())
        .map_err(|e| PipelineError::Manifest(format!("{}: {e}", dir.display())))?;
    if meta.kind != "raw" {
        return Err(PipelineError::Manifest(format!(
            "{}: expected a raw dataset, found kind '{}'",
            dir.display(),
            meta.kind
        )));
    }
    let read_frames = |role: &str, cfg: &ArrayConfig| -> Result<Vec<rfpose_core::radar::ComplexFrame>> {
        let e = manifest.find(role)?;
        let arr = read_blob_f32(&dir.join(&e.path))?;
        let shape = arr.shape().to_vec();
        if shape.len() != 4 || shape[3] != 2 {
            return Err(PipelineError::Manifest(format!("{role}: unexpected shape {shape:?}")));
        }
        let (n, m, nf) = (shape[0], shape[1], shape[2]);
        let flat = arr.as_slice().expect("layout");
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut samples = ndarray::Array2::zeros((m, nf));
            for a in 0..m {
                for b in 0..nf {
                    let base = ((i * m + a) * nf + b) * 2;
                    samples[(a, b)] =
                        num_complex::Complex64::new(flat[base] as f64, flat[base + 1] as f64);
                }
            }
            out.push(rfpose_core::radar::ComplexFrame {
                samples,
                timestamp: i as f64 / meta.frame_rate_hz,
                plane: cfg.plane,
            });
        }
        Ok(out)
    };
    let frames_h = read_frames("frames_h", &meta.array_h)?;
    let frames_v = read_frames("frames_v", &meta.array_v)?;
    let poses = read_poses(dir, &manifest, meta.frame_rate_hz)?;
    if frames_h.len() != poses.len() || frames_v.len() != poses.len() {
        return Err(PipelineError::Manifest("frame/pose counts differ".into()));
    }
    Ok(RawDataset { frames_h, frames_v, poses, meta })
}

/// Writes heatmaps + aligned poses as a self-contained preprocessed
/// dataset directory.
pub fn save_preprocessed_dataset(
    dir: &Path,
    heat_h: &[RfHeatmap],
    heat_v: &[RfHeatmap],
    poses: &[PoseFrame],
    meta: &DatasetMeta,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let n = heat_h.len();
    if heat_v.len() != n || poses.len() != n {
        return Err(PipelineError::InvalidArgument(
            "heatmap/pose counts differ".into(),
        ));
    }
    let maps_to_blob = |maps: &[RfHeatmap]| -> ArrayD<f32> {
        let (h, w) = maps[0].values.dim();
        let mut data = Vec::with_capacity(n * h * w);
        for m in maps {
            data.extend(m.values.iter().map(|&v| v as f32));
        }
        ArrayD::from_shape_vec(IxDyn(&[n, h, w]), data).expect("shape")
    };
    let hh = maps_to_blob(heat_h);
    let vv = maps_to_blob(heat_v);
    let hh_shape = hh.shape().to_vec();
    let vv_shape = vv.shape().to_vec();
    write_blob_f32(&dir.join("heatmaps_h.rfot"), &hh)?;
    write_blob_f32(&dir.join("heatmaps_v.rfot"), &vv)?;
    write_blob_f64(&dir.join("poses.rfot"), &poses_to_blob(poses))?;
    write_blob_f64(&dir.join("timestamps.rfot"), &times_to_blob(poses))?;

    let mut meta = meta.clone();
    meta.kind = "preprocessed".into();
    let manifest = Manifest {
        format_version: 1,
        meta: serde_json::to_value(&meta).map_err(|e| PipelineError::Manifest(e.to_string()))?,
        blobs: vec![
            entry("heatmaps_h.rfot", "heatmaps_h", &hh_shape, "f32"),
            entry("heatmaps_v.rfot", "heatmaps_v", &vv_shape, "f32"),
            entry("poses.rfot", "poses", &[n, NUM_KEYPOINTS, 3], "f64"),
            entry("timestamps.rfot", "timestamps", &[n], "f64"),
        ],
    };
    manifest.save(dir)?;
    Ok(())
}

/// A preprocessed dataset in memory: the training substrate.
pub struct RfDataset {
    pub heatmaps_h: Array3<f32>,
    pub heatmaps_v: Array3<f32>,
    pub poses: Vec<Keypoints3D>,
    pub timestamps: Vec<f64>,
    pub meta: DatasetMeta,
}

impl RfDataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(dir)?;
        let meta: DatasetMeta = serde_json::from_value(manifest.meta.clone())
            .map_err(|e| PipelineError::Manifest(format!("{}: {e}", dir.display())))?;
        if meta.kind != "preprocessed" {
            return Err(PipelineError::Manifest(format!(
                "{}: expected a preprocessed dataset, found kind '{}' (run the preprocess step first)",
                dir.display(),
                meta.kind
            )));
        }
        let load3 = |role: &str| -> Result<Array3<f32>> {
            let e = manifest.find(role)?;
            let arr = read_blob_f32(&dir.join(&e.path))?;
            arr.into_dimensionality::<ndarray::Ix3>()
                .map_err(|e| PipelineError::Manifest(format!("{role}: {e}")))
        };
        let heatmaps_h = load3("heatmaps_h")?;
        let heatmaps_v = load3("heatmaps_v")?;
        let manifest_poses = read_poses(dir, &manifest, meta.frame_rate_hz)?;
        let timestamps = manifest_poses.iter().map(|p| p.timestamp).collect();
        let poses = manifest_poses.into_iter().map(|p| p.keypoints).collect::<Vec<_>>();
        if heatmaps_h.dim().0 != poses.len() || heatmaps_v.dim().0 != poses.len() {
            return Err(PipelineError::Manifest("heatmap/pose counts differ".into()));
        }
        Ok(Self { heatmaps_h, heatmaps_v, poses, timestamps, meta })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Contiguous-block split: first 80% train, rest test.
    pub fn split(&self) -> (Range<usize>, Range<usize>) {
        let n = self.len();
        let cut = ((n as f64) * TRAIN_FRACTION).floor() as usize;
        (0..cut, cut..n)
    }

    pub fn heatmap_h(&self, i: usize) -> Array2<f32> {
        self.heatmaps_h.index_axis(ndarray::Axis(0), i).to_owned()
    }

    pub fn heatmap_v(&self, i: usize) -> Array2<f32> {
        self.heatmaps_v.index_axis(ndarray::Axis(0), i).to_owned()
    }

    /// Flattened (B, 42) ground-truth rows for a set of indices.
    pub fn pose_rows(&self, indices: &[usize]) -> Array2<f64> {
        let mut rows = Array2::zeros((indices.len(), NUM_KEYPOINTS * 3));
        for (r, &i) in indices.iter().enumerate() {
            for (c, v) in self.poses[i].to_flat().into_iter().enumerate() {
                rows[(r, c)] = v;
            }
        }
        rows
    }
}

/// Pose-volume construction parameters plus a full-dataset cache.
///
/// Volumes depend only on the pose, so each is built once and reused
/// across epochs.
pub struct VolumeBuilder {
    pub sigma: f64,
    pub extent: f64,
    pub cell: f64,
    pub person_centered: bool,
    /// Fixed grid center for the room-absolute variant.
    pub absolute_center: [f64; 3],
    cache: Vec<std::cell::OnceCell<(Array3<f32>, [f64; 3])>>,
}

impl VolumeBuilder {
    pub fn new(
        sigma: f64,
        extent: f64,
        cell: f64,
        person_centered: bool,
        absolute_center: [f64; 3],
        dataset_len: usize,
    ) -> Self {
        let mut cache = Vec::with_capacity(dataset_len);
        cache.resize_with(dataset_len, std::cell::OnceCell::new);
        Self { sigma, extent, cell, person_centered, absolute_center, cache }
    }

    pub fn grid_dims(&self) -> [usize; 3] {
        let n = (self.extent / self.cell).round() as usize;
        [n, n, n]
    }

    fn grid_for(&self, pose: &Keypoints3D) -> Result<(Grid3D, [f64; 3])> {
        if self.person_centered {
            let c = pose.centroid();
            Ok((centered_grid(c, self.extent, self.cell)?, c))
        } else {
            Ok((centered_grid(self.absolute_center, self.extent, self.cell)?, [0.0; 3]))
        }
    }

    /// Volume and predictor hint for sample `i`.
    pub fn build(&self, i: usize, pose: &Keypoints3D) -> Result<(Array3<f32>, [f64; 3])> {
        if let Some(hit) = self.cache.get(i).and_then(|c| c.get()) {
            return Ok(hit.clone());
        }
        let (grid, hint) = self.grid_for(pose)?;
        let vol = pose_heatmap(pose, &grid, self.sigma)?;
        let vol32 = vol.values.mapv(|v| v as f32);
        let out = (vol32, hint);
        if let Some(cell) = self.cache.get(i) {
            let _ = cell.set(out.clone());
        }
        Ok(out)
    }
}

fn entry(path: &str, role: &str, shape: &[usize], dtype: &str) -> BlobEntry {
    BlobEntry { path: path.into(), role: role.into(), shape: shape.to_vec(), dtype: dtype.into() }
}

fn poses_to_blob(poses: &[PoseFrame]) -> ArrayD<f64> {
    let n = poses.len();
    let mut data = Vec::with_capacity(n * NUM_KEYPOINTS * 3);
    for p in poses {
        data.extend(p.keypoints.to_flat());
    }
    ArrayD::from_shape_vec(IxDyn(&[n, NUM_KEYPOINTS, 3]), data).expect("shape")
}

fn times_to_blob(poses: &[PoseFrame]) -> ArrayD<f64> {
    ArrayD::from_shape_vec(
        IxDyn(&[poses.len()]),
        poses.iter().map(|p| p.timestamp).collect(),
    )
    .expect("shape")
}

fn read_poses(dir: &Path, manifest: &Manifest, frame_rate: f64) -> Result<Vec<PoseFrame>> {
    let e = manifest.find("poses")?;
    let arr = read_blob_f64(&dir.join(&e.path))?;
    let shape = arr.shape().to_vec();
    if shape.len() != 3 || shape[1] != NUM_KEYPOINTS || shape[2] != 3 {
        return Err(PipelineError::Manifest(format!("poses: unexpected shape {shape:?}")));
    }
    let times = manifest
        .find("timestamps")
        .ok()
        .map(|e| read_blob_f64(&dir.join(&e.path)))
        .transpose()?;
    let flat = arr.as_slice().expect("layout");
    let mut out = Vec::with_capacity(shape[0]);
    for i in 0..shape[0] {
        let row = &flat[i * NUM_KEYPOINTS * 3..(i + 1) * NUM_KEYPOINTS * 3];
        let kp = Keypoints3D::from_flat(row)?;
        let timestamp = times
            .as_ref()
            .and_then(|t| t.as_slice().map(|s| s[i]))
            .unwrap_or(i as f64 / frame_rate);
        out.push(PoseFrame { timestamp, frame_id: i as u64, keypoints: kp });
    }
    Ok(out)
}

fn io_err(dir: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io(format!("{}: {e}", dir.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rfpose_core::preprocess::{default_grid_h, default_grid_v};
    use rfpose_core::radar::render_sequence;

    fn tiny_meta(scene: &SceneParams) -> DatasetMeta {
        DatasetMeta {
            kind: "raw".into(),
            seed: scene.seed,
            frame_rate_hz: rfpose_core::radar::FRAME_RATE_HZ,
            scene: scene.clone(),
            array_h: ArrayConfig { num_elements: 4, num_freqs: 8, ..ArrayConfig::default_horizontal() },
            array_v: ArrayConfig { num_elements: 4, num_freqs: 8, ..ArrayConfig::default_vertical() },
            grid_h: default_grid_h(),
            grid_v: default_grid_v(),
            n_frames: 3,
        }
    }

    #[test]
    fn raw_dataset_round_trip() {
        let scene = SceneParams { noise_std: 0.0, ..SceneParams::default() };
        let meta = tiny_meta(&scene);
        let seq = render_sequence(&scene, &meta.array_h, &meta.array_v, 3).unwrap();
        let dir = std::env::temp_dir().join(format!("rfds-{}", std::process::id()));
        save_raw_dataset(&dir, &seq, &meta).unwrap();
        let back = load_raw_dataset(&dir).unwrap();
        assert_eq!(back.poses.len(), 3);
        assert_eq!(back.frames_h.len(), 3);
        // f32 storage round-trips the f32-cast values bit-exactly.
        let orig = seq.frames_h[1].samples[(2, 3)];
        let got = back.frames_h[1].samples[(2, 3)];
        assert_eq!(orig.re as f32, got.re as f32);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn split_is_contiguous_80_20() {
        let scene = SceneParams { noise_std: 0.0, ..SceneParams::default() };
        let mut meta = tiny_meta(&scene);
        meta.kind = "preprocessed".into();
        let poses: Vec<PoseFrame> = (0..10)
            .map(|i| rfpose_core::radar::walker_pose(i as f64 / 20.0, &scene).unwrap())
            .collect();
        let heat = |_: usize| RfHeatmap {
            values: ndarray::Array2::zeros((4, 4)),
            grid: Grid2D::new([0.0, 0.3], [0.1, 0.1], [4, 4]).unwrap(),
            plane: rfpose_core::radar::Plane::Horizontal,
            timestamp: 0.0,
        };
        let maps: Vec<RfHeatmap> = (0..10).map(heat).collect();
        let dir = std::env::temp_dir().join(format!("rfds-split-{}", std::process::id()));
        save_preprocessed_dataset(&dir, &maps, &maps, &poses, &meta).unwrap();
        let ds = RfDataset::load(&dir).unwrap();
        let (train, test) = ds.split();
        assert_eq!(train, 0..8);
        assert_eq!(test, 8..10);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn volume_builder_caches_and_centers() {
        let scene = SceneParams::default();
        let pose = rfpose_core::radar::walker_pose(0.4, &scene).unwrap().keypoints;
        let vb = VolumeBuilder::new(0.08, 1.0, 0.125, true, [0.0; 3], 4);
        assert_eq!(vb.grid_dims(), [8, 8, 8]);
        let (v1, hint) = vb.build(0, &pose).unwrap();
        let (v2, _) = vb.build(0, &pose).unwrap();
        assert_eq!(v1, v2);
        let c = pose.centroid();
        assert!((hint[0] - c[0]).abs() < 1e-12);
        // Centered volume peaks near the middle of the grid.
        assert!(v1.iter().all(|v| v.is_finite()));
    }
}
