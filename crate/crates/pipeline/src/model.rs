//! The three networks: pose encoder, dual-plane RF encoder with fusion,
//! and the keypoint predictor.

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;

use rfpose_core::types::{FEATURE_DIM, NUM_KEYPOINTS};
use rfpose_neural::{Graph, LayerSpec, Mode, ParamBinding, Real, Stack, Var};

use crate::{PipelineError, Result};

/// Pose-encoder rows: five Conv-BN-ReLU blocks then a linear head.
pub fn pose_encoder_specs() -> Vec<LayerSpec> {
    let mut s = Vec::new();
    for (cs, st) in [(32, 2), (64, 2), (64, 1), (128, 2), (128, 1)] {
        s.push(LayerSpec::Conv2d { out_channels: cs, kernel: 5, stride: st });
        s.push(LayerSpec::BatchNorm);
        s.push(LayerSpec::Relu);
    }
    s.push(LayerSpec::Flatten);
    s.push(LayerSpec::Linear { out_features: FEATURE_DIM });
    s
}

/// Sub-encoder rows: five Conv-BN-ReLU blocks and a final Conv-BN.
pub fn rf_sub_encoder_specs() -> Vec<LayerSpec> {
    let mut s = Vec::new();
    for (ks, cs, st) in [(3, 1, 1), (5, 8, 2), (5, 32, 2), (5, 128, 2), (5, 128, 1)] {
        s.push(LayerSpec::Conv2d { out_channels: cs, kernel: ks, stride: st });
        s.push(LayerSpec::BatchNorm);
        s.push(LayerSpec::Relu);
    }
    s.push(LayerSpec::Conv2d { out_channels: 512, kernel: 5, stride: 2 });
    s.push(LayerSpec::BatchNorm);
    s
}

/// Fusion head: flattened sub-encoder outputs, concatenated, mapped to
/// the shared feature width.
pub fn fusion_specs() -> Vec<LayerSpec> {
    vec![LayerSpec::Linear { out_features: FEATURE_DIM }]
}

/// Predictor rows: three Linear-LN-ReLU blocks of width 256, then a
/// linear map to the 14x3 coordinates.
pub fn keypoint_predictor_specs() -> Vec<LayerSpec> {
    let mut s = Vec::new();
    for _ in 0..3 {
        s.push(LayerSpec::Linear { out_features: 256 });
        s.push(LayerSpec::LayerNorm);
        s.push(LayerSpec::Relu);
    }
    s.push(LayerSpec::Linear { out_features: NUM_KEYPOINTS * 3 });
    s
}

/// Width of the predictor input: the feature vector plus the 3-vector
/// person-centering hint (zero when the feature comes from RF).
pub const PREDICTOR_INPUT: usize = FEATURE_DIM + 3;

/// Maps person-centered pose volumes to 256-d pose features. The volume's
/// vertical axis is folded into input channels so the 2-D convolution
/// rows of the table consume the 3-D volume.
#[derive(Debug, Clone)]
pub struct PoseEncoder {
    pub stack: Stack,
}

impl PoseEncoder {
    /// `volume_dims` are the pose-grid cell counts (x, y, z).
    pub fn new(volume_dims: [usize; 3], rng: &mut ChaCha8Rng) -> Result<Self> {
        let input = [volume_dims[2], volume_dims[0], volume_dims[1]];
        let stack = Stack::build("pose_encoder", &pose_encoder_specs(), &input, rng)?;
        Ok(Self { stack })
    }

    pub fn from_stack(stack: Stack) -> Result<Self> {
        if stack.specs() != pose_encoder_specs().as_slice() {
            return Err(PipelineError::Checkpoint(
                "checkpoint does not contain a pose encoder".into(),
            ));
        }
        Ok(Self { stack })
    }

    /// `volumes` is (B, Z, X, Y); returns (B, 256).
    pub fn forward<T: Real>(
        &mut self,
        g: &mut Graph<T>,
        volumes: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<ParamBinding>)> {
        Ok(self.stack.forward(g, volumes, mode)?)
    }
}

/// Dual-plane RF encoder: one sub-encoder per plane, flatten, concat,
/// linear fusion to the shared 256-d feature space.
#[derive(Debug, Clone)]
pub struct RfEncoder {
    pub sub_h: Stack,
    pub sub_v: Stack,
    pub fusion: Stack,
}

/// Per-stack parameter bindings of one RF-encoder forward pass.
pub struct RfBindings {
    pub sub_h: Vec<ParamBinding>,
    pub sub_v: Vec<ParamBinding>,
    pub fusion: Vec<ParamBinding>,
}

impl RfEncoder {
    /// Grid dims are (cells along the first heatmap axis, cells along
    /// the second); heatmaps enter as single-channel images.
    pub fn new(grid_h_dims: [usize; 2], grid_v_dims: [usize; 2], rng: &mut ChaCha8Rng) -> Result<Self> {
        let sub_h =
            Stack::build("rf_sub_h", &rf_sub_encoder_specs(), &[1, grid_h_dims[0], grid_h_dims[1]], rng)?;
        let sub_v =
            Stack::build("rf_sub_v", &rf_sub_encoder_specs(), &[1, grid_v_dims[0], grid_v_dims[1]], rng)?;
        let flat = sub_h.output_shape().iter().product::<usize>()
            + sub_v.output_shape().iter().product::<usize>();
        let fusion = Stack::build("rf_fusion", &fusion_specs(), &[flat], rng)?;
        Ok(Self { sub_h, sub_v, fusion })
    }

    pub fn from_stacks(sub_h: Stack, sub_v: Stack, fusion: Stack) -> Result<Self> {
        if sub_h.specs() != rf_sub_encoder_specs().as_slice()
            || sub_v.specs() != rf_sub_encoder_specs().as_slice()
            || fusion.specs() != fusion_specs().as_slice()
        {
            return Err(PipelineError::Checkpoint(
                "checkpoint does not contain an RF encoder".into(),
            ));
        }
        Ok(Self { sub_h, sub_v, fusion })
    }

    /// Inputs are (B, 1, H, W) per plane; returns Z_r of shape (B, 256).
    pub fn forward<T: Real>(
        &mut self,
        g: &mut Graph<T>,
        heat_h: Var,
        heat_v: Var,
        mode: Mode,
    ) -> Result<(Var, RfBindings)> {
        let (zh, bh) = self.sub_h.forward(g, heat_h, mode)?;
        let (zv, bv) = self.sub_v.forward(g, heat_v, mode)?;
        let b = g.value(zh).shape()[0];
        let flat_h: usize = g.value(zh).shape()[1..].iter().product();
        let flat_v: usize = g.value(zv).shape()[1..].iter().product();
        let zh = g.reshape(zh, &[b, flat_h])?;
        let zv = g.reshape(zv, &[b, flat_v])?;
        let cat = g.concat2(zh, zv)?;
        let (zr, bf) = self.fusion.forward(g, cat, mode)?;
        Ok((zr, RfBindings { sub_h: bh, sub_v: bv, fusion: bf }))
    }

    pub fn param_count(&self) -> usize {
        self.sub_h.param_count() + self.sub_v.param_count() + self.fusion.param_count()
    }

    pub fn param_hash(&self) -> u64 {
        self.sub_h
            .param_hash()
            .wrapping_mul(31)
            .wrapping_add(self.sub_v.param_hash())
            .wrapping_mul(31)
            .wrapping_add(self.fusion.param_hash())
    }
}

/// Maps a feature vector plus centering hint to 14x3 coordinates.
#[derive(Debug, Clone)]
pub struct KeypointPredictor {
    pub stack: Stack,
}

impl KeypointPredictor {
    pub fn new(rng: &mut ChaCha8Rng) -> Result<Self> {
        let stack = Stack::build("predictor", &keypoint_predictor_specs(), &[PREDICTOR_INPUT], rng)?;
        Ok(Self { stack })
    }

    pub fn from_stack(stack: Stack) -> Result<Self> {
        if stack.specs() != keypoint_predictor_specs().as_slice() {
            return Err(PipelineError::Checkpoint(
                "checkpoint does not contain a keypoint predictor".into(),
            ));
        }
        Ok(Self { stack })
    }

    /// `feature` is (B, 256), `hint` is (B, 3); returns (B, 42).
    pub fn forward<T: Real>(
        &mut self,
        g: &mut Graph<T>,
        feature: Var,
        hint: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<ParamBinding>)> {
        let joined = g.concat2(feature, hint)?;
        Ok(self.stack.forward(g, joined, mode)?)
    }
}

/// Stacks a batch of single-channel heatmaps into a (B, 1, H, W) graph
/// constant.
pub fn heatmap_batch<T: Real>(g: &mut Graph<T>, maps: &[Array2<f32>]) -> Result<Var> {
    if maps.is_empty() {
        return Err(PipelineError::InvalidArgument("empty heatmap batch".into()));
    }
    let (h, w) = maps[0].dim();
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        if m.dim() != (h, w) {
            return Err(PipelineError::InvalidArgument("heatmap shapes differ in batch".into()));
        }
        data.extend(m.iter().map(|&v| T::from_f64(v as f64)));
    }
    let arr = ArrayD::from_shape_vec(IxDyn(&[maps.len(), 1, h, w]), data)
        .expect("length matches shape");
    Ok(g.constant(arr))
}

/// Folds pose volumes (X, Y, Z) into a (B, Z, X, Y) graph constant.
pub fn volume_batch<T: Real>(g: &mut Graph<T>, volumes: &[Array3<f32>]) -> Result<Var> {
    if volumes.is_empty() {
        return Err(PipelineError::InvalidArgument("empty volume batch".into()));
    }
    let (nx, ny, nz) = volumes[0].dim();
    let mut data = Vec::with_capacity(volumes.len() * nx * ny * nz);
    for v in volumes {
        if v.dim() != (nx, ny, nz) {
            return Err(PipelineError::InvalidArgument("volume shapes differ in batch".into()));
        }
        for z in 0..nz {
            for x in 0..nx {
                for y in 0..ny {
                    data.push(T::from_f64(v[(x, y, z)] as f64));
                }
            }
        }
    }
    let arr = ArrayD::from_shape_vec(IxDyn(&[volumes.len(), nz, nx, ny]), data)
        .expect("length matches shape");
    Ok(g.constant(arr))
}

/// (B, 3) constant from per-sample hint vectors.
pub fn hint_batch<T: Real>(g: &mut Graph<T>, hints: &[[f64; 3]]) -> Var {
    let mut data = Vec::with_capacity(hints.len() * 3);
    for h in hints {
        data.extend(h.iter().map(|&v| T::from_f64(v)));
    }
    let arr = ArrayD::from_shape_vec(IxDyn(&[hints.len(), 3]), data).expect("shape");
    g.constant(arr)
}

/// (B, 42) constant from flattened keypoint rows.
pub fn pose_batch<T: Real>(g: &mut Graph<T>, rows: &Array2<f64>) -> Var {
    let (b, f) = rows.dim();
    let data: Vec<T> = rows.iter().map(|&v| T::from_f64(v)).collect();
    let arr = ArrayD::from_shape_vec(IxDyn(&[b, f]), data).expect("shape");
    g.constant(arr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rfpose_neural::layers::init_rng;

    /// The builtin spec constants must match the architecture tables
    /// row for row.
    #[test]
    fn specs_match_model_tables() {
        let pe = pose_encoder_specs();
        let conv_rows: Vec<_> = pe
            .iter()
            .filter_map(|s| match s {
                LayerSpec::Conv2d { out_channels, kernel, stride } => {
                    Some((*out_channels, *kernel, *stride))
                }
                _ => None,
            })
            .collect();
        assert_eq!(conv_rows, vec![(32, 5, 2), (64, 5, 2), (64, 5, 1), (128, 5, 2), (128, 5, 1)]);
        assert!(matches!(pe.last(), Some(LayerSpec::Linear { out_features: 256 })));

        let sub = rf_sub_encoder_specs();
        let conv_rows: Vec<_> = sub
            .iter()
            .filter_map(|s| match s {
                LayerSpec::Conv2d { out_channels, kernel, stride } => {
                    Some((*out_channels, *kernel, *stride))
                }
                _ => None,
            })
            .collect();
        assert_eq!(
            conv_rows,
            vec![(1, 3, 1), (8, 5, 2), (32, 5, 2), (128, 5, 2), (128, 5, 1), (512, 5, 2)]
        );
        // The last block is Conv-BN without ReLU.
        assert!(matches!(sub[sub.len() - 2], LayerSpec::Conv2d { out_channels: 512, .. }));
        assert!(matches!(sub[sub.len() - 1], LayerSpec::BatchNorm));

        let pred = keypoint_predictor_specs();
        let linear_rows: Vec<_> = pred
            .iter()
            .filter_map(|s| match s {
                LayerSpec::Linear { out_features } => Some(*out_features),
                _ => None,
            })
            .collect();
        assert_eq!(linear_rows, vec![256, 256, 256, 42]);
    }

    #[test]
    fn network_shapes_flow_end_to_end() {
        let mut rng = init_rng(11);
        let mut ep = PoseEncoder::new([16, 16, 16], &mut rng).unwrap();
        let mut er = RfEncoder::new([20, 20], [20, 13], &mut rng).unwrap();
        let mut f = KeypointPredictor::new(&mut rng).unwrap();

        let mut g = Graph::<f32>::new();
        let vols: Vec<Array3<f32>> = (0..2).map(|_| Array3::zeros((16, 16, 16))).collect();
        let v = volume_batch(&mut g, &vols).unwrap();
        let (zp, _) = ep.forward(&mut g, v, Mode::Train).unwrap();
        assert_eq!(g.value(zp).shape(), &[2, 256]);

        let maps_h: Vec<Array2<f32>> = (0..2).map(|_| Array2::zeros((20, 20))).collect();
        let maps_v: Vec<Array2<f32>> = (0..2).map(|_| Array2::zeros((20, 13))).collect();
        let hh = heatmap_batch(&mut g, &maps_h).unwrap();
        let hv = heatmap_batch(&mut g, &maps_v).unwrap();
        let (zr, _) = er.forward(&mut g, hh, hv, Mode::Train).unwrap();
        assert_eq!(g.value(zr).shape(), &[2, 256]);

        let hints = vec![[0.0; 3]; 2];
        let hv2 = hint_batch(&mut g, &hints);
        let (pred, _) = f.forward(&mut g, zr, hv2, Mode::Train).unwrap();
        assert_eq!(g.value(pred).shape(), &[2, 42]);
    }

    #[test]
    fn sub_encoders_share_architecture_not_parameters() {
        let mut rng = init_rng(3);
        let er = RfEncoder::new([20, 20], [20, 20], &mut rng).unwrap();
        assert_eq!(er.sub_h.specs(), er.sub_v.specs());
        assert_ne!(er.sub_h.param_hash(), er.sub_v.param_hash());
    }
}
