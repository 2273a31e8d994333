//! Inference: RF heatmaps to keypoints with only the RF encoder and the
//! keypoint predictor loaded.

use std::time::Instant;

use ndarray::Array2;

use rfpose_core::types::Keypoints3D;
use rfpose_neural::{Graph, Mode};

use crate::model::{heatmap_batch, hint_batch, KeypointPredictor, RfEncoder};
use crate::Result;

/// Single-frame prediction in eval mode with a zero centering hint.
pub fn infer(
    encoder: &mut RfEncoder,
    predictor: &mut KeypointPredictor,
    heat_h: &Array2<f32>,
    heat_v: &Array2<f32>,
) -> Result<Keypoints3D> {
    let mut g = Graph::<f32>::new();
    let hh = heatmap_batch(&mut g, std::slice::from_ref(heat_h))?;
    let hv = heatmap_batch(&mut g, std::slice::from_ref(heat_v))?;
    let (zr, _) = encoder.forward(&mut g, hh, hv, Mode::Eval)?;
    let hint = hint_batch(&mut g, &[[0.0; 3]]);
    let (pred, _) = predictor.forward(&mut g, zr, hint, Mode::Eval)?;
    let vals = g.value(pred);
    let flat: Vec<f64> = (0..42).map(|c| vals[[0, c]] as f64).collect();
    Ok(Keypoints3D::from_flat(&flat)?)
}

/// Frame-by-frame predictions over a sequence, with the mean wall time
/// per frame in seconds.
pub fn infer_sequence(
    encoder: &mut RfEncoder,
    predictor: &mut KeypointPredictor,
    heat_h: &[Array2<f32>],
    heat_v: &[Array2<f32>],
) -> Result<(Vec<Keypoints3D>, f64)> {
    let mut preds = Vec::with_capacity(heat_h.len());
    let start = Instant::now();
    for (h, v) in heat_h.iter().zip(heat_v.iter()) {
        preds.push(infer(encoder, predictor, h, v)?);
    }
    let per_frame = start.elapsed().as_secs_f64() / heat_h.len().max(1) as f64;
    Ok((preds, per_frame))
}
