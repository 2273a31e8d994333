//! Checkpoints: a JSON manifest of layer specs, shapes, and schedule
//! state, plus one tensor blob per parameter.

use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use rfpose_core::blob::{read_blob_f64, write_blob_f64};
use rfpose_neural::{LayerSpec, Stack};

use crate::model::{KeypointPredictor, PoseEncoder, RfEncoder};
use crate::{PipelineError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    blob: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StackManifest {
    name: String,
    specs: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    params: Vec<ParamEntry>,
    running_stats: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

/// Schedule state and identity of a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// "pose", "rf", or "model".
    pub kind: String,
    pub phase: u32,
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub sigma: f64,
    pub person_centered: bool,
    pub pose_extent: f64,
    pub pose_cell: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointManifest {
    meta: CheckpointMeta,
    stacks: Vec<StackManifest>,
}

fn save_stack(dir: &Path, stack: &Stack) -> Result<StackManifest> {
    let mut params = Vec::new();
    for (name, arr) in stack.named_params() {
        let blob = format!("{}.rfot", name.replace(['[', ']', '.'], "_"));
        write_blob_f64(&dir.join(&blob), arr)?;
        params.push(ParamEntry { name, shape: arr.shape().to_vec(), blob });
    }
    Ok(StackManifest {
        name: stack.name.clone(),
        specs: stack.specs().to_vec(),
        input_shape: stack.input_shape().to_vec(),
        params,
        running_stats: stack.running_stats(),
    })
}

fn load_stack(dir: &Path, manifest: &StackManifest) -> Result<Stack> {
    // Rebuild the architecture, then overwrite every parameter.
    let mut rng = rfpose_neural::layers::init_rng(0);
    let mut stack = Stack::build(&manifest.name, &manifest.specs, &manifest.input_shape, &mut rng)?;
    let names: Vec<String> = stack.named_params().iter().map(|(n, _)| n.clone()).collect();
    if names.len() != manifest.params.len() {
        return Err(PipelineError::Checkpoint(format!(
            "{}: checkpoint has {} parameters, architecture needs {}",
            manifest.name,
            manifest.params.len(),
            names.len()
        )));
    }
    for entry in &manifest.params {
        if !names.contains(&entry.name) {
            return Err(PipelineError::Checkpoint(format!(
                "{}: unexpected parameter '{}'",
                manifest.name, entry.name
            )));
        }
        let arr: ArrayD<f64> = read_blob_f64(&dir.join(&entry.blob))?;
        if arr.shape() != entry.shape.as_slice() {
            return Err(PipelineError::Checkpoint(format!(
                "{}: blob shape {:?} does not match recorded {:?}",
                entry.name,
                arr.shape(),
                entry.shape
            )));
        }
        write_param(&mut stack, &entry.name, arr)?;
    }
    stack.set_running_stats(&manifest.running_stats)?;
    Ok(stack)
}

fn write_param(stack: &mut Stack, name: &str, value: ArrayD<f64>) -> Result<()> {
    // Names look like "stack[3].weight".
    let open = name.find('[').ok_or_else(|| bad_name(name))?;
    let close = name.find(']').ok_or_else(|| bad_name(name))?;
    let layer: usize = name[open + 1..close].parse().map_err(|_| bad_name(name))?;
    let kind = match &name[close + 2..] {
        "weight" => rfpose_neural::ParamKind::Weight,
        "bias" => rfpose_neural::ParamKind::Bias,
        "gamma" => rfpose_neural::ParamKind::Gamma,
        "beta" => rfpose_neural::ParamKind::Beta,
        _ => return Err(bad_name(name)),
    };
    let param = stack.param_mut(layer, kind)?;
    if param.shape() != value.shape() {
        return Err(PipelineError::Checkpoint(format!(
            "{name}: shape {:?} does not match architecture {:?}",
            value.shape(),
            param.shape()
        )));
    }
    *param = value;
    Ok(())
}

fn bad_name(name: &str) -> PipelineError {
    PipelineError::Checkpoint(format!("malformed parameter name '{name}'"))
}

/// Saves any combination of the three networks under one directory.
pub fn save_checkpoint(
    dir: &Path,
    meta: &CheckpointMeta,
    pose_encoder: Option<&PoseEncoder>,
    rf_encoder: Option<&RfEncoder>,
    predictor: Option<&KeypointPredictor>,
) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
    let mut stacks = Vec::new();
    if let Some(ep) = pose_encoder {
        stacks.push(save_stack(dir, &ep.stack)?);
    }
    if let Some(er) = rf_encoder {
        stacks.push(save_stack(dir, &er.sub_h)?);
        stacks.push(save_stack(dir, &er.sub_v)?);
        stacks.push(save_stack(dir, &er.fusion)?);
    }
    if let Some(f) = predictor {
        stacks.push(save_stack(dir, &f.stack)?);
    }
    let manifest = CheckpointManifest { meta: meta.clone(), stacks };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| PipelineError::Manifest(e.to_string()))?;
    std::fs::write(dir.join("checkpoint.json"), text + "\n")
        .map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
    Ok(())
}

/// A loaded checkpoint with whichever networks it contained.
pub struct LoadedCheckpoint {
    pub meta: CheckpointMeta,
    pub pose_encoder: Option<PoseEncoder>,
    pub rf_encoder: Option<RfEncoder>,
    pub predictor: Option<KeypointPredictor>,
}

pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let path = dir.join("checkpoint.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| PipelineError::Checkpoint(format!("{}: {e}", path.display())))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Checkpoint(format!("{}: {e}", path.display())))?;

    let mut pose_encoder = None;
    let mut predictor = None;
    let mut sub_h = None;
    let mut sub_v = None;
    let mut fusion = None;
    for sm in &manifest.stacks {
        let stack = load_stack(dir, sm)?;
        match sm.name.as_str() {
            "pose_encoder" => pose_encoder = Some(PoseEncoder::from_stack(stack)?),
            "predictor" => predictor = Some(KeypointPredictor::from_stack(stack)?),
            "rf_sub_h" => sub_h = Some(stack),
            "rf_sub_v" => sub_v = Some(stack),
            "rf_fusion" => fusion = Some(stack),
            other => {
                return Err(PipelineError::Checkpoint(format!("unknown stack '{other}'")))
            }
        }
    }
    let rf_encoder = match (sub_h, sub_v, fusion) {
        (Some(h), Some(v), Some(f)) => Some(RfEncoder::from_stacks(h, v, f)?),
        (None, None, None) => None,
        _ => {
            return Err(PipelineError::Checkpoint(
                "checkpoint contains a partial RF encoder".into(),
            ))
        }
    };
    Ok(LoadedCheckpoint { meta: manifest.meta, pose_encoder, rf_encoder, predictor })
}
