//! Three-phase training: pose embedding, RF-to-pose transport, and
//! fine-tuning, plus held-out evaluation.

use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rfpose_core::metrics::{sle, SleReport};
use rfpose_core::types::Keypoints3D;
use rfpose_neural::{lr_schedule, Adam, Graph, Mode, Real, Var};

use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::dataset::{RfDataset, VolumeBuilder};
use crate::loss::{loss_abs, loss_centered, ot_batch_loss};
use crate::model::{
    heatmap_batch, hint_batch, pose_batch, volume_batch, KeypointPredictor, PoseEncoder,
    RfEncoder,
};
use crate::{PipelineError, Result};

/// Training configuration. Desk-scale epoch counts keep the full
/// pipeline tractable on one CPU core; `paper_epochs` restores the
/// published schedule (100, 100, 50).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs_pose: usize,
    pub epochs_ot: usize,
    pub epochs_finetune: usize,
    pub seed: u64,
    pub sigma: f64,
    pub pose_extent: f64,
    pub pose_cell: f64,
    pub person_centered: bool,
    /// Grid center for room-absolute pose volumes.
    pub absolute_center: [f64; 3],
    /// Weight on the pose-centered loss terms; 0 reproduces the
    /// "without centered loss" ablation.
    pub centered_weight: f64,
    /// Keep one checkpoint per epoch instead of overwriting.
    pub keep_epoch_checkpoints: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs_pose: 12,
            epochs_ot: 12,
            epochs_finetune: 6,
            seed: 0,
            sigma: rfpose_core::pose_field::DEFAULT_SIGMA,
            pose_extent: 2.0,
            pose_cell: 0.0625,
            person_centered: true,
            absolute_center: [0.0, 2.3, 1.0],
            centered_weight: 1.0,
            keep_epoch_checkpoints: false,
        }
    }
}

impl TrainConfig {
    /// The published epoch schedule.
    pub fn with_paper_epochs(mut self) -> Self {
        self.epochs_pose = 100;
        self.epochs_ot = 100;
        self.epochs_finetune = 50;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(PipelineError::InvalidArgument(
                "batch size must be >= 2 (the OT phase needs at least one pairing)".into(),
            ));
        }
        if !(self.sigma > 0.0) {
            return Err(PipelineError::InvalidArgument("sigma must be positive".into()));
        }
        if self.centered_weight < 0.0 {
            return Err(PipelineError::InvalidArgument(
                "centered loss weight must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn volume_builder(&self, dataset_len: usize) -> VolumeBuilder {
        VolumeBuilder::new(
            self.sigma,
            self.pose_extent,
            self.pose_cell,
            self.person_centered,
            self.absolute_center,
            dataset_len,
        )
    }
}

/// One metrics row; serialized to metrics.csv.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub phase: u32,
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_abs: f64,
    pub loss_centered: f64,
    pub loss_ot: f64,
    pub sle_overall_cm: f64,
}

/// Accumulates per-epoch rows and writes the CSV log.
#[derive(Debug, Default)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("phase,epoch,lr,loss_total,loss_abs,loss_centered,loss_ot,sle_overall_cm\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}\n",
                r.phase, r.epoch, r.lr, r.loss_total, r.loss_abs, r.loss_centered, r.loss_ot,
                r.sle_overall_cm
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        Ok(())
    }
}

/// Where a phase stores its checkpoints; `None` disables persistence
/// (used by in-process tests).
pub struct CheckpointSink<'a> {
    pub dir: Option<&'a Path>,
    pub keep_epochs: bool,
}

impl<'a> CheckpointSink<'a> {
    pub fn none() -> Self {
        Self { dir: None, keep_epochs: false }
    }

    fn path_for(&self, kind: &str, epoch: Option<usize>) -> Option<PathBuf> {
        self.dir.map(|d| match epoch {
            Some(e) if self.keep_epochs => d.join(format!("{kind}_epoch{e:03}")),
            Some(_) => d.join(format!("{kind}_last")),
            None => d.join(format!("{kind}_final")),
        })
    }
}

fn shuffled_batches(
    train: &Range<usize>,
    batch: usize,
    seed: u64,
    phase: u32,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = train.clone().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ (phase as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (epoch as u64) << 32,
    );
    for i in (1..indices.len()).rev() {
        indices.swap(i, rng.gen_range(0..=i));
    }
    // Fixed-size batches; a trailing partial batch is dropped so batch
    // statistics stay comparable across steps.
    indices.chunks_exact(batch).map(|c| c.to_vec()).collect()
}

/// Phase 1: trains the pose encoder and keypoint predictor on pose
/// volumes with the combined absolute + centered loss.
pub fn train_pose_embedding(
    data: &RfDataset,
    cfg: &TrainConfig,
    log: &mut MetricsLog,
    sink: &CheckpointSink,
) -> Result<(PoseEncoder, KeypointPredictor)> {
    cfg.validate()?;
    let volumes = cfg.volume_builder(data.len());
    let mut rng = rfpose_neural::layers::init_rng(cfg.seed);
    let mut encoder = PoseEncoder::new(volumes.grid_dims(), &mut rng)?;
    let mut predictor = KeypointPredictor::new(&mut rng)?;
    let mut opt_e = Adam::new();
    let mut opt_f = Adam::new();
    let (train, test) = data.split();

    for epoch in 0..cfg.epochs_pose {
        let lr = lr_schedule(epoch);
        let mut sums = LossSums::default();
        for batch in shuffled_batches(&train, cfg.batch_size, cfg.seed, 1, epoch) {
            let (loss, labs, lcent) = pose_embedding_step(
                data, &volumes, &batch, &mut encoder, &mut predictor, &mut opt_e, &mut opt_f,
                cfg, lr,
            )?;
            sums.add(loss, labs, lcent, 0.0);
        }
        let report = evaluate_pose_reconstruction(data, &volumes, &mut encoder, &mut predictor, &test)?;
        log.push(MetricsRow {
            phase: 1,
            epoch,
            lr,
            loss_total: sums.mean_total(),
            loss_abs: sums.mean_abs(),
            loss_centered: sums.mean_centered(),
            loss_ot: 0.0,
            sle_overall_cm: report.overall_cm,
        });
        if let Some(path) = sink.path_for("pose", Some(epoch)) {
            save_checkpoint(
                &path,
                &ckpt_meta("pose", 1, epoch, opt_e.step_count(), lr, cfg),
                Some(&encoder),
                None,
                Some(&predictor),
            )?;
        }
        if !sums.mean_total().is_finite() {
            return Err(PipelineError::Training(format!(
                "phase 1 diverged at epoch {epoch}: loss {}",
                sums.mean_total()
            )));
        }
    }
    if let Some(path) = sink.path_for("pose", None) {
        save_checkpoint(
            &path,
            &ckpt_meta("pose", 1, cfg.epochs_pose, opt_e.step_count(), lr_schedule(cfg.epochs_pose), cfg),
            Some(&encoder),
            None,
            Some(&predictor),
        )?;
    }
    Ok((encoder, predictor))
}

#[allow(clippy::too_many_arguments)]
fn pose_embedding_step(
    data: &RfDataset,
    volumes: &VolumeBuilder,
    batch: &[usize],
    encoder: &mut PoseEncoder,
    predictor: &mut KeypointPredictor,
    opt_e: &mut Adam,
    opt_f: &mut Adam,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<(f64, f64, f64)> {
    let mut g = Graph::<f32>::new();
    let mut vols = Vec::with_capacity(batch.len());
    let mut hints = Vec::with_capacity(batch.len());
    for &i in batch {
        let (v, hint) = volumes.build(i, &data.poses[i])?;
        vols.push(v);
        hints.push(hint);
    }
    let v = volume_batch(&mut g, &vols)?;
    let (zp, eb) = encoder.forward(&mut g, v, Mode::Train)?;
    let hv = hint_batch(&mut g, &hints);
    let (pred, fb) = predictor.forward(&mut g, zp, hv, Mode::Train)?;
    let gt = pose_batch(&mut g, &data.pose_rows(batch));
    let (total, labs, lcent) = combined_pose_loss(&mut g, pred, gt, cfg.centered_weight)?;
    g.backward(total)?;
    let loss = g.scalar_value(total)?.into_f64();
    let labs_v = g.scalar_value(labs)?.into_f64();
    let lcent_v = g.scalar_value(lcent)?.into_f64();
    opt_e.step(&mut encoder.stack, &eb, &g, lr)?;
    opt_f.step(&mut predictor.stack, &fb, &g, lr)?;
    Ok((loss, labs_v, lcent_v))
}

fn combined_pose_loss<T: Real>(
    g: &mut Graph<T>,
    pred: Var,
    gt: Var,
    centered_weight: f64,
) -> Result<(Var, Var, Var)> {
    let labs = loss_abs(g, pred, gt)?;
    let lcent = loss_centered(g, pred, gt)?;
    let weighted = g.mul_scalar(lcent, T::from_f64(centered_weight));
    let total = g.add(labs, weighted)?;
    Ok((total, labs, lcent))
}

/// Pose features of the training split under the frozen encoder
/// (eval-mode statistics); the phase-2 alignment targets.
pub fn compute_zp_targets(
    data: &RfDataset,
    cfg: &TrainConfig,
    encoder: &mut PoseEncoder,
    indices: &[usize],
) -> Result<Array2<f64>> {
    let volumes = cfg.volume_builder(data.len());
    let mut out = Array2::zeros((indices.len(), rfpose_core::types::FEATURE_DIM));
    for (row0, chunk) in indices.chunks(cfg.batch_size).enumerate() {
        let mut g = Graph::<f32>::new();
        let mut vols = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let (v, _) = volumes.build(i, &data.poses[i])?;
            vols.push(v);
        }
        let v = volume_batch(&mut g, &vols)?;
        let (zp, _) = encoder.forward(&mut g, v, Mode::Eval)?;
        let vals = g.value(zp);
        for (r, _) in chunk.iter().enumerate() {
            for c in 0..rfpose_core::types::FEATURE_DIM {
                out[(row0 * cfg.batch_size + r, c)] = vals[[r, c]] as f64;
            }
        }
    }
    Ok(out)
}

/// Phase 2: trains the RF encoder to transport RF features onto the
/// frozen pose-feature distribution via the batch OT loss.
///
/// `zp_targets` rows must align with `train_indices`.
pub fn train_rf_transport(
    data: &RfDataset,
    zp_targets: &Array2<f64>,
    cfg: &TrainConfig,
    encoder: &mut RfEncoder,
    predictor_for_eval: Option<&mut KeypointPredictor>,
    log: &mut MetricsLog,
    sink: &CheckpointSink,
) -> Result<()> {
    cfg.validate()?;
    let (train, test) = data.split();
    let train_indices: Vec<usize> = train.clone().collect();
    if zp_targets.dim().0 != train_indices.len() {
        return Err(PipelineError::InvalidArgument(format!(
            "Zp target rows ({}) must cover the training split ({})",
            zp_targets.dim().0,
            train_indices.len()
        )));
    }
    let mut opt = MultiAdam::new();
    let mut eval_predictor = predictor_for_eval;

    for epoch in 0..cfg.epochs_ot {
        let lr = lr_schedule(epoch);
        let mut ot_sum = 0.0;
        let mut steps = 0usize;
        for batch in shuffled_batches(&train, cfg.batch_size, cfg.seed, 2, epoch) {
            let mut g = Graph::<f32>::new();
            let maps_h: Vec<_> = batch.iter().map(|&i| data.heatmap_h(i)).collect();
            let maps_v: Vec<_> = batch.iter().map(|&i| data.heatmap_v(i)).collect();
            let hh = heatmap_batch(&mut g, &maps_h)?;
            let hv = heatmap_batch(&mut g, &maps_v)?;
            let (zr, bindings) = encoder.forward(&mut g, hh, hv, Mode::Train)?;
            // Align target rows with this batch's samples.
            let mut zp = Array2::zeros((batch.len(), zp_targets.dim().1));
            for (r, &i) in batch.iter().enumerate() {
                let pos = i - train.start;
                zp.row_mut(r).assign(&zp_targets.row(pos));
            }
            let (loss, _plan) = ot_batch_loss(&mut g, zr, &zp)?;
            g.backward(loss)?;
            ot_sum += g.scalar_value(loss)?.into_f64();
            steps += 1;
            opt.step_rf(encoder, &bindings, &g, lr)?;
        }
        let mean_ot = if steps > 0 { ot_sum / steps as f64 } else { f64::NAN };
        let sle_cm = match eval_predictor.as_deref_mut() {
            Some(f) => evaluate_rf(data, encoder, f, &test)?.0.overall_cm,
            None => f64::NAN,
        };
        log.push(MetricsRow {
            phase: 2,
            epoch,
            lr,
            loss_total: mean_ot,
            loss_abs: 0.0,
            loss_centered: 0.0,
            loss_ot: mean_ot,
            sle_overall_cm: sle_cm,
        });
        if let Some(path) = sink.path_for("rf", Some(epoch)) {
            save_checkpoint(
                &path,
                &ckpt_meta("rf", 2, epoch, opt.step_count(), lr, cfg),
                None,
                Some(encoder),
                None,
            )?;
        }
        if !mean_ot.is_finite() {
            return Err(PipelineError::Training(format!(
                "phase 2 diverged at epoch {epoch}: OT loss {mean_ot}"
            )));
        }
    }
    if let Some(path) = sink.path_for("rf", None) {
        save_checkpoint(
            &path,
            &ckpt_meta("rf", 2, cfg.epochs_ot, opt.step_count(), lr_schedule(cfg.epochs_ot), cfg),
            None,
            Some(encoder),
            None,
        )?;
    }
    Ok(())
}

/// Phase 3: jointly fine-tunes the RF encoder and keypoint predictor on
/// absolute + centered keypoint losses. The pose encoder is untouched.
pub fn fine_tune(
    data: &RfDataset,
    cfg: &TrainConfig,
    encoder: &mut RfEncoder,
    predictor: &mut KeypointPredictor,
    log: &mut MetricsLog,
    sink: &CheckpointSink,
) -> Result<()> {
    cfg.validate()?;
    let (train, test) = data.split();
    let mut opt = MultiAdam::new();
    let mut opt_f = Adam::new();

    for epoch in 0..cfg.epochs_finetune {
        let lr = lr_schedule(epoch);
        let mut sums = LossSums::default();
        for batch in shuffled_batches(&train, cfg.batch_size, cfg.seed, 3, epoch) {
            let mut g = Graph::<f32>::new();
            let maps_h: Vec<_> = batch.iter().map(|&i| data.heatmap_h(i)).collect();
            let maps_v: Vec<_> = batch.iter().map(|&i| data.heatmap_v(i)).collect();
            let hh = heatmap_batch(&mut g, &maps_h)?;
            let hv = heatmap_batch(&mut g, &maps_v)?;
            let (zr, rb) = encoder.forward(&mut g, hh, hv, Mode::Train)?;
            // RF features carry no centering hint.
            let hints = vec![[0.0f64; 3]; batch.len()];
            let hv2 = hint_batch(&mut g, &hints);
            let (pred, fb) = predictor.forward(&mut g, zr, hv2, Mode::Train)?;
            let gt = pose_batch(&mut g, &data.pose_rows(&batch));
            let (total, labs, lcent) = combined_pose_loss(&mut g, pred, gt, cfg.centered_weight)?;
            g.backward(total)?;
            sums.add(
                g.scalar_value(total)?.into_f64(),
                g.scalar_value(labs)?.into_f64(),
                g.scalar_value(lcent)?.into_f64(),
                0.0,
            );
            opt.step_rf(encoder, &rb, &g, lr)?;
            opt_f.step(&mut predictor.stack, &fb, &g, lr)?;
        }
        let (report, _) = evaluate_rf(data, encoder, predictor, &test)?;
        log.push(MetricsRow {
            phase: 3,
            epoch,
            lr,
            loss_total: sums.mean_total(),
            loss_abs: sums.mean_abs(),
            loss_centered: sums.mean_centered(),
            loss_ot: 0.0,
            sle_overall_cm: report.overall_cm,
        });
        if let Some(path) = sink.path_for("model", Some(epoch)) {
            save_checkpoint(
                &path,
                &ckpt_meta("model", 3, epoch, opt.step_count(), lr, cfg),
                None,
                Some(encoder),
                Some(predictor),
            )?;
        }
        if !sums.mean_total().is_finite() {
            return Err(PipelineError::Training(format!(
                "phase 3 diverged at epoch {epoch}: loss {}",
                sums.mean_total()
            )));
        }
    }
    if let Some(path) = sink.path_for("model", None) {
        save_checkpoint(
            &path,
            &ckpt_meta(
                "model",
                3,
                cfg.epochs_finetune,
                opt.step_count(),
                lr_schedule(cfg.epochs_finetune),
                cfg,
            ),
            None,
            Some(encoder),
            Some(predictor),
        )?;
    }
    Ok(())
}

/// Held-out predictions and SLE of the RF path (eval mode, zero hints).
pub fn evaluate_rf(
    data: &RfDataset,
    encoder: &mut RfEncoder,
    predictor: &mut KeypointPredictor,
    range: &Range<usize>,
) -> Result<(SleReport, Vec<Keypoints3D>)> {
    let indices: Vec<usize> = range.clone().collect();
    if indices.is_empty() {
        return Err(PipelineError::InvalidArgument("empty evaluation range".into()));
    }
    let mut preds = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(64) {
        let mut g = Graph::<f32>::new();
        let maps_h: Vec<_> = chunk.iter().map(|&i| data.heatmap_h(i)).collect();
        let maps_v: Vec<_> = chunk.iter().map(|&i| data.heatmap_v(i)).collect();
        let hh = heatmap_batch(&mut g, &maps_h)?;
        let hv = heatmap_batch(&mut g, &maps_v)?;
        let (zr, _) = encoder.forward(&mut g, hh, hv, Mode::Eval)?;
        let hints = vec![[0.0f64; 3]; chunk.len()];
        let hv2 = hint_batch(&mut g, &hints);
        let (pred, _) = predictor.forward(&mut g, zr, hv2, Mode::Eval)?;
        let vals = g.value(pred);
        for r in 0..chunk.len() {
            let flat: Vec<f64> =
                (0..42).map(|c| vals[[r, c]] as f64).collect();
            preds.push(Keypoints3D::from_flat(&flat)?);
        }
    }
    let gts: Vec<Keypoints3D> = indices.iter().map(|&i| data.poses[i]).collect();
    let report = sle(&preds, &gts)?;
    Ok((report, preds))
}

/// Reconstruction SLE of the pose path P -> Z_p -> F on a range.
pub fn evaluate_pose_reconstruction(
    data: &RfDataset,
    volumes: &VolumeBuilder,
    encoder: &mut PoseEncoder,
    predictor: &mut KeypointPredictor,
    range: &Range<usize>,
) -> Result<SleReport> {
    let indices: Vec<usize> = range.clone().collect();
    if indices.is_empty() {
        return Err(PipelineError::InvalidArgument("empty evaluation range".into()));
    }
    let mut preds = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(64) {
        let mut g = Graph::<f32>::new();
        let mut vols = Vec::with_capacity(chunk.len());
        let mut hints = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let (v, hint) = volumes.build(i, &data.poses[i])?;
            vols.push(v);
            hints.push(hint);
        }
        let v = volume_batch(&mut g, &vols)?;
        let (zp, _) = encoder.forward(&mut g, v, Mode::Eval)?;
        let hv = hint_batch(&mut g, &hints);
        let (pred, _) = predictor.forward(&mut g, zp, hv, Mode::Eval)?;
        let vals = g.value(pred);
        for r in 0..chunk.len() {
            let flat: Vec<f64> = (0..42).map(|c| vals[[r, c]] as f64).collect();
            preds.push(Keypoints3D::from_flat(&flat)?);
        }
    }
    let gts: Vec<Keypoints3D> = indices.iter().map(|&i| data.poses[i]).collect();
    Ok(sle(&preds, &gts)?)
}

fn ckpt_meta(kind: &str, phase: u32, epoch: usize, step: u64, lr: f64, cfg: &TrainConfig) -> CheckpointMeta {
    CheckpointMeta {
        kind: kind.into(),
        phase,
        epoch,
        step,
        lr,
        sigma: cfg.sigma,
        person_centered: cfg.person_centered,
        pose_extent: cfg.pose_extent,
        pose_cell: cfg.pose_cell,
    }
}

/// Adam over the RF encoder's three stacks.
struct MultiAdam {
    sub_h: Adam,
    sub_v: Adam,
    fusion: Adam,
}

impl MultiAdam {
    fn new() -> Self {
        Self { sub_h: Adam::new(), sub_v: Adam::new(), fusion: Adam::new() }
    }

    fn step_count(&self) -> u64 {
        self.fusion.step_count()
    }

    fn step_rf<T: Real>(
        &mut self,
        encoder: &mut RfEncoder,
        bindings: &crate::model::RfBindings,
        g: &Graph<T>,
        lr: f64,
    ) -> Result<()> {
        self.sub_h.step(&mut encoder.sub_h, &bindings.sub_h, g, lr)?;
        self.sub_v.step(&mut encoder.sub_v, &bindings.sub_v, g, lr)?;
        self.fusion.step(&mut encoder.fusion, &bindings.fusion, g, lr)?;
        Ok(())
    }
}

#[derive(Default)]
struct LossSums {
    total: f64,
    abs: f64,
    centered: f64,
    ot: f64,
    n: usize,
}

impl LossSums {
    fn add(&mut self, total: f64, abs: f64, centered: f64, ot: f64) {
        self.total += total;
        self.abs += abs;
        self.centered += centered;
        self.ot += ot;
        self.n += 1;
    }

    fn mean_total(&self) -> f64 {
        self.total / self.n.max(1) as f64
    }

    fn mean_abs(&self) -> f64 {
        self.abs / self.n.max(1) as f64
    }

    fn mean_centered(&self) -> f64 {
        self.centered / self.n.max(1) as f64
    }
}
