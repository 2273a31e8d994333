//! Run configuration: a plain-text `key = value` file, merged with
//! command-line flags. Every run directory receives the exact effective
//! configuration for reproducibility.

use std::collections::BTreeMap;
use std::path::Path;

use rfpose_core::radar::{ArrayConfig, SceneParams};
use rfpose_core::types::Grid2D;
use rfpose_pipeline::TrainConfig;

use crate::CliError;

/// Everything a run needs: scene, arrays, grids, and training knobs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub frames: usize,
    pub seed: u64,
    pub noise_std: f64,
    pub walker_speed: f64,
    pub torso_infill: usize,
    pub array_elements: usize,
    pub array_freqs: usize,
    /// Heatmap grid cell size in meters (both planes).
    pub grid_cell: f64,
    pub train: TrainConfig,
    pub paper_epochs: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            frames: 2001,
            seed: 7,
            noise_std: 0.02,
            walker_speed: 1.2,
            torso_infill: 4,
            array_elements: 16,
            array_freqs: 64,
            grid_cell: 0.1,
            train: TrainConfig::default(),
            paper_epochs: false,
        }
    }
}

impl RunConfig {
    /// Parses a `key = value` file ('#' starts a comment). Unknown keys
    /// are rejected so typos surface immediately.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{}:{}: expected 'key = value'", path.display(), lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| {
                CliError::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(v: &str, what: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid {what}: '{v}'"))
        }
        match key {
            "frames" => self.frames = parse(value, "frames")?,
            "seed" => self.seed = parse(value, "seed")?,
            "noise_std" => self.noise_std = parse(value, "noise_std")?,
            "walker_speed" => self.walker_speed = parse(value, "walker_speed")?,
            "torso_infill" => self.torso_infill = parse(value, "torso_infill")?,
            "array_elements" => self.array_elements = parse(value, "array_elements")?,
            "array_freqs" => self.array_freqs = parse(value, "array_freqs")?,
            "grid_cell" => self.grid_cell = parse(value, "grid_cell")?,
            "batch_size" => self.train.batch_size = parse(value, "batch_size")?,
            "epochs_pose" => self.train.epochs_pose = parse(value, "epochs_pose")?,
            "epochs_ot" => self.train.epochs_ot = parse(value, "epochs_ot")?,
            "epochs_finetune" => self.train.epochs_finetune = parse(value, "epochs_finetune")?,
            "sigma" => self.train.sigma = parse(value, "sigma")?,
            "pose_extent" => self.train.pose_extent = parse(value, "pose_extent")?,
            "pose_cell" => self.train.pose_cell = parse(value, "pose_cell")?,
            "person_centered" => self.train.person_centered = parse(value, "person_centered")?,
            "centered_weight" => self.train.centered_weight = parse(value, "centered_weight")?,
            "keep_epoch_checkpoints" => {
                self.train.keep_epoch_checkpoints = parse(value, "keep_epoch_checkpoints")?
            }
            "paper_epochs" => self.paper_epochs = parse(value, "paper_epochs")?,
            other => return Err(format!("unknown configuration key '{other}'")),
        }
        Ok(())
    }

    /// Serializes the effective configuration; parsing this text yields
    /// the same configuration back.
    pub fn to_text(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("frames", self.frames.to_string());
        kv.insert("seed", self.seed.to_string());
        kv.insert("noise_std", format!("{:e}", self.noise_std));
        kv.insert("walker_speed", format!("{:e}", self.walker_speed));
        kv.insert("torso_infill", self.torso_infill.to_string());
        kv.insert("array_elements", self.array_elements.to_string());
        kv.insert("array_freqs", self.array_freqs.to_string());
        kv.insert("grid_cell", format!("{:e}", self.grid_cell));
        kv.insert("batch_size", self.train.batch_size.to_string());
        kv.insert("epochs_pose", self.train.epochs_pose.to_string());
        kv.insert("epochs_ot", self.train.epochs_ot.to_string());
        kv.insert("epochs_finetune", self.train.epochs_finetune.to_string());
        kv.insert("sigma", format!("{:e}", self.train.sigma));
        kv.insert("pose_extent", format!("{:e}", self.train.pose_extent));
        kv.insert("pose_cell", format!("{:e}", self.train.pose_cell));
        kv.insert("person_centered", self.train.person_centered.to_string());
        kv.insert("centered_weight", format!("{:e}", self.train.centered_weight));
        kv.insert("keep_epoch_checkpoints", self.train.keep_epoch_checkpoints.to_string());
        kv.insert("paper_epochs", self.paper_epochs.to_string());
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// The training configuration with the paper's epoch schedule
    /// applied when requested.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        if self.paper_epochs {
            t = t.with_paper_epochs();
        }
        t
    }

    pub fn scene(&self) -> SceneParams {
        SceneParams {
            speed: self.walker_speed,
            torso_infill: self.torso_infill,
            noise_std: self.noise_std,
            seed: self.seed,
            ..SceneParams::default()
        }
    }

    pub fn array_h(&self) -> ArrayConfig {
        ArrayConfig {
            num_elements: self.array_elements,
            num_freqs: self.array_freqs,
            ..ArrayConfig::default_horizontal()
        }
    }

    pub fn array_v(&self) -> ArrayConfig {
        ArrayConfig {
            num_elements: self.array_elements,
            num_freqs: self.array_freqs,
            ..ArrayConfig::default_vertical()
        }
    }

    /// Horizontal heatmap grid: 4 m x 4 m, axes (x, y).
    pub fn grid_h(&self) -> Result<Grid2D, CliError> {
        let nx = (4.0 / self.grid_cell).round() as usize;
        Grid2D::new([-2.0, 0.3], [self.grid_cell, self.grid_cell], [nx, nx])
            .map_err(|e| CliError::Config(e.to_string()))
    }

    /// Vertical heatmap grid: 4 m range x 2.6 m height, axes (y, z).
    pub fn grid_v(&self) -> Result<Grid2D, CliError> {
        let ny = (4.0 / self.grid_cell).round() as usize;
        let nz = (2.6 / self.grid_cell).round() as usize;
        Grid2D::new([0.3, 0.0], [self.grid_cell, self.grid_cell], [ny, nz])
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Writes `version.txt` and `config.txt` into a run directory.
pub fn stamp_run_dir(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    std::fs::write(dir.join("version.txt"), format!("rfpose {}\n", env!("CARGO_PKG_VERSION")))
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    std::fs::write(dir.join("config.txt"), cfg.to_text())
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.frames = 321;
        cfg.train.epochs_pose = 3;
        cfg.train.sigma = 0.1;
        let text = cfg.to_text();
        let dir = std::env::temp_dir().join(format!("rfcfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("config.txt");
        std::fs::write(&path, &text).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(back.frames, 321);
        assert_eq!(back.train.epochs_pose, 3);
        assert_eq!(back.to_text(), text);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = std::env::temp_dir().join(format!("rfcfg-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("config.txt");
        std::fs::write(&path, "frames = 10\nbogus_key = 1\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
