//! Pipeline configuration, loaded from TOML. Every key is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conquer::validate_ladder;
use crate::divide::{EigenOptions, MaskCutOptions};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Divide-stage confidence threshold (strict).
    pub tau: f64,
    pub thetas: Vec<f64>,
    pub tau_self_train: f64,
    pub selftrain_dedup_iou: f64,
    pub tau_plus: f64,
    pub tau_ncut: f64,
    pub epsilon: f64,
    pub t_max: usize,
    /// Smallest divide-stage cut kept, in patches.
    pub min_patches: usize,
    pub nms_iou: f64,
    pub k_point: usize,
    pub min_area: u64,
    pub refine_delta: f64,
    pub refine_before_nms: bool,
    /// Side of the square local crop, in pixels.
    pub crop_side: u32,
    pub crop_patch_size: u32,
    pub workers: usize,
    pub dense_eigen_limit: usize,
    pub eigen_max_iterations: usize,
    pub eigen_tolerance: f64,
    pub max_dets: usize,

    pub features: Option<PathBuf>,
    pub crops: Option<PathBuf>,
    pub proposals: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tau: 0.3,
            thetas: vec![0.6, 0.5, 0.4, 0.3, 0.2, 0.1],
            tau_self_train: 0.7,
            selftrain_dedup_iou: 0.5,
            tau_plus: 0.02,
            tau_ncut: 0.15,
            epsilon: 1e-5,
            t_max: 3,
            min_patches: 2,
            nms_iou: 0.9,
            k_point: 6,
            min_area: 100,
            refine_delta: 0.5,
            refine_before_nms: true,
            crop_side: 256,
            crop_patch_size: 8,
            workers: 1,
            dense_eigen_limit: 1024,
            eigen_max_iterations: 10_000,
            eigen_tolerance: 1e-8,
            max_dets: 1000,
            features: None,
            crops: None,
            proposals: None,
            gt: None,
            out: None,
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(config_err(key, format!("{v} not in [0, 1]")))
            }
        };
        let open_closed = |key: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(config_err(key, format!("{v} not in (0, 1]")))
            }
        };
        let positive = |key: &str, v: usize| {
            if v >= 1 {
                Ok(())
            } else {
                Err(config_err(key, "must be at least 1"))
            }
        };
        unit("tau", self.tau)?;
        validate_ladder(&self.thetas)
            .map_err(|_| config_err("thetas", "must be non-empty, strictly descending, within (0, 1)"))?;
        unit("tau_self_train", self.tau_self_train)?;
        open_closed("selftrain_dedup_iou", self.selftrain_dedup_iou)?;
        unit("tau_plus", self.tau_plus)?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(config_err("epsilon", format!("{} not in (0, 1)", self.epsilon)));
        }
        if !(self.tau_ncut > self.epsilon && self.tau_ncut < 1.0) {
            return Err(config_err("tau_ncut", format!("{} not in (epsilon, 1)", self.tau_ncut)));
        }
        positive("t_max", self.t_max)?;
        positive("min_patches", self.min_patches)?;
        open_closed("nms_iou", self.nms_iou)?;
        positive("k_point", self.k_point)?;
        unit("refine_delta", self.refine_delta)?;
        if self.crop_patch_size == 0 || self.crop_side % self.crop_patch_size != 0 {
            return Err(config_err("crop_patch_size", "must divide crop_side"));
        }
        if (self.crop_side / self.crop_patch_size).pow(2) < 4 {
            return Err(config_err("crop_side", "local grid needs at least 4 patches"));
        }
        positive("workers", self.workers)?;
        positive("eigen_max_iterations", self.eigen_max_iterations)?;
        if !(self.eigen_tolerance > 0.0) {
            return Err(config_err("eigen_tolerance", "must be positive"));
        }
        positive("max_dets", self.max_dets)?;
        Ok(())
    }

    pub fn maskcut_options(&self) -> MaskCutOptions {
        MaskCutOptions {
            t_max: self.t_max,
            tau_ncut: self.tau_ncut,
            epsilon: self.epsilon,
            min_patches: self.min_patches,
            eigen: EigenOptions {
                dense_limit: self.dense_eigen_limit,
                max_iterations: self.eigen_max_iterations,
                tolerance: self.eigen_tolerance,
                ..EigenOptions::default()
            },
        }
    }
}

/// Parses TOML text. Unknown keys, type errors and range errors name the key.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err("", e.message()))?;
    let cfg: PipelineConfig =
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let key = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().to_string();
            // Unknown keys surface as an error at the parent path; pull the
            // key out of the message instead.
            match msg.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
                Some(k) => config_err(k, "unknown key"),
                None => config_err(&key, msg),
            }
        })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
