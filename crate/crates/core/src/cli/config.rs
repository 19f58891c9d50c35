use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sdfedit::editor::{EditorConfig, Variant};
use sdfedit::eval::ChamferSettings;
use sdfedit::regressor::RegressorConfig;
use sdfedit::sdfnet::SdfTrainConfig;
use sdfedit::service::ServiceLimits;
use sdfedit::synthcars::DatasetConfig;

use super::{Cli, Command};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub resolution: usize,
    pub chamfer_points: usize,
    pub chamfer_seed: u64,
    pub probes: usize,
    pub probe_eps: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            chamfer_points: 5000,
            chamfer_seed: 0,
            probes: 20,
            probe_eps: vec![0.1, 0.2, 0.3],
        }
    }
}

impl MetricsConfig {
    pub fn chamfer(&self) -> ChamferSettings {
        ChamferSettings {
            resolution: self.resolution,
            points: self.chamfer_points,
            seed: self.chamfer_seed,
        }
    }
}

/// Everything a pipeline run can be configured with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub work_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub sdf: SdfTrainConfig,
    pub regressor: RegressorConfig,
    pub editor: EditorConfig,
    pub metrics: MetricsConfig,
    pub service: ServiceLimits,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("work"),
            dataset: DatasetConfig::default(),
            sdf: SdfTrainConfig::default(),
            regressor: RegressorConfig::default(),
            editor: EditorConfig::default(),
            metrics: MetricsConfig::default(),
            service: ServiceLimits::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Config file (or defaults) with command-line flags applied on top.
    pub fn resolve(cli: &Cli) -> anyhow::Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(w) = &cli.work {
            cfg.work_dir = w.clone();
        }
        if let Some(s) = cli.seed {
            cfg.dataset.seed = s;
            cfg.sdf.seed = s;
            cfg.regressor.seed = s;
            cfg.editor.seed = s;
        }
        match &cli.command {
            Command::GenData { count: Some(n) } => cfg.dataset.count = *n,
            Command::TrainSdf { epochs: Some(n) } => cfg.sdf.epochs = *n,
            Command::TrainRegressor { epochs: Some(n) } => cfg.regressor.epochs = *n,
            Command::TrainEditor { variant, steps } => {
                if let Some(v) = variant {
                    cfg.editor.variant = v.parse()?;
                }
                if let Some(n) = steps {
                    cfg.editor.steps = *n;
                }
            }
            Command::Edit { variant: Some(v), .. } | Command::Serve { variant: Some(v), .. } => cfg.editor.variant = v.parse()?,
            _ => {}
        }
        cfg.dataset.validate()?;
        cfg.sdf.validate()?;
        cfg.editor.validate()?;
        Ok(cfg)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.work_dir.join("data")
    }

    pub fn sdf_stem(&self) -> PathBuf {
        self.work_dir.join("sdf")
    }

    pub fn regressor_stem(&self) -> PathBuf {
        self.work_dir.join("regressor")
    }

    pub fn editor_stem(&self) -> PathBuf {
        self.editor_stem_for(self.editor.variant)
    }

    pub fn editor_stem_for(&self, v: Variant) -> PathBuf {
        self.work_dir.join(match v {
            Variant::Mlp => "editor_mlp",
            Variant::Kan => "editor_kan",
        })
    }
}

/// Hex SHA-256 of a value's JSON form.
pub fn config_hash<T: Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("configs serialize");
    hex::encode(Sha256::digest(bytes))
}
