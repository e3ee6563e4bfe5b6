use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cttp::CttpConfig;
use crate::data::Split;
use crate::diffusion::{SamplerConfig, ScheduleKind};
use crate::dit::{format_layers, parse_layers, Mechanism};
use crate::error::{Error, Result};
use crate::optim::OptimConfig;
use crate::text::ConditionToggles;
use crate::touch::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 16,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub split: Split,
    /// Cap on evaluated samples (after a seeded selection); `None` = whole split.
    pub max_samples: Option<usize>,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: Split::Test,
            max_samples: None,
            batch_size: 32,
        }
    }
}

/// Everything a run needs; serialised verbatim as the config echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data_root: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub model: ModelConfig,
    pub schedule: ScheduleKind,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
    pub cttp: CttpConfig,
    pub cttp_checkpoint: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("data"),
            output_dir: PathBuf::from("runs/default"),
            seed: 43,
            model: ModelConfig::default(),
            schedule: ScheduleKind::Linear,
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            eval: EvalConfig::default(),
            cttp: CttpConfig::default(),
            cttp_checkpoint: None,
        }
    }
}

/// Keys accepted by [`ExperimentConfig::apply_override`].
pub const OVERRIDE_KEYS: &[&str] = &[
    "conditions",
    "mechanism",
    "layers",
    "n_gs",
    "theta_t",
    "steps",
    "batch_size",
    "lr",
    "cfg_scale",
    "sampler_steps",
    "sampler",
    "seed",
    "depth",
    "width",
    "patch_size",
];

impl ExperimentConfig {
    /// Reduced backbone and a larger step size so a full run fits a single CPU
    /// core. Everything not listed keeps its default.
    pub fn compact() -> Self {
        let mut c = Self::default();
        c.model.dit.patch_size = 4;
        c.model.dit.width = 64;
        c.model.dit.depth = 4;
        c.model.dit.heads = 4;
        c.model.dit.modulation_hidden = 64;
        c.model.dit.gel_prompt_layers = (1..=4).collect();
        c.optim.lr = 1e-3;
        c.optim.grad_clip = 1.0;
        c.train.batch_size = 16;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.sampler.steps == 0 || self.sampler.steps > self.model.dit.num_timesteps {
            return Err(Error::Config(format!(
                "sampler steps {} outside [1, {}]",
                self.sampler.steps, self.model.dit.num_timesteps
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?,
            _ => serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?,
        };
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Write `config.json` into the output directory.
    pub fn write_echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.json");
        std::fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// SHA-256 of the canonical JSON with the output location removed.
    pub fn hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        Ok(hex::encode(Sha256::digest(serde_json::to_string(&v)?.as_bytes())))
    }

    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid value {value:?} for {what}"));
        let num = |what: &str| value.trim().parse::<usize>().map_err(|_| bad(what));
        let float = |what: &str| value.trim().parse::<f64>().map_err(|_| bad(what));
        match key {
            "conditions" => {
                self.model.toggles = ConditionToggles {
                    texture: value.contains('t'),
                    shape: value.contains('s'),
                    gel: value.contains('g'),
                };
                if value.chars().any(|c| !"tsg".contains(c)) || value.is_empty() {
                    return Err(bad(key));
                }
            }
            "mechanism" => self.model.dit.mechanism = value.parse::<Mechanism>()?,
            "layers" => self.model.dit.gel_prompt_layers = parse_layers(value, self.model.dit.depth)?,
            "n_gs" => self.model.n_gs = num(key)?,
            "theta_t" => self.model.gate.theta_t = num(key)?,
            "steps" => self.train.steps = num(key)?,
            "batch_size" => self.train.batch_size = num(key)?,
            "lr" => self.optim.lr = float(key)?,
            "cfg_scale" => self.sampler.guidance.scale = float(key)?,
            "sampler_steps" => self.sampler.steps = num(key)?,
            "sampler" => self.sampler.kind = value.parse()?,
            "seed" => self.seed = value.trim().parse().map_err(|_| bad(key))?,
            "depth" => {
                let old = self.model.dit.depth;
                self.model.dit.depth = num(key)?;
                let d = self.model.dit.depth;
                if self.model.dit.gel_prompt_layers == (1..=old).collect() {
                    self.model.dit.gel_prompt_layers = (1..=d).collect();
                } else {
                    self.model.dit.gel_prompt_layers.retain(|&l| l <= d);
                }
            }
            "width" => self.model.dit.width = num(key)?,
            "patch_size" => self.model.dit.patch_size = num(key)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown override key {other:?}; expected one of {}",
                    OVERRIDE_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Short human-readable summary of the ablation-relevant settings.
    pub fn label(&self) -> String {
        format!(
            "{} {} layers={} n_gs={} theta_t={}",
            self.model.toggles.label(),
            self.model.dit.mechanism,
            format_layers(&self.model.dit.gel_prompt_layers),
            self.model.n_gs,
            self.model.gate.theta_t
        )
    }
}

/// Git-style content id: SHA-256 over `"blob {len}\0"` followed by the bytes.
pub fn content_id(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = ExperimentConfig::default();
        assert_eq!(c.seed, 43);
        assert_eq!(c.optim.weight_decay, 0.03);
        assert_eq!(c.optim.lr, 2e-5);
        assert_eq!(c.optim.warmup_steps, 1000);
        assert_eq!(c.optim.grad_clip, 0.01);
        assert_eq!(c.model.n_gs, 4);
        assert_eq!(c.model.gate.theta_t, 600);
        c.validate().unwrap();
        ExperimentConfig::compact().validate().unwrap();
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 44;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        c.apply_override("conditions", "ts").unwrap();
        assert_eq!(c.model.toggles, ConditionToggles::TEXTURE_SHAPE);
        c.apply_override("mechanism", "joint").unwrap();
        c.apply_override("layers", "1-3").unwrap();
        assert_eq!(c.model.dit.gel_prompt_layers.len(), 3);
        assert!(matches!(c.apply_override("colour", "red"), Err(Error::Config(_))));
        assert!(c.apply_override("n_gs", "four").is_err());
    }

    #[test]
    fn toml_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig::compact();
        let j = dir.path().join("c.json");
        std::fs::write(&j, c.to_json().unwrap()).unwrap();
        assert_eq!(ExperimentConfig::load(&j).unwrap(), c);
        let t = dir.path().join("c.toml");
        std::fs::write(&t, "seed = 7\n[train]\nsteps = 5\n").unwrap();
        let l = ExperimentConfig::load(&t).unwrap();
        assert_eq!((l.seed, l.train.steps), (7, 5));
    }

    #[test]
    fn git_style_id() {
        // Same framing as `git hash-object` with SHA-256 object format.
        assert_eq!(
            content_id(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
