//! Run configuration: `key = value` lines grouped under `[section]` headers.
//!
//! Every key has a default; the defaults describe the 1D two-Gaussian
//! pipeline. Keys are addressed as `section.key`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use guideflow::diffusion::NoiseSchedule;
use guideflow::flow::OdeMethod;
use guideflow::nn::{Activation, Architecture, OptimizerKind, TrainConfig};
use guideflow::{Error, Result};
use sha2::{Digest, Sha256};

const DEFAULTS: &[(&str, &str)] = &[
    ("run.seed", "0"),
    ("run.out", "run"),
    ("data.kind", "gaussian1d"),
    ("data.mean", "1.0"),
    ("data.std", "0.05"),
    ("data.n_per_class", "10000"),
    ("data.fractal_cap", "0"),
    ("schedule.steps", "100"),
    ("schedule.beta_start", "auto"),
    ("schedule.beta_end", "auto"),
    ("denoiser.hidden", "128,128,128,128"),
    ("denoiser.activation", "silu"),
    ("denoiser.time_embed", "64"),
    ("denoiser.class_embed", "64"),
    ("denoiser.steps", "100000"),
    ("denoiser.batch", "4096"),
    ("denoiser.lr", "1e-4"),
    ("denoiser.optimizer", "adamw"),
    ("denoiser.weight_decay", "0.01"),
    ("denoiser.ema", "0"),
    ("denoiser.dropout_prob", "0.1"),
    ("classifier.kind", "linear"),
    ("classifier.hidden", "128,128,128,128"),
    ("classifier.activation", "silu"),
    ("classifier.time_embed", "64"),
    ("classifier.steps", "50000"),
    ("classifier.batch", "4096"),
    ("classifier.lr", "1e-4"),
    ("classifier.optimizer", "adamw"),
    ("classifier.weight_decay", "0.01"),
    ("classifier.ema", "0"),
    ("sample.mode", "vanilla"),
    ("sample.scale", "1.0"),
    ("sample.n", "10000"),
    ("flow.hidden", "128,128,128,128"),
    ("flow.activation", "silu"),
    ("flow.time_embed", "64"),
    ("flow.class_embed", "64"),
    ("flow.conditional", "true"),
    ("flow.k", "20"),
    ("flow.steps", "100000"),
    ("flow.batch", "4096"),
    ("flow.lr", "1e-4"),
    ("flow.optimizer", "adamw"),
    ("flow.weight_decay", "0.01"),
    ("flow.ema", "0"),
    ("flow.one_for_all", "false"),
    ("flow.ode_steps", "50"),
    ("flow.method", "rk4"),
    ("analysis.scales", "1,2,4"),
    ("analysis.n_chains", "10000"),
    ("analysis.boundary_normal", "auto"),
    ("analysis.boundary_offset", "0"),
];

fn default_of(key: &str) -> Option<&'static str> {
    DEFAULTS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::from("run");
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
            cfg.set(&format!("{section}.{}", k.trim()), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if default_of(key).is_none() {
            return Err(Error::Config(format!("unknown config key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Apply a `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("every key has a default")
    }

    pub fn parse_key<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| Error::Config(format!("config key {key} has invalid value '{v}'")))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::Config(format!("config key {key} has invalid entry '{s}'"))))
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse_key("run.seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("run.out"))
    }

    /// Canonical text form: every key, sorted, one `key=value` per line.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let steps: usize = self.parse_key("schedule.steps")?;
        match (self.get("schedule.beta_start"), self.get("schedule.beta_end")) {
            ("auto", "auto") => NoiseSchedule::scaled_linear(steps),
            _ => NoiseSchedule::linear(
                steps,
                self.parse_key("schedule.beta_start")?,
                self.parse_key("schedule.beta_end")?,
            ),
        }
    }

    /// Architecture from `<section>.hidden`, `.activation`, `.time_embed` and
    /// (when present) `.class_embed`.
    pub fn architecture(&self, section: &str) -> Result<Architecture> {
        let class_key = format!("{section}.class_embed");
        Ok(Architecture {
            hidden_dims: self.list(&format!("{section}.hidden"))?,
            activation: self.parse_key::<Activation>(&format!("{section}.activation"))?,
            time_embed_dim: self.parse_key(&format!("{section}.time_embed"))?,
            class_embed_dim: if default_of(&class_key).is_some() {
                self.parse_key(&class_key)?
            } else {
                0
            },
        })
    }

    pub fn train_config(&self, section: &str) -> Result<TrainConfig> {
        let ema: f64 = self.parse_key(&format!("{section}.ema"))?;
        let cfg = TrainConfig {
            steps: self.parse_key(&format!("{section}.steps"))?,
            batch_size: self.parse_key(&format!("{section}.batch"))?,
            optimizer: self.parse_key::<OptimizerKind>(&format!("{section}.optimizer"))?,
            learning_rate: self.parse_key(&format!("{section}.lr"))?,
            weight_decay: self.parse_key(&format!("{section}.weight_decay"))?,
            ema_decay: (ema > 0.0).then_some(ema),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ode_method(&self) -> Result<OdeMethod> {
        self.parse_key("flow.method")
    }

    pub fn scales(&self) -> Result<Vec<f64>> {
        self.list("analysis.scales")
    }

    pub fn boundary_normal(&self) -> Result<Option<Vec<f64>>> {
        match self.get("analysis.boundary_normal") {
            "auto" => Ok(None),
            _ => self.list("analysis.boundary_normal").map(Some),
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
