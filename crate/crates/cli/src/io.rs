//! Atomic output files and per-output manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use guideflow::data::Dataset;
use guideflow::diffusion::NoiseBank;
use guideflow::nn::Checkpoint;
use guideflow::{Error, Result};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};

/// Write `bytes` to a sibling temp file and rename it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("output path {} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(read_bytes(path)?)))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::read_csv(&read_bytes(path)?[..])
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    atomic_write(path, &buf)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::read_from(&read_bytes(path)?[..]).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    atomic_write(path, &ck.to_bytes())
}

pub fn read_bank(path: &Path) -> Result<NoiseBank> {
    NoiseBank::read_from(&read_bytes(path)?[..])
}

pub fn write_bank(path: &Path, bank: &NoiseBank) -> Result<()> {
    let mut buf = Vec::new();
    bank.write_to(&mut buf)?;
    atomic_write(path, &buf)
}

/// Provenance of one command invocation, written next to its outputs.
#[derive(Debug, Default)]
pub struct Manifest {
    pub command: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub extra: BTreeMap<String, Value>,
}

impl Manifest {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            ..Self::default()
        }
    }

    pub fn seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    fn checksums(paths: &[PathBuf]) -> Result<Value> {
        let mut m = serde_json::Map::new();
        for p in paths {
            m.insert(p.display().to_string(), Value::String(sha256_file(p)?));
        }
        Ok(Value::Object(m))
    }

    /// Write `<out>/manifests/<name>.json`; keys are sorted so reruns
    /// produce identical bytes.
    pub fn write(&self, cfg: &RunConfig, name: &str) -> Result<PathBuf> {
        let doc = json!({
            "command": self.command,
            "config_hash": cfg.hash(),
            "config": cfg.values(),
            "seeds": self.seeds,
            "inputs": Self::checksums(&self.inputs)?,
            "outputs": Self::checksums(&self.outputs)?,
            "extra": self.extra,
        });
        let path = cfg.out_dir().join("manifests").join(format!("{name}.json"));
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Data(e.to_string()))?;
        text.push('\n');
        atomic_write(&path, text.as_bytes())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn missing_input_is_a_data_error() {
        let r = read_dataset(Path::new("/definitely/not/here.csv"));
        assert!(matches!(r, Err(Error::Data(_))));
    }
}
