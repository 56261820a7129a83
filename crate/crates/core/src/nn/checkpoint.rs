//! Model checkpoints.
//!
//! ```text
//! guideflow-checkpoint 1
//! kind=denoiser
//! input_dim=1
//! hidden_dims=64,64,64
//! ...            (more key=value lines: spec first, then model metadata)
//! params=12345
//! end
//! <params * 8 bytes, little-endian f64, layout order>
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::mlp::MlpSpec;
use super::net::Net;
use super::params::ParamVector;
use crate::{Error, Result};

pub const MAGIC: &str = "guideflow-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

const SPEC_KEYS: [&str; 8] = [
    "input_dim",
    "hidden_dims",
    "output_dim",
    "activation",
    "time_embed_dim",
    "class_embed_dim",
    "num_classes",
    "null_class",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub net: Net,
    /// Model-specific metadata (schedule, dropout, k, ...), sorted by key.
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, net: Net) -> Self {
        Self {
            kind: kind.into(),
            net,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta
            .get(key)
            .ok_or_else(|| Error::data(format!("checkpoint missing '{key}'")))?;
        raw.parse()
            .map_err(|_| Error::data(format!("checkpoint field '{key}' has bad value '{raw}'")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::config(format!("expected a {kind} checkpoint, found {}", self.kind)))
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let s = &self.net.spec;
        let hidden: Vec<String> = s.hidden_dims.iter().map(|h| h.to_string()).collect();
        writeln!(w, "{MAGIC} {FORMAT_VERSION}")?;
        writeln!(w, "kind={}", self.kind)?;
        writeln!(w, "input_dim={}", s.input_dim)?;
        writeln!(w, "hidden_dims={}", hidden.join(","))?;
        writeln!(w, "output_dim={}", s.output_dim)?;
        writeln!(w, "activation={}", s.activation)?;
        writeln!(w, "time_embed_dim={}", s.time_embed_dim)?;
        writeln!(w, "class_embed_dim={}", s.class_embed_dim)?;
        writeln!(w, "num_classes={}", s.num_classes)?;
        writeln!(w, "null_class={}", s.null_class)?;
        for (k, v) in &self.meta {
            writeln!(w, "{k}={v}")?;
        }
        writeln!(w, "params={}", self.net.params.len())?;
        writeln!(w, "end")?;
        let mut buf = Vec::with_capacity(8 * self.net.params.len());
        for v in self.net.params.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let mut head = line.split_whitespace();
        if head.next() != Some(MAGIC) {
            return Err(Error::data("not a guideflow checkpoint"));
        }
        match head.next().and_then(|v| v.parse::<u32>().ok()) {
            Some(FORMAT_VERSION) => {}
            other => return Err(Error::data(format!("unsupported checkpoint version {other:?}"))),
        }
        let mut fields = BTreeMap::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::data("checkpoint header not terminated"));
            }
            let l = line.trim_end_matches(['\n', '\r']);
            if l == "end" {
                break;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::data(format!("bad checkpoint header line '{l}'")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let take = |fields: &mut BTreeMap<String, String>, k: &str| {
            fields
                .remove(k)
                .ok_or_else(|| Error::data(format!("checkpoint missing '{k}'")))
        };
        let num = |v: String, k: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::data(format!("checkpoint field '{k}' is not an integer")))
        };
        let kind = take(&mut fields, "kind")?;
        let hidden_raw = take(&mut fields, "hidden_dims")?;
        let hidden_dims = if hidden_raw.is_empty() {
            Vec::new()
        } else {
            hidden_raw
                .split(',')
                .map(|h| num(h.to_string(), "hidden_dims"))
                .collect::<Result<Vec<_>>>()?
        };
        let spec = MlpSpec {
            input_dim: num(take(&mut fields, SPEC_KEYS[0])?, SPEC_KEYS[0])?,
            hidden_dims,
            output_dim: num(take(&mut fields, SPEC_KEYS[2])?, SPEC_KEYS[2])?,
            activation: take(&mut fields, SPEC_KEYS[3])?.parse()?,
            time_embed_dim: num(take(&mut fields, SPEC_KEYS[4])?, SPEC_KEYS[4])?,
            class_embed_dim: num(take(&mut fields, SPEC_KEYS[5])?, SPEC_KEYS[5])?,
            num_classes: num(take(&mut fields, SPEC_KEYS[6])?, SPEC_KEYS[6])?,
            null_class: take(&mut fields, SPEC_KEYS[7])? == "true",
        };
        spec.validate()?;
        let n = num(take(&mut fields, "params")?, "params")?;
        let layout = Arc::new(spec.layout());
        if n != layout.total() {
            return Err(Error::data(format!(
                "checkpoint stores {n} parameters but its spec needs {}",
                layout.total()
            )));
        }
        let mut bytes = vec![0u8; 8 * n];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::data("checkpoint parameter block truncated"))?;
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(Error::data("trailing bytes after checkpoint parameters"));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let params = ParamVector::from_values(layout, values)?;
        Ok(Self {
            kind,
            net: Net { spec, params },
            meta: fields,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::data(format!("cannot open checkpoint {}: {e}", path.display())))?;
        Self::read_from(f)
    }
}
