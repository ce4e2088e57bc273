//! Binary checkpoint: an 8-byte magic, a little-endian `u32` format
//! version, a `u64` header length, a JSON header and the `f64` payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use hmt_core::data::Vocabulary;
use hmt_core::numerics::Array;
use hmt_core::{Hmt, Parameters};

use crate::config::RunConfig;
use crate::error::{io_at, CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"HMTCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

const VOCAB_TENSORS: [&str; 3] = ["encoder.embed", "decoder.embed", "decoder.output"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in `f64` elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: RunConfig,
    source_vocab: Vocabulary,
    target_vocab: Vocabulary,
    step: usize,
    seed: u64,
    manifest: Vec<ManifestEntry>,
    payload_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
    /// Updates applied so far.
    pub step: usize,
    pub seed: u64,
    pub params: Parameters,
}

impl Checkpoint {
    pub fn from_model(
        model: &Hmt,
        config: &RunConfig,
        source_vocab: &Vocabulary,
        target_vocab: &Vocabulary,
        step: usize,
    ) -> Self {
        let mut config = config.clone();
        config.model = model.config().clone();
        Self {
            seed: config.train.seed,
            config,
            source_vocab: source_vocab.clone(),
            target_vocab: target_vocab.clone(),
            step,
            params: model.params().clone(),
        }
    }

    /// Rebuilds the model, checking every tensor against the architecture
    /// and the vocabularies.
    pub fn model(&self) -> CliResult<Hmt> {
        let expect = Hmt::new(
            self.config.model.clone(),
            self.source_vocab.len(),
            self.target_vocab.len(),
            0,
        )?;
        for (name, want) in expect.params().iter() {
            let got = self
                .params
                .by_name(name)
                .ok_or_else(|| CliError::format(format!("checkpoint is missing tensor {name}")))?;
            if got.shape() != want.shape() {
                let code = if VOCAB_TENSORS.contains(&name) {
                    "vocab"
                } else {
                    "format"
                };
                return Err(CliError::new(
                    code,
                    format!(
                        "{} mismatch: tensor {name} has shape {:?}, expected {:?}",
                        if code == "vocab" { "vocab" } else { "architecture" },
                        got.shape(),
                        want.shape()
                    ),
                ));
            }
        }
        if self.params.len() != expect.params().len() {
            return Err(CliError::format(format!(
                "checkpoint holds {} tensors, the architecture needs {}",
                self.params.len(),
                expect.params().len()
            )));
        }
        let ordered: Vec<Array> = expect
            .params()
            .names()
            .iter()
            .map(|n| self.params.by_name(n).cloned().expect("checked above"))
            .collect();
        let params = Parameters::new(expect.params().names().to_vec(), ordered)?;
        Ok(Hmt::from_parameters(
            self.config.model.clone(),
            self.source_vocab.len(),
            self.target_vocab.len(),
            params,
        )?)
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let mut manifest = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for (name, a) in self.params.iter() {
            manifest.push(ManifestEntry {
                name: name.to_string(),
                shape: a.shape().to_vec(),
                offset,
            });
            offset += a.len();
        }
        let header = Header {
            config: self.config.clone(),
            source_vocab: self.source_vocab.clone(),
            target_vocab: self.target_vocab.clone(),
            step: self.step,
            seed: self.seed,
            manifest,
            payload_len: offset,
        };
        let json = serde_json::to_vec(&header).map_err(|e| CliError::format(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, a) in self.params.iter() {
            for x in a.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let bad = |m: String| CliError::format(format!("not a valid checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if header_len > body.len() {
            return Err(bad(format!("header length {header_len} past end of file")));
        }
        let header: Header = serde_json::from_slice(&body[..header_len]).map_err(|e| bad(format!("header: {e}")))?;
        let payload = &body[header_len..];
        if payload.len() != 8 * header.payload_len {
            return Err(bad(format!(
                "payload holds {} bytes, header declares {} values",
                payload.len(),
                header.payload_len
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut names = Vec::with_capacity(header.manifest.len());
        let mut arrays = Vec::with_capacity(header.manifest.len());
        let mut expected_offset = 0;
        for e in &header.manifest {
            let n: usize = e.shape.iter().product();
            if e.offset != expected_offset || e.offset + n > values.len() {
                return Err(bad(format!(
                    "tensor {} at offset {} overlaps or overruns the payload",
                    e.name, e.offset
                )));
            }
            arrays.push(
                Array::new(e.shape.clone(), values[e.offset..e.offset + n].to_vec()).map_err(|e| bad(e.to_string()))?,
            );
            names.push(e.name.clone());
            expected_offset += n;
        }
        if expected_offset != values.len() {
            return Err(bad(format!(
                "{} payload values not covered by the manifest",
                values.len() - expected_offset
            )));
        }
        Ok(Self {
            config: header.config,
            source_vocab: header.source_vocab,
            target_vocab: header.target_vocab,
            step: header.step,
            seed: header.seed,
            params: Parameters::new(names, arrays)?,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let bytes = self.to_bytes()?;
        io_at(path, std::fs::write(path, bytes))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = io_at(path, std::fs::read(path))?;
        Self::from_bytes(&bytes).map_err(|e| CliError::new(e.code, format!("{}: {}", path.display(), e.message)))
    }
}
