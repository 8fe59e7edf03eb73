//! Model checkpoints: config, vocabularies, parameters and a history digest
//! in one JSON document.

use std::path::Path;

use anyhow::{bail, Context, Result};
use dmr_core::em::{TrainConfig, TrainOutput};
use dmr_core::{DmrParams, EncoderParams, MarkerVocab, TokenVocab};
use serde::{Deserialize, Serialize};

use crate::history::HistoryDigest;
use crate::json;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub token_vocab: TokenVocab,
    pub marker_vocab: MarkerVocab,
    pub encoder_params: EncoderParams,
    pub dmr_params: DmrParams,
    pub history: HistoryDigest,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, token_vocab: TokenVocab, marker_vocab: MarkerVocab, out: TrainOutput) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            config,
            token_vocab,
            marker_vocab,
            encoder_params: out.encoder,
            dmr_params: out.params,
            history: HistoryDigest::of(&out.history),
        }
    }

    /// Every parameter shape against the config and vocabularies.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            bail!("unknown format_version {}", self.format_version);
        }
        self.config.validate().context("config")?;
        let c = &self.config;
        let p = &self.dmr_params;
        let e = &self.encoder_params.embeddings;
        let checks = [
            ("dmr_params.phi", "rows", c.k, p.phi.rows),
            ("dmr_params.phi", "columns", self.marker_vocab.len(), p.phi.cols),
            ("dmr_params.w2", "rows", c.k, p.w2.rows),
            ("dmr_params.w2", "columns", c.d, p.w2.cols),
            ("dmr_params.b2", "length", c.k, p.b2.len()),
            ("dmr_params.w1", "rows", c.d, p.w1.rows),
            ("dmr_params.w1", "columns", 4 * c.d_e, p.w1.cols),
            ("dmr_params.b1", "length", c.d, p.b1.len()),
            ("encoder_params.embeddings", "rows", self.token_vocab.len(), e.rows),
            ("encoder_params.embeddings", "columns", c.d_e, e.cols),
        ];
        for (field, what, want, got) in checks {
            if want != got {
                bail!("{field}: expected {want} {what}, found {got}");
            }
        }
        if e.data.len() != e.rows * e.cols || !e.is_finite() {
            bail!("encoder_params.embeddings: malformed or non-finite data");
        }
        p.validate().context("dmr_params")?;
        if self.marker_vocab.is_empty() {
            bail!("marker_vocab is empty");
        }
        Ok(())
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    ckpt.validate()?;
    json::write(path, ckpt)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let value = json::parse_value(bytes)?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => bail!("unknown format_version {v}"),
        None => bail!("missing or malformed format_version"),
    }
    let ckpt: Checkpoint = json::from_value(value)?;
    ckpt.validate()?;
    Ok(ckpt)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    from_bytes(&bytes).with_context(|| format!("loading checkpoint {}", path.display()))
}
