//! Training history as `key=value` lines.
//!
//! One `kind=iteration` line per EM iteration, then a `kind=summary` line.
//! Fields are separated by single spaces; absent values are written `-`.
//!
//! ```text
//! kind=iteration iteration=0 epoch=0 batch_size=500 nll_before=… nll_after=… psi_loss=… phi_loss=… heldout_nll=-
//! kind=summary iterations=12 initial_heldout_nll=… final_heldout_nll=… stopped_early=false
//! ```

use anyhow::{anyhow, bail, Context, Result};
use dmr_core::em::{IterationRecord, TrainHistory};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::json::fmt_f64;

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), fmt_f64)
}

pub fn to_text(h: &TrainHistory) -> String {
    let mut out = String::new();
    for r in &h.records {
        out.push_str(&format!(
            "kind=iteration iteration={} epoch={} batch_size={} nll_before={} nll_after={} psi_loss={} phi_loss={} heldout_nll={}\n",
            r.iteration,
            r.epoch,
            r.batch_size,
            fmt_f64(r.nll_before),
            fmt_f64(r.nll_after),
            fmt_f64(r.psi_loss),
            opt(r.phi_loss),
            opt(r.heldout_nll),
        ));
    }
    out.push_str(&format!(
        "kind=summary iterations={} initial_heldout_nll={} final_heldout_nll={} stopped_early={}\n",
        h.records.len(),
        opt(h.initial_heldout_nll),
        opt(h.final_heldout_nll()),
        h.stopped_early
    ));
    out
}

fn fields(line: &str) -> Result<Vec<(&str, &str)>> {
    line.split(' ')
        .map(|kv| kv.split_once('=').ok_or_else(|| anyhow!("field {kv:?} is not key=value")))
        .collect()
}

struct Fields<'a>(Vec<(&'a str, &'a str)>);

impl Fields<'_> {
    fn raw(&self, key: &str) -> Result<&str> {
        self.0
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| anyhow!("missing {key}"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::error::Error + Send + Sync + 'static,
    {
        self.raw(key)?.parse().with_context(|| format!("bad {key}"))
    }

    fn opt(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key)? {
            "-" => Ok(None),
            v => Ok(Some(v.parse().with_context(|| format!("bad {key}"))?)),
        }
    }
}

pub fn parse_text(text: &str) -> Result<TrainHistory> {
    let mut h = TrainHistory::default();
    let mut summary = false;
    for (i, line) in text.lines().enumerate() {
        let f = Fields(fields(line).with_context(|| format!("line {}", i + 1))?);
        let ctx = || format!("line {}", i + 1);
        match f.raw("kind").with_context(ctx)? {
            "iteration" if !summary => h.records.push(IterationRecord {
                iteration: f.parse("iteration").with_context(ctx)?,
                epoch: f.parse("epoch").with_context(ctx)?,
                batch_size: f.parse("batch_size").with_context(ctx)?,
                nll_before: f.parse("nll_before").with_context(ctx)?,
                nll_after: f.parse("nll_after").with_context(ctx)?,
                psi_loss: f.parse("psi_loss").with_context(ctx)?,
                phi_loss: f.opt("phi_loss").with_context(ctx)?,
                heldout_nll: f.opt("heldout_nll").with_context(ctx)?,
            }),
            "summary" if !summary => {
                summary = true;
                if f.parse::<usize>("iterations").with_context(ctx)? != h.records.len() {
                    bail!("line {}: iteration count does not match the records", i + 1);
                }
                h.initial_heldout_nll = f.opt("initial_heldout_nll").with_context(ctx)?;
                h.stopped_early = f.parse("stopped_early").with_context(ctx)?;
            }
            other => bail!("line {}: unexpected record kind {other:?}", i + 1),
        }
    }
    if !summary {
        bail!("history has no summary line");
    }
    Ok(h)
}

/// What a checkpoint keeps of the history: a few headline numbers and a
/// hash of the full text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryDigest {
    pub iterations: usize,
    pub initial_heldout_nll: Option<f64>,
    pub final_heldout_nll: Option<f64>,
    pub final_batch_nll: Option<f64>,
    pub stopped_early: bool,
    pub sha256: String,
}

impl HistoryDigest {
    pub fn of(h: &TrainHistory) -> Self {
        HistoryDigest {
            iterations: h.records.len(),
            initial_heldout_nll: h.initial_heldout_nll,
            final_heldout_nll: h.final_heldout_nll(),
            final_batch_nll: h.records.last().map(|r| r.nll_after),
            stopped_early: h.stopped_early,
            sha256: hex::encode(Sha256::digest(to_text(h).as_bytes())),
        }
    }
}
