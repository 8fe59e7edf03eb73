//! Marker-prediction evaluation and `key=value` metric reports.

use anyhow::Result;
use dmr_core::linalg::argsort_desc;
use dmr_core::model::corpus_log_likelihood;
use dmr_core::probe::{acc_at_k, ProbeReport};
use dmr_core::{Corpus, DmrParams, EncoderParams, LabelVocab};

use crate::json::fmt_f64;

pub const MARKER_KS: [usize; 4] = [1, 3, 5, 10];

/// Full marker ranking for every example, best first.
pub fn marker_rankings(params: &DmrParams, enc: &EncoderParams, corpus: &Corpus) -> Result<Vec<Vec<usize>>> {
    corpus
        .examples
        .iter()
        .map(|ex| {
            let rep = enc.encode_pair(&ex.s1, &ex.s2)?;
            Ok(argsort_desc(&params.marginal_marker(&rep)?.p))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerReport {
    pub examples: usize,
    pub mean_nll: f64,
    /// `(k, ACC@k)`; a `k` beyond the marker count scores as a full ranking.
    pub accuracy: Vec<(usize, f64)>,
}

pub fn evaluate_markers(params: &DmrParams, enc: &EncoderParams, corpus: &Corpus, ks: &[usize]) -> Result<MarkerReport> {
    let ranked = marker_rankings(params, enc, corpus)?;
    let gold: Vec<usize> = corpus.examples.iter().map(|e| e.marker).collect();
    let n = params.n_markers();
    let accuracy = ks
        .iter()
        .map(|&k| Ok((k, acc_at_k(&ranked, &gold, k.min(n))?)))
        .collect::<Result<_>>()?;
    Ok(MarkerReport {
        examples: corpus.len(),
        mean_nll: -corpus_log_likelihood(params, enc, corpus)?,
        accuracy,
    })
}

impl MarkerReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("examples={}\nmean_nll={}\n", self.examples, fmt_f64(self.mean_nll));
        for (k, a) in &self.accuracy {
            out.push_str(&format!("acc@{k}={}\n", fmt_f64(*a)));
        }
        out
    }
}

/// `key=value` metrics, a blank line, then a per-class F1 TSV.
pub fn probe_report_text(prefix: &str, report: &ProbeReport, relations: &LabelVocab) -> String {
    let mut out = format!(
        "{prefix}accuracy={}\n{prefix}macro_f1={}\n\nrelation\tf1\n",
        fmt_f64(report.accuracy),
        fmt_f64(report.macro_f1)
    );
    for (c, f1) in report.per_class_f1.iter().enumerate() {
        out.push_str(&format!("{}\t{}\n", relations.label(c).unwrap_or("?"), fmt_f64(*f1)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_text_layout() {
        let r = ProbeReport {
            accuracy: 0.5,
            macro_f1: 0.25,
            per_class_f1: vec![0.5, 0.0],
            distributions: vec![],
        };
        let v = LabelVocab::from_labels(vec!["Cause".into(), "Contrast".into()]).unwrap();
        let t = probe_report_text("", &r, &v);
        assert!(t.starts_with("accuracy=5.0000000000000000e-1\nmacro_f1=2.5000000000000000e-1\n\nrelation\tf1\n"));
        assert!(t.ends_with("Contrast\t0.0000000000000000e0\n"));
    }
}
