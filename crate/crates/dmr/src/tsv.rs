//! Tab-separated corpus, relation and pair files.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dmr_core::corpus::RawRecord;
use dmr_core::probe::RelationDataset;
use dmr_core::{Corpus, LabelVocab, MarkerVocab, TokenVocab};

/// A line of a TSV file split into fields, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    pub number: usize,
    pub fields: Vec<String>,
}

/// Reads every line of `path`, requiring between `min` and `max` fields.
/// A single trailing newline is allowed; an empty file is an error.
pub fn read_lines(path: &Path, min: usize, max: usize) -> Result<Vec<Line>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = String::from_utf8(bytes).with_context(|| format!("{} is not valid UTF-8", path.display()))?;
    parse_lines(&text, min, max).with_context(|| format!("in {}", path.display()))
}

pub fn parse_lines(text: &str, min: usize, max: usize) -> Result<Vec<Line>> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        bail!("file is empty");
    }
    body.split('\n')
        .enumerate()
        .map(|(i, raw)| {
            let fields: Vec<String> = raw.split('\t').map(String::from).collect();
            if fields.len() < min || fields.len() > max {
                let want = if min == max { format!("{min}") } else { format!("{min} to {max}") };
                bail!("line {}: expected {want} tab-separated fields, found {}", i + 1, fields.len());
            }
            Ok(Line { number: i + 1, fields })
        })
        .collect()
}

fn raw_records(lines: &[Line]) -> Vec<RawRecord<'_>> {
    lines
        .iter()
        .map(|l| RawRecord {
            line: l.number,
            s1: &l.fields[0],
            s2: &l.fields[1],
            label: &l.fields[2],
        })
        .collect()
}

/// Loads `s1<TAB>s2<TAB>marker` lines. Missing vocabularies are built from
/// the data.
pub fn load_corpus(
    path: &Path,
    token_vocab: Option<TokenVocab>,
    marker_vocab: Option<MarkerVocab>,
    min_token_count: usize,
) -> Result<Corpus> {
    let lines = read_lines(path, 3, 3)?;
    Corpus::from_records(&raw_records(&lines), token_vocab, marker_vocab, min_token_count)
        .with_context(|| format!("in {}", path.display()))
}

pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut out = String::new();
    for (s1, s2, m) in corpus.to_records() {
        out.push_str(&format!("{s1}\t{s2}\t{m}\n"));
    }
    out
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    crate::write_atomic(path, corpus_to_string(corpus).as_bytes())
}

/// Loads `s1<TAB>s2<TAB>relation` lines against a fixed token vocabulary.
pub fn load_relations(path: &Path, token_vocab: &TokenVocab, relation_vocab: Option<LabelVocab>) -> Result<RelationDataset> {
    let lines = read_lines(path, 3, 3)?;
    RelationDataset::from_records(&raw_records(&lines), token_vocab, relation_vocab)
        .with_context(|| format!("in {}", path.display()))
}

/// Sentence pairs for prediction. A third column is allowed and ignored.
pub fn load_pairs(path: &Path, token_vocab: &TokenVocab) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    read_lines(path, 2, 3)?
        .iter()
        .map(|l| {
            let s1 = token_vocab.encode(&l.fields[0]);
            let s2 = token_vocab.encode(&l.fields[1]);
            if s1.is_empty() || s2.is_empty() {
                bail!("{}: line {}: empty sentence", path.display(), l.number);
            }
            Ok((s1, s2))
        })
        .collect()
}
