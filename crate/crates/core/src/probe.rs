//! Linear relation probe on the frozen bottleneck state `h_z`, plus the
//! evaluation metrics (accuracy, macro-F1, ACC@k) and few-shot subsetting.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{encode_sentence, RawRecord};
use crate::encoder::EncoderParams;
use crate::linalg::{argmax, axpy, log_softmax, softmax, Matrix};
use crate::model::{pair_hz, DmrParams};
use crate::vocab::{LabelVocab, TokenVocab};
use crate::{Error, Result};

pub const DEFAULT_LR: f64 = 0.1;
pub const DEFAULT_EPOCHS: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationExample {
    pub s1: Vec<usize>,
    pub s2: Vec<usize>,
    pub relation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationDataset {
    pub examples: Vec<RelationExample>,
    pub relation_vocab: LabelVocab,
}

impl RelationDataset {
    /// Tokenizes with a fixed token vocabulary. Without `relation_vocab`
    /// labels get ids in first-occurrence order; with one, unseen labels
    /// are an error.
    pub fn from_records(
        records: &[RawRecord<'_>],
        token_vocab: &TokenVocab,
        relation_vocab: Option<LabelVocab>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("relation dataset"));
        }
        let fixed = relation_vocab.is_some();
        let mut relation_vocab = relation_vocab.unwrap_or_default();
        let mut examples = Vec::with_capacity(records.len());
        for r in records {
            let s1 = encode_sentence(token_vocab, r.s1, r.line, "first sentence")?;
            let s2 = encode_sentence(token_vocab, r.s2, r.line, "second sentence")?;
            let label = r.label.trim();
            let relation = if fixed {
                relation_vocab.id(label).ok_or_else(|| Error::Record {
                    line: r.line,
                    reason: format!("unknown relation {label:?}"),
                })?
            } else if label.is_empty() {
                return Err(Error::Record {
                    line: r.line,
                    reason: "empty relation".into(),
                });
            } else {
                relation_vocab.insert(label)
            };
            examples.push(RelationExample { s1, s2, relation });
        }
        Ok(RelationDataset {
            examples,
            relation_vocab,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.relation_vocab.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.relation).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> RelationDataset {
        RelationDataset {
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
            relation_vocab: self.relation_vocab.clone(),
        }
    }
}

/// `h_z` of a pair under the frozen backbone.
pub fn extract_representation(params: &DmrParams, enc: &EncoderParams, s1: &[usize], s2: &[usize]) -> Result<Vec<f64>> {
    pair_hz(params, enc, s1, s2)
}

/// `h_z` for every example of a dataset.
pub fn extract_all(params: &DmrParams, enc: &EncoderParams, data: &RelationDataset) -> Result<Vec<Vec<f64>>> {
    data.examples
        .iter()
        .map(|e| extract_representation(params, enc, &e.s1, &e.s2))
        .collect()
}

/// Softmax-regression weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    /// `C × d`
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl ProbeParams {
    pub fn zeros(num_classes: usize, d: usize) -> Self {
        ProbeParams {
            w: Matrix::zeros(num_classes, d),
            b: vec![0.0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.w.rows
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut l = self.w.matvec(x);
        l.iter_mut().zip(&self.b).for_each(|(v, b)| *v += b);
        l
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }
}

fn check_aligned(reps: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<()> {
    if reps.is_empty() {
        return Err(Error::Empty("probe inputs"));
    }
    if reps.len() != labels.len() {
        return Err(Error::Dimension {
            what: "labels",
            expected: reps.len(),
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::OutOfRange {
            what: "relation",
            value: bad,
            range: format!("0..{num_classes}"),
        });
    }
    let d = reps[0].len();
    if let Some(r) = reps.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension {
            what: "representation",
            expected: d,
            got: r.len(),
        });
    }
    Ok(())
}

/// Mean cross-entropy and its gradient.
pub fn probe_gradient(probe: &ProbeParams, reps: &[Vec<f64>], labels: &[usize]) -> Result<(f64, ProbeParams)> {
    check_aligned(reps, labels, probe.num_classes())?;
    let mut grad = ProbeParams::zeros(probe.num_classes(), probe.w.cols);
    let mut loss = 0.0;
    for (x, &y) in reps.iter().zip(labels) {
        let logp = log_softmax(&probe.logits(x));
        loss -= logp[y];
        let mut g: Vec<f64> = logp.iter().map(|l| libm::exp(*l)).collect();
        g[y] -= 1.0;
        grad.w.add_outer(1.0, &g, x);
        axpy(1.0, &g, &mut grad.b);
    }
    let inv = 1.0 / reps.len() as f64;
    grad.w.data.iter_mut().for_each(|v| *v *= inv);
    grad.b.iter_mut().for_each(|v| *v *= inv);
    Ok((loss * inv, grad))
}

/// Full-batch gradient descent from zero weights.
pub fn train_probe(
    reps: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    lr: f64,
    epochs: usize,
) -> Result<ProbeParams> {
    if num_classes < 2 {
        return Err(Error::invalid("relation set", "needs at least two classes"));
    }
    check_aligned(reps, labels, num_classes)?;
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::Degenerate("probe training data has a single class"));
    }
    let mut probe = ProbeParams::zeros(num_classes, reps[0].len());
    for _ in 0..epochs {
        let (_, g) = probe_gradient(&probe, reps, labels)?;
        axpy(-lr, &g.w.data, &mut probe.w.data);
        axpy(-lr, &g.b, &mut probe.b);
    }
    Ok(probe)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub distributions: Vec<Vec<f64>>,
}

/// Accuracy and macro-F1 of argmax predictions (ties to the lowest id)
/// from raw class distributions. Macro-F1 averages over all classes.
pub fn classification_report(distributions: Vec<Vec<f64>>, labels: &[usize], num_classes: usize) -> Result<ProbeReport> {
    if distributions.is_empty() || distributions.len() != labels.len() {
        return Err(Error::Dimension {
            what: "labels",
            expected: distributions.len(),
            got: labels.len(),
        });
    }
    let mut tp = vec![0usize; num_classes];
    let mut predicted = vec![0usize; num_classes];
    let mut gold = vec![0usize; num_classes];
    let mut correct = 0;
    for (d, &y) in distributions.iter().zip(labels) {
        if y >= num_classes || d.len() != num_classes {
            return Err(Error::OutOfRange {
                what: "relation",
                value: y,
                range: format!("0..{num_classes}"),
            });
        }
        let p = argmax(d);
        predicted[p] += 1;
        gold[y] += 1;
        if p == y {
            tp[y] += 1;
            correct += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..num_classes)
        .map(|c| {
            let precision = if predicted[c] > 0 { tp[c] as f64 / predicted[c] as f64 } else { 0.0 };
            let recall = if gold[c] > 0 { tp[c] as f64 / gold[c] as f64 } else { 0.0 };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .collect();
    Ok(ProbeReport {
        accuracy: correct as f64 / labels.len() as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / num_classes as f64,
        per_class_f1,
        distributions,
    })
}

pub fn eval_probe(probe: &ProbeParams, reps: &[Vec<f64>], labels: &[usize]) -> Result<ProbeReport> {
    check_aligned(reps, labels, probe.num_classes())?;
    let dists = reps.iter().map(|x| probe.predict_proba(x)).collect();
    classification_report(dists, labels, probe.num_classes())
}

/// Fraction of examples whose gold id is among the first `k` ranked ids.
pub fn acc_at_k(ranked: &[Vec<usize>], gold: &[usize], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::OutOfRange {
            what: "k",
            value: k,
            range: "1..".into(),
        });
    }
    if ranked.is_empty() || ranked.len() != gold.len() {
        return Err(Error::Dimension {
            what: "gold",
            expected: ranked.len(),
            got: gold.len(),
        });
    }
    let mut hits = 0;
    for (r, g) in ranked.iter().zip(gold) {
        if r.len() < k {
            return Err(Error::Dimension {
                what: "ranking",
                expected: k,
                got: r.len(),
            });
        }
        if r[..k].contains(g) {
            hits += 1;
        }
    }
    Ok(hits as f64 / gold.len() as f64)
}

/// Stratified, nested few-shot subsets: `result[run][i]` holds the example
/// indices of size `sizes[i]` for that run. Each run shuffles under
/// `seed + run`; class quotas grow one example at a time toward the
/// proportional share, so a larger subset always contains the smaller ones.
pub fn few_shot_subsets(
    labels: &[usize],
    num_classes: usize,
    sizes: &[usize],
    runs: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<usize>>>> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Empty("relation dataset"));
    }
    if let Some(&s) = sizes.iter().find(|&&s| s > n) {
        return Err(Error::OutOfRange {
            what: "few-shot size",
            value: s,
            range: format!("0..={n}"),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::OutOfRange {
            what: "relation",
            value: bad,
            range: format!("0..{num_classes}"),
        });
    }
    let mut class_count = vec![0usize; num_classes];
    labels.iter().for_each(|&l| class_count[l] += 1);
    let max_size = sizes.iter().copied().max().unwrap_or(0);

    // allocation[s][c]: examples of class c in the subset of size s
    let mut allocation = vec![vec![0usize; num_classes]];
    for s in 1..=max_size {
        let mut next = allocation[s - 1].clone();
        let quota = |c: usize| s as f64 * class_count[c] as f64 / n as f64;
        let pick = (0..num_classes)
            .filter(|&c| next[c] < class_count[c])
            .max_by(|&a, &b| {
                let (da, db) = (quota(a) - next[a] as f64, quota(b) - next[b] as f64);
                da.partial_cmp(&db).unwrap_or(core::cmp::Ordering::Equal).then(b.cmp(&a))
            })
            .expect("size <= n leaves a class with room");
        next[pick] += 1;
        allocation.push(next);
    }

    let mut out = Vec::with_capacity(runs);
    for run in 0..runs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(run as u64)));
        // rank of each example within its class, in shuffled order
        let mut seen = vec![0usize; num_classes];
        let mut rank = vec![0usize; n];
        for &i in &order {
            rank[i] = seen[labels[i]];
            seen[labels[i]] += 1;
        }
        let family = sizes
            .iter()
            .map(|&s| {
                order
                    .iter()
                    .copied()
                    .filter(|&i| rank[i] < allocation[s][labels[i]])
                    .collect()
            })
            .collect();
        out.push(family);
    }
    Ok(out)
}
