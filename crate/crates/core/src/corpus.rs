//! Marker-annotated sentence-pair corpora: construction from raw records,
//! splitting, and synthetic generation with a known latent structure.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::vocab::{tokenize, MarkerVocab, TokenVocab};
use crate::{Error, Result};

/// One `(s1, s2, label)` line before tokenization. `line` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord<'a> {
    pub line: usize,
    pub s1: &'a str,
    pub s2: &'a str,
    pub label: &'a str,
}

/// A tokenized sentence pair and its observed marker.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PairExample {
    pub s1: Vec<usize>,
    pub s2: Vec<usize>,
    pub marker: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub examples: Vec<PairExample>,
    pub token_vocab: TokenVocab,
    pub marker_vocab: MarkerVocab,
}

pub(crate) fn encode_sentence(
    vocab: &TokenVocab,
    text: &str,
    line: usize,
    which: &str,
) -> Result<Vec<usize>> {
    let ids = vocab.encode(text);
    if ids.is_empty() {
        return Err(Error::Record {
            line,
            reason: format!("{which} is empty"),
        });
    }
    Ok(ids)
}

impl Corpus {
    /// Tokenizes raw records. Missing vocabularies are built from the
    /// records (tokens seen fewer than `min_token_count` times become
    /// unknown, markers get ids in first-occurrence order). A given marker
    /// vocabulary is closed: unseen markers are an error.
    pub fn from_records(
        records: &[RawRecord<'_>],
        token_vocab: Option<TokenVocab>,
        marker_vocab: Option<MarkerVocab>,
        min_token_count: usize,
    ) -> Result<Corpus> {
        if records.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let token_vocab = match token_vocab {
            Some(v) => v,
            None => {
                let toks: Vec<String> = records
                    .iter()
                    .flat_map(|r| tokenize(r.s1).into_iter().chain(tokenize(r.s2)))
                    .collect();
                TokenVocab::build(toks.iter().map(String::as_str), min_token_count.max(1))
            }
        };
        let fixed_markers = marker_vocab.is_some();
        let mut marker_vocab = marker_vocab.unwrap_or_default();

        let mut examples = Vec::with_capacity(records.len());
        for r in records {
            let s1 = encode_sentence(&token_vocab, r.s1, r.line, "first sentence")?;
            let s2 = encode_sentence(&token_vocab, r.s2, r.line, "second sentence")?;
            let label = r.label.trim();
            if label.is_empty() {
                return Err(Error::Record {
                    line: r.line,
                    reason: "empty marker".into(),
                });
            }
            let marker = if fixed_markers {
                marker_vocab.id(label).ok_or_else(|| Error::Record {
                    line: r.line,
                    reason: format!("unknown marker {label:?}"),
                })?
            } else {
                marker_vocab.insert(label)
            };
            examples.push(PairExample { s1, s2, marker });
        }
        Ok(Corpus {
            examples,
            token_vocab,
            marker_vocab,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_markers(&self) -> usize {
        self.marker_vocab.len()
    }

    /// Same vocabularies, different examples.
    pub fn with_examples(&self, examples: Vec<PairExample>) -> Corpus {
        Corpus {
            examples,
            token_vocab: self.token_vocab.clone(),
            marker_vocab: self.marker_vocab.clone(),
        }
    }

    /// Checks every example against both vocabularies.
    pub fn validate(&self) -> Result<()> {
        if self.marker_vocab.is_empty() {
            return Err(Error::Empty("marker vocabulary"));
        }
        let v = self.token_vocab.len();
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.s1.is_empty() || ex.s2.is_empty() {
                return Err(Error::Record {
                    line: i + 1,
                    reason: "empty sentence".into(),
                });
            }
            if let Some(&id) = ex.s1.iter().chain(&ex.s2).find(|&&id| id >= v) {
                return Err(Error::TokenOutOfRange { id, size: v });
            }
            if ex.marker >= self.marker_vocab.len() {
                return Err(Error::OutOfRange {
                    what: "marker",
                    value: ex.marker,
                    range: format!("0..{}", self.marker_vocab.len()),
                });
            }
        }
        Ok(())
    }

    /// `(s1, s2, marker)` strings, one per example.
    pub fn to_records(&self) -> Vec<(String, String, String)> {
        self.examples
            .iter()
            .map(|ex| {
                (
                    self.token_vocab.decode(&ex.s1),
                    self.token_vocab.decode(&ex.s2),
                    String::from(self.marker_vocab.label(ex.marker).unwrap_or_default()),
                )
            })
            .collect()
    }
}

/// Shuffles under `seed` and partitions into (train, validation, test).
/// Validation and test get `floor(ratio · n)` examples; train takes the rest.
pub fn split_corpus(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if ratios.iter().any(|r| r.is_nan() || *r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "split ratios",
            format!("{ratios:?} must be positive and sum to 1"),
        ));
    }
    let n = corpus.len();
    let count = |r: f64| libm::floor(r * n as f64 + 1e-9) as usize;
    let n_val = count(ratios[1]);
    let n_test = count(ratios[2]);
    let n_train = n - n_val - n_test;

    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: &[usize]| {
        corpus.with_examples(range.iter().map(|&i| corpus.examples[i].clone()).collect())
    };
    Ok((
        take(&idx[..n_train]),
        take(&idx[n_train..n_train + n_val]),
        take(&idx[n_train + n_val..]),
    ))
}

/// Ground-truth generative process for recovery tests: a latent sense is
/// drawn from a prior, both sentences are bags of tokens drawn from the
/// sense's token distribution, and the marker is drawn from the sense's
/// transition row.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SyntheticSpec {
    pub k_true: usize,
    /// `k_true × n_markers`, row-stochastic.
    pub transition_true: Matrix,
    /// `k_true × n_tokens`, row-stochastic.
    pub latent_token_dists: Matrix,
    pub latent_prior_weights: Vec<f64>,
    /// Inclusive `(min, max)` sentence length in tokens.
    pub sentence_length_range: (usize, usize),
}

fn check_distribution(what: &'static str, p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(what, "entries must be finite and non-negative"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(what, format!("sums to {s}, not 1")));
    }
    Ok(())
}

impl SyntheticSpec {
    /// Senses own disjoint blocks of `tokens_per_sense` tokens. Each sense
    /// puts `1 - noise` of its mass uniformly on its own block and `noise`
    /// uniformly on the whole token vocabulary.
    pub fn with_disjoint_tokens(
        prior: Vec<f64>,
        transition: Matrix,
        tokens_per_sense: usize,
        noise: f64,
        sentence_length_range: (usize, usize),
    ) -> SyntheticSpec {
        let k = prior.len();
        let v = k * tokens_per_sense;
        let mut dists = Matrix::filled(k, v, noise / v as f64);
        for z in 0..k {
            for t in 0..tokens_per_sense {
                let c = z * tokens_per_sense + t;
                dists.set(z, c, dists.get(z, c) + (1.0 - noise) / tokens_per_sense as f64);
            }
        }
        // renormalize away rounding so rows sum to 1 within 1e-12
        for z in 0..k {
            let s: f64 = dists.row(z).iter().sum();
            dists.row_mut(z).iter_mut().for_each(|x| *x /= s);
        }
        SyntheticSpec {
            k_true: k,
            transition_true: transition,
            latent_token_dists: dists,
            latent_prior_weights: prior,
            sentence_length_range,
        }
    }

    pub fn num_markers(&self) -> usize {
        self.transition_true.cols
    }

    pub fn num_tokens(&self) -> usize {
        self.latent_token_dists.cols
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k_true;
        if k == 0 {
            return Err(Error::invalid("synthetic spec", "k_true must be at least 1"));
        }
        if self.latent_prior_weights.len() != k {
            return Err(Error::Dimension {
                what: "latent_prior_weights",
                expected: k,
                got: self.latent_prior_weights.len(),
            });
        }
        if self.transition_true.rows != k || self.transition_true.data.len() != k * self.transition_true.cols {
            return Err(Error::Dimension {
                what: "transition_true",
                expected: k,
                got: self.transition_true.rows,
            });
        }
        if self.latent_token_dists.rows != k
            || self.latent_token_dists.data.len() != k * self.latent_token_dists.cols
        {
            return Err(Error::Dimension {
                what: "latent_token_dists",
                expected: k,
                got: self.latent_token_dists.rows,
            });
        }
        if self.num_markers() == 0 || self.num_tokens() == 0 {
            return Err(Error::invalid("synthetic spec", "empty marker or token set"));
        }
        check_distribution("latent_prior_weights", &self.latent_prior_weights)?;
        for z in 0..k {
            check_distribution("transition_true row", self.transition_true.row(z))?;
            check_distribution("latent_token_dists row", self.latent_token_dists.row(z))?;
        }
        let (lo, hi) = self.sentence_length_range;
        if lo == 0 || lo > hi {
            return Err(Error::invalid(
                "sentence_length_range",
                format!("({lo}, {hi}) must satisfy 1 <= min <= max"),
            ));
        }
        Ok(())
    }

    /// Vocabularies named `t0..` (after `<unk>`) and `m0..`.
    pub fn vocabularies(&self) -> (TokenVocab, MarkerVocab) {
        let mut tokens = Vec::with_capacity(self.num_tokens() + 1);
        tokens.push(String::from(crate::vocab::UNK_TOKEN));
        tokens.extend((0..self.num_tokens()).map(|t| format!("t{t}")));
        let tv = TokenVocab::from_tokens(tokens, 0).expect("distinct synthetic tokens");
        let mut mv = MarkerVocab::new();
        for m in 0..self.num_markers() {
            mv.insert(&format!("m{m}"));
        }
        (tv, mv)
    }
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn sample_categorical<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            acc += pi;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Draws `n` examples; returns the corpus and the hidden sense of each.
pub fn generate_synthetic(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<(Corpus, Vec<usize>)> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Empty("synthetic corpus"));
    }
    let (token_vocab, marker_vocab) = spec.vocabularies();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = spec.sentence_length_range;
    let sentence = |z: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        let len = rng.gen_range(lo..=hi);
        (0..len)
            .map(|_| 1 + sample_categorical(spec.latent_token_dists.row(z), rng))
            .collect()
    };
    let mut examples = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let z = sample_categorical(&spec.latent_prior_weights, &mut rng);
        let s1 = sentence(z, &mut rng);
        let s2 = sentence(z, &mut rng);
        let marker = sample_categorical(spec.transition_true.row(z), &mut rng);
        examples.push(PairExample { s1, s2, marker });
        latent.push(z);
    }
    Ok((
        Corpus {
            examples,
            token_vocab,
            marker_vocab,
        },
        latent,
    ))
}
