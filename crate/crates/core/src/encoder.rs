//! Bag-of-embeddings pair encoder.
//!
//! Each sentence is the mean of its token embeddings; the pair feature is
//! `[a, b, |a - b|, a ⊙ b]`, width `4 · d_e`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::linalg::{axpy, Matrix};
use crate::{Error, Result};

/// Scale of the uniform embedding initialization.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EncoderParams {
    /// `V × d_e`
    pub embeddings: Matrix,
}

/// Pair feature plus the per-sentence means needed for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRepresentation {
    pub h: Vec<f64>,
    pub mean1: Vec<f64>,
    pub mean2: Vec<f64>,
}

/// Sparse embedding gradient keyed by token id.
pub type EmbeddingGrad = BTreeMap<usize, Vec<f64>>;

impl EncoderParams {
    pub fn zeros(vocab_size: usize, d_e: usize) -> Self {
        EncoderParams {
            embeddings: Matrix::zeros(vocab_size, d_e),
        }
    }

    pub fn init<R: Rng>(vocab_size: usize, d_e: usize, rng: &mut R) -> Self {
        EncoderParams {
            embeddings: Matrix::uniform(vocab_size, d_e, INIT_SCALE, rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.rows
    }

    pub fn d_e(&self) -> usize {
        self.embeddings.cols
    }

    /// Width of the pair feature.
    pub fn output_dim(&self) -> usize {
        4 * self.d_e()
    }

    fn mean(&self, ids: &[usize]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::Empty("sentence"));
        }
        let mut m = vec![0.0; self.d_e()];
        for &id in ids {
            if id >= self.vocab_size() {
                return Err(Error::TokenOutOfRange {
                    id,
                    size: self.vocab_size(),
                });
            }
            axpy(1.0, self.embeddings.row(id), &mut m);
        }
        let inv = 1.0 / ids.len() as f64;
        m.iter_mut().for_each(|x| *x *= inv);
        Ok(m)
    }

    pub fn encode_pair(&self, s1: &[usize], s2: &[usize]) -> Result<PairRepresentation> {
        let a = self.mean(s1)?;
        let b = self.mean(s2)?;
        let mut h = Vec::with_capacity(4 * a.len());
        h.extend_from_slice(&a);
        h.extend_from_slice(&b);
        h.extend(a.iter().zip(&b).map(|(x, y)| (x - y).abs()));
        h.extend(a.iter().zip(&b).map(|(x, y)| x * y));
        Ok(PairRepresentation {
            h,
            mean1: a,
            mean2: b,
        })
    }

    /// Gradient of `upstream · h` w.r.t. the embedding rows touched by the
    /// pair. The subgradient of `|x|` at 0 is 0.
    pub fn backward(
        &self,
        rep: &PairRepresentation,
        s1: &[usize],
        s2: &[usize],
        upstream: &[f64],
    ) -> Result<EmbeddingGrad> {
        let d = self.d_e();
        if upstream.len() != 4 * d {
            return Err(Error::Dimension {
                what: "upstream gradient",
                expected: 4 * d,
                got: upstream.len(),
            });
        }
        let (g1, rest) = upstream.split_at(d);
        let (g2, rest) = rest.split_at(d);
        let (g_abs, g_prod) = rest.split_at(d);
        let mut ga = vec![0.0; d];
        let mut gb = vec![0.0; d];
        for j in 0..d {
            let (a, b) = (rep.mean1[j], rep.mean2[j]);
            let sign = if a > b {
                1.0
            } else if a < b {
                -1.0
            } else {
                0.0
            };
            ga[j] = g1[j] + sign * g_abs[j] + b * g_prod[j];
            gb[j] = g2[j] - sign * g_abs[j] + a * g_prod[j];
        }
        let mut grad = EmbeddingGrad::new();
        for (ids, g) in [(s1, &ga), (s2, &gb)] {
            let scale = 1.0 / ids.len() as f64;
            for &id in ids {
                let row = grad.entry(id).or_insert_with(|| vec![0.0; d]);
                axpy(scale, g, row);
            }
        }
        Ok(grad)
    }

    /// `embeddings += alpha · grad`
    pub fn apply(&mut self, grad: &EmbeddingGrad, alpha: f64) {
        for (&id, g) in grad {
            axpy(alpha, g, self.embeddings.row_mut(id));
        }
    }
}

/// `acc += alpha · g`, row by row.
pub fn accumulate(acc: &mut EmbeddingGrad, g: &EmbeddingGrad, alpha: f64) {
    for (&id, row) in g {
        let d = row.len();
        axpy(alpha, row, acc.entry(id).or_insert_with(|| vec![0.0; d]));
    }
}
