//! The latent-sense bottleneck model.
//!
//! ```text
//! h_z        = W1 · h + b1
//! p(z | s)   = softmax(W2 · h_z + b2)
//! p(m | z)   = softmax(phi[z, :])
//! p(m | s)   = sum_z p(z | s) · p(m | z)
//! q(z | s,m) ∝ p(z | s) · p(m | z)
//! ```
//!
//! All probability arithmetic is done in log space with max-subtracted
//! softmax, so logits up to ±1e3 stay finite.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::encoder::{EncoderParams, PairRepresentation};
use crate::linalg::{log_softmax, log_sum_exp, softmax, top_k, Matrix};
use crate::{Error, Result};

/// Scale of the uniform init for `w1` and `w2`.
pub const INIT_SCALE: f64 = 0.1;

/// Projection, latent head and transition logits.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct DmrParams {
    /// `d × input_dim`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `K × d`; row `z` doubles as the embedding of sense `z`.
    pub w2: Matrix,
    pub b2: Vec<f64>,
    /// `K × N` transition logits.
    pub phi: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerDistribution {
    pub p: Vec<f64>,
}

impl DmrParams {
    /// `w1`, `w2` uniform in `[-0.1, 0.1]`; biases and `phi` zero.
    pub fn init<R: Rng>(k: usize, d: usize, input_dim: usize, n_markers: usize, rng: &mut R) -> Self {
        let w1 = Matrix::uniform(d, input_dim, INIT_SCALE, rng);
        let w2 = Matrix::uniform(k, d, INIT_SCALE, rng);
        DmrParams {
            w1,
            b1: alloc::vec![0.0; d],
            w2,
            b2: alloc::vec![0.0; k],
            phi: Matrix::zeros(k, n_markers),
        }
    }

    pub fn k(&self) -> usize {
        self.w2.rows
    }

    pub fn d(&self) -> usize {
        self.w1.rows
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols
    }

    pub fn n_markers(&self) -> usize {
        self.phi.cols
    }

    /// Dimension consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        let dim = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::Dimension { what, expected, got })
            }
        };
        let (k, d) = (self.k(), self.d());
        if k == 0 || self.n_markers() == 0 {
            return Err(Error::invalid("parameters", "K and N must be at least 1"));
        }
        dim("w1", d * self.w1.cols, self.w1.data.len())?;
        dim("b1", d, self.b1.len())?;
        dim("w2", d, self.w2.cols)?;
        dim("w2", k * d, self.w2.data.len())?;
        dim("b2", k, self.b2.len())?;
        dim("phi", k, self.phi.rows)?;
        dim("phi", k * self.phi.cols, self.phi.data.len())?;
        for (what, ok) in [
            ("w1", self.w1.is_finite()),
            ("b1", self.b1.iter().all(|v| v.is_finite())),
            ("w2", self.w2.is_finite()),
            ("b2", self.b2.iter().all(|v| v.is_finite())),
            ("phi", self.phi.is_finite()),
        ] {
            if !ok {
                return Err(Error::invalid(what, "non-finite entry"));
            }
        }
        Ok(())
    }

    /// `h_z = W1 · h + b1`; the pair representation handed to probes.
    pub fn compute_hz(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.input_dim() {
            return Err(Error::Dimension {
                what: "pair representation",
                expected: self.input_dim(),
                got: h.len(),
            });
        }
        let mut hz = self.w1.matvec(h);
        hz.iter_mut().zip(&self.b1).for_each(|(x, b)| *x += b);
        Ok(hz)
    }

    pub fn latent_logits(&self, hz: &[f64]) -> Vec<f64> {
        let mut l = self.w2.matvec(hz);
        l.iter_mut().zip(&self.b2).for_each(|(x, b)| *x += b);
        l
    }

    pub fn latent_distribution(&self, hz: &[f64]) -> LatentDistribution {
        LatentDistribution {
            p: softmax(&self.latent_logits(hz)),
        }
    }

    /// `ln p(z | s)`
    pub fn log_latent(&self, hz: &[f64]) -> Vec<f64> {
        log_softmax(&self.latent_logits(hz))
    }

    /// Row-wise softmax of `phi`.
    pub fn transition_matrix(&self) -> Matrix {
        let mut t = self.phi.clone();
        for z in 0..t.rows {
            let row = softmax(self.phi.row(z));
            t.row_mut(z).copy_from_slice(&row);
        }
        t
    }

    /// Row-wise log-softmax of `phi`.
    pub fn log_transition(&self) -> Matrix {
        let mut t = self.phi.clone();
        for z in 0..t.rows {
            let row = log_softmax(self.phi.row(z));
            t.row_mut(z).copy_from_slice(&row);
        }
        t
    }

    pub fn marginal_marker(&self, rep: &PairRepresentation) -> Result<MarkerDistribution> {
        let hz = self.compute_hz(&rep.h)?;
        let pz = self.latent_distribution(&hz);
        Ok(mix(&pz.p, &self.transition_matrix()))
    }

    pub fn posterior(&self, rep: &PairRepresentation, m: usize) -> Result<LatentPosterior> {
        self.check_marker(m)?;
        let hz = self.compute_hz(&rep.h)?;
        posterior_from_logs(&self.log_latent(&hz), &self.log_transition(), m)
    }

    /// `ln p(m | s)` by log-sum-exp over senses.
    pub fn log_marginal(&self, rep: &PairRepresentation, m: usize) -> Result<f64> {
        self.check_marker(m)?;
        let hz = self.compute_hz(&rep.h)?;
        log_marginal_from_logs(&self.log_latent(&hz), &self.log_transition(), m)
    }

    pub(crate) fn check_marker(&self, m: usize) -> Result<()> {
        if m >= self.n_markers() {
            return Err(Error::OutOfRange {
                what: "marker",
                value: m,
                range: format!("0..{}", self.n_markers()),
            });
        }
        Ok(())
    }
}

/// `Σ_z p(z) · T[z, :]`
pub fn mix(pz: &[f64], transition: &Matrix) -> MarkerDistribution {
    MarkerDistribution {
        p: transition.matvec_t(pz),
    }
}

pub(crate) fn log_joint(log_pz: &[f64], log_t: &Matrix, m: usize) -> Vec<f64> {
    log_pz
        .iter()
        .enumerate()
        .map(|(z, lp)| lp + log_t.get(z, m))
        .collect()
}

pub(crate) fn log_marginal_from_logs(log_pz: &[f64], log_t: &Matrix, m: usize) -> Result<f64> {
    let lse = log_sum_exp(&log_joint(log_pz, log_t, m));
    if lse == f64::NEG_INFINITY {
        return Err(Error::ZeroProbability(m));
    }
    Ok(lse)
}

pub(crate) fn posterior_from_logs(log_pz: &[f64], log_t: &Matrix, m: usize) -> Result<LatentPosterior> {
    let joint = log_joint(log_pz, log_t, m);
    let lse = log_sum_exp(&joint);
    if lse == f64::NEG_INFINITY {
        return Err(Error::ZeroProbability(m));
    }
    Ok(LatentPosterior {
        q: joint.iter().map(|&l| libm::exp(l - lse)).collect(),
    })
}

/// Encodes a pair and returns `h_z`.
pub fn pair_hz(params: &DmrParams, enc: &EncoderParams, s1: &[usize], s2: &[usize]) -> Result<Vec<f64>> {
    params.compute_hz(&enc.encode_pair(s1, s2)?.h)
}

/// Mean `ln p(m | s1, s2)` over the corpus, in nats per example.
pub fn corpus_log_likelihood(params: &DmrParams, enc: &EncoderParams, corpus: &Corpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let log_t = params.log_transition();
    let mut total = 0.0;
    for ex in &corpus.examples {
        params.check_marker(ex.marker)?;
        let hz = pair_hz(params, enc, &ex.s1, &ex.s2)?;
        total += log_marginal_from_logs(&params.log_latent(&hz), &log_t, ex.marker)?;
    }
    Ok(total / corpus.len() as f64)
}

/// Markers ranked by `p(m | s1, s2)`, descending, ties by ascending id.
pub fn predict_topk_markers(
    params: &DmrParams,
    enc: &EncoderParams,
    s1: &[usize],
    s2: &[usize],
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    if k == 0 || k > params.n_markers() {
        return Err(Error::OutOfRange {
            what: "k",
            value: k,
            range: format!("1..={}", params.n_markers()),
        });
    }
    let dist = params.marginal_marker(&enc.encode_pair(s1, s2)?)?;
    Ok(top_k(&dist.p, k))
}
