//! Mini-batch EM training.
//!
//! Each EM iteration takes one batch of examples and
//!
//! 1. freezes the posteriors `q(z | s1, s2, m)` under the current parameters,
//! 2. sweeps the batch once in mini-batches, descending the expected
//!    complete-data NLL `-Σ_z q(z) ln[p(z | s) p(m | z)]` in the encoder,
//!    projection and latent head (`phi` held fixed),
//! 3. updates `phi` against the updated encoder, either by descending the
//!    marginal NLL `-ln p(m | s)` or by the exact closed-form maximizer of
//!    `Σ q(z) ln p(m | z)`.
//!
//! The ψ objective differs from `KL(q || p(m, z | s))` only by the entropy
//! of `q`, which is constant during the step, so the gradients coincide.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PairExample};
use crate::encoder::{accumulate, EmbeddingGrad, EncoderParams};
use crate::linalg::{axpy, log_sum_exp, Matrix};
use crate::model::{corpus_log_likelihood, log_marginal_from_logs, posterior_from_logs, DmrParams, LatentPosterior};
use crate::{Error, Result};

/// Floor for log-probabilities written by the closed-form `phi` update, so
/// that zero-count transitions stay finite. `exp(-1e3)` underflows to 0.
pub const LOG_PROB_FLOOR: f64 = -1.0e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum PhiUpdateMode {
    Gradient,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TrainConfig {
    /// Number of latent senses.
    pub k: usize,
    /// Bottleneck width.
    pub d: usize,
    /// Token embedding width.
    pub d_e: usize,
    pub lr_psi: f64,
    pub lr_phi: f64,
    pub em_batch_size: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub phi_update_mode: PhiUpdateMode,
    pub phi_smoothing: f64,
    /// Held-out evaluation period, in EM iterations.
    pub eval_every: usize,
    /// Stop after this many consecutive held-out evaluations without an
    /// improvement of at least `min_delta`.
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 30,
            d: 32,
            d_e: 32,
            lr_psi: 3e-5,
            lr_phi: 1e-2,
            em_batch_size: 500,
            minibatch_size: 32,
            epochs: 3,
            seed: 0,
            phi_update_mode: PhiUpdateMode::Gradient,
            phi_smoothing: 1e-3,
            eval_every: 10,
            patience: 3,
            min_delta: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("k", self.k),
            ("d", self.d),
            ("d_e", self.d_e),
            ("em_batch_size", self.em_batch_size),
            ("minibatch_size", self.minibatch_size),
            ("eval_every", self.eval_every),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::invalid(what, "must be at least 1"));
            }
        }
        if self.minibatch_size > self.em_batch_size {
            return Err(Error::invalid("minibatch_size", "must not exceed em_batch_size"));
        }
        for (what, v) in [
            ("lr_psi", self.lr_psi),
            ("lr_phi", self.lr_phi),
            ("phi_smoothing", self.phi_smoothing),
            ("min_delta", self.min_delta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(what, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// One EM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub batch_size: usize,
    /// Mean NLL on the EM batch before the iteration.
    pub nll_before: f64,
    /// Mean NLL on the EM batch after the iteration.
    pub nll_after: f64,
    pub psi_loss: f64,
    /// Marginal NLL reported by the gradient `phi` step; `None` in closed form.
    pub phi_loss: Option<f64>,
    pub heldout_nll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<IterationRecord>,
    /// Held-out mean NLL of the initialization.
    pub initial_heldout_nll: Option<f64>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn final_heldout_nll(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.heldout_nll)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: DmrParams,
    pub encoder: EncoderParams,
    pub history: TrainHistory,
}

/// Gradient of the ψ objective.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiGrad {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub embeddings: EmbeddingGrad,
}

impl PsiGrad {
    fn zeros(params: &DmrParams) -> Self {
        PsiGrad {
            w1: Matrix::zeros(params.w1.rows, params.w1.cols),
            b1: vec![0.0; params.b1.len()],
            w2: Matrix::zeros(params.w2.rows, params.w2.cols),
            b2: vec![0.0; params.b2.len()],
            embeddings: EmbeddingGrad::new(),
        }
    }

    fn scale(&mut self, s: f64) {
        self.w1.data.iter_mut().for_each(|x| *x *= s);
        self.b1.iter_mut().for_each(|x| *x *= s);
        self.w2.data.iter_mut().for_each(|x| *x *= s);
        self.b2.iter_mut().for_each(|x| *x *= s);
        self.embeddings.values_mut().flatten().for_each(|x| *x *= s);
    }

    /// Applies `params -= lr · grad`.
    fn descend(&self, params: &mut DmrParams, enc: &mut EncoderParams, lr: f64) {
        axpy(-lr, &self.w1.data, &mut params.w1.data);
        axpy(-lr, &self.b1, &mut params.b1);
        axpy(-lr, &self.w2.data, &mut params.w2.data);
        axpy(-lr, &self.b2, &mut params.b2);
        enc.apply(&self.embeddings, -lr);
    }
}

fn check_aligned(batch: &[PairExample], posteriors: &[LatentPosterior]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if batch.len() != posteriors.len() {
        return Err(Error::Dimension {
            what: "posteriors",
            expected: batch.len(),
            got: posteriors.len(),
        });
    }
    Ok(())
}

/// Posteriors for every example under the given (frozen) parameters.
pub fn e_step(params: &DmrParams, enc: &EncoderParams, batch: &[PairExample]) -> Result<Vec<LatentPosterior>> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let log_t = params.log_transition();
    batch
        .iter()
        .map(|ex| {
            params.check_marker(ex.marker)?;
            let hz = params.compute_hz(&enc.encode_pair(&ex.s1, &ex.s2)?.h)?;
            posterior_from_logs(&params.log_latent(&hz), &log_t, ex.marker)
        })
        .collect()
}

/// Adds one example's ψ gradient into `grad`, returns its loss.
fn psi_example(
    params: &DmrParams,
    enc: &EncoderParams,
    log_t: &Matrix,
    ex: &PairExample,
    q: &[f64],
    grad: &mut PsiGrad,
) -> Result<f64> {
    params.check_marker(ex.marker)?;
    if q.len() != params.k() {
        return Err(Error::Dimension {
            what: "posterior",
            expected: params.k(),
            got: q.len(),
        });
    }
    let rep = enc.encode_pair(&ex.s1, &ex.s2)?;
    let hz = params.compute_hz(&rep.h)?;
    let log_pz = params.log_latent(&hz);

    let mut loss = 0.0;
    for (z, &qz) in q.iter().enumerate() {
        if qz != 0.0 {
            loss -= qz * (log_pz[z] + log_t.get(z, ex.marker));
        }
    }
    let q_mass: f64 = q.iter().sum();
    let g_logits: Vec<f64> = log_pz
        .iter()
        .zip(q)
        .map(|(&lp, &qz)| libm::exp(lp) * q_mass - qz)
        .collect();

    grad.w2.add_outer(1.0, &g_logits, &hz);
    axpy(1.0, &g_logits, &mut grad.b2);
    let g_hz = params.w2.matvec_t(&g_logits);
    grad.w1.add_outer(1.0, &g_hz, &rep.h);
    axpy(1.0, &g_hz, &mut grad.b1);
    let g_h = params.w1.matvec_t(&g_hz);
    let g_emb = enc.backward(&rep, &ex.s1, &ex.s2, &g_h)?;
    accumulate(&mut grad.embeddings, &g_emb, 1.0);
    Ok(loss)
}

/// Mean ψ loss over `batch` and its gradient.
pub fn psi_gradient(
    params: &DmrParams,
    enc: &EncoderParams,
    batch: &[PairExample],
    posteriors: &[LatentPosterior],
) -> Result<(f64, PsiGrad)> {
    check_aligned(batch, posteriors)?;
    let log_t = params.log_transition();
    let mut grad = PsiGrad::zeros(params);
    let mut loss = 0.0;
    for (ex, q) in batch.iter().zip(posteriors) {
        loss += psi_example(params, enc, &log_t, ex, &q.q, &mut grad)?;
    }
    let inv = 1.0 / batch.len() as f64;
    grad.scale(inv);
    Ok((loss * inv, grad))
}

/// Mean ψ loss only.
pub fn psi_loss(
    params: &DmrParams,
    enc: &EncoderParams,
    batch: &[PairExample],
    posteriors: &[LatentPosterior],
) -> Result<f64> {
    psi_gradient(params, enc, batch, posteriors).map(|(l, _)| l)
}

fn gather<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// One sweep of mini-batch gradient descent on the ψ objective, visiting
/// the batch in `order`. Returns the mean pre-update mini-batch loss.
pub fn psi_step(
    params: &mut DmrParams,
    enc: &mut EncoderParams,
    batch: &[PairExample],
    posteriors: &[LatentPosterior],
    config: &TrainConfig,
    order: &[usize],
) -> Result<f64> {
    check_aligned(batch, posteriors)?;
    let mut total = 0.0;
    for chunk in order.chunks(config.minibatch_size.max(1)) {
        let (loss, grad) = psi_gradient(params, enc, &gather(batch, chunk), &gather(posteriors, chunk))?;
        if !loss.is_finite() {
            return Err(Error::Degenerate("non-finite psi loss"));
        }
        grad.descend(params, enc, config.lr_psi);
        total += loss * chunk.len() as f64;
    }
    Ok(total / order.len().max(1) as f64)
}

/// Mean marginal NLL over examples with cached `ln p(z | s)`, and its
/// gradient w.r.t. `phi`.
fn phi_gradient_cached(params: &DmrParams, log_pz: &[Vec<f64>], markers: &[usize]) -> Result<(f64, Matrix)> {
    let log_t = params.log_transition();
    let t = params.transition_matrix();
    let mut grad = Matrix::zeros(params.k(), params.n_markers());
    let mut loss = 0.0;
    for (lp, &m) in log_pz.iter().zip(markers) {
        params.check_marker(m)?;
        let joint: Vec<f64> = lp.iter().enumerate().map(|(z, l)| l + log_t.get(z, m)).collect();
        let lse = log_sum_exp(&joint);
        if lse == f64::NEG_INFINITY {
            return Err(Error::ZeroProbability(m));
        }
        loss -= lse;
        for (z, j) in joint.iter().enumerate() {
            let r = libm::exp(j - lse);
            if r == 0.0 {
                continue;
            }
            let row = grad.row_mut(z);
            axpy(r, t.row(z), row);
            row[m] -= r;
        }
    }
    let inv = 1.0 / markers.len() as f64;
    grad.data.iter_mut().for_each(|x| *x *= inv);
    Ok((loss * inv, grad))
}

fn batch_log_latent(params: &DmrParams, enc: &EncoderParams, batch: &[PairExample]) -> Result<Vec<Vec<f64>>> {
    batch
        .iter()
        .map(|ex| {
            let hz = params.compute_hz(&enc.encode_pair(&ex.s1, &ex.s2)?.h)?;
            Ok(params.log_latent(&hz))
        })
        .collect()
}

/// Mean marginal NLL `-ln p(m | s)` over `batch` and its gradient w.r.t.
/// `phi`.
pub fn phi_gradient(params: &DmrParams, enc: &EncoderParams, batch: &[PairExample]) -> Result<(f64, Matrix)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let log_pz = batch_log_latent(params, enc, batch)?;
    let markers: Vec<usize> = batch.iter().map(|e| e.marker).collect();
    phi_gradient_cached(params, &log_pz, &markers)
}

/// One sweep of mini-batch gradient descent on the marginal NLL w.r.t.
/// `phi` only. Returns the mean pre-update mini-batch loss.
pub fn phi_step_gradient(
    params: &mut DmrParams,
    enc: &EncoderParams,
    batch: &[PairExample],
    config: &TrainConfig,
    order: &[usize],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let log_pz = batch_log_latent(params, enc, batch)?;
    let markers: Vec<usize> = batch.iter().map(|e| e.marker).collect();
    let mut total = 0.0;
    for chunk in order.chunks(config.minibatch_size.max(1)) {
        let (loss, grad) = phi_gradient_cached(params, &gather(&log_pz, chunk), &gather(&markers, chunk))?;
        if !loss.is_finite() {
            return Err(Error::Degenerate("non-finite phi loss"));
        }
        axpy(-config.lr_phi, &grad.data, &mut params.phi.data);
        total += loss * chunk.len() as f64;
    }
    Ok(total / order.len().max(1) as f64)
}

/// Exact maximizer of `Σ_examples Σ_z q(z) ln p(m | z)` over row-stochastic
/// transitions, with additive `smoothing` on every count. Returns the new
/// logits (log-probabilities, floored at [`LOG_PROB_FLOOR`]).
pub fn phi_step_closed_form(
    batch: &[PairExample],
    posteriors: &[LatentPosterior],
    phi: &Matrix,
    smoothing: f64,
) -> Result<Matrix> {
    check_aligned(batch, posteriors)?;
    let (k, n) = (phi.rows, phi.cols);
    let mut counts = Matrix::filled(k, n, smoothing);
    for (ex, q) in batch.iter().zip(posteriors) {
        if ex.marker >= n {
            return Err(Error::OutOfRange {
                what: "marker",
                value: ex.marker,
                range: alloc::format!("0..{n}"),
            });
        }
        if q.q.len() != k {
            return Err(Error::Dimension {
                what: "posterior",
                expected: k,
                got: q.q.len(),
            });
        }
        for (z, &qz) in q.q.iter().enumerate() {
            counts.set(z, ex.marker, counts.get(z, ex.marker) + qz);
        }
    }
    for z in 0..k {
        let row = counts.row_mut(z);
        let total: f64 = row.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::EmptySense(z));
        }
        for c in row.iter_mut() {
            *c = if *c > 0.0 {
                libm::log(*c / total).max(LOG_PROB_FLOOR)
            } else {
                LOG_PROB_FLOOR
            };
        }
    }
    Ok(counts)
}

/// Mean `-ln p(m | s)` over `batch`.
pub fn batch_nll(params: &DmrParams, enc: &EncoderParams, batch: &[PairExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let log_t = params.log_transition();
    let mut total = 0.0;
    for ex in batch {
        params.check_marker(ex.marker)?;
        let hz = params.compute_hz(&enc.encode_pair(&ex.s1, &ex.s2)?.h)?;
        total -= log_marginal_from_logs(&params.log_latent(&hz), &log_t, ex.marker)?;
    }
    Ok(total / batch.len() as f64)
}

/// Seeded initialization: embeddings first, then `w1`, `w2`.
pub fn initialize(config: &TrainConfig, vocab_size: usize, n_markers: usize) -> (DmrParams, EncoderParams, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let enc = EncoderParams::init(vocab_size, config.d_e, &mut rng);
    let params = DmrParams::init(config.k, config.d, 4 * config.d_e, n_markers, &mut rng);
    (params, enc, rng)
}

fn at_iteration(iteration: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Degenerate(_) => Error::NonFiniteLoss { iteration },
        e => e,
    }
}

/// Runs EM for `config.epochs` passes over `corpus`, stopping early when the
/// held-out NLL stalls.
pub fn train(config: &TrainConfig, corpus: &Corpus, heldout: Option<&Corpus>) -> Result<TrainOutput> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    corpus.validate()?;
    let n_markers = corpus.num_markers();
    if let Some(h) = heldout {
        h.validate()?;
        if h.is_empty() {
            return Err(Error::Empty("held-out corpus"));
        }
        if h.num_markers() != n_markers {
            return Err(Error::Dimension {
                what: "held-out marker vocabulary",
                expected: n_markers,
                got: h.num_markers(),
            });
        }
    }

    let (mut params, mut enc, mut rng) = initialize(config, corpus.token_vocab.len(), n_markers);
    let mut history = TrainHistory::default();
    let eval = |p: &DmrParams, e: &EncoderParams| -> Result<Option<f64>> {
        heldout.map(|h| corpus_log_likelihood(p, e, h).map(|ll| -ll)).transpose()
    };
    history.initial_heldout_nll = eval(&params, &enc)?;
    let mut best = history.initial_heldout_nll.unwrap_or(f64::INFINITY);
    let mut stale = 0;

    let mut iteration = 0;
    let mut indices: Vec<usize> = (0..corpus.len()).collect();
    'epochs: for epoch in 0..config.epochs {
        indices.shuffle(&mut rng);
        let n_batches = indices.len().div_ceil(config.em_batch_size);
        for (b, chunk) in indices.chunks(config.em_batch_size).enumerate() {
            let batch = gather(&corpus.examples, chunk);
            let nll_before = batch_nll(&params, &enc, &batch)?;
            let posteriors = e_step(&params, &enc, &batch)?;

            let mut order: Vec<usize> = (0..batch.len()).collect();
            order.shuffle(&mut rng);
            let psi_loss = psi_step(&mut params, &mut enc, &batch, &posteriors, config, &order)
                .map_err(at_iteration(iteration))?;
            let phi_loss = match config.phi_update_mode {
                PhiUpdateMode::Gradient => Some(
                    phi_step_gradient(&mut params, &enc, &batch, config, &order)
                        .map_err(at_iteration(iteration))?,
                ),
                PhiUpdateMode::ClosedForm => {
                    params.phi = phi_step_closed_form(&batch, &posteriors, &params.phi, config.phi_smoothing)?;
                    None
                }
            };
            let nll_after = batch_nll(&params, &enc, &batch)?;
            if !nll_after.is_finite() {
                return Err(Error::NonFiniteLoss { iteration });
            }

            let last = epoch + 1 == config.epochs && b + 1 == n_batches;
            let heldout_nll = if (iteration + 1) % config.eval_every == 0 || last {
                eval(&params, &enc)?
            } else {
                None
            };
            history.records.push(IterationRecord {
                iteration,
                epoch,
                batch_size: batch.len(),
                nll_before,
                nll_after,
                psi_loss,
                phi_loss,
                heldout_nll,
            });
            iteration += 1;

            if let Some(h) = heldout_nll {
                if h < best - config.min_delta {
                    best = h;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= config.patience {
                        history.stopped_early = true;
                        break 'epochs;
                    }
                }
            }
        }
    }
    Ok(TrainOutput {
        params,
        encoder: enc,
        history,
    })
}
