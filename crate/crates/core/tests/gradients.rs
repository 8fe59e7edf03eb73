//! Central finite differences (step 1e-5) against every analytic gradient.

mod common;

use common::*;
use dmr_core::em::{phi_gradient, psi_gradient, psi_loss};
use dmr_core::linalg::{dot, softmax};
use dmr_core::probe::{probe_gradient, ProbeParams};
use dmr_core::{DmrParams, EncoderParams, LatentPosterior, Matrix, PairExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn central<F: Fn(f64) -> f64>(f: F) -> f64 {
    (f(STEP) - f(-STEP)) / (2.0 * STEP)
}

/// No coordinate of the two sentence means closer than `gap`, so the
/// `|a - b|` block is differentiable at the test point.
fn away_from_kink(enc: &EncoderParams, ex: &PairExample, gap: f64) -> bool {
    let r = enc.encode_pair(&ex.s1, &ex.s2).unwrap();
    r.mean1.iter().zip(&r.mean2).all(|(a, b)| (a - b).abs() > gap)
}

fn sample_kink_free<R: Rng>(enc: &EncoderParams, n: usize, rng: &mut R) -> Option<PairExample> {
    (0..200)
        .map(|_| random_example(enc.vocab_size(), n, rng))
        .find(|ex| away_from_kink(enc, ex, 1e-3))
}

#[test]
fn encoder_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut checked = 0;
    for case in 0..120 {
        let d_e = rng.gen_range(1..=8);
        let v = rng.gen_range(2..=7);
        let enc = random_encoder(v, d_e, &mut rng);
        let Some(mut ex) = sample_kink_free(&enc, 1, &mut rng) else {
            continue;
        };
        if case % 4 == 0 {
            // force a shared token
            let t = ex.s1[0];
            ex.s2.push(t);
            if !away_from_kink(&enc, &ex, 1e-3) {
                continue;
            }
        }
        let upstream = random_vec(4 * d_e, 1.0, &mut rng);
        let rep = enc.encode_pair(&ex.s1, &ex.s2).unwrap();
        let grad = enc.backward(&rep, &ex.s1, &ex.s2, &upstream).unwrap();
        for tok in 0..v {
            for j in 0..d_e {
                let num = central(|eps| {
                    let mut e = enc.clone();
                    let x = e.embeddings.get(tok, j);
                    e.embeddings.set(tok, j, x + eps);
                    dot(&upstream, &e.encode_pair(&ex.s1, &ex.s2).unwrap().h)
                });
                let ana = grad.get(&tok).map_or(0.0, |g| g[j]);
                assert!(rel_err(ana, num) <= TOL, "case {case} tok {tok} j {j}: {ana} vs {num}");
            }
        }
        checked += 1;
    }
    assert!(checked >= 100);
}

#[test]
fn shared_token_accumulates_both_branches() {
    let enc = EncoderParams {
        embeddings: Matrix::from_rows(&[[0.3, -0.2], [0.9, 0.4], [-0.5, 0.1]]),
    };
    let (s1, s2) = (vec![0, 1], vec![1, 2]);
    let upstream = [1.0, 0.5, -0.3, 0.2, 0.7, -0.4, 0.25, 0.6];
    let rep = enc.encode_pair(&s1, &s2).unwrap();
    let g = enc.backward(&rep, &s1, &s2, &upstream).unwrap();
    let only_s1 = enc.backward(&rep, &s1, &[2], &upstream).unwrap();
    for j in 0..2 {
        let num = central(|eps| {
            let mut e = enc.clone();
            e.embeddings.set(1, j, e.embeddings.get(1, j) + eps);
            dot(&upstream, &e.encode_pair(&s1, &s2).unwrap().h)
        });
        assert!(rel_err(g[&1][j], num) <= TOL);
        assert!((g[&1][j] - only_s1[&1][j]).abs() > 1e-6);
    }
}

struct Problem {
    params: DmrParams,
    enc: EncoderParams,
    batch: Vec<PairExample>,
    posteriors: Vec<LatentPosterior>,
}

fn problem<R: Rng>(rng: &mut R) -> Problem {
    loop {
        if let Some(p) = try_problem(rng) {
            return p;
        }
    }
}

fn try_problem<R: Rng>(rng: &mut R) -> Option<Problem> {
    let (k, n) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
    let (d, d_e) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
    let v = rng.gen_range(2..=6);
    let enc = random_encoder(v, d_e, rng);
    let params = random_params(k, d, 4 * d_e, n, rng);
    let batch = (0..rng.gen_range(1..=4))
        .map(|_| sample_kink_free(&enc, n, rng))
        .collect::<Option<Vec<_>>>()?;
    let posteriors = batch
        .iter()
        .map(|_| LatentPosterior {
            q: softmax(&random_vec(k, 2.0, rng)),
        })
        .collect();
    Some(Problem {
        params,
        enc,
        batch,
        posteriors,
    })
}

fn check_block<F>(label: &str, analytic: &[f64], len: usize, loss_with: F)
where
    F: Fn(usize, f64) -> f64,
{
    for i in 0..len {
        let num = central(|eps| loss_with(i, eps));
        assert!(
            rel_err(analytic[i], num) <= TOL,
            "{label}[{i}]: analytic {} vs numeric {num}",
            analytic[i]
        );
    }
}

#[test]
fn psi_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let pr = problem(&mut rng);
        let (_, g) = psi_gradient(&pr.params, &pr.enc, &pr.batch, &pr.posteriors).unwrap();
        let loss = |p: &DmrParams, e: &EncoderParams| psi_loss(p, e, &pr.batch, &pr.posteriors).unwrap();
        let perturbed = |f: &dyn Fn(&mut DmrParams)| {
            let mut p = pr.params.clone();
            f(&mut p);
            loss(&p, &pr.enc)
        };
        check_block("w1", &g.w1.data, g.w1.data.len(), |i, eps| perturbed(&|p| p.w1.data[i] += eps));
        check_block("b1", &g.b1, g.b1.len(), |i, eps| perturbed(&|p| p.b1[i] += eps));
        check_block("w2", &g.w2.data, g.w2.data.len(), |i, eps| perturbed(&|p| p.w2.data[i] += eps));
        check_block("b2", &g.b2, g.b2.len(), |i, eps| perturbed(&|p| p.b2[i] += eps));

        let d_e = pr.enc.d_e();
        let mut dense = vec![0.0; pr.enc.embeddings.data.len()];
        for (&tok, row) in &g.embeddings {
            dense[tok * d_e..(tok + 1) * d_e].copy_from_slice(row);
        }
        check_block("embeddings", &dense, dense.len(), |i, eps| {
            let mut e = pr.enc.clone();
            e.embeddings.data[i] += eps;
            loss(&pr.params, &e)
        });
    }
}

#[test]
fn phi_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..60 {
        let pr = problem(&mut rng);
        let (_, g) = phi_gradient(&pr.params, &pr.enc, &pr.batch).unwrap();
        check_block("phi", &g.data, g.data.len(), |i, eps| {
            let mut p = pr.params.clone();
            p.phi.data[i] += eps;
            phi_gradient(&p, &pr.enc, &pr.batch).unwrap().0
        });
    }
}

#[test]
fn probe_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..60 {
        let (c, d, n) = (rng.gen_range(2..=5), rng.gen_range(1..=6), rng.gen_range(1..=8));
        let probe = ProbeParams {
            w: Matrix::uniform(c, d, 1.0, &mut rng),
            b: random_vec(c, 1.0, &mut rng),
        };
        let reps: Vec<_> = (0..n).map(|_| random_vec(d, 2.0, &mut rng)).collect();
        let labels: Vec<_> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let (_, g) = probe_gradient(&probe, &reps, &labels).unwrap();
        let loss = |p: &ProbeParams| probe_gradient(p, &reps, &labels).unwrap().0;
        check_block("w", &g.w.data, g.w.data.len(), |i, eps| {
            let mut p = probe.clone();
            p.w.data[i] += eps;
            loss(&p)
        });
        check_block("b", &g.b, g.b.len(), |i, eps| {
            let mut p = probe.clone();
            p.b[i] += eps;
            loss(&p)
        });
    }
}
