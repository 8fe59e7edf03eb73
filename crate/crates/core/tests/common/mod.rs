#![allow(dead_code)]

use dmr_core::{DmrParams, EncoderParams, Matrix, PairExample};
use rand::Rng;

pub fn random_vec<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Parameters with every block random, including biases and `phi`.
pub fn random_params<R: Rng>(k: usize, d: usize, input: usize, n: usize, rng: &mut R) -> DmrParams {
    DmrParams {
        w1: Matrix::uniform(d, input, 0.8, rng),
        b1: random_vec(d, 0.5, rng),
        w2: Matrix::uniform(k, d, 0.8, rng),
        b2: random_vec(k, 1.0, rng),
        phi: Matrix::uniform(k, n, 2.0, rng),
    }
}

pub fn random_encoder<R: Rng>(v: usize, d_e: usize, rng: &mut R) -> EncoderParams {
    EncoderParams {
        embeddings: Matrix::uniform(v, d_e, 1.0, rng),
    }
}

pub fn random_sentence<R: Rng>(v: usize, max_len: usize, rng: &mut R) -> Vec<usize> {
    let len = rng.gen_range(1..=max_len);
    (0..len).map(|_| rng.gen_range(0..v)).collect()
}

pub fn random_example<R: Rng>(v: usize, n: usize, rng: &mut R) -> PairExample {
    PairExample {
        s1: random_sentence(v, 6, rng),
        s2: random_sentence(v, 6, rng),
        marker: rng.gen_range(0..n),
    }
}

/// `|a - b| / max(|a|, |b|, floor)`
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
