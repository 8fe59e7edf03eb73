//! Latent-space inspection: sense→marker and marker→sense rankings, sense
//! embeddings with a 2-D PCA projection, prediction entropy and the
//! entanglement confusion matrix.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::Corpus;
use crate::encoder::EncoderParams;
use crate::linalg::{argsort_desc, axpy, dot, entropy, norm, top_k, Matrix};
use crate::model::{pair_hz, DmrParams};
use crate::{Error, Result};

pub const POWER_ITERATIONS: usize = 500;
pub const POWER_TOLERANCE: f64 = 1e-10;

fn check_range(what: &'static str, value: usize, lo: usize, hi: usize) -> Result<()> {
    if value < lo || value > hi {
        return Err(Error::OutOfRange {
            what,
            value,
            range: format!("{lo}..={hi}"),
        });
    }
    Ok(())
}

/// Top-`k` markers of transition row `z`.
pub fn z2m_top_markers(params: &DmrParams, z: usize, k: usize) -> Result<Vec<(usize, f64)>> {
    check_range("z", z, 0, params.k().saturating_sub(1))?;
    check_range("k", k, 0, params.n_markers())?;
    let row = crate::linalg::softmax(params.phi.row(z));
    Ok(top_k(&row, k))
}

/// Top-`k` senses for marker `m`, scored by `prior(z) · p(m | z)`
/// normalized over senses.
pub fn m2z_top_clusters(params: &DmrParams, prior: &[f64], m: usize, k: usize) -> Result<Vec<(usize, f64)>> {
    params.check_marker(m)?;
    check_range("k", k, 0, params.k())?;
    if prior.len() != params.k() {
        return Err(Error::Dimension {
            what: "latent prior",
            expected: params.k(),
            got: prior.len(),
        });
    }
    if prior.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("latent prior", "not a probability vector"));
    }
    let t = params.transition_matrix();
    let mut scores: Vec<f64> = prior.iter().enumerate().map(|(z, p)| p * t.get(z, m)).collect();
    let total: f64 = scores.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Degenerate("all sense scores are zero"));
    }
    scores.iter_mut().for_each(|s| *s /= total);
    Ok(top_k(&scores, k))
}

/// Mean `p(z | s1, s2)` over the corpus.
pub fn empirical_latent_prior(params: &DmrParams, enc: &EncoderParams, corpus: &Corpus) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut acc = vec![0.0; params.k()];
    for ex in &corpus.examples {
        let hz = pair_hz(params, enc, &ex.s1, &ex.s2)?;
        axpy(1.0, &params.latent_distribution(&hz).p, &mut acc);
    }
    let inv = 1.0 / corpus.len() as f64;
    acc.iter_mut().for_each(|x| *x *= inv);
    Ok(acc)
}

/// Rows of `w2`, one per sense, labelled with each sense's top markers.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentEmbeddingSet {
    pub vectors: Matrix,
    pub labels: Vec<Vec<usize>>,
}

pub fn latent_embeddings(params: &DmrParams, top_labels: usize) -> Result<LatentEmbeddingSet> {
    check_range("top_labels", top_labels, 0, params.n_markers())?;
    let labels = (0..params.k())
        .map(|z| z2m_top_markers(params, z, top_labels).map(|r| r.into_iter().map(|(m, _)| m).collect()))
        .collect::<Result<_>>()?;
    Ok(LatentEmbeddingSet {
        vectors: params.w2.clone(),
        labels,
    })
}

/// Dominant eigenvector of a symmetric PSD matrix by power iteration,
/// orthogonalized against `against` on every step.
fn power_iteration(c: &Matrix, against: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let n = c.rows;
    let orthogonalize = |v: &mut Vec<f64>| {
        for u in against {
            let p = dot(v, u);
            axpy(-p, u, v);
        }
    };
    // start from the column of largest norm, falling back to basis vectors
    let mut starts: Vec<Vec<f64>> = (0..n).map(|j| c.row(j).to_vec()).collect();
    starts.sort_by(|a, b| norm(b).partial_cmp(&norm(a)).unwrap_or(core::cmp::Ordering::Equal));
    starts.extend((0..n).map(|j| {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        e
    }));
    let mut v = Vec::new();
    for mut s in starts {
        orthogonalize(&mut s);
        let len = norm(&s);
        if len > 1e-12 {
            s.iter_mut().for_each(|x| *x /= len);
            v = s;
            break;
        }
    }
    if v.is_empty() {
        return (vec![0.0; n], 0.0);
    }
    // below this the deflated operator is numerically zero
    let null = 1e-12 * norm(&c.data);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let mut w = c.matvec(&v);
        orthogonalize(&mut w);
        let len = norm(&w);
        if len <= null {
            // v lies in the null space of the deflated matrix
            return (v, 0.0);
        }
        w.iter_mut().for_each(|x| *x /= len);
        let delta = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        lambda = len;
        if delta < POWER_TOLERANCE {
            break;
        }
    }
    (v, lambda)
}

/// Principal directions as rows of a `2 × d` matrix, with the first
/// nonzero coordinate of each made positive.
pub fn principal_directions(embeddings: &Matrix) -> Result<Matrix> {
    let centered = center(embeddings)?;
    let d = centered.cols;
    let mut cov = Matrix::zeros(d, d);
    for row in centered.row_iter() {
        cov.add_outer(1.0 / centered.rows as f64, row, row);
    }
    if cov.data.iter().all(|&x| x == 0.0) {
        return Err(Error::Degenerate("embeddings have zero variance"));
    }
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(2);
    for _ in 0..2.min(d) {
        let (mut v, _) = power_iteration(&cov, &dirs);
        if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12) {
            if first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        dirs.push(v);
    }
    while dirs.len() < 2 {
        dirs.push(vec![0.0; d]);
    }
    Ok(Matrix::from_rows(&dirs))
}

fn center(m: &Matrix) -> Result<Matrix> {
    if m.rows < 2 {
        return Err(Error::OutOfRange {
            what: "number of embeddings",
            value: m.rows,
            range: "2..".into(),
        });
    }
    let mut mean = vec![0.0; m.cols];
    for row in m.row_iter() {
        axpy(1.0 / m.rows as f64, row, &mut mean);
    }
    let mut c = m.clone();
    for r in 0..c.rows {
        axpy(-1.0, &mean, c.row_mut(r));
    }
    Ok(c)
}

/// PCA to two dimensions: `K × 2` coordinates of the centered rows.
pub fn project_2d(embeddings: &Matrix) -> Result<Matrix> {
    let dirs = principal_directions(embeddings)?;
    let centered = center(embeddings)?;
    let mut out = Matrix::zeros(centered.rows, 2);
    for (r, row) in centered.row_iter().enumerate() {
        out.set(r, 0, dot(row, dirs.row(0)));
        out.set(r, 1, dot(row, dirs.row(1)));
    }
    Ok(out)
}

/// Entropy in nats.
pub fn prediction_entropy(dist: &[f64]) -> f64 {
    entropy(dist)
}

/// Symmetric class-pair weights accumulated over the most uncertain
/// predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub weights: Matrix,
    /// Input indices of the selected distributions, most uncertain first.
    pub examples: Vec<usize>,
}

/// Picks the `n_top_entropy` highest-entropy distributions (ties by input
/// order); within each, for every unordered pair of its `top_m` classes
/// adds `p_i · p_j` to `weights[i][j]` and `weights[j][i]`.
///
/// `suppress[e][c] == true` drops class `c` from example `e`'s candidates.
pub fn confusion_weights(
    dists: &[Vec<f64>],
    top_m: usize,
    n_top_entropy: usize,
    suppress: Option<&[Vec<bool>]>,
) -> Result<ConfusionMatrix> {
    let c = dists.first().map_or(0, Vec::len);
    if let Some(bad) = dists.iter().find(|d| d.len() != c) {
        return Err(Error::Dimension {
            what: "distribution",
            expected: c,
            got: bad.len(),
        });
    }
    check_range("top_m", top_m, 0, c)?;
    check_range("n_top_entropy", n_top_entropy, 0, dists.len())?;
    if let Some(mask) = suppress {
        if mask.len() != dists.len() || mask.iter().any(|m| m.len() != c) {
            return Err(Error::invalid("suppression mask", "shape must match the distributions"));
        }
    }

    let entropies: Vec<f64> = dists.iter().map(|d| entropy(d)).collect();
    let order = argsort_desc(&entropies);
    let selected: Vec<usize> = order.into_iter().take(n_top_entropy).collect();

    let mut weights = Matrix::zeros(c, c);
    for &e in &selected {
        let dist = &dists[e];
        let top: Vec<usize> = argsort_desc(dist)
            .into_iter()
            .filter(|&cls| suppress.is_none_or(|m| !m[e][cls]))
            .take(top_m)
            .collect();
        for (a, &i) in top.iter().enumerate() {
            for &j in &top[a + 1..] {
                let w = dist[i] * dist[j];
                weights.set(i, j, weights.get(i, j) + w);
                weights.set(j, i, weights.get(j, i) + w);
            }
        }
    }
    Ok(ConfusionMatrix {
        weights,
        examples: selected,
    })
}
