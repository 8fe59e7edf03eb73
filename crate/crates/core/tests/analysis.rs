mod common;

use common::*;
use dmr_core::analysis::{
    confusion_weights, empirical_latent_prior, latent_embeddings, m2z_top_clusters, prediction_entropy, project_2d,
    z2m_top_markers,
};
use dmr_core::linalg::{argsort_desc, softmax};
use dmr_core::{Corpus, Matrix, PairExample, TokenVocab};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Top-2 eigenpairs of the covariance from a dense symmetric solver.
fn eigen_oracle(m: &Matrix) -> (Vec<f64>, Vec<Vec<f64>>, DMatrix<f64>) {
    let x = DMatrix::from_row_slice(m.rows, m.cols, &m.data);
    let mean = x.row_mean();
    let mut c = x.clone();
    for mut r in c.row_iter_mut() {
        r -= &mean;
    }
    let cov = c.transpose() * &c / m.rows as f64;
    let eig = SymmetricEigen::new(cov);
    let mut idx: Vec<usize> = (0..m.cols).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = idx.iter().take(2).map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
    (vals, vecs, c)
}

#[test]
fn pca_matches_dense_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let m = Matrix::uniform(6, 4, 1.0, &mut rng);
        let got = project_2d(&m).unwrap();
        let (vals, vecs, centered) = eigen_oracle(&m);

        for (col, v) in vecs.iter().enumerate() {
            let want: Vec<f64> = centered.row_iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect();
            let sign = if want.iter().zip(0..).map(|(w, r)| w * got.get(r, col)).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            for r in 0..6 {
                assert!((got.get(r, col) - sign * want[r]).abs() < 1e-6);
            }
        }

        let total: f64 = centered.iter().map(|x| x * x).sum();
        let kept: f64 = got.data.iter().map(|x| x * x).sum();
        let residual_oracle = 6.0 * (vals[2] + vals[3]);
        assert!(((total - kept) - residual_oracle).abs() < 1e-6);
    }
}

fn pairwise(m: &Matrix) -> Vec<f64> {
    let mut out = vec![];
    for i in 0..m.rows {
        for j in i + 1..m.rows {
            let d: f64 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            out.push(d.sqrt());
        }
    }
    out
}

#[test]
fn planar_points_keep_their_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let mut m = Matrix::zeros(7, 5);
        for r in 0..7 {
            m.set(r, 1, rng.gen_range(-3.0..3.0));
            m.set(r, 3, rng.gen_range(-3.0..3.0));
        }
        let p = project_2d(&m).unwrap();
        for (a, b) in pairwise(&m).iter().zip(pairwise(&p)) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}

#[test]
fn duplicated_points_get_duplicated_coordinates() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let base = Matrix::uniform(4, 3, 1.0, &mut rng);
    let mut rows: Vec<Vec<f64>> = base.row_iter().map(<[f64]>::to_vec).collect();
    rows.extend(rows.clone());
    let p = project_2d(&Matrix::from_rows(&rows)).unwrap();
    for r in 0..4 {
        assert_eq!(p.row(r), p.row(r + 4));
    }
}

#[test]
fn projection_directions_follow_sign_convention() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let m = Matrix::uniform(8, 5, 1.0, &mut rng);
    let dirs = dmr_core::analysis::principal_directions(&m).unwrap();
    for r in 0..2 {
        let first = dirs.row(r).iter().find(|x| x.abs() > 1e-12).unwrap();
        assert!(*first > 0.0);
    }
    assert!(project_2d(&Matrix::filled(3, 4, 0.7)).is_err());
    assert!(project_2d(&Matrix::uniform(1, 4, 1.0, &mut rng)).is_err());
}

#[test]
fn m2z_uniform_prior_follows_phi_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..100 {
        let (k, n) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let p = random_params(k, 2, 4, n, &mut rng);
        let m = rng.gen_range(0..n);
        let ranked: Vec<usize> = m2z_top_clusters(&p, &vec![1.0 / k as f64; k], m, k)
            .unwrap()
            .into_iter()
            .map(|(z, _)| z)
            .collect();
        let t = p.transition_matrix();
        let col: Vec<f64> = (0..k).map(|z| t.get(z, m)).collect();
        assert_eq!(ranked, argsort_desc(&col));
    }
}

#[test]
fn m2z_hand_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let mut p = random_params(2, 2, 4, 2, &mut rng);
    p.phi = Matrix::from_rows(&[[0.1f64.ln(), 0.9f64.ln()], [0.5f64.ln(), 0.5f64.ln()]]);
    let r = m2z_top_clusters(&p, &[0.9, 0.1], 0, 2).unwrap();
    assert_eq!((r[0].0, r[1].0), (0, 1));
    assert!((r[0].1 - 0.09 / 0.14).abs() < 1e-12);
    assert!((r[1].1 - 0.05 / 0.14).abs() < 1e-12);
    assert!(m2z_top_clusters(&p, &[0.5, 0.6], 0, 2).is_err());
    assert!(m2z_top_clusters(&p, &[1.0, 0.0], 2, 1).is_err());
}

#[test]
fn empirical_prior_is_mean_of_latent_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let enc = random_encoder(6, 3, &mut rng);
    let p = random_params(4, 3, 12, 3, &mut rng);
    let examples: Vec<PairExample> = (0..3).map(|_| random_example(6, 3, &mut rng)).collect();
    let corpus = Corpus {
        examples: examples.clone(),
        token_vocab: TokenVocab::from_tokens((0..6).map(|i| format!("t{i}")).collect(), 0).unwrap(),
        marker_vocab: dmr_core::LabelVocab::from_labels(vec!["a".into(), "b".into(), "c".into()]).unwrap(),
    };
    let got = empirical_latent_prior(&p, &enc, &corpus).unwrap();
    let mut want = vec![0.0; 4];
    for ex in &examples {
        let h = enc.encode_pair(&ex.s1, &ex.s2).unwrap().h;
        let hz: Vec<f64> = (0..3)
            .map(|i| p.b1[i] + (0..12).map(|j| p.w1.get(i, j) * h[j]).sum::<f64>())
            .collect();
        let logits: Vec<f64> = (0..4).map(|z| p.b2[z] + (0..3).map(|i| p.w2.get(z, i) * hz[i]).sum::<f64>()).collect();
        for (w, x) in want.iter_mut().zip(softmax(&logits)) {
            *w += x / 3.0;
        }
    }
    for z in 0..4 {
        assert!((got[z] - want[z]).abs() < 1e-12);
    }
    assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let single = corpus.with_examples(vec![examples[0].clone(); 5]);
    let once = empirical_latent_prior(&p, &enc, &corpus.with_examples(vec![examples[0].clone()])).unwrap();
    for (a, b) in empirical_latent_prior(&p, &enc, &single).unwrap().iter().zip(&once) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn embeddings_are_w2_rows_with_z2m_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let p = random_params(5, 4, 8, 6, &mut rng);
    let set = latent_embeddings(&p, 3).unwrap();
    assert_eq!(set.vectors, p.w2);
    for z in 0..5 {
        let want: Vec<usize> = z2m_top_markers(&p, z, 3).unwrap().into_iter().map(|x| x.0).collect();
        assert_eq!(set.labels[z], want);
    }
}

#[test]
fn confusion_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..50 {
        let c = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=15);
        let dists: Vec<Vec<f64>> = (0..n).map(|_| softmax(&random_vec(c, 3.0, &mut rng))).collect();
        let top_m = rng.gen_range(0..=c);
        let n_top = rng.gen_range(0..=n);
        let a = confusion_weights(&dists, top_m, n_top, None).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| dists[i].clone()).collect();
        let b = confusion_weights(&shuffled, top_m, n_top, None).unwrap();
        for (x, y) in a.weights.data.iter().zip(&b.weights.data) {
            assert!((x - y).abs() < 1e-12);
        }
        let mapped: Vec<usize> = b.examples.iter().map(|&i| perm[i]).collect();
        assert_eq!(mapped, a.examples);

        for i in 0..c {
            assert_eq!(a.weights.get(i, i), 0.0);
            for j in 0..c {
                assert_eq!(a.weights.get(i, j), a.weights.get(j, i));
                assert!(a.weights.get(i, j) >= 0.0);
            }
        }
    }
}

#[test]
fn confusion_mask_removes_classes() {
    let dists = vec![vec![0.5, 0.3, 0.2]];
    let all = confusion_weights(&dists, 2, 1, None).unwrap();
    assert!((all.weights.get(0, 1) - 0.15).abs() < 1e-15);
    let mask = vec![vec![false, true, false]];
    let masked = confusion_weights(&dists, 2, 1, Some(&mask)).unwrap();
    assert_eq!(masked.weights.get(0, 1), 0.0);
    assert!((masked.weights.get(0, 2) - 0.1).abs() < 1e-15);
}

proptest! {
    #[test]
    fn uniform_maximizes_entropy(c in 2usize..=16, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let uniform = prediction_entropy(&vec![1.0 / c as f64; c]);
        prop_assert!((uniform - (c as f64).ln()).abs() < 1e-12);
        for _ in 0..20 {
            let p = softmax(&random_vec(c, 4.0, &mut rng));
            prop_assert!(prediction_entropy(&p) < uniform);
        }
    }

    #[test]
    fn projection_is_translation_invariant(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix::uniform(6, 4, 1.0, &mut rng);
        let offset = random_vec(4, shift.abs() + 1.0, &mut rng);
        let mut moved = m.clone();
        for r in 0..6 {
            for (x, o) in moved.row_mut(r).iter_mut().zip(&offset) {
                *x += o;
            }
        }
        let (a, b) = (project_2d(&m).unwrap(), project_2d(&moved).unwrap());
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((x - y).abs() <= 1e-8);
        }
    }
}
