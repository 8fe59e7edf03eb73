//! TSV exports of latent embeddings, projections and weight matrices.

use anyhow::{bail, Context, Result};
use dmr_core::analysis::LatentEmbeddingSet;
use dmr_core::{Matrix, MarkerVocab};

use crate::json::fmt_f64;

/// Label columns in the embedding export.
pub const EMBED_LABELS: usize = 3;

/// Header `z, label1..3, v0..` then one row per sense. Senses with fewer
/// than three labels are padded with `-`.
pub fn embeddings_tsv(set: &LatentEmbeddingSet, markers: &MarkerVocab) -> String {
    let d = set.vectors.cols;
    let mut out = String::from("z");
    for i in 1..=EMBED_LABELS {
        out.push_str(&format!("\tlabel{i}"));
    }
    for j in 0..d {
        out.push_str(&format!("\tv{j}"));
    }
    out.push('\n');
    for (z, row) in set.vectors.row_iter().enumerate() {
        out.push_str(&z.to_string());
        for i in 0..EMBED_LABELS {
            let label = set.labels[z].get(i).and_then(|&m| markers.label(m)).unwrap_or("-");
            out.push_str(&format!("\t{label}"));
        }
        for x in row {
            out.push_str(&format!("\t{}", fmt_f64(*x)));
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`embeddings_tsv`]: vectors plus label strings per sense.
pub fn parse_embeddings_tsv(text: &str) -> Result<(Matrix, Vec<Vec<String>>)> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().context("missing header")?.split('\t').collect();
    if header.len() < 1 + EMBED_LABELS || header[0] != "z" {
        bail!("malformed header");
    }
    let d = header.len() - 1 - EMBED_LABELS;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != header.len() || f[0] != i.to_string() {
            bail!("line {}: malformed row", i + 2);
        }
        labels.push(f[1..=EMBED_LABELS].iter().map(|s| s.to_string()).collect());
        let v = f[1 + EMBED_LABELS..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("line {}", i + 2))?;
        rows.push(v);
    }
    let mut m = Matrix::zeros(rows.len(), d);
    for (r, v) in rows.iter().enumerate() {
        m.row_mut(r).copy_from_slice(v);
    }
    Ok((m, labels))
}

/// Matrix with a header row and a leading row-name column.
pub fn matrix_tsv(corner: &str, col_names: &[String], row_names: &[String], m: &Matrix) -> String {
    let mut out = String::from(corner);
    for c in col_names {
        out.push_str(&format!("\t{c}"));
    }
    out.push('\n');
    for (name, row) in row_names.iter().zip(m.row_iter()) {
        out.push_str(name);
        for x in row {
            out.push_str(&format!("\t{}", fmt_f64(*x)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use dmr_core::analysis::latent_embeddings;
    use dmr_core::DmrParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn embedding_export_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = DmrParams::init(4, 5, 8, 2, &mut rng);
        p.w2.data.iter_mut().for_each(|x| *x = *x / 3.0 + 1e-17);
        let markers = MarkerVocab::from_labels(vec!["so".into(), "but".into()]).unwrap();
        let set = latent_embeddings(&p, 2).unwrap();
        let text = embeddings_tsv(&set, &markers);
        assert!(text.starts_with("z\tlabel1\tlabel2\tlabel3\tv0\tv1\tv2\tv3\tv4\n"));
        let (m, labels) = parse_embeddings_tsv(&text).unwrap();
        assert_eq!(m, set.vectors);
        assert_eq!(labels[0][2], "-");
        for (z, l) in labels.iter().enumerate() {
            assert_eq!(markers.id(&l[0]), Some(set.labels[z][0]));
        }
    }

    #[test]
    fn matrix_layout() {
        let m = Matrix::from_rows(&[[0.5, 0.25]]);
        let t = matrix_tsv("z", &["x".into(), "y".into()], &["0".into()], &m);
        assert_eq!(t, "z\tx\ty\n0\t5.0000000000000000e-1\t2.5000000000000000e-1\n");
    }
}
