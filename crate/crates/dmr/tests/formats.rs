use std::fs;

use dmr::checkpoint::{self, Checkpoint, FORMAT_VERSION};
use dmr::json;
use dmr::tsv::{load_corpus, load_pairs, load_relations, write_corpus};
use dmr_core::corpus::{generate_synthetic, SyntheticSpec};
use dmr_core::em::{train, TrainConfig};
use dmr_core::model::predict_topk_markers;
use dmr_core::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn spec() -> SyntheticSpec {
    let t = Matrix::from_rows(&[[0.7, 0.2, 0.1], [0.1, 0.2, 0.7]]);
    SyntheticSpec::with_disjoint_tokens(vec![0.5, 0.5], t, 4, 0.1, (2, 5))
}

#[test]
fn corpus_loading_cases() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("c.tsv");

    fs::write(&p, "i am weak\ti go to the gym daily\tso\n").unwrap();
    let c = load_corpus(&p, None, None, 1).unwrap();
    assert_eq!((c.len(), c.num_markers(), c.examples[0].marker), (1, 1, 0));

    fs::write(&p, "a\tb\n").unwrap();
    let err = format!("{:#}", load_corpus(&p, None, None, 1).unwrap_err());
    assert!(err.contains("line 1"), "{err}");

    fs::write(&p, "a\tb\tso\nc\td\tso\ne\tf\tbut\n").unwrap();
    let c = load_corpus(&p, None, None, 1).unwrap();
    assert_eq!(c.marker_vocab.labels(), ["so", "but"]);
    assert_eq!(c.examples.iter().map(|e| e.marker).collect::<Vec<_>>(), vec![0, 0, 1]);

    fs::write(&p, "a\tq\tbecause_of_this\n").unwrap();
    assert!(load_corpus(&p, Some(c.token_vocab.clone()), Some(c.marker_vocab.clone()), 1).is_err());

    fs::write(&p, "").unwrap();
    assert!(load_corpus(&p, None, None, 1).is_err());
    assert!(load_corpus(&dir.path().join("missing.tsv"), None, None, 1).is_err());
}

#[test]
fn relations_and_pairs() {
    let dir = TempDir::new().unwrap();
    let (c, _) = generate_synthetic(&spec(), 5, 1).unwrap();
    let p = dir.path().join("r.tsv");
    fs::write(&p, "t0 t1\tt2\tCause\nt3\tt4 zz\tContrast\n").unwrap();
    let r = load_relations(&p, &c.token_vocab, None).unwrap();
    assert_eq!(r.num_classes(), 2);
    assert_eq!(r.examples[1].s2[1], c.token_vocab.unk_id());

    fs::write(&p, "t0\tt1\nt2\tt3\tignored\n").unwrap();
    assert_eq!(load_pairs(&p, &c.token_vocab).unwrap().len(), 2);
    fs::write(&p, "t0\t \n").unwrap();
    assert!(load_pairs(&p, &c.token_vocab).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn corpus_tsv_round_trip(seed in any::<u64>(), n in 1usize..60) {
        let dir = TempDir::new().unwrap();
        let (c, _) = generate_synthetic(&spec(), n, seed).unwrap();
        let p = dir.path().join("c.tsv");
        write_corpus(&p, &c).unwrap();
        let back = load_corpus(&p, Some(c.token_vocab.clone()), Some(c.marker_vocab.clone()), 1).unwrap();
        prop_assert_eq!(&back.examples, &c.examples);
        let rebuilt = load_corpus(&p, None, None, 1).unwrap();
        prop_assert_eq!(rebuilt.len(), c.len());
    }
}

fn trained() -> Checkpoint {
    let (c, _) = generate_synthetic(&spec(), 200, 2).unwrap();
    let config = TrainConfig {
        k: 3,
        d: 4,
        d_e: 4,
        lr_psi: 0.3,
        lr_phi: 0.3,
        em_batch_size: 50,
        minibatch_size: 10,
        epochs: 2,
        ..TrainConfig::default()
    };
    let out = train(&config, &c, None).unwrap();
    Checkpoint::new(config, c.token_vocab, c.marker_vocab, out)
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("m.json");
    let ckpt = trained();
    checkpoint::save(&p, &ckpt).unwrap();
    let back = checkpoint::load(&p).unwrap();
    assert_eq!(back, ckpt);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let v = ckpt.token_vocab.len();
    for _ in 0..20 {
        let s1: Vec<usize> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0..v)).collect();
        let s2: Vec<usize> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0..v)).collect();
        let a = predict_topk_markers(&ckpt.dmr_params, &ckpt.encoder_params, &s1, &s2, 3).unwrap();
        let b = predict_topk_markers(&back.dmr_params, &back.encoder_params, &s1, &s2, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1.to_bits(), y.1.to_bits());
        }
    }
    checkpoint::save(&dir.path().join("again.json"), &back).unwrap();
    assert_eq!(fs::read(&p).unwrap(), fs::read(dir.path().join("again.json")).unwrap());
    let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 2);
}

fn load_err(text: &str) -> String {
    format!("{:#}", checkpoint::from_bytes(text.as_bytes()).unwrap_err())
}

#[test]
fn checkpoint_rejections() {
    let ckpt = trained();
    let text = json::to_string(&ckpt).unwrap();

    let err = load_err(&text.replacen(&format!("\"format_version\": {FORMAT_VERSION}"), "\"format_version\": 99", 1));
    assert!(err.contains("format_version"), "{err}");

    let cut = text.len() / 2;
    let err = load_err(&text[..cut]);
    assert!(err.contains("byte offset"), "{err}");

    let mut bad = ckpt.clone();
    bad.config.k = 4;
    let err = load_err(&json::to_string(&bad).unwrap());
    assert!(err.contains("phi"), "{err}");

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v.as_object_mut().unwrap().remove("token_vocab");
    let err = load_err(&serde_json::to_string(&v).unwrap());
    assert!(err.contains("token_vocab"), "{err}");

    let mut bad = ckpt.clone();
    bad.encoder_params.embeddings = Matrix::zeros(2, 4);
    assert!(load_err(&json::to_string(&bad).unwrap()).contains("encoder_params.embeddings"));

    assert!(checkpoint::save(std::path::Path::new("/nonexistent-dir/m.json"), &ckpt).is_err());
}

#[test]
fn synthetic_spec_file_round_trip() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("spec.json");
    json::write(&p, &spec()).unwrap();
    let back: SyntheticSpec = json::read(&p).unwrap();
    assert_eq!(back, spec());
}
