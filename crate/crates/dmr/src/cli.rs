//! The `dmr` command line. Exit codes: 0 success, 1 usage error, 2 data or
//! model error.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use dmr_core::analysis::{
    confusion_weights, empirical_latent_prior, latent_embeddings, m2z_top_clusters, project_2d, z2m_top_markers,
};
use dmr_core::corpus::{generate_synthetic, SyntheticSpec};
use dmr_core::em::{train, PhiUpdateMode, TrainConfig};
use dmr_core::model::predict_topk_markers;
use dmr_core::probe::{eval_probe, extract_all, few_shot_subsets, train_probe};
use dmr_core::Corpus;

use crate::checkpoint::{self, Checkpoint};
use crate::export::{embeddings_tsv, matrix_tsv};
use crate::json::{self, fmt_f64};
use crate::report::{evaluate_markers, probe_report_text, MARKER_KS};
use crate::{history, tsv, write_atomic};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// A flag value that is well-formed but unusable with the given inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Parser)]
#[command(name = "dmr", version, about = "Discourse-marker latent-sense models: train, predict, analyze, probe")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a marker corpus and write a checkpoint.
    Train(TrainArgs),
    /// Rank markers for sentence pairs.
    Predict(PredictArgs),
    /// Report ACC@1/3/5/10 and mean NLL on a marker corpus.
    EvalMarkers(EvalArgs),
    /// Inspect the latent senses.
    Analyze(AnalyzeArgs),
    /// Fit a linear relation probe on frozen pair representations.
    Probe(ProbeArgs),
    /// Sample a synthetic marker corpus from a spec file.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PhiMode {
    Gradient,
    ClosedForm,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Training corpus, `s1<TAB>s2<TAB>marker` per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Held-out corpus scored during training.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-iteration history here.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 30, value_parser = positive)]
    pub k: usize,
    #[arg(long, default_value_t = 32, value_parser = positive)]
    pub d: usize,
    #[arg(long = "d-e", default_value_t = 32, value_parser = positive)]
    pub d_e: usize,
    #[arg(long, default_value_t = 3e-5)]
    pub lr_psi: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub lr_phi: f64,
    #[arg(long, default_value_t = 500, value_parser = positive)]
    pub em_batch: usize,
    #[arg(long, default_value_t = 32, value_parser = positive)]
    pub minibatch: usize,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = PhiMode::Gradient)]
    pub phi_mode: PhiMode,
    /// Additive count smoothing for the closed-form update.
    #[arg(long, default_value_t = 1e-3)]
    pub phi_smoothing: f64,
    /// Held-out evaluation period in EM iterations.
    #[arg(long, default_value_t = 10, value_parser = positive)]
    pub eval_every: usize,
    /// Stop after this many held-out evaluations without improvement.
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub min_delta: f64,
    /// Tokens seen fewer times map to the unknown token.
    #[arg(long, default_value_t = 1, value_parser = positive)]
    pub min_count: usize,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            k: self.k,
            d: self.d,
            d_e: self.d_e,
            lr_psi: self.lr_psi,
            lr_phi: self.lr_phi,
            em_batch_size: self.em_batch,
            minibatch_size: self.minibatch,
            epochs: self.epochs,
            seed: self.seed,
            phi_update_mode: match self.phi_mode {
                PhiMode::Gradient => PhiUpdateMode::Gradient,
                PhiMode::ClosedForm => PhiUpdateMode::ClosedForm,
            },
            phi_smoothing: self.phi_smoothing,
            eval_every: self.eval_every,
            patience: self.patience,
            min_delta: self.min_delta,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sentence pairs, `s1<TAB>s2` per line; a third column is ignored.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = positive)]
    pub top_k: usize,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeMode {
    Z2m,
    M2z,
    Embed,
    Project,
    Confusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Prior {
    Uniform,
    Empirical,
}

#[derive(Debug, clap::Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(value_enum)]
    pub mode: AnalyzeMode,
    /// Entries per ranking.
    #[arg(long, default_value_t = 3, value_parser = positive)]
    pub top: usize,
    /// Sense prior for m2z.
    #[arg(long, value_enum, default_value_t = Prior::Uniform)]
    pub prior: Prior,
    /// Marker corpus for the empirical prior or marker confusion.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Relation TSV; confusion then runs over probe predictions.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 3, value_parser = positive)]
    pub top_m: usize,
    #[arg(long, default_value_t = 20, value_parser = positive)]
    pub n_top_entropy: usize,
    #[arg(long, default_value_t = dmr_core::probe::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = dmr_core::probe::DEFAULT_EPOCHS)]
    pub epochs: usize,
    /// Write the TSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Relation TSV, `s1<TAB>s2<TAB>relation` per line.
    #[arg(long)]
    pub labels: PathBuf,
    /// Separate test set; without it a stratified fifth of `--labels` is held out.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Comma-separated training subset sizes.
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    pub few_shot: Vec<usize>,
    #[arg(long, default_value_t = 3, value_parser = positive)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = dmr_core::probe::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = dmr_core::probe::DEFAULT_EPOCHS)]
    pub epochs: usize,
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Synthetic spec, JSON.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, value_parser = positive)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corpus TSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// True latent ids, one per line.
    #[arg(long)]
    pub truth: PathBuf,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let msg = e.render().to_string();
                    let _ = write!(err, "{msg}");
                    if !msg.contains("Usage:") {
                        let _ = writeln!(err, "\n{}", Cli::command().render_usage());
                    }
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            let _ = writeln!(err, "error: {e}\n\n{}", Cli::command().render_usage());
            EXIT_USAGE
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_DATA
        }
    }
}

pub fn execute(cmd: &Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::EvalMarkers(a) => cmd_eval(a, out),
        Command::Analyze(a) => cmd_analyze(a, out),
        Command::Probe(a) => cmd_probe(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}

fn fixed_corpus(path: &Path, ckpt: &Checkpoint) -> Result<Corpus> {
    tsv::load_corpus(path, Some(ckpt.token_vocab.clone()), Some(ckpt.marker_vocab.clone()), 1)
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let config = a.config();
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    let corpus = tsv::load_corpus(&a.corpus, None, None, a.min_count)?;
    let heldout = match &a.heldout {
        Some(p) => Some(tsv::load_corpus(p, Some(corpus.token_vocab.clone()), Some(corpus.marker_vocab.clone()), 1)?),
        None => None,
    };
    let trained = train(&config, &corpus, heldout.as_ref()).context("training")?;
    if let Some(p) = &a.history {
        write_atomic(p, history::to_text(&trained.history).as_bytes())?;
    }
    let ckpt = Checkpoint::new(config, corpus.token_vocab, corpus.marker_vocab, trained);
    checkpoint::save(&a.out, &ckpt)?;
    let h = &ckpt.history;
    writeln!(out, "examples={}", corpus.examples.len())?;
    writeln!(out, "iterations={}", h.iterations)?;
    if let Some(x) = h.final_batch_nll {
        writeln!(out, "final_batch_nll={}", fmt_f64(x))?;
    }
    if let (Some(i), Some(f)) = (h.initial_heldout_nll, h.final_heldout_nll) {
        writeln!(out, "initial_heldout_nll={}\nfinal_heldout_nll={}", fmt_f64(i), fmt_f64(f))?;
    }
    writeln!(out, "stopped_early={}\ncheckpoint={}", h.stopped_early, a.out.display())?;
    Ok(())
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let n = ckpt.marker_vocab.len();
    if a.top_k > n {
        return usage(format!("--top-k {} exceeds the {n} markers in the checkpoint", a.top_k));
    }
    let pairs = tsv::load_pairs(&a.input, &ckpt.token_vocab)?;
    let mut text = String::from("index\trank\tmarker\tprobability\n");
    for (i, (s1, s2)) in pairs.iter().enumerate() {
        let ranked = predict_topk_markers(&ckpt.dmr_params, &ckpt.encoder_params, s1, s2, a.top_k)?;
        for (r, (m, p)) in ranked.iter().enumerate() {
            let label = ckpt.marker_vocab.label(*m).unwrap_or("?");
            text.push_str(&format!("{i}\t{}\t{label}\t{}\n", r + 1, fmt_f64(*p)));
        }
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let corpus = fixed_corpus(&a.corpus, &ckpt)?;
    let report = evaluate_markers(&ckpt.dmr_params, &ckpt.encoder_params, &corpus, &MARKER_KS)?;
    out.write_all(report.to_text().as_bytes())?;
    Ok(())
}

fn ranking_tsv(header: &str, rows: impl IntoIterator<Item = (String, Vec<(String, f64)>)>) -> String {
    let mut text = format!("{header}\n");
    for (key, ranked) in rows {
        for (r, (item, score)) in ranked.iter().enumerate() {
            text.push_str(&format!("{key}\t{}\t{item}\t{}\n", r + 1, fmt_f64(*score)));
        }
    }
    text
}

fn cmd_analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let (params, enc) = (&ckpt.dmr_params, &ckpt.encoder_params);
    let markers = &ckpt.marker_vocab;
    let marker = |m: usize| markers.label(m).unwrap_or("?").to_string();
    let (k, n) = (params.k(), params.n_markers());
    let text = match a.mode {
        AnalyzeMode::Z2m => {
            let rows = (0..k)
                .map(|z| {
                    let r = z2m_top_markers(params, z, a.top.min(n))?;
                    Ok((z.to_string(), r.into_iter().map(|(m, p)| (marker(m), p)).collect()))
                })
                .collect::<Result<Vec<_>>>()?;
            ranking_tsv("z\trank\tmarker\tprobability", rows)
        }
        AnalyzeMode::M2z => {
            let prior = match (a.prior, &a.corpus) {
                (Prior::Uniform, _) => vec![1.0 / k as f64; k],
                (Prior::Empirical, Some(p)) => empirical_latent_prior(params, enc, &fixed_corpus(p, &ckpt)?)?,
                (Prior::Empirical, None) => return usage("--prior empirical needs --corpus"),
            };
            let rows = (0..n)
                .map(|m| {
                    let r = m2z_top_clusters(params, &prior, m, a.top.min(k))?;
                    Ok((marker(m), r.into_iter().map(|(z, s)| (z.to_string(), s)).collect()))
                })
                .collect::<Result<Vec<_>>>()?;
            ranking_tsv("marker\trank\tz\tscore", rows)
        }
        AnalyzeMode::Embed => embeddings_tsv(&latent_embeddings(params, crate::export::EMBED_LABELS.min(n))?, markers),
        AnalyzeMode::Project => {
            let coords = project_2d(&params.w2)?;
            let names: Vec<String> = (0..k).map(|z| z.to_string()).collect();
            matrix_tsv("z", &["x".into(), "y".into()], &names, &coords)
        }
        AnalyzeMode::Confusion => {
            let (dists, names) = confusion_inputs(a, &ckpt)?;
            let c = names.len();
            let cm = confusion_weights(&dists, a.top_m.min(c), a.n_top_entropy.min(dists.len()), None)?;
            matrix_tsv("class", &names, &names, &cm.weights)
        }
    };
    match &a.out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

/// Class distributions and class names for the confusion matrix: probe
/// predictions over relations with `--labels`, marker predictions with
/// `--corpus`.
fn confusion_inputs(a: &AnalyzeArgs, ckpt: &Checkpoint) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let (params, enc) = (&ckpt.dmr_params, &ckpt.encoder_params);
    if let Some(p) = &a.labels {
        let data = tsv::load_relations(p, &ckpt.token_vocab, None)?;
        let reps = extract_all(params, enc, &data)?;
        let probe = train_probe(&reps, &data.labels(), data.num_classes(), a.lr, a.epochs)?;
        let dists = reps.iter().map(|x| probe.predict_proba(x)).collect();
        return Ok((dists, data.relation_vocab.labels().to_vec()));
    }
    if let Some(p) = &a.corpus {
        let corpus = fixed_corpus(p, ckpt)?;
        let dists = corpus
            .examples
            .iter()
            .map(|ex| Ok(params.marginal_marker(&enc.encode_pair(&ex.s1, &ex.s2)?)?.p))
            .collect::<Result<_>>()?;
        return Ok((dists, ckpt.marker_vocab.labels().to_vec()));
    }
    usage("confusion needs --labels or --corpus")
}

fn cmd_probe(a: &ProbeArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let (params, enc) = (&ckpt.dmr_params, &ckpt.encoder_params);
    let all = tsv::load_relations(&a.labels, &ckpt.token_vocab, None)?;
    let c = all.num_classes();
    let (train_set, test_set) = match &a.test {
        Some(p) => {
            let test = tsv::load_relations(p, &ckpt.token_vocab, Some(all.relation_vocab.clone()))?;
            (all, test)
        }
        None => {
            let n = all.len();
            let n_train = n - n / 5;
            if n_train == n {
                bail!("{} has too few examples to hold out a test fifth", a.labels.display());
            }
            let idx = &few_shot_subsets(&all.labels(), c, &[n_train], 1, a.seed)?[0][0];
            let rest: Vec<usize> = (0..n).filter(|i| !idx.contains(i)).collect();
            (all.subset(idx), all.subset(&rest))
        }
    };
    if let Some(&s) = a.few_shot.iter().find(|&&s| s > train_set.len()) {
        return usage(format!("--few-shot size {s} exceeds the {} training examples", train_set.len()));
    }
    let train_reps = extract_all(params, enc, &train_set)?;
    let test_reps = extract_all(params, enc, &test_set)?;
    let train_labels = train_set.labels();
    let test_labels = test_set.labels();

    let fit = |idx: &[usize]| -> Result<dmr_core::probe::ProbeReport> {
        let reps: Vec<Vec<f64>> = idx.iter().map(|&i| train_reps[i].clone()).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| train_labels[i]).collect();
        let probe = train_probe(&reps, &labels, c, a.lr, a.epochs)
            .with_context(|| format!("probe on {} training examples", idx.len()))?;
        Ok(eval_probe(&probe, &test_reps, &test_labels)?)
    };

    let all_idx: Vec<usize> = (0..train_set.len()).collect();
    let full = fit(&all_idx)?;
    let mut text = format!("train_examples={}\ntest_examples={}\nclasses={c}\n", train_set.len(), test_set.len());
    if !a.few_shot.is_empty() {
        let runs = few_shot_subsets(&train_labels, c, &a.few_shot, a.runs, a.seed)?;
        for (i, size) in a.few_shot.iter().enumerate() {
            let (mut acc, mut f1) = (0.0, 0.0);
            for run in &runs {
                let r = fit(&run[i])?;
                acc += r.accuracy;
                f1 += r.macro_f1;
            }
            let denom = a.runs as f64;
            text.push_str(&format!(
                "few_shot.{size}.accuracy_mean={}\nfew_shot.{size}.macro_f1_mean={}\n",
                fmt_f64(acc / denom),
                fmt_f64(f1 / denom)
            ));
        }
    }
    text.push_str(&probe_report_text("", &full, &train_set.relation_vocab));
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let spec: SyntheticSpec = json::read(&a.spec)?;
    let (corpus, truth) = generate_synthetic(&spec, a.n, a.seed)?;
    tsv::write_corpus(&a.out, &corpus)?;
    let ids: String = truth.iter().map(|z| format!("{z}\n")).collect();
    write_atomic(&a.truth, ids.as_bytes())?;
    writeln!(out, "examples={}\nmarkers={}\ntokens={}", corpus.len(), corpus.num_markers(), corpus.token_vocab.len())?;
    Ok(())
}
