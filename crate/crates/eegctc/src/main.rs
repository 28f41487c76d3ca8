//! Command-line surface for the EEG/speech recognition pipeline: corpus
//! generation, feature extraction, KPCA fitting, training, decoding and
//! evaluation. Exit codes: 0 success, 1 user/config error, 2 I/O error,
//! 3 numeric failure.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use eegctc::corpus::{
    charset_of, generate_synthetic_corpus, split_by_subject, take_first_sentences, CorpusError,
    CorpusManifest, Utterance,
};
use eegctc::features::{
    append_deltas, concat_features, extract_eeg_features, extract_mfcc, FeatureBankSpec,
    FeatureSequence,
};
use eegctc::io::{
    read_checkpoint, read_features, read_signal, read_transcript_lines,
    write_checkpoint, write_features, write_kpca_model, write_transcript_lines, IoError,
};
use eegctc::kpca::{fit_kpca_subsampled, transform, KernelParams, KpcaError};
use eegctc::metrics::{build_report, tabulate, EvalReport};
use eegctc::net::NetworkConfig;
use eegctc::signal::{apply_filter, design_bandpass, design_notch, remove_artifacts, HookRegistry};
use eegctc::train::{
    apply_input_norm, decimate_for_net, decode_example, fit_input_norm, make_examples, train,
    TrainConfig, TrainError,
};
use ndarray::Array2;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "eegctc",
    about = "Multilingual EEG/speech-to-text pipeline: synthetic corpora, feature banks, kernel PCA, GRU-CTC training and CER evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reproducible synthetic speech/EEG corpus.
    GenerateCorpus(GenerateArgs),
    /// Extract per-utterance feature files from a corpus.
    ExtractFeatures(ExtractArgs),
    /// Fit kernel PCA on the training split and write reduced features.
    FitKpca(FitKpcaArgs),
    /// Train the GRU-CTC model.
    Train(TrainArgs),
    /// Decode utterances with a trained checkpoint.
    Decode(DecodeArgs),
    /// Score hypotheses against references.
    Evaluate(EvaluateArgs),
    /// Print header and summary statistics of a feature file.
    InspectFeatures(InspectArgs),
    /// Run the whole pipeline from a recipe file.
    Run(RunArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory for manifest and signal files.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    subjects: usize,
    #[arg(long, default_value_t = 3)]
    sessions: usize,
    #[arg(long, default_value_t = 31)]
    channels: usize,
    /// Signal-to-noise ratio of the synthetic EEG/audio in dB.
    #[arg(long, default_value_t = 60.0)]
    snr_db: f64,
    /// Sentences separated by '|'; defaults to a built-in bilingual set.
    #[arg(long)]
    sentences: Option<String>,
}

#[derive(Args, Clone)]
struct FilterArgs {
    /// Apply the band-pass filter before feature extraction.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    bandpass: bool,
    #[arg(long, default_value_t = 0.1)]
    bandpass_low_hz: f64,
    #[arg(long, default_value_t = 70.0)]
    bandpass_high_hz: f64,
    #[arg(long, default_value_t = 4)]
    bandpass_order: usize,
    /// Apply the power-line notch filter.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    notch: bool,
    #[arg(long, default_value_t = 60.0)]
    notch_hz: f64,
    #[arg(long, default_value_t = 30.0)]
    notch_quality: f64,
    /// Artifact-removal hook name ("none" is the identity).
    #[arg(long, default_value = "none")]
    artifact_hook: String,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Feature mode: set1, set2, mfcc, set1+mfcc, set2+mfcc.
    #[arg(long, default_value = "set1")]
    mode: String,
    /// Restrict EEG to these comma-separated channel names (e.g. "T7,T8").
    #[arg(long)]
    channels: Option<String>,
    #[command(flatten)]
    filter: FilterArgs,
}

#[derive(Args)]
struct FitKpcaArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding <id>.fea files from extract-features.
    #[arg(long)]
    features_dir: PathBuf,
    /// Comma-separated training subject ids the model is fitted on.
    #[arg(long)]
    train_subjects: String,
    #[arg(long)]
    target_dim: usize,
    #[arg(long, default_value_t = 3)]
    degree: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Path the fitted model is written to.
    #[arg(long)]
    out_model: PathBuf,
    /// Directory receiving reduced (+delta) features for every utterance.
    #[arg(long)]
    reduced_dir: PathBuf,
}

#[derive(Args)]
struct NetArgs {
    #[arg(long, default_value_t = 128)]
    gru_hidden: usize,
    #[arg(long, default_value_t = 1)]
    gru_layers: usize,
    /// Train on the decimated raw signal through the conv front end instead
    /// of feature files.
    #[arg(long, default_value_t = false)]
    raw_front_end: bool,
    #[arg(long, default_value_t = 100)]
    conv_filters: usize,
    #[arg(long, default_value_t = 3)]
    conv_kernel: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Required unless --raw-front-end is set.
    #[arg(long)]
    features_dir: Option<PathBuf>,
    /// Comma-separated training subject ids; defaults to every subject.
    #[arg(long)]
    train_subjects: Option<String>,
    /// Keep only the first N sentences (1..=10).
    #[arg(long)]
    first_sentences: Option<usize>,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long)]
    out_checkpoint: PathBuf,
    /// Per-epoch mean loss CSV (epoch, mean_loss).
    #[arg(long)]
    loss_csv: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    features_dir: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<String>,
    #[arg(long)]
    first_sentences: Option<usize>,
    #[arg(long, default_value_t = 16)]
    beam_width: usize,
    #[command(flatten)]
    filter: FilterArgs,
    /// Tab-separated (utterance id, hypothesis) output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Tab-separated (id, hypothesis) lines.
    #[arg(long)]
    hypotheses: PathBuf,
    /// Tab-separated (id, reference) lines, or a corpus manifest.
    #[arg(long)]
    references: PathBuf,
    #[arg(long, default_value_t = 0)]
    corpus_size: usize,
    #[arg(long, default_value = "default")]
    config_label: String,
    #[arg(long, default_value = "default")]
    feature_set: String,
    /// Optional CSV output path; the table always goes to stdout.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    file: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Recipe file of 'key = value' lines driving the full pipeline.
    #[arg(long)]
    recipe: PathBuf,
    /// Overrides the recipe's out_dir.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateCorpus(a) => cmd_generate_corpus(a),
        Command::ExtractFeatures(a) => cmd_extract_features(a),
        Command::FitKpca(a) => cmd_fit_kpca(a),
        Command::Train(a) => cmd_train(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::InspectFeatures(a) => cmd_inspect_features(a),
        Command::Run(a) => cmd_run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// 1 user/config error, 2 I/O error, 3 numeric failure.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        if let Some(io) = cause.downcast_ref::<IoError>() {
            return match io {
                IoError::Io { .. } => 2,
                IoError::Format { .. } => 2,
            };
        }
        if let Some(c) = cause.downcast_ref::<CorpusError>() {
            if matches!(c, CorpusError::Io { .. }) {
                return 2;
            }
            return 1;
        }
        if let Some(k) = cause.downcast_ref::<KpcaError>() {
            return match k {
                KpcaError::DegenerateSpectrum => 3,
                _ => 1,
            };
        }
        if let Some(t) = cause.downcast_ref::<TrainError>() {
            return match t {
                TrainError::Ctc(_) => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<NumericFailure>().is_some() {
            return 3;
        }
    }
    1
}

#[derive(Debug, thiserror::Error)]
#[error("numeric failure: {0}")]
struct NumericFailure(String);

const DEFAULT_SENTENCES: [&str; 10] = [
    "the cat sat",
    "a dog ran far",
    "we like tea",
    "birds can sing",
    "rain fell all day",
    "你好世界",
    "我们喝茶",
    "今天下雨",
    "猫在睡觉",
    "鸟会唱歌",
];

fn parse_sentences(raw: &Option<String>) -> Vec<String> {
    match raw {
        Some(s) => s.split('|').map(|x| x.trim().to_string()).collect(),
        None => DEFAULT_SENTENCES.iter().map(|s| s.to_string()).collect(),
    }
}

fn cmd_generate_corpus(a: GenerateArgs) -> Result<()> {
    let sentences = parse_sentences(&a.sentences);
    let manifest = generate_synthetic_corpus(
        &a.out_dir,
        a.seed,
        a.subjects,
        &sentences,
        a.sessions,
        a.channels,
        a.snr_db,
    )?;
    println!("{}", a.out_dir.join("manifest.txt").display());
    println!("{} utterances", manifest.entries.len());
    Ok(())
}

/// Band-pass -> notch -> artifact hook, per the preprocessing chain.
fn preprocess_eeg(
    signal: &eegctc::signal::MultiChannelSignal,
    f: &FilterArgs,
) -> Result<eegctc::signal::MultiChannelSignal> {
    let mut out = signal.clone();
    if f.bandpass {
        let filt = design_bandpass(
            f.bandpass_low_hz,
            f.bandpass_high_hz,
            f.bandpass_order,
            out.sample_rate_hz,
        )?;
        out = apply_filter(&out, &filt)?;
    }
    if f.notch {
        let filt = design_notch(f.notch_hz, f.notch_quality, out.sample_rate_hz)?;
        out = apply_filter(&out, &filt)?;
    }
    let registry = HookRegistry::new();
    out = remove_artifacts(&out, &f.artifact_hook, &registry)?;
    Ok(out)
}

fn extract_one(
    manifest: &CorpusManifest,
    utterance: &Utterance,
    mode: &str,
    channels: &Option<String>,
    filter: &FilterArgs,
) -> Result<FeatureSequence> {
    let wants_eeg = mode != "mfcc";
    let wants_mfcc = mode.contains("mfcc");
    let eeg_features = if wants_eeg {
        let mut eeg = read_signal(&manifest.eeg_path(utterance))?;
        if let Some(list) = channels {
            let names: Vec<String> = list.split(',').map(|s| s.trim().to_string()).collect();
            eeg = eegctc::features::select_channels(&eeg, &names)?;
        }
        let eeg = preprocess_eeg(&eeg, filter)?;
        let bank = match mode.split('+').next().unwrap_or("set1") {
            "set1" => FeatureBankSpec::set1(),
            "set2" => FeatureBankSpec::set2(),
            other => bail!("unknown feature mode '{other}' (use set1, set2 or mfcc)"),
        };
        Some(extract_eeg_features(&eeg, &bank)?)
    } else {
        None
    };
    let mfcc_features = if wants_mfcc {
        let audio = read_signal(&manifest.audio_path(utterance))?;
        let mfcc = extract_mfcc(&audio, 13, 25.0, 10.0)?;
        Some(append_deltas(&mfcc)?)
    } else {
        None
    };
    match (eeg_features, mfcc_features) {
        (Some(e), Some(m)) => Ok(concat_features(&e, &m)?),
        (Some(e), None) => Ok(e),
        (None, Some(m)) => Ok(m),
        (None, None) => bail!("feature mode '{mode}' selects nothing"),
    }
}

fn cmd_extract_features(a: ExtractArgs) -> Result<()> {
    let manifest = CorpusManifest::load(&a.manifest)?;
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    for u in &manifest.entries {
        let features = extract_one(&manifest, u, &a.mode, &a.channels, &a.filter)?;
        write_features(&a.out_dir.join(format!("{}.fea", u.id)), &features)?;
    }
    eprintln!(
        "extracted {} feature files into {}",
        manifest.entries.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn load_feature_map(
    manifest: &CorpusManifest,
    dir: &Path,
) -> Result<BTreeMap<String, FeatureSequence>> {
    let mut map = BTreeMap::new();
    for u in &manifest.entries {
        let f = read_features(&dir.join(format!("{}.fea", u.id)))?;
        map.insert(u.id.clone(), f);
    }
    Ok(map)
}

fn parse_subjects(raw: &str) -> Vec<String> {
    raw.split(',').map(|s| s.trim().to_string()).collect()
}

fn cmd_fit_kpca(a: FitKpcaArgs) -> Result<()> {
    let manifest = CorpusManifest::load(&a.manifest)?;
    let features = load_feature_map(&manifest, &a.features_dir)?;
    let train_subjects = parse_subjects(&a.train_subjects);
    let mut train_rows: Vec<Array2<f64>> = Vec::new();
    for u in &manifest.entries {
        if train_subjects.contains(&u.subject_id) {
            train_rows.push(features[&u.id].frames.clone());
        }
    }
    if train_rows.is_empty() {
        bail!("no utterances belong to the given training subjects");
    }
    let dim = train_rows[0].ncols();
    let total: usize = train_rows.iter().map(|m| m.nrows()).sum();
    let mut stacked = Array2::zeros((total, dim));
    let mut row = 0;
    for m in &train_rows {
        stacked
            .slice_mut(ndarray::s![row..row + m.nrows(), ..])
            .assign(m);
        row += m.nrows();
    }
    let kernel = KernelParams {
        degree: a.degree,
        ..KernelParams::default_for_dim(dim)
    };
    let model = fit_kpca_subsampled(&stacked, kernel, a.target_dim, a.seed)?;
    write_kpca_model(&a.out_model, &model)?;
    std::fs::create_dir_all(&a.reduced_dir)
        .with_context(|| format!("creating {}", a.reduced_dir.display()))?;
    for u in &manifest.entries {
        let f = &features[&u.id];
        let scores = transform(&model, &f.frames)?;
        let reduced = FeatureSequence {
            frames: scores,
            frame_rate_hz: f.frame_rate_hz,
            descriptor: format!("{} -> {}", f.descriptor, model.descriptor),
        };
        let with_deltas = append_deltas(&reduced)?;
        write_features(&a.reduced_dir.join(format!("{}.fea", u.id)), &with_deltas)?;
    }
    eprintln!(
        "kpca model ({} -> {} dims{}) written to {}",
        dim,
        model.projection_vectors.ncols(),
        if model.rank_deficient {
            ", rank deficient"
        } else {
            ""
        },
        a.out_model.display()
    );
    Ok(())
}

/// Restricts a manifest to the given subjects (None keeps all) and the first
/// n sentences (None keeps all).
fn restrict_manifest(
    manifest: &CorpusManifest,
    subjects: &Option<String>,
    first_sentences: Option<usize>,
) -> Result<CorpusManifest> {
    let mut m = manifest.clone();
    if let Some(list) = subjects {
        let keep = parse_subjects(list);
        m.entries.retain(|u| keep.contains(&u.subject_id));
        if m.entries.is_empty() {
            bail!("no utterances match subjects '{list}'");
        }
    }
    if let Some(n) = first_sentences {
        m = take_first_sentences(&m, n)?;
    }
    Ok(m)
}

/// Builds `[T x dim]` network inputs for every utterance of the manifest:
/// either stored feature files or the decimated preprocessed raw signal.
fn build_inputs(
    manifest: &CorpusManifest,
    features_dir: &Option<PathBuf>,
    raw: bool,
    filter: &FilterArgs,
) -> Result<Vec<(String, Array2<f64>, String)>> {
    let mut out = Vec::new();
    if raw {
        for u in &manifest.entries {
            let eeg = read_signal(&manifest.eeg_path(u))?;
            let eeg = preprocess_eeg(&eeg, filter)?;
            out.push((u.id.clone(), decimate_for_net(&eeg)?, u.transcript.clone()));
        }
    } else {
        let dir = features_dir
            .as_ref()
            .ok_or_else(|| anyhow!("--features-dir is required without --raw-front-end"))?;
        let map = load_feature_map(manifest, dir)?;
        for u in &manifest.entries {
            out.push((u.id.clone(), map[&u.id].frames.clone(), u.transcript.clone()));
        }
    }
    Ok(out)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let manifest = CorpusManifest::load(&a.manifest)?;
    let manifest = restrict_manifest(&manifest, &a.train_subjects, a.first_sentences)?;
    let mut items = build_inputs(&manifest, &a.features_dir, a.net.raw_front_end, &a.filter)?;
    let input_norm = if a.net.raw_front_end {
        let mats: Vec<Array2<f64>> = items.iter().map(|(_, m, _)| m.clone()).collect();
        let norm = fit_input_norm(&mats).ok_or_else(|| anyhow!("no training inputs"))?;
        for (_, m, _) in items.iter_mut() {
            apply_input_norm(m, &norm);
        }
        Some(norm)
    } else {
        None
    };
    let charset = charset_of(&manifest.transcripts())?;
    let input_dim = items[0].1.ncols();
    let mut config = NetworkConfig::new(input_dim, a.net.gru_hidden, a.net.gru_layers, charset.len() + 1);
    config.use_raw_front_end = a.net.raw_front_end;
    config.conv_filters = a.net.conv_filters;
    config.conv_kernel = a.net.conv_kernel;
    let examples = make_examples(&items, &charset)?;
    let tc = TrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        learning_rate: a.learning_rate,
        ..TrainConfig::default()
    };
    let mut csv = String::from("epoch,mean_loss\n");
    let outcome = train(&examples, &config, &charset, &tc, input_norm, |epoch, loss, skipped| {
        csv.push_str(&format!("{epoch},{loss:.9}\n"));
        if skipped > 0 && epoch == 1 {
            eprintln!("warning: skipped {skipped} infeasible utterances per epoch");
        }
        if epoch % 50 == 0 || epoch == 1 {
            eprintln!("epoch {epoch}: mean loss {loss:.6} nats/char");
        }
    })?;
    if outcome.epoch_losses.iter().any(|l| !l.is_finite()) {
        return Err(NumericFailure("training loss became non-finite".into()).into());
    }
    std::fs::write(&a.loss_csv, csv)
        .with_context(|| format!("writing {}", a.loss_csv.display()))?;
    write_checkpoint(&a.out_checkpoint, &outcome.checkpoint)?;
    eprintln!(
        "trained {} epochs on {} utterances; checkpoint at {}",
        a.epochs,
        examples.len(),
        a.out_checkpoint.display()
    );
    Ok(())
}

fn cmd_decode(a: DecodeArgs) -> Result<()> {
    let checkpoint = read_checkpoint(&a.checkpoint)?;
    let manifest = CorpusManifest::load(&a.manifest)?;
    let manifest = restrict_manifest(&manifest, &a.subjects, a.first_sentences)?;
    // Fail early when the corpus uses characters the model cannot emit.
    let corpus_charset = charset_of(&manifest.transcripts())?;
    for &c in corpus_charset.characters() {
        if checkpoint.charset.id_of(c).is_none() {
            bail!("configuration error: character '{c}' in the corpus is absent from the checkpoint charset");
        }
    }
    let items = build_inputs(
        &manifest,
        &a.features_dir,
        checkpoint.config.use_raw_front_end,
        &a.filter,
    )?;
    let mut lines = Vec::with_capacity(items.len());
    for (id, mut input, _) in items {
        if let Some(norm) = &checkpoint.input_norm {
            apply_input_norm(&mut input, norm);
        }
        let hyp = decode_example(&checkpoint, &input, a.beam_width)?;
        lines.push((id, hyp));
    }
    write_transcript_lines(&a.out, &lines)?;
    eprintln!("wrote {} hypotheses to {}", lines.len(), a.out.display());
    Ok(())
}

fn read_references(path: &Path) -> Result<Vec<(String, String)>> {
    // Either a manifest or a tab-separated reference file.
    if let Ok(manifest) = CorpusManifest::load(path) {
        if !manifest.entries.is_empty() {
            return Ok(manifest
                .entries
                .iter()
                .map(|u| (u.id.clone(), u.transcript.clone()))
                .collect());
        }
    }
    Ok(read_transcript_lines(path)?)
}

fn evaluate_report(
    hypotheses: &[(String, String)],
    references: &[(String, String)],
    corpus_size: usize,
    config_label: &str,
    feature_set: &str,
) -> Result<EvalReport> {
    let refs: BTreeMap<&str, &str> = references
        .iter()
        .map(|(id, t)| (id.as_str(), t.as_str()))
        .collect();
    let mut missing = Vec::new();
    let mut pairs = Vec::new();
    for (id, hyp) in hypotheses {
        match refs.get(id.as_str()) {
            Some(r) => pairs.push((r.to_string(), hyp.clone())),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        bail!("unmatched utterance ids: {}", missing.join(", "));
    }
    Ok(build_report(corpus_size, config_label, feature_set, &pairs)?)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let hypotheses = read_transcript_lines(&a.hypotheses)?;
    let references = read_references(&a.references)?;
    let report = evaluate_report(
        &hypotheses,
        &references,
        a.corpus_size,
        &a.config_label,
        &a.feature_set,
    )?;
    let (table, csv) = tabulate(std::slice::from_ref(&report));
    print!("{table}");
    println!("CER: {:.4}%", report.cer_percent);
    if let Some(path) = &a.out_csv {
        std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_inspect_features(a: InspectArgs) -> Result<()> {
    let f = read_features(&a.file)?;
    println!("file: {}", a.file.display());
    println!("frames: {}", f.frames.nrows());
    println!("dim: {}", f.frames.ncols());
    println!("frame_rate_hz: {}", f.frame_rate_hz);
    println!("descriptor: {}", f.descriptor);
    if f.frames.len() > 0 {
        let min = f.frames.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = f.frames.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = f.frames.iter().sum::<f64>() / f.frames.len() as f64;
        println!("min: {min:.6}  max: {max:.6}  mean: {mean:.6}");
    }
    Ok(())
}

/// Recipe keys (all optional unless noted): out_dir (required unless given
/// on the command line), seed, subjects, sessions, channels, snr_db,
/// sentences, feature (set1|set2|mfcc|set1+mfcc|set2+mfcc|raw), bandpass,
/// notch, kpca_dim, kpca_degree, gru_hidden, gru_layers, epochs,
/// learning_rate, beam_width, first_sentences, train_subjects,
/// val_subjects, test_subjects.
struct Recipe {
    out_dir: PathBuf,
    seed: u64,
    subjects: usize,
    sessions: usize,
    channels: usize,
    snr_db: f64,
    sentences: Vec<String>,
    feature: String,
    bandpass: bool,
    notch: bool,
    kpca_dim: usize,
    kpca_degree: u32,
    gru_hidden: usize,
    gru_layers: usize,
    epochs: usize,
    learning_rate: f64,
    beam_width: usize,
    first_sentences: Option<usize>,
    train_count: usize,
    val_count: usize,
    test_count: usize,
}

fn parse_recipe(path: &Path, out_dir_override: Option<PathBuf>) -> Result<Recipe> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading recipe {}", path.display()))?;
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .ok_or_else(|| anyhow!("recipe line {}: expected 'key = value'", i + 1))?;
        map.insert(k, v);
    }
    let known = [
        "out_dir", "seed", "subjects", "sessions", "channels", "snr_db", "sentences", "feature",
        "bandpass", "notch", "kpca_dim", "kpca_degree", "gru_hidden", "gru_layers", "epochs",
        "learning_rate", "beam_width", "first_sentences", "train_subjects", "val_subjects",
        "test_subjects",
    ];
    for k in map.keys() {
        if !known.contains(&k.as_str()) {
            bail!("unknown recipe key '{k}'");
        }
    }
    let get = |k: &str| map.get(k).cloned();
    let parse_num = |k: &str, default: f64| -> Result<f64> {
        match get(k) {
            Some(v) => v.parse().map_err(|_| anyhow!("recipe key '{k}': bad number '{v}'")),
            None => Ok(default),
        }
    };
    let parse_flag = |k: &str, default: bool| -> Result<bool> {
        match get(k).as_deref() {
            Some("1") | Some("true") => Ok(true),
            Some("0") | Some("false") => Ok(false),
            Some(v) => bail!("recipe key '{k}': expected 0/1, got '{v}'"),
            None => Ok(default),
        }
    };
    let out_dir = out_dir_override
        .or_else(|| get("out_dir").map(PathBuf::from))
        .ok_or_else(|| anyhow!("recipe needs out_dir (or pass --out-dir)"))?;
    let sentences = match get("sentences") {
        Some(s) => s.split('|').map(|x| x.trim().to_string()).collect(),
        None => DEFAULT_SENTENCES.iter().map(|s| s.to_string()).collect(),
    };
    Ok(Recipe {
        out_dir,
        seed: parse_num("seed", 0.0)? as u64,
        subjects: parse_num("subjects", 12.0)? as usize,
        sessions: parse_num("sessions", 3.0)? as usize,
        channels: parse_num("channels", 31.0)? as usize,
        snr_db: parse_num("snr_db", 60.0)?,
        sentences,
        feature: get("feature").unwrap_or_else(|| "set1".into()),
        bandpass: parse_flag("bandpass", true)?,
        notch: parse_flag("notch", true)?,
        kpca_dim: parse_num("kpca_dim", 0.0)? as usize,
        kpca_degree: parse_num("kpca_degree", 3.0)? as u32,
        gru_hidden: parse_num("gru_hidden", 128.0)? as usize,
        gru_layers: parse_num("gru_layers", 1.0)? as usize,
        epochs: parse_num("epochs", 400.0)? as usize,
        learning_rate: parse_num("learning_rate", 1e-3)?,
        beam_width: parse_num("beam_width", 16.0)? as usize,
        first_sentences: get("first_sentences")
            .map(|v| v.parse::<usize>().map_err(|_| anyhow!("bad first_sentences")))
            .transpose()?,
        train_count: parse_num("train_subjects", 10.0)? as usize,
        val_count: parse_num("val_subjects", 1.0)? as usize,
        test_count: parse_num("test_subjects", 1.0)? as usize,
    })
}

/// The full generate -> extract -> (fit-kpca) -> train -> decode -> evaluate
/// chain from one recipe; every artifact lands under the recipe's out_dir.
fn cmd_run(a: RunArgs) -> Result<()> {
    let r = parse_recipe(&a.recipe, a.out_dir)?;
    if r.train_count + r.val_count + r.test_count != r.subjects {
        bail!(
            "split counts {}+{}+{} must sum to subjects {}",
            r.train_count,
            r.val_count,
            r.test_count,
            r.subjects
        );
    }
    std::fs::create_dir_all(&r.out_dir)
        .with_context(|| format!("creating {}", r.out_dir.display()))?;
    let corpus_dir = r.out_dir.join("corpus");
    eprintln!("[1/6] generating corpus");
    let manifest = generate_synthetic_corpus(
        &corpus_dir,
        r.seed,
        r.subjects,
        &r.sentences,
        r.sessions,
        r.channels,
        r.snr_db,
    )?;
    let subjects = manifest.subjects();
    let train_subjects = subjects[..r.train_count].to_vec();
    let val_subjects = subjects[r.train_count..r.train_count + r.val_count].to_vec();
    let test_subjects = subjects[r.train_count + r.val_count..].to_vec();
    let (_train_m, _val_m, _test_m) =
        split_by_subject(&manifest, &train_subjects, &val_subjects, &test_subjects)?;

    let filter = FilterArgs {
        bandpass: r.bandpass,
        bandpass_low_hz: 0.1,
        bandpass_high_hz: 70.0,
        bandpass_order: 4,
        notch: r.notch,
        notch_hz: 60.0,
        notch_quality: 30.0,
        artifact_hook: "none".into(),
    };
    let manifest_path = corpus_dir.join("manifest.txt");
    let raw = r.feature == "raw";
    let mut features_dir = r.out_dir.join("features");
    if !raw {
        eprintln!("[2/6] extracting features ({})", r.feature);
        cmd_extract_features(ExtractArgs {
            manifest: manifest_path.clone(),
            out_dir: features_dir.clone(),
            mode: r.feature.clone(),
            channels: None,
            filter: filter.clone(),
        })?;
        if r.kpca_dim > 0 {
            eprintln!("[3/6] fitting kernel PCA (target {})", r.kpca_dim);
            let reduced_dir = r.out_dir.join("features_reduced");
            cmd_fit_kpca(FitKpcaArgs {
                manifest: manifest_path.clone(),
                features_dir: features_dir.clone(),
                train_subjects: train_subjects.join(","),
                target_dim: r.kpca_dim,
                degree: r.kpca_degree,
                seed: r.seed,
                out_model: r.out_dir.join("kpca.model"),
                reduced_dir: reduced_dir.clone(),
            })?;
            features_dir = reduced_dir;
        } else {
            eprintln!("[3/6] kernel PCA disabled (kpca_dim = 0)");
        }
    } else {
        eprintln!("[2/6] raw front end: skipping feature extraction");
        eprintln!("[3/6] kernel PCA not applicable to raw mode");
    }

    eprintln!("[4/6] training ({} epochs)", r.epochs);
    let checkpoint_path = r.out_dir.join("checkpoint.ckpt");
    cmd_train(TrainArgs {
        manifest: manifest_path.clone(),
        features_dir: (!raw).then(|| features_dir.clone()),
        train_subjects: Some(train_subjects.join(",")),
        first_sentences: r.first_sentences,
        epochs: r.epochs,
        seed: r.seed,
        learning_rate: r.learning_rate,
        net: NetArgs {
            gru_hidden: r.gru_hidden,
            gru_layers: r.gru_layers,
            raw_front_end: raw,
            conv_filters: 100,
            conv_kernel: 3,
        },
        filter: filter.clone(),
        out_checkpoint: checkpoint_path.clone(),
        loss_csv: r.out_dir.join("loss.csv"),
    })?;

    eprintln!("[5/6] decoding train and test splits");
    for (label, subjects) in [("train", &train_subjects), ("test", &test_subjects)] {
        cmd_decode(DecodeArgs {
            checkpoint: checkpoint_path.clone(),
            manifest: manifest_path.clone(),
            features_dir: (!raw).then(|| features_dir.clone()),
            subjects: Some(subjects.join(",")),
            first_sentences: r.first_sentences,
            beam_width: r.beam_width,
            filter: filter.clone(),
            out: r.out_dir.join(format!("hyps_{label}.tsv")),
        })?;
    }

    eprintln!("[6/6] evaluating");
    for label in ["train", "test"] {
        cmd_evaluate(EvaluateArgs {
            hypotheses: r.out_dir.join(format!("hyps_{label}.tsv")),
            references: manifest_path.clone(),
            corpus_size: r.first_sentences.unwrap_or(r.sentences.len()),
            config_label: format!("gru{}x{}-{label}", r.gru_hidden, r.gru_layers),
            feature_set: r.feature.clone(),
            out_csv: Some(r.out_dir.join(format!("eval_{label}.csv"))),
        })?;
    }
    Ok(())
}
