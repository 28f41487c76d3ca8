//! Data model for paired speech/EEG recordings: character sets, utterance
//! manifests, subject-based splits, and a seeded synthetic corpus generator
//! for desk-scale experiments.

use crate::io::write_signal;
use crate::signal::MultiChannelSignal;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty transcript at index {0}")]
    EmptyTranscript(usize),
    #[error("charset_of requires at least one transcript")]
    NoTranscripts,
    #[error("union_charset requires at least one charset")]
    NoCharsets,
    #[error("split lists must be non-empty: {0}")]
    EmptySplit(&'static str),
    #[error("subject {0} appears in more than one split")]
    SplitOverlap(String),
    #[error("subject {0} is present in the manifest but in no split")]
    SplitUncovered(String),
    #[error("subject {0} named in a split but absent from the manifest")]
    SplitUnknownSubject(String),
    #[error("sentence count {0} out of range 1..=10")]
    SentenceRange(usize),
    #[error("generator needs at least one sentence and one channel")]
    BadGeneratorArgs,
    #[error("manifest parse error at line {line}: {message}")]
    ManifestParse { line: usize, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Ordered set of unique characters; ids are 1-based because id 0 is the
/// CTC blank and never a member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Charset {
    characters: Vec<char>,
}

impl Charset {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Charset {
        let mut characters = Vec::new();
        for c in chars {
            if !characters.contains(&c) {
                characters.push(c);
            }
        }
        Charset { characters }
    }

    pub fn characters(&self) -> &[char] {
        &self.characters
    }

    pub fn len(&self) -> usize {
        self.characters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.characters.is_empty()
    }

    /// 1-based id; 0 is reserved for the blank.
    pub fn id_of(&self, c: char) -> Option<usize> {
        self.characters.iter().position(|&x| x == c).map(|i| i + 1)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        if id == 0 {
            return None;
        }
        self.characters.get(id - 1).copied()
    }

    /// Transcript text to label ids; `None` when a character is missing.
    pub fn encode(&self, text: &str) -> Option<Vec<usize>> {
        text.chars().map(|c| self.id_of(c)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Option<String> {
        ids.iter().map(|&id| self.char_of(id)).collect()
    }
}

/// Union with deterministic first-seen ordering across the input list; ids
/// are reassigned 1..N.
pub fn union_charset(charsets: &[Charset]) -> Result<Charset, CorpusError> {
    if charsets.is_empty() {
        return Err(CorpusError::NoCharsets);
    }
    Ok(Charset::from_chars(
        charsets.iter().flat_map(|c| c.characters.iter().copied()),
    ))
}

/// Unique characters over all transcripts, first-seen order.
pub fn charset_of(transcripts: &[String]) -> Result<Charset, CorpusError> {
    if transcripts.is_empty() {
        return Err(CorpusError::NoTranscripts);
    }
    for (i, t) in transcripts.iter().enumerate() {
        if t.is_empty() {
            return Err(CorpusError::EmptyTranscript(i));
        }
    }
    Ok(Charset::from_chars(
        transcripts.iter().flat_map(|t| t.chars()),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Language {
    English,
    Chinese,
}

impl Language {
    pub fn as_str(&self) -> &'static str {
        match self {
            Language::English => "english",
            Language::Chinese => "chinese",
        }
    }

    pub fn parse(s: &str) -> Option<Language> {
        match s {
            "english" => Some(Language::English),
            "chinese" => Some(Language::Chinese),
            _ => None,
        }
    }

    /// Heuristic used by the synthetic generator: any CJK code point makes
    /// the sentence Chinese.
    pub fn of_text(text: &str) -> Language {
        if text.chars().any(|c| ('\u{4e00}'..='\u{9fff}').contains(&c)) {
            Language::Chinese
        } else {
            Language::English
        }
    }
}

/// One recorded (or synthesized) utterance; signal paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub subject_id: String,
    pub language: Language,
    pub session: u32,
    pub sentence_index: u32,
    pub transcript: String,
    pub eeg_file: String,
    pub audio_file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    /// Directory the relative signal paths resolve against.
    pub root: PathBuf,
    pub eeg_sample_rate_hz: f64,
    pub audio_sample_rate_hz: f64,
    pub eeg_channel_names: Vec<String>,
    pub entries: Vec<Utterance>,
}

impl CorpusManifest {
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for e in &self.entries {
            if !seen.contains(&e.subject_id) {
                seen.push(e.subject_id.clone());
            }
        }
        seen
    }

    pub fn eeg_path(&self, u: &Utterance) -> PathBuf {
        self.root.join(&u.eeg_file)
    }

    pub fn audio_path(&self, u: &Utterance) -> PathBuf {
        self.root.join(&u.audio_file)
    }

    pub fn transcripts(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.transcript.clone()).collect()
    }

    /// Serializes to the human-readable key/value manifest format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("format = eegctc-corpus-1\n");
        let _ = writeln!(out, "eeg_sample_rate_hz = {}", self.eeg_sample_rate_hz);
        let _ = writeln!(out, "audio_sample_rate_hz = {}", self.audio_sample_rate_hz);
        let _ = writeln!(out, "eeg_channels = {}", self.eeg_channel_names.join(","));
        for e in &self.entries {
            out.push_str("\n[utterance]\n");
            let _ = writeln!(out, "id = {}", e.id);
            let _ = writeln!(out, "subject_id = {}", e.subject_id);
            let _ = writeln!(out, "language = {}", e.language.as_str());
            let _ = writeln!(out, "session = {}", e.session);
            let _ = writeln!(out, "sentence_index = {}", e.sentence_index);
            let _ = writeln!(out, "transcript = {}", e.transcript);
            let _ = writeln!(out, "eeg_file = {}", e.eeg_file);
            let _ = writeln!(out, "audio_file = {}", e.audio_file);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_text()).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<CorpusManifest, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self::parse(&text, root)
    }

    fn parse(text: &str, root: PathBuf) -> Result<CorpusManifest, CorpusError> {
        let mut manifest = CorpusManifest {
            root,
            eeg_sample_rate_hz: 0.0,
            audio_sample_rate_hz: 0.0,
            eeg_channel_names: Vec::new(),
            entries: Vec::new(),
        };
        let err = |line: usize, message: &str| CorpusError::ManifestParse {
            line,
            message: message.to_string(),
        };
        let mut current: Option<Utterance> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "[utterance]" {
                if let Some(u) = current.take() {
                    manifest.entries.push(u);
                }
                current = Some(Utterance {
                    id: String::new(),
                    subject_id: String::new(),
                    language: Language::English,
                    session: 0,
                    sentence_index: 0,
                    transcript: String::new(),
                    eeg_file: String::new(),
                    audio_file: String::new(),
                });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(line_no, "expected 'key = value'"))?;
            match &mut current {
                None => match key {
                    "format" => {
                        if value != "eegctc-corpus-1" {
                            return Err(err(line_no, "unknown manifest format"));
                        }
                    }
                    "eeg_sample_rate_hz" => {
                        manifest.eeg_sample_rate_hz =
                            value.parse().map_err(|_| err(line_no, "bad sample rate"))?
                    }
                    "audio_sample_rate_hz" => {
                        manifest.audio_sample_rate_hz =
                            value.parse().map_err(|_| err(line_no, "bad sample rate"))?
                    }
                    "eeg_channels" => {
                        manifest.eeg_channel_names =
                            value.split(',').map(|s| s.trim().to_string()).collect()
                    }
                    _ => return Err(err(line_no, &format!("unknown header key '{key}'"))),
                },
                Some(u) => match key {
                    "id" => u.id = value.to_string(),
                    "subject_id" => u.subject_id = value.to_string(),
                    "language" => {
                        u.language = Language::parse(value)
                            .ok_or_else(|| err(line_no, "unknown language"))?
                    }
                    "session" => {
                        u.session = value.parse().map_err(|_| err(line_no, "bad session"))?
                    }
                    "sentence_index" => {
                        u.sentence_index =
                            value.parse().map_err(|_| err(line_no, "bad sentence index"))?
                    }
                    "transcript" => u.transcript = value.to_string(),
                    "eeg_file" => u.eeg_file = value.to_string(),
                    "audio_file" => u.audio_file = value.to_string(),
                    _ => return Err(err(line_no, &format!("unknown utterance key '{key}'"))),
                },
            }
        }
        if let Some(u) = current.take() {
            manifest.entries.push(u);
        }
        for (i, u) in manifest.entries.iter().enumerate() {
            if u.transcript.is_empty() {
                return Err(CorpusError::EmptyTranscript(i));
            }
        }
        Ok(manifest)
    }
}

/// Partitions by subject; the three lists must be disjoint, non-empty and
/// together cover exactly the manifest's subjects.
pub fn split_by_subject(
    manifest: &CorpusManifest,
    train: &[String],
    validation: &[String],
    test: &[String],
) -> Result<(CorpusManifest, CorpusManifest, CorpusManifest), CorpusError> {
    for (name, list) in [("train", train), ("validation", validation), ("test", test)] {
        if list.is_empty() {
            return Err(CorpusError::EmptySplit(name));
        }
    }
    let mut seen: BTreeSet<&String> = BTreeSet::new();
    for s in train.iter().chain(validation).chain(test) {
        if !seen.insert(s) {
            return Err(CorpusError::SplitOverlap(s.clone()));
        }
    }
    let manifest_subjects: BTreeSet<String> = manifest.subjects().into_iter().collect();
    for s in &seen {
        if !manifest_subjects.contains(*s) {
            return Err(CorpusError::SplitUnknownSubject((*s).clone()));
        }
    }
    for s in &manifest_subjects {
        if !seen.contains(s) {
            return Err(CorpusError::SplitUncovered(s.clone()));
        }
    }
    let take = |list: &[String]| CorpusManifest {
        root: manifest.root.clone(),
        eeg_sample_rate_hz: manifest.eeg_sample_rate_hz,
        audio_sample_rate_hz: manifest.audio_sample_rate_hz,
        eeg_channel_names: manifest.eeg_channel_names.clone(),
        entries: manifest
            .entries
            .iter()
            .filter(|u| list.contains(&u.subject_id))
            .cloned()
            .collect(),
    };
    Ok((take(train), take(validation), take(test)))
}

/// Keeps utterances with sentence_index <= n; n must lie in 1..=10.
pub fn take_first_sentences(
    manifest: &CorpusManifest,
    n: usize,
) -> Result<CorpusManifest, CorpusError> {
    if !(1..=10).contains(&n) {
        return Err(CorpusError::SentenceRange(n));
    }
    Ok(CorpusManifest {
        root: manifest.root.clone(),
        eeg_sample_rate_hz: manifest.eeg_sample_rate_hz,
        audio_sample_rate_hz: manifest.audio_sample_rate_hz,
        eeg_channel_names: manifest.eeg_channel_names.clone(),
        entries: manifest
            .entries
            .iter()
            .filter(|u| u.sentence_index as usize <= n)
            .cloned()
            .collect(),
    })
}

pub const EEG_SAMPLE_RATE_HZ: f64 = 1000.0;
pub const AUDIO_SAMPLE_RATE_HZ: f64 = 16000.0;
/// Duration of one character's oscillatory signature.
pub const CHAR_DURATION_S: f64 = 0.12;

/// SplitMix-style mixer giving decorrelated stream seeds from structured
/// inputs.
fn mix_seed(parts: &[u64]) -> u64 {
    let mut x: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        x ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(x << 6)
            .wrapping_add(x >> 2);
        x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x ^= x >> 27;
    }
    x
}

/// Per-character oscillatory signature: one sinusoid frequency per channel
/// drawn from 4-40 Hz, plus a per-character audio tone.
struct CharSignature {
    eeg_freqs: Vec<f64>,
    eeg_phases: Vec<f64>,
    audio_freq: f64,
}

fn char_signature(seed: u64, c: char, channels: usize) -> CharSignature {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 1, c as u64]));
    let eeg_freqs = (0..channels).map(|_| rng.gen_range(4.0..40.0)).collect();
    let eeg_phases = (0..channels)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let audio_freq = rng.gen_range(200.0..2000.0);
    CharSignature {
        eeg_freqs,
        eeg_phases,
        audio_freq,
    }
}

fn synth_utterance(
    seed: u64,
    subject: usize,
    session: usize,
    sentence_index: usize,
    transcript: &str,
    channels: usize,
    snr_db: f64,
) -> (MultiChannelSignal, MultiChannelSignal) {
    // Per-subject jitter: a small frequency offset and amplitude scale.
    let mut subj_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 2, subject as u64]));
    let freq_offset: f64 = subj_rng.gen_range(-0.25..0.25);
    let amplitude: f64 = subj_rng.gen_range(0.9..1.1);

    let chars: Vec<char> = transcript.chars().collect();
    let eeg_per_char = (CHAR_DURATION_S * EEG_SAMPLE_RATE_HZ).round() as usize;
    let audio_per_char = (CHAR_DURATION_S * AUDIO_SAMPLE_RATE_HZ).round() as usize;
    let eeg_len = chars.len() * eeg_per_char;
    let audio_len = chars.len() * audio_per_char;

    let mut eeg = Array2::zeros((channels, eeg_len));
    let mut audio = Array2::zeros((1, audio_len));
    for (k, &c) in chars.iter().enumerate() {
        let sig = char_signature(seed, c, channels);
        for t in 0..eeg_per_char {
            let time = t as f64 / EEG_SAMPLE_RATE_HZ;
            for ch in 0..channels {
                let f = sig.eeg_freqs[ch] + freq_offset;
                eeg[(ch, k * eeg_per_char + t)] = amplitude
                    * (std::f64::consts::TAU * f * time + sig.eeg_phases[ch]).sin();
            }
        }
        for t in 0..audio_per_char {
            let time = t as f64 / AUDIO_SAMPLE_RATE_HZ;
            audio[(0, k * audio_per_char + t)] =
                amplitude * (std::f64::consts::TAU * sig.audio_freq * time).sin();
        }
    }

    // Additive Gaussian noise at the requested SNR relative to the measured
    // signal power.
    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
        seed,
        3,
        subject as u64,
        session as u64,
        sentence_index as u64,
    ]));
    let snr_linear = 10f64.powf(snr_db / 10.0);
    for signal in [&mut eeg, &mut audio] {
        let power = signal.iter().map(|v| v * v).sum::<f64>() / signal.len() as f64;
        let noise_std = (power / snr_linear).sqrt();
        for v in signal.iter_mut() {
            let n: f64 = noise_rng.sample(StandardNormal);
            *v += noise_std * n;
        }
    }

    let eeg_signal = MultiChannelSignal::new(
        eeg,
        EEG_SAMPLE_RATE_HZ,
        (0..channels).map(|c| format!("CH{:02}", c + 1)).collect(),
    )
    .expect("valid synthetic EEG geometry");
    let audio_signal =
        MultiChannelSignal::new(audio, AUDIO_SAMPLE_RATE_HZ, vec!["AUDIO".to_string()])
            .expect("valid synthetic audio geometry");
    (eeg_signal, audio_signal)
}

/// Writes one EEG and one audio file per (subject, session, sentence) under
/// `out_dir` and returns the manifest. Bitwise reproducible from the seed.
#[allow(clippy::too_many_arguments)]
pub fn generate_synthetic_corpus(
    out_dir: &Path,
    seed: u64,
    subjects: usize,
    sentences: &[String],
    sessions: usize,
    channels: usize,
    snr_db: f64,
) -> Result<CorpusManifest, CorpusError> {
    if sentences.is_empty() || channels == 0 || subjects == 0 || sessions == 0 {
        return Err(CorpusError::BadGeneratorArgs);
    }
    for (i, s) in sentences.iter().enumerate() {
        if s.is_empty() {
            return Err(CorpusError::EmptyTranscript(i));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|source| CorpusError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut manifest = CorpusManifest {
        root: out_dir.to_path_buf(),
        eeg_sample_rate_hz: EEG_SAMPLE_RATE_HZ,
        audio_sample_rate_hz: AUDIO_SAMPLE_RATE_HZ,
        eeg_channel_names: (0..channels).map(|c| format!("CH{:02}", c + 1)).collect(),
        entries: Vec::new(),
    };
    for subject in 1..=subjects {
        for session in 1..=sessions {
            for (si, sentence) in sentences.iter().enumerate() {
                let sentence_index = si + 1;
                let (eeg, audio) = synth_utterance(
                    seed,
                    subject,
                    session,
                    sentence_index,
                    sentence,
                    channels,
                    snr_db,
                );
                let id = format!("s{subject:02}_r{session}_u{sentence_index:02}");
                let eeg_file = format!("{id}.eeg.sig");
                let audio_file = format!("{id}.audio.sig");
                let io_err = |source: crate::io::IoError| CorpusError::Io {
                    path: out_dir.to_path_buf(),
                    source: std::io::Error::other(source.to_string()),
                };
                write_signal(&out_dir.join(&eeg_file), &eeg).map_err(io_err)?;
                write_signal(&out_dir.join(&audio_file), &audio).map_err(io_err)?;
                manifest.entries.push(Utterance {
                    id,
                    subject_id: format!("s{subject:02}"),
                    language: Language::of_text(sentence),
                    session: session as u32,
                    sentence_index: sentence_index as u32,
                    transcript: sentence.clone(),
                    eeg_file,
                    audio_file,
                });
            }
        }
    }
    manifest.save(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}
