//! Windowed feature extraction: per-channel EEG feature banks, MFCC
//! acoustic features, delta appending and feature concatenation, all at a
//! common frame rate (100 Hz with the default 10 ms hop).

use ndarray::{concatenate, Array2, Axis};
use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

use crate::signal::MultiChannelSignal;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("signal too short: {0}")]
    TooShort(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("frame rates differ: {0} vs {1} Hz")]
    FrameRateMismatch(f64, f64),
    #[error("unknown channel '{0}'")]
    UnknownChannel(String),
}

/// Time-major matrix of feature frames at a stated frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    /// `[time_frames x dim]`.
    pub frames: Array2<f64>,
    pub frame_rate_hz: f64,
    pub descriptor: String,
}

impl FeatureSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Per-channel window statistics available to a feature bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EegFeature {
    Rms,
    ZeroCrossingRate,
    MovingWindowAverage,
    Kurtosis,
    SpectralEntropy,
}

impl EegFeature {
    pub fn name(self) -> &'static str {
        match self {
            EegFeature::Rms => "rms",
            EegFeature::ZeroCrossingRate => "zero_crossing_rate",
            EegFeature::MovingWindowAverage => "moving_window_average",
            EegFeature::Kurtosis => "kurtosis",
            EegFeature::SpectralEntropy => "spectral_entropy",
        }
    }

    pub fn parse(s: &str) -> Result<Self, FeatureError> {
        match s {
            "rms" => Ok(EegFeature::Rms),
            "zero_crossing_rate" => Ok(EegFeature::ZeroCrossingRate),
            "moving_window_average" => Ok(EegFeature::MovingWindowAverage),
            "kurtosis" => Ok(EegFeature::Kurtosis),
            "spectral_entropy" => Ok(EegFeature::SpectralEntropy),
            other => Err(FeatureError::Config(format!("unknown EEG feature '{other}'"))),
        }
    }
}

/// Which per-channel features to compute and over what window/hop.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBankSpec {
    pub per_channel_features: Vec<EegFeature>,
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl FeatureBankSpec {
    /// Five-feature bank; 31 channels give the dimension 155.
    pub fn set1() -> Self {
        Self {
            per_channel_features: vec![
                EegFeature::Rms,
                EegFeature::ZeroCrossingRate,
                EegFeature::MovingWindowAverage,
                EegFeature::Kurtosis,
                EegFeature::SpectralEntropy,
            ],
            window_ms: 50.0,
            hop_ms: 10.0,
        }
    }

    /// Three-feature bank; 31 channels give the dimension 93.
    pub fn set2() -> Self {
        Self {
            per_channel_features: vec![
                EegFeature::Rms,
                EegFeature::ZeroCrossingRate,
                EegFeature::MovingWindowAverage,
            ],
            window_ms: 50.0,
            hop_ms: 10.0,
        }
    }

    fn validate(&self) -> Result<(), FeatureError> {
        if self.per_channel_features.is_empty() {
            return Err(FeatureError::Config("feature list is empty".into()));
        }
        if !(self.hop_ms > 0.0 && self.window_ms > 0.0 && self.hop_ms <= self.window_ms) {
            return Err(FeatureError::Config(format!(
                "need 0 < hop_ms ({}) <= window_ms ({})",
                self.hop_ms, self.window_ms
            )));
        }
        Ok(())
    }
}

fn window_stat(feature: EegFeature, w: &[f64]) -> f64 {
    match feature {
        EegFeature::Rms => (w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64).sqrt(),
        EegFeature::ZeroCrossingRate => {
            if w.len() < 2 {
                return 0.0;
            }
            let crossings = w.windows(2).filter(|p| p[0] * p[1] < 0.0).count();
            crossings as f64 / (w.len() - 1) as f64
        }
        EegFeature::MovingWindowAverage => w.iter().sum::<f64>() / w.len() as f64,
        EegFeature::Kurtosis => {
            let n = w.len() as f64;
            let mean = w.iter().sum::<f64>() / n;
            let m2 = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            if m2 <= 0.0 {
                return 0.0; // constant window
            }
            let m4 = w.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
            m4 / (m2 * m2) - 3.0
        }
        EegFeature::SpectralEntropy => {
            let n = w.len();
            let mut buf: Vec<Complex<f64>> = w.iter().map(|&x| Complex::new(x, 0.0)).collect();
            FftPlanner::new().plan_fft_forward(n).process(&mut buf);
            let half = n / 2 + 1;
            let psd: Vec<f64> = buf[..half].iter().map(|c| c.norm_sqr()).collect();
            let total: f64 = psd.iter().sum();
            if total <= 0.0 {
                return 0.0; // silent window
            }
            -psd.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| {
                    let q = p / total;
                    q * q.ln()
                })
                .sum::<f64>()
        }
    }
}

/// Per-channel window statistics; dim = channels x features, channel-major.
pub fn extract_eeg_features(
    signal: &MultiChannelSignal,
    spec: &FeatureBankSpec,
) -> Result<FeatureSequence, FeatureError> {
    spec.validate()?;
    let fs = signal.sample_rate_hz;
    let win = (spec.window_ms / 1000.0 * fs).round() as usize;
    let hop = (spec.hop_ms / 1000.0 * fs).round() as usize;
    if win == 0 || hop == 0 {
        return Err(FeatureError::Config(
            "window/hop shorter than one sample at this rate".into(),
        ));
    }
    if signal.len() < win {
        return Err(FeatureError::TooShort(format!(
            "{} samples < one {win}-sample window",
            signal.len()
        )));
    }
    let num_frames = (signal.len() - win) / hop + 1;
    let channels = signal.channels();
    let nfeat = spec.per_channel_features.len();
    let mut frames = Array2::zeros((num_frames, channels * nfeat));
    for t in 0..num_frames {
        let start = t * hop;
        for ch in 0..channels {
            let row = signal.samples.row(ch);
            let w = &row.as_slice().expect("row-major samples")[start..start + win];
            for (j, &f) in spec.per_channel_features.iter().enumerate() {
                frames[(t, ch * nfeat + j)] = window_stat(f, w);
            }
        }
    }
    let names: Vec<&str> = spec.per_channel_features.iter().map(|f| f.name()).collect();
    Ok(FeatureSequence {
        frames,
        frame_rate_hz: 1000.0 / spec.hop_ms,
        descriptor: format!(
            "eeg-bank[{}] win {} ms hop {} ms over {} channels",
            names.join(","),
            spec.window_ms,
            spec.hop_ms,
            channels
        ),
    })
}

const MFCC_SAMPLE_RATE: f64 = 16_000.0;
const PRE_EMPHASIS: f64 = 0.97;
const FFT_SIZE: usize = 512;
const MEL_BANDS: usize = 26;
const LOG_FLOOR: f64 = 1e-10;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// MFCC over 16 kHz single-channel audio: pre-emphasis, periodic Hann
/// windows, 512-point magnitude spectrum, 26 mel bands, log, DCT-II.
pub fn extract_mfcc(
    audio: &MultiChannelSignal,
    num_coeffs: usize,
    window_ms: f64,
    hop_ms: f64,
) -> Result<FeatureSequence, FeatureError> {
    if audio.channels() != 1 {
        return Err(FeatureError::Config(format!(
            "MFCC expects single-channel audio, got {} channels",
            audio.channels()
        )));
    }
    if audio.sample_rate_hz != MFCC_SAMPLE_RATE {
        return Err(FeatureError::Config(format!(
            "MFCC expects {MFCC_SAMPLE_RATE} Hz audio, got {} Hz (resampling is out of scope)",
            audio.sample_rate_hz
        )));
    }
    if !(1..=MEL_BANDS).contains(&num_coeffs) {
        return Err(FeatureError::Config(format!(
            "num_coeffs must be in 1..={MEL_BANDS}, got {num_coeffs}"
        )));
    }
    if audio.is_empty() {
        return Err(FeatureError::TooShort("empty audio".into()));
    }
    let fs = audio.sample_rate_hz;
    let win = (window_ms / 1000.0 * fs).round() as usize;
    let hop = (hop_ms / 1000.0 * fs).round() as usize;
    if win == 0 || hop == 0 || win > FFT_SIZE {
        return Err(FeatureError::Config(format!(
            "window of {win} samples not in 1..={FFT_SIZE}"
        )));
    }
    let x = audio.samples.row(0);
    let x = x.as_slice().expect("row-major samples");
    if x.len() < win {
        return Err(FeatureError::TooShort(format!(
            "{} samples < one {win}-sample window",
            x.len()
        )));
    }

    // Pre-emphasis.
    let mut emph = Vec::with_capacity(x.len());
    emph.push(x[0]);
    for i in 1..x.len() {
        emph.push(x[i] - PRE_EMPHASIS * x[i - 1]);
    }

    let hann: Vec<f64> = (0..win)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos()))
        .collect();

    // Triangular mel filterbank over the 0..Nyquist magnitude spectrum.
    let half = FFT_SIZE / 2 + 1;
    let mel_lo = hz_to_mel(0.0);
    let mel_hi = hz_to_mel(fs / 2.0);
    let centers: Vec<f64> = (0..MEL_BANDS + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (MEL_BANDS + 1) as f64))
        .map(|f| f * FFT_SIZE as f64 / fs)
        .collect();
    let filterbank: Vec<Vec<(usize, f64)>> = (0..MEL_BANDS)
        .map(|m| {
            let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
            (0..half)
                .filter_map(|k| {
                    let kf = k as f64;
                    let w = if kf >= lo && kf <= mid && mid > lo {
                        (kf - lo) / (mid - lo)
                    } else if kf > mid && kf <= hi && hi > mid {
                        (hi - kf) / (hi - mid)
                    } else {
                        return None;
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect()
        })
        .collect();

    let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
    let num_frames = (x.len() - win) / hop + 1;
    let mut frames = Array2::zeros((num_frames, num_coeffs));
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    for t in 0..num_frames {
        let start = t * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < win {
                Complex::new(emph[start + i] * hann[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..half].iter().map(|c| c.norm_sqr()).collect();
        let log_mel: Vec<f64> = filterbank
            .iter()
            .map(|taps| {
                let e: f64 = taps.iter().map(|&(k, w)| w * power[k]).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect();
        // DCT-II, first num_coeffs coefficients.
        for k in 0..num_coeffs {
            let c: f64 = log_mel
                .iter()
                .enumerate()
                .map(|(m, &v)| {
                    v * (std::f64::consts::PI * k as f64 * (m as f64 + 0.5) / MEL_BANDS as f64)
                        .cos()
                })
                .sum();
            frames[(t, k)] = c;
        }
    }
    Ok(FeatureSequence {
        frames,
        frame_rate_hz: 1000.0 / hop_ms,
        descriptor: format!("mfcc-{num_coeffs} win {window_ms} ms hop {hop_ms} ms"),
    })
}

/// Regression-delta half-window.
const DELTA_HALF_WINDOW: usize = 2;

fn regression_delta(frames: &Array2<f64>) -> Array2<f64> {
    let n = DELTA_HALF_WINDOW as isize;
    let denom: f64 = 2.0 * (1..=DELTA_HALF_WINDOW).map(|k| (k * k) as f64).sum::<f64>();
    let t_max = frames.nrows() as isize - 1;
    let mut out = Array2::zeros(frames.raw_dim());
    for t in 0..frames.nrows() as isize {
        for d in 0..frames.ncols() {
            let mut acc = 0.0;
            for k in 1..=n {
                let fwd = (t + k).clamp(0, t_max) as usize;
                let bwd = (t - k).clamp(0, t_max) as usize;
                acc += k as f64 * (frames[(fwd, d)] - frames[(bwd, d)]);
            }
            out[(t as usize, d)] = acc / denom;
        }
    }
    out
}

/// Append delta and delta-delta blocks: `[static | delta | delta-delta]`.
pub fn append_deltas(features: &FeatureSequence) -> Result<FeatureSequence, FeatureError> {
    let min = 2 * DELTA_HALF_WINDOW + 1;
    if features.num_frames() < min {
        return Err(FeatureError::TooShort(format!(
            "{} frames < {min} needed for deltas",
            features.num_frames()
        )));
    }
    let delta = regression_delta(&features.frames);
    let delta2 = regression_delta(&delta);
    let frames = concatenate(
        Axis(1),
        &[features.frames.view(), delta.view(), delta2.view()],
    )
    .expect("matching frame counts");
    Ok(FeatureSequence {
        frames,
        frame_rate_hz: features.frame_rate_hz,
        descriptor: format!("{}+deltas", features.descriptor),
    })
}

/// Frame-wise concatenation `[a_t | b_t]`, truncating to the shorter stream.
pub fn concat_features(
    a: &FeatureSequence,
    b: &FeatureSequence,
) -> Result<FeatureSequence, FeatureError> {
    if (a.frame_rate_hz - b.frame_rate_hz).abs() > 1e-9 * a.frame_rate_hz.abs() {
        return Err(FeatureError::FrameRateMismatch(
            a.frame_rate_hz,
            b.frame_rate_hz,
        ));
    }
    let t = a.num_frames().min(b.num_frames());
    let frames = concatenate(
        Axis(1),
        &[
            a.frames.slice(ndarray::s![..t, ..]),
            b.frames.slice(ndarray::s![..t, ..]),
        ],
    )
    .expect("matching frame counts");
    Ok(FeatureSequence {
        frames,
        frame_rate_hz: a.frame_rate_hz,
        descriptor: format!("[{} | {}]", a.descriptor, b.descriptor),
    })
}

/// Restrict and reorder channels to the requested names.
pub fn select_channels(
    signal: &MultiChannelSignal,
    names: &[String],
) -> Result<MultiChannelSignal, FeatureError> {
    let mut rows = Vec::with_capacity(names.len());
    for name in names {
        let idx = signal
            .channel_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| FeatureError::UnknownChannel(name.clone()))?;
        rows.push(idx);
    }
    let samples = signal.samples.select(Axis(0), &rows);
    Ok(MultiChannelSignal {
        samples,
        sample_rate_hz: signal.sample_rate_hz,
        channel_names: names.to_vec(),
    })
}
