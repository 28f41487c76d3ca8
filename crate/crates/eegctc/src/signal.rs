//! Digital preprocessing of multichannel signals: Butterworth band-pass and
//! biquad notch design, zero-phase application, frequency-response
//! evaluation and a pluggable artifact-removal hook.
//!
//! Filters are held as cascaded second-order sections. The expanded
//! numerator/denominator coefficient lists are kept for inspection, but all
//! arithmetic (response evaluation, stability, application) runs on the
//! sections: the expanded polynomial of a narrow band-pass is too
//! ill-conditioned to evaluate near z = 1.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("invalid filter design: {0}")]
    Design(String),
    #[error("signal too short: length {len} requires more than {min} samples")]
    TooShort { len: usize, min: usize },
    #[error("frequency {0} Hz outside [0, Nyquist]")]
    FrequencyOutOfRange(f64),
    #[error("unknown artifact-removal hook '{0}'")]
    UnknownHook(String),
    #[error("channel geometry mismatch: {0}")]
    Geometry(String),
}

/// Multichannel uniformly-sampled time series (raw EEG or the audio carrier).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelSignal {
    /// `[channels x time]`, row per channel.
    pub samples: Array2<f64>,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
}

impl MultiChannelSignal {
    pub fn new(
        samples: Array2<f64>,
        sample_rate_hz: f64,
        channel_names: Vec<String>,
    ) -> Result<Self, SignalError> {
        if sample_rate_hz <= 0.0 {
            return Err(SignalError::Geometry(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if channel_names.len() != samples.nrows() {
            return Err(SignalError::Geometry(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                samples.nrows()
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            channel_names,
        })
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }
}

/// One second-order section, denominator normalized to a0 = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc >= 0.0 {
            let s = disc.sqrt();
            [
                Complex64::new((-a1 + s) / 2.0, 0.0),
                Complex64::new((-a1 - s) / 2.0, 0.0),
            ]
        } else {
            let s = (-disc).sqrt() / 2.0;
            [
                Complex64::new(-a1 / 2.0, s),
                Complex64::new(-a1 / 2.0, -s),
            ]
        }
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = self.a[0] + z_inv * (self.a[1] + z_inv * self.a[2]);
        num / den
    }
}

/// IIR filter in cascaded second-order-section form, with the expanded
/// transfer-function coefficients retained for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct IirFilter {
    pub sections: Vec<Biquad>,
    pub numerator_coeffs: Vec<f64>,
    pub denominator_coeffs: Vec<f64>,
    pub design_descriptor: String,
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, &pi) in p.iter().enumerate() {
        for (j, &qj) in q.iter().enumerate() {
            out[i + j] += pi * qj;
        }
    }
    out
}

fn trim_trailing_zeros(mut v: Vec<f64>) -> Vec<f64> {
    while v.len() > 1 && v.last() == Some(&0.0) {
        v.pop();
    }
    v
}

impl IirFilter {
    pub fn from_sections(sections: Vec<Biquad>, design_descriptor: String) -> Self {
        let mut num = vec![1.0];
        let mut den = vec![1.0];
        for s in &sections {
            num = poly_mul(&num, &s.b);
            den = poly_mul(&den, &s.a);
        }
        Self {
            sections,
            numerator_coeffs: trim_trailing_zeros(num),
            denominator_coeffs: trim_trailing_zeros(den),
            design_descriptor,
        }
    }

    /// Build from short transfer-function coefficients (at most 3 of each).
    pub fn from_coeffs(
        numerator: &[f64],
        denominator: &[f64],
        design_descriptor: &str,
    ) -> Result<Self, SignalError> {
        if numerator.is_empty() || denominator.is_empty() {
            return Err(SignalError::Design("empty coefficient list".into()));
        }
        if numerator.len() > 3 || denominator.len() > 3 {
            return Err(SignalError::Design(
                "from_coeffs supports at most second order; compose sections instead".into(),
            ));
        }
        if denominator[0] != 1.0 {
            return Err(SignalError::Design(
                "denominator leading coefficient must be 1".into(),
            ));
        }
        let mut b = [0.0; 3];
        let mut a = [0.0; 3];
        b[..numerator.len()].copy_from_slice(numerator);
        a[..denominator.len()].copy_from_slice(denominator);
        Ok(Self::from_sections(
            vec![Biquad { b, a }],
            design_descriptor.to_string(),
        ))
    }

    /// Filter order, max(len(b), len(a)) - 1 of the expanded form.
    pub fn order(&self) -> usize {
        self.numerator_coeffs
            .len()
            .max(self.denominator_coeffs.len())
            .saturating_sub(1)
    }

    /// All section poles strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.sections
            .iter()
            .flat_map(|s| s.poles())
            .all(|p| p.norm() < 1.0)
    }
}

/// Butterworth band-pass of the given order (2x order poles after the
/// low-pass-to-band-pass transform), bilinear-discretized into second-order
/// sections and gain-normalized at the geometric-mean center frequency.
pub fn design_bandpass(
    low_hz: f64,
    high_hz: f64,
    order: usize,
    sample_rate_hz: f64,
) -> Result<IirFilter, SignalError> {
    let nyquist = sample_rate_hz / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(SignalError::Design(format!(
            "cutoffs must satisfy 0 < {low_hz} < {high_hz} < Nyquist {nyquist}"
        )));
    }
    if order < 1 {
        return Err(SignalError::Design("order must be >= 1".into()));
    }

    let fs2 = 2.0 * sample_rate_hz;
    // Bilinear prewarp.
    let w1 = fs2 * (PI * low_hz / sample_rate_hz).tan();
    let w2 = fs2 * (PI * high_hz / sample_rate_hz).tan();
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    // Analog low-pass prototype poles on the left-half unit circle; the
    // band-pass transform splits each into two, the bilinear transform maps
    // them into z. Zeros land at z = +1 and z = -1, one pair per section.
    let n = order;
    let mut digital_poles = Vec::with_capacity(2 * n);
    for k in 1..=n {
        let theta = PI * (2.0 * k as f64 - 1.0 + n as f64) / (2.0 * n as f64);
        let p = Complex64::new(theta.cos(), theta.sin());
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0_sq).sqrt();
        for s in [(pb + disc) / 2.0, (pb - disc) / 2.0] {
            digital_poles.push((fs2 + s) / (fs2 - s));
        }
    }

    // Group poles into conjugate (or real) pairs, deterministically.
    let mut remaining = digital_poles;
    let mut sections = Vec::with_capacity(n);
    while !remaining.is_empty() {
        // Take the pole with the largest imaginary part, then its conjugate
        // partner (or, for real poles, the nearest other real pole).
        let idx = (0..remaining.len())
            .max_by(|&i, &j| {
                remaining[i]
                    .im
                    .partial_cmp(&remaining[j].im)
                    .unwrap()
                    .then(remaining[i].re.partial_cmp(&remaining[j].re).unwrap())
            })
            .unwrap();
        let p1 = remaining.swap_remove(idx);
        let target = p1.conj();
        let jdx = (0..remaining.len())
            .min_by(|&i, &j| {
                (remaining[i] - target)
                    .norm()
                    .partial_cmp(&(remaining[j] - target).norm())
                    .unwrap()
            })
            .unwrap();
        let p2 = remaining.swap_remove(jdx);
        let a1 = -(p1 + p2).re;
        let a2 = (p1 * p2).re;
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0], // zeros at z = +1 and z = -1
            a: [1.0, a1, a2],
        });
    }

    let mut filter = IirFilter::from_sections(
        sections,
        format!(
            "butterworth bandpass order {order}, {low_hz}-{high_hz} Hz @ {sample_rate_hz} Hz"
        ),
    );
    // Unity gain at the geometric-mean passband center.
    let center_hz = (low_hz * high_hz).sqrt();
    let gain = frequency_response(&filter, &[center_hz], sample_rate_hz)?[0].norm();
    let per_section = gain.powf(1.0 / n as f64);
    for s in &mut filter.sections {
        for c in &mut s.b {
            *c /= per_section;
        }
    }
    let expanded = IirFilter::from_sections(filter.sections, filter.design_descriptor);
    if !expanded.is_stable() {
        return Err(SignalError::Design(
            "designed band-pass is unstable; cutoffs too extreme for the sample rate".into(),
        ));
    }
    Ok(expanded)
}

/// Second-order IIR notch at `center_hz` with the given quality factor.
pub fn design_notch(
    center_hz: f64,
    quality: f64,
    sample_rate_hz: f64,
) -> Result<IirFilter, SignalError> {
    let nyquist = sample_rate_hz / 2.0;
    if !(center_hz > 0.0 && center_hz < nyquist) {
        return Err(SignalError::Design(format!(
            "notch center {center_hz} Hz must lie in (0, Nyquist {nyquist})"
        )));
    }
    if quality <= 0.0 {
        return Err(SignalError::Design("quality must be positive".into()));
    }
    let w0 = 2.0 * PI * center_hz / sample_rate_hz;
    let alpha = w0.sin() / (2.0 * quality);
    let a0 = 1.0 + alpha;
    Ok(IirFilter::from_sections(
        vec![Biquad {
            b: [1.0 / a0, -2.0 * w0.cos() / a0, 1.0 / a0],
            a: [1.0, -2.0 * w0.cos() / a0, (1.0 - alpha) / a0],
        }],
        format!("iir notch {center_hz} Hz, Q {quality} @ {sample_rate_hz} Hz"),
    ))
}

/// Evaluate H(e^{j 2 pi f / fs}) at each requested frequency.
pub fn frequency_response(
    filter: &IirFilter,
    freqs_hz: &[f64],
    sample_rate_hz: f64,
) -> Result<Vec<Complex64>, SignalError> {
    let nyquist = sample_rate_hz / 2.0;
    freqs_hz
        .iter()
        .map(|&f| {
            if !(0.0..=nyquist).contains(&f) {
                return Err(SignalError::FrequencyOutOfRange(f));
            }
            let w = 2.0 * PI * f / sample_rate_hz;
            let z_inv = Complex64::new(0.0, -w).exp();
            Ok(filter
                .sections
                .iter()
                .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv)))
        })
        .collect()
}

/// One biquad pass in direct form II transposed with initial state `zi`.
fn biquad_filter(sec: &Biquad, x: &[f64], zi: [f64; 2]) -> Vec<f64> {
    let [b0, b1, b2] = sec.b;
    let [_, a1, a2] = sec.a;
    let (mut z1, mut z2) = (zi[0], zi[1]);
    let mut y = Vec::with_capacity(x.len());
    for &xi in x {
        let yi = b0 * xi + z1;
        z1 = b1 * xi + z2 - a1 * yi;
        z2 = b2 * xi - a2 * yi;
        y.push(yi);
    }
    y
}

/// Steady-state state for a unit step input (scaled by the first sample when
/// filtering, so edge transients start from the local DC level).
fn biquad_zi(sec: &Biquad) -> [f64; 2] {
    let [b0, b1, b2] = sec.b;
    let [_, a1, a2] = sec.a;
    // Solve (I - A^T) zi = B for the 2-state companion form.
    let m00 = 1.0 + a1;
    let m01 = -1.0;
    let m10 = a2;
    let m11 = 1.0;
    let r0 = b1 - a1 * b0;
    let r1 = b2 - a2 * b0;
    let det = m00 * m11 - m01 * m10;
    [(r0 * m11 - r1 * m01) / det, (m00 * r1 - m10 * r0) / det]
}

fn sos_forward(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    for sec in sections {
        let zi = biquad_zi(sec);
        let x0 = cur[0];
        cur = biquad_filter(sec, &cur, [zi[0] * x0, zi[1] * x0]);
    }
    cur
}

fn filtfilt_channel(filter: &IirFilter, x: &[f64]) -> Vec<f64> {
    let padlen = 3 * filter.order();
    // Odd reflection about the first/last samples.
    let mut ext = Vec::with_capacity(x.len() + 2 * padlen);
    for i in (1..=padlen).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    let last = x.len() - 1;
    for i in 1..=padlen {
        ext.push(2.0 * x[last] - x[last - i]);
    }

    let fwd = sos_forward(&filter.sections, &ext);
    let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
    rev = sos_forward(&filter.sections, &rev);
    rev.reverse();
    rev[padlen..padlen + x.len()].to_vec()
}

/// Zero-phase forward-backward filtering, channel by channel.
pub fn apply_filter(
    signal: &MultiChannelSignal,
    filter: &IirFilter,
) -> Result<MultiChannelSignal, SignalError> {
    let min = 3 * filter.order();
    if signal.len() <= min {
        return Err(SignalError::TooShort {
            len: signal.len(),
            min,
        });
    }
    let mut out = Array2::zeros(signal.samples.raw_dim());
    for (ch, row) in signal.samples.rows().into_iter().enumerate() {
        let x: Vec<f64> = row.to_vec();
        let y = filtfilt_channel(filter, &x);
        for (t, v) in y.into_iter().enumerate() {
            out[(ch, t)] = v;
        }
    }
    Ok(MultiChannelSignal {
        samples: out,
        sample_rate_hz: signal.sample_rate_hz,
        channel_names: signal.channel_names.clone(),
    })
}

type Hook = Box<dyn Fn(&MultiChannelSignal) -> MultiChannelSignal + Send + Sync>;

/// Registry of named artifact-removal hooks. "none" is always available and
/// returns the input unchanged; ICA or any external method can be plugged in
/// under a name of the caller's choice.
#[derive(Default)]
pub struct HookRegistry {
    hooks: BTreeMap<String, Hook>,
}

impl HookRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: &str, hook: F)
    where
        F: Fn(&MultiChannelSignal) -> MultiChannelSignal + Send + Sync + 'static,
    {
        self.hooks.insert(name.to_string(), Box::new(hook));
    }

    pub fn apply(
        &self,
        signal: &MultiChannelSignal,
        method: &str,
    ) -> Result<MultiChannelSignal, SignalError> {
        if method == "none" {
            return Ok(signal.clone());
        }
        match self.hooks.get(method) {
            Some(h) => Ok(h(signal)),
            None => Err(SignalError::UnknownHook(method.to_string())),
        }
    }
}

/// Artifact removal through the given registry; `method` "none" is identity.
pub fn remove_artifacts(
    signal: &MultiChannelSignal,
    method: &str,
    registry: &HookRegistry,
) -> Result<MultiChannelSignal, SignalError> {
    registry.apply(signal, method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn sine(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    fn single(x: Vec<f64>, fs: f64) -> MultiChannelSignal {
        let n = x.len();
        MultiChannelSignal::new(
            Array2::from_shape_vec((1, n), x).unwrap(),
            fs,
            vec!["ch0".into()],
        )
        .unwrap()
    }

    fn gain_db(filter: &IirFilter, f: f64, fs: f64) -> f64 {
        let h = frequency_response(filter, &[f], fs).unwrap()[0];
        20.0 * h.norm().log10()
    }

    #[test]
    fn bandpass_passband_within_1db() {
        let f = design_bandpass(0.1, 70.0, 4, 1000.0).unwrap();
        assert!(gain_db(&f, 10.0, 1000.0).abs() < 1.0);
    }

    #[test]
    fn bandpass_kills_dc() {
        let f = design_bandpass(0.1, 70.0, 4, 1000.0).unwrap();
        let h = frequency_response(&f, &[0.0], 1000.0).unwrap()[0];
        assert_eq!(h.norm(), 0.0);
    }

    #[test]
    fn bandpass_rejects_inverted_cutoffs() {
        assert!(matches!(
            design_bandpass(70.0, 0.1, 4, 1000.0),
            Err(SignalError::Design(_))
        ));
    }

    #[test]
    fn bandpass_is_stable() {
        for (lo, hi, ord, fs) in [(0.1, 70.0, 4, 1000.0), (1.0, 40.0, 6, 250.0)] {
            let f = design_bandpass(lo, hi, ord, fs).unwrap();
            assert!(f.is_stable(), "{}", f.design_descriptor);
            assert_eq!(f.denominator_coeffs[0], 1.0);
        }
    }

    #[test]
    fn notch_depth_and_passband() {
        let f = design_notch(60.0, 30.0, 1000.0).unwrap();
        let h60 = frequency_response(&f, &[60.0], 1000.0).unwrap()[0];
        assert!(h60.norm() <= 0.01);
        // Flat to 1 dB outside 3 bandwidths of the center.
        let bw = 60.0 / 30.0;
        for f_hz in [10.0, 40.0, 60.0 - 3.5 * bw, 60.0 + 3.5 * bw, 120.0, 400.0] {
            assert!(gain_db(&f, f_hz, 1000.0).abs() < 1.0, "at {f_hz} Hz");
        }
        assert!(f.is_stable());
    }

    #[test]
    fn notch_rejects_center_above_nyquist() {
        assert!(design_notch(600.0, 30.0, 1000.0).is_err());
    }

    #[test]
    fn frequency_response_identity_and_delay() {
        let ident = IirFilter::from_coeffs(&[1.0], &[1.0], "identity").unwrap();
        for g in frequency_response(&ident, &[0.0, 123.0, 500.0], 1000.0).unwrap() {
            assert!((g - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
        let delay = IirFilter::from_coeffs(&[0.0, 1.0], &[1.0], "delay").unwrap();
        let h0 = frequency_response(&delay, &[0.0], 1000.0).unwrap()[0];
        assert!((h0.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frequency_response_rejects_above_nyquist() {
        let f = design_notch(60.0, 30.0, 1000.0).unwrap();
        assert!(matches!(
            frequency_response(&f, &[501.0], 1000.0),
            Err(SignalError::FrequencyOutOfRange(_))
        ));
    }

    #[test]
    fn apply_filter_zeros_stay_zero() {
        let f = design_bandpass(0.1, 70.0, 4, 1000.0).unwrap();
        let sig = single(vec![0.0; 2000], 1000.0);
        let out = apply_filter(&sig, &f).unwrap();
        assert!(out.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_filter_rejects_short_signal() {
        let f = design_bandpass(0.1, 70.0, 4, 1000.0).unwrap();
        let sig = single(vec![1.0; 10], 1000.0);
        assert!(matches!(
            apply_filter(&sig, &f),
            Err(SignalError::TooShort { .. })
        ));
    }

    #[test]
    fn notch_attenuates_60hz_sinusoid() {
        let fs = 1000.0;
        let f = design_notch(60.0, 30.0, fs).unwrap();
        let n = 4000;
        let sig = single(sine(60.0, fs, n, 1.0), fs);
        let out = apply_filter(&sig, &f).unwrap();
        let edge = 500; // 0.5 s
        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        let x: Vec<f64> = sig.samples.row(0).to_vec()[edge..n - edge].to_vec();
        let y: Vec<f64> = out.samples.row(0).to_vec()[edge..n - edge].to_vec();
        assert!(rms(&y) <= 0.02 * rms(&x), "rms ratio {}", rms(&y) / rms(&x));
    }

    #[test]
    fn notch_preserves_10hz_component() {
        let fs = 1000.0;
        let f = design_notch(60.0, 30.0, fs).unwrap();
        let n = 4096;
        let x: Vec<f64> = sine(10.0, fs, n, 1.0)
            .iter()
            .zip(sine(60.0, fs, n, 1.0))
            .map(|(a, b)| a + b)
            .collect();
        let sig = single(x, fs);
        let out = apply_filter(&sig, &f).unwrap();
        // Single-bin amplitude at 10 Hz over the interior.
        let amp_at = |v: &[f64], freq: f64| {
            let m = v.len() as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &s) in v.iter().enumerate() {
                let ph = 2.0 * PI * freq * i as f64 / fs;
                re += s * ph.cos();
                im += s * ph.sin();
            }
            2.0 * (re * re + im * im).sqrt() / m
        };
        let edge = 500;
        let xi: Vec<f64> = sig.samples.row(0).to_vec()[edge..n - edge].to_vec();
        let yi: Vec<f64> = out.samples.row(0).to_vec()[edge..n - edge].to_vec();
        let ratio = amp_at(&yi, 10.0) / amp_at(&xi, 10.0);
        assert!((ratio - 1.0).abs() < 0.05, "10 Hz ratio {ratio}");
    }

    #[test]
    fn zero_phase_keeps_pulse_symmetric() {
        let fs = 1000.0;
        let f = design_bandpass(0.1, 70.0, 4, fs).unwrap();
        let n = 2001;
        let center = 1000usize;
        let mut x = vec![0.0; n];
        // Symmetric raised-cosine pulse.
        for i in 0..101 {
            let w = 0.5 * (1.0 - (2.0 * PI * i as f64 / 100.0).cos());
            x[center - 50 + i] = w;
        }
        let out = apply_filter(&single(x.clone(), fs), &f).unwrap();
        let y = out.samples.row(0).to_vec();
        // Cross-correlation with the input peaks at lag 0, +-1.
        let corr = |lag: i64| {
            let mut s = 0.0;
            for i in 0..n as i64 {
                let j = i + lag;
                if j >= 0 && j < n as i64 {
                    s += x[i as usize] * y[j as usize];
                }
            }
            s
        };
        let (mut best_lag, mut best) = (0i64, f64::NEG_INFINITY);
        for lag in -20..=20 {
            let c = corr(lag);
            if c > best {
                best = c;
                best_lag = lag;
            }
        }
        assert!(best_lag.abs() <= 1, "peak correlation at lag {best_lag}");
    }

    #[test]
    fn apply_filter_is_linear() {
        use rand::prelude::*;
        let fs = 1000.0;
        let f = design_bandpass(0.1, 70.0, 4, fs).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 600;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (0.7, -1.3);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let fx = apply_filter(&single(x, fs), &f).unwrap();
        let fy = apply_filter(&single(y, fs), &f).unwrap();
        let fc = apply_filter(&single(combo, fs), &f).unwrap();
        let scale = fc.samples.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for t in 0..n {
            let expect = a * fx.samples[(0, t)] + b * fy.samples[(0, t)];
            assert!((fc.samples[(0, t)] - expect).abs() <= 1e-9 * scale.max(1.0));
        }
    }

    #[test]
    fn hooks_none_is_identity_and_unknown_errors() {
        let sig = single(vec![1.0, 2.0, 3.0], 100.0);
        let reg = HookRegistry::new();
        let out = remove_artifacts(&sig, "none", &reg).unwrap();
        assert_eq!(out, sig);
        assert!(matches!(
            remove_artifacts(&sig, "ica", &reg),
            Err(SignalError::UnknownHook(_))
        ));
    }

    #[test]
    fn registered_hook_delegates() {
        let sig = single(vec![1.0, -2.0, 3.0], 100.0);
        let mut reg = HookRegistry::new();
        reg.register("ica", |s| {
            let mut out = s.clone();
            out.samples.mapv_inplace(|v| v * 2.0);
            out
        });
        let out = remove_artifacts(&sig, "ica", &reg).unwrap();
        assert_eq!(out.samples[(0, 1)], -4.0);
    }
}
