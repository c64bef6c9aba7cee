//! Waveform containers and the elementary time-domain operations.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config, Error, Result};
use crate::filter;

/// A uniformly sampled, real-valued waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl SampledSignal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(config(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn zeros(len: usize, sample_rate_hz: f64) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    /// Builds a signal from a closure over time in seconds.
    pub fn from_fn(len: usize, sample_rate_hz: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            (0..len).map(|n| f(n as f64 / sample_rate_hz)).collect(),
            sample_rate_hz,
        )
    }

    pub(crate) fn from_parts_unchecked(samples: Vec<f64>, sample_rate_hz: f64) -> Self {
        debug_assert!(samples.iter().all(|x| x.is_finite()));
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.sample_rate_hz / 2.0
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.samples.iter().sum::<f64>() / self.samples.len() as f64
        }
    }

    /// Removes the mean.
    pub fn remove_dc(&self) -> Self {
        let m = self.mean();
        Self::from_parts_unchecked(
            self.samples.iter().map(|x| x - m).collect(),
            self.sample_rate_hz,
        )
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self::from_parts_unchecked(
            self.samples.iter().map(|x| x * gain).collect(),
            self.sample_rate_hz,
        )
    }

    /// Sample-wise sum; both signals must share rate and length.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self::from_parts_unchecked(
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
            self.sample_rate_hz,
        ))
    }

    pub(crate) fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.sample_rate_hz != other.sample_rate_hz {
            return Err(config(format!(
                "sample rate mismatch: {} Hz vs {} Hz",
                self.sample_rate_hz, other.sample_rate_hz
            )));
        }
        if self.len() != other.len() {
            return Err(config(format!(
                "length mismatch: {} vs {} samples",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }
}

/// A recognized or intended word sequence; each token indexes the active vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Transcript {
    pub tokens: Vec<usize>,
}

impl Transcript {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl From<Vec<usize>> for Transcript {
    fn from(tokens: Vec<usize>) -> Self {
        Self { tokens }
    }
}

impl std::fmt::Display for Transcript {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let words: Vec<String> = self.tokens.iter().map(|t| t.to_string()).collect();
        write!(f, "{}", words.join(" "))
    }
}

fn check_carrier(carrier_hz: f64, sample_rate_hz: f64) -> Result<()> {
    if !(carrier_hz > 0.0 && carrier_hz < sample_rate_hz / 2.0) {
        return Err(config(format!(
            "carrier {carrier_hz} Hz must lie in (0, {}) Hz",
            sample_rate_hz / 2.0
        )));
    }
    Ok(())
}

/// `cos(2π f n / fs)` for `n` in `0..len`, with an extra phase offset of `offset_samples`.
pub(crate) fn carrier_wave(len: usize, freq_hz: f64, fs: f64, offset_samples: f64) -> Vec<f64> {
    let w = 2.0 * PI * freq_hz / fs;
    (0..len)
        .map(|n| (w * (n as f64 + offset_samples)).cos())
        .collect()
}

/// Amplitude modulation onto `carrier_hz`, optionally with the unmodulated carrier added.
///
/// With the carrier: `(v[n] + 1) cos(2π fc n / fs)`; without: `v[n] cos(2π fc n / fs)`.
pub fn am_modulate(
    baseband: &SampledSignal,
    carrier_hz: f64,
    include_pure_carrier: bool,
) -> Result<SampledSignal> {
    check_carrier(carrier_hz, baseband.sample_rate_hz)?;
    let offset = if include_pure_carrier { 1.0 } else { 0.0 };
    let carrier = carrier_wave(baseband.len(), carrier_hz, baseband.sample_rate_hz, 0.0);
    Ok(SampledSignal::from_parts_unchecked(
        baseband
            .samples
            .iter()
            .zip(carrier)
            .map(|(v, c)| (v + offset) * c)
            .collect(),
        baseband.sample_rate_hz,
    ))
}

/// Linear-phase FIR low-pass, time-aligned with its input.
pub fn lowpass(input: &SampledSignal, cutoff_hz: f64) -> Result<SampledSignal> {
    let taps = filter::lowpass_taps(cutoff_hz, input.sample_rate_hz)?;
    Ok(SampledSignal::from_parts_unchecked(
        filter::filter_same(&taps, &input.samples),
        input.sample_rate_hz,
    ))
}

/// `output[n] = input[(n - shift) mod N]`.
pub fn circular_shift(input: &SampledSignal, shift_samples: i64) -> SampledSignal {
    let n = input.len();
    if n == 0 {
        return input.clone();
    }
    let s = shift_samples.rem_euclid(n as i64) as usize;
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&input.samples[n - s..]);
    out.extend_from_slice(&input.samples[..n - s]);
    SampledSignal::from_parts_unchecked(out, input.sample_rate_hz)
}

/// Appends zeros up to `target_len`.
pub fn zero_pad(input: &SampledSignal, target_len: usize) -> Result<SampledSignal> {
    if target_len < input.len() {
        return Err(config(format!(
            "cannot zero-pad a {}-sample signal to {target_len} samples",
            input.len()
        )));
    }
    let mut samples = input.samples.clone();
    samples.resize(target_len, 0.0);
    Ok(SampledSignal::from_parts_unchecked(
        samples,
        input.sample_rate_hz,
    ))
}

/// Adds seeded white Gaussian noise at the requested SNR.
///
/// `f64::INFINITY` returns the input unchanged.
pub fn add_noise(input: &SampledSignal, snr_db: f64, seed: u64) -> Result<SampledSignal> {
    if snr_db == f64::INFINITY {
        return Ok(input.clone());
    }
    if !snr_db.is_finite() {
        return Err(config(format!("SNR must be finite or +inf, got {snr_db}")));
    }
    let signal_power = input.energy() / input.len().max(1) as f64;
    if signal_power <= 0.0 {
        return Err(Error::Domain(
            "SNR is undefined for a zero-power signal".into(),
        ));
    }
    let noise_rms = (signal_power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(SampledSignal::from_parts_unchecked(
        input
            .samples
            .iter()
            .map(|x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x + noise_rms * z
            })
            .collect(),
        input.sample_rate_hz,
    ))
}

/// Decimates a 192 kHz signal to 16 kHz (7.2 kHz anti-alias low-pass, every 12th sample).
pub fn decimate_to_baseband(input: &SampledSignal) -> Result<SampledSignal> {
    if input.sample_rate_hz != filter::SIM_RATE_HZ {
        return Err(config(format!(
            "decimation expects {} Hz input, got {} Hz",
            filter::SIM_RATE_HZ,
            input.sample_rate_hz
        )));
    }
    let dec = filter::Decimator::standard();
    Ok(SampledSignal::from_parts_unchecked(
        dec.apply(&input.samples),
        filter::BASEBAND_RATE_HZ,
    ))
}

/// Pearson correlation of two equal-length sequences.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FS: f64 = 192_000.0;

    fn sine(freq: f64, amp: f64, n: usize) -> SampledSignal {
        SampledSignal::from_fn(n, FS, |t| amp * (2.0 * PI * freq * t).sin()).unwrap()
    }

    /// Single-bin DFT magnitude, normalised to the sinusoid amplitude.
    fn tone_amplitude(x: &[f64], freq: f64, fs: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * freq * n as f64 / fs;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        2.0 * (re * re + im * im).sqrt() / x.len() as f64
    }

    #[test]
    fn rejects_bad_rate_and_nan() {
        assert!(SampledSignal::new(vec![0.0], 0.0).is_err());
        assert!(SampledSignal::new(vec![f64::NAN], 1.0).is_err());
        assert!(SampledSignal::new(vec![], 1.0).is_ok());
    }

    #[test]
    fn zero_baseband_with_carrier_is_pure_cosine() {
        let v = SampledSignal::zeros(1_920, FS).unwrap();
        let s = am_modulate(&v, 21_000.0, true).unwrap();
        assert!((s.peak() - 1.0).abs() < 1e-12);
        for (n, x) in s.samples().iter().enumerate() {
            assert!((x - (2.0 * PI * 21_000.0 * n as f64 / FS).cos()).abs() < 1e-12);
        }
        let s = am_modulate(&v, 21_000.0, false).unwrap();
        assert!(s.samples().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn carrier_at_nyquist_rejected() {
        let v = SampledSignal::zeros(10, FS).unwrap();
        assert!(matches!(am_modulate(&v, 96_000.0, true), Err(Error::Config(_))));
    }

    #[test]
    fn modulated_tone_has_quarter_sidebands() {
        // 0.5 cos(1 kHz) (1 + ...) cos(21 kHz): product-to-sum gives
        // cos(21k) + 0.25 cos(20k) + 0.25 cos(22k)
        let n = 19_200; // 100 ms: every line sits on a DFT bin
        let v = SampledSignal::from_fn(n, FS, |t| 0.5 * (2.0 * PI * 1_000.0 * t).cos()).unwrap();
        let s = am_modulate(&v, 21_000.0, true).unwrap();
        let c = tone_amplitude(s.samples(), 21_000.0, FS);
        let lo = tone_amplitude(s.samples(), 20_000.0, FS);
        let hi = tone_amplitude(s.samples(), 22_000.0, FS);
        assert!((c - 1.0).abs() < 1e-9);
        assert!((lo - 0.25).abs() < 1e-9);
        assert!((hi - 0.25).abs() < 1e-9);
        assert!(tone_amplitude(s.samples(), 1_000.0, FS) < 1e-9);
    }

    #[test]
    fn lowpass_passes_dc() {
        let x = SampledSignal::new(vec![1.0; 4_000], FS).unwrap();
        let y = lowpass(&x, 8_000.0).unwrap();
        let edge = filter::NUM_TAPS;
        for v in &y.samples()[edge..y.len() - edge] {
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn lowpass_passes_in_band_tone() {
        let x = sine(1_000.0, 1.0, 19_200);
        let y = lowpass(&x, 8_000.0).unwrap();
        let edge = filter::NUM_TAPS;
        let mid = &y.samples()[edge..y.len() - edge];
        let reference = &x.samples()[edge..x.len() - edge];
        let amp = mid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((amp - 1.0).abs() < 0.01);
        // time-aligned with the input
        let err = mid
            .iter()
            .zip(reference)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 0.01);
    }

    #[test]
    fn lowpass_rejects_stopband_tone() {
        let x = sine(40_000.0, 1.0, 19_200);
        let y = lowpass(&x, 8_000.0).unwrap();
        let edge = filter::NUM_TAPS;
        let trim = |s: &[f64]| SampledSignal::new(s[edge..s.len() - edge].to_vec(), FS).unwrap();
        let ratio = trim(y.samples()).rms() / trim(x.samples()).rms();
        assert!(ratio <= 1e-3, "ratio {ratio}");
    }

    #[test]
    fn lowpass_stopband_is_at_least_60_db() {
        // every frequency from cutoff + 2 kHz to Nyquist
        let taps = filter::lowpass_taps(8_000.0, FS).unwrap();
        let mut f = 10_000.0;
        while f < FS / 2.0 {
            let (mut re, mut im) = (0.0, 0.0);
            for (k, t) in taps.iter().enumerate() {
                let ph = 2.0 * PI * f * k as f64 / FS;
                re += t * ph.cos();
                im -= t * ph.sin();
            }
            let db = 20.0 * (re * re + im * im).sqrt().log10();
            assert!(db <= -60.0, "{f} Hz: {db} dB");
            f += 50.0;
        }
    }

    #[test]
    fn shift_edge_cases() {
        let x = SampledSignal::new((0..10).map(|i| i as f64).collect(), 1.0).unwrap();
        assert_eq!(circular_shift(&x, 0), x);
        assert_eq!(circular_shift(&x, 10), x);
        assert_eq!(circular_shift(&x, 3).samples()[3], 0.0);
        assert_eq!(circular_shift(&x, -1).samples()[0], 1.0);
    }

    #[test]
    fn zero_pad_cases() {
        let x = SampledSignal::new(vec![1.0, -2.0, 3.0], 8.0).unwrap();
        assert_eq!(zero_pad(&x, 3).unwrap(), x);
        let padded = zero_pad(&x, 7).unwrap();
        assert_eq!(padded.samples(), &[1.0, -2.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(padded.energy(), 14.0);
        assert!(zero_pad(&x, 2).is_err());
        let empty = SampledSignal::zeros(0, 8.0).unwrap();
        let z = zero_pad(&empty, 100).unwrap();
        assert_eq!(z.len(), 100);
        assert!(z.samples().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noise_contract() {
        let x = sine(1_000.0, 0.5, 200_000);
        assert_eq!(add_noise(&x, f64::INFINITY, 1).unwrap(), x);
        let y = add_noise(&x, 0.0, 7).unwrap();
        let noise: Vec<f64> = y.samples().iter().zip(x.samples()).map(|(a, b)| a - b).collect();
        let nrms = SampledSignal::new(noise, FS).unwrap().rms();
        assert!((nrms / x.rms() - 1.0).abs() < 0.02);
        assert_eq!(add_noise(&x, 10.0, 3).unwrap(), add_noise(&x, 10.0, 3).unwrap());
        assert_ne!(add_noise(&x, 10.0, 3).unwrap(), add_noise(&x, 10.0, 4).unwrap());
        let silent = SampledSignal::zeros(100, FS).unwrap();
        assert!(add_noise(&silent, 10.0, 1).is_err());
        assert!(add_noise(&silent, f64::INFINITY, 1).is_ok());
    }

    proptest! {
        #[test]
        fn modulation_without_carrier_is_linear(
            xs in proptest::collection::vec(-1.0f64..1.0, 64),
            ys in proptest::collection::vec(-1.0f64..1.0, 64),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let x = SampledSignal::new(xs, FS).unwrap();
            let y = SampledSignal::new(ys, FS).unwrap();
            let combo = x.scaled(a).add(&y.scaled(b)).unwrap();
            let lhs = am_modulate(&combo, 21_000.0, false).unwrap();
            let rhs = am_modulate(&x, 21_000.0, false).unwrap().scaled(a)
                .add(&am_modulate(&y, 21_000.0, false).unwrap().scaled(b)).unwrap();
            for (l, r) in lhs.samples().iter().zip(rhs.samples()) {
                prop_assert!((l - r).abs() < 1e-12);
            }
        }

        #[test]
        fn circular_shift_composes_and_inverts(
            xs in proptest::collection::vec(-1.0f64..1.0, 1..50),
            a in -200i64..200,
            b in -200i64..200,
        ) {
            let x = SampledSignal::new(xs, 1.0).unwrap();
            let n = x.len() as i64;
            let twice = circular_shift(&circular_shift(&x, a), b);
            prop_assert_eq!(&twice, &circular_shift(&x, (a + b).rem_euclid(n)));
            prop_assert_eq!(&circular_shift(&circular_shift(&x, a), -a), &x);
        }
    }
}
