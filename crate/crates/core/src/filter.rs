//! Linear-phase FIR design and the sample-rate converters built on it.
//!
//! Every low-pass in the toolkit is a 255-tap Blackman-windowed sinc with unit
//! DC gain. Filtering is "same"-mode: the input is zero-extended, the
//! `(taps - 1) / 2` sample group delay is removed, and the output has the
//! input's length.

use std::f64::consts::PI;

use crate::error::{config, Result};

/// Tap count of every low-pass filter designed by [`lowpass_taps`].
pub const NUM_TAPS: usize = 255;

/// Simulation rate of the ultrasonic chain.
pub const SIM_RATE_HZ: f64 = 192_000.0;
/// Rate of the recognizer's decimated stream.
pub const BASEBAND_RATE_HZ: f64 = 16_000.0;
/// Integer ratio between [`SIM_RATE_HZ`] and [`BASEBAND_RATE_HZ`].
pub const DECIMATION: usize = 12;
/// Anti-alias cutoff applied before taking every 12th sample.
pub const DECIMATION_CUTOFF_HZ: f64 = 7_200.0;

/// Blackman window of length `n`.
pub fn blackman(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let m = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let x = 2.0 * PI * i as f64 / m;
            0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos()
        })
        .collect()
}

/// Windowed-sinc low-pass taps, normalised to unit gain at DC.
///
/// `cutoff_hz` is the -6 dB point. The tap count is [`NUM_TAPS`].
pub fn lowpass_taps(cutoff_hz: f64, sample_rate_hz: f64) -> Result<Vec<f64>> {
    if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
        return Err(config(format!(
            "low-pass cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
            sample_rate_hz / 2.0
        )));
    }
    let fc = cutoff_hz / sample_rate_hz;
    let centre = (NUM_TAPS - 1) as f64 / 2.0;
    let window = blackman(NUM_TAPS);
    let mut taps: Vec<f64> = window
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let x = i as f64 - centre;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            w * sinc
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Ok(taps)
}

/// Zero-extended convolution with group delay removed; output length equals input length.
pub fn filter_same(taps: &[f64], input: &[f64]) -> Vec<f64> {
    let n = input.len();
    let delay = (taps.len() - 1) / 2;
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        // out[i] = sum_k taps[k] * input[i + delay - k]
        let hi = i + delay;
        let k_min = hi.saturating_sub(n - 1);
        let k_max = hi.min(taps.len() - 1);
        let mut acc = 0.0;
        for k in k_min..=k_max {
            acc += taps[k] * input[hi - k];
        }
        *o = acc;
    }
    out
}

/// Full linear convolution of two tap sets.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Dot product with four independent partial sums.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += g * x`.
fn axpy(y: &mut [f64], g: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += g * xi;
    }
}

/// A filter evaluated only on every `factor`-th output sample.
///
/// `output[m] = sum_k taps[k] * input[m * factor + delay - k]` with zero
/// extension, where `delay = (taps.len() - 1) / 2`. The adjoint is exposed so
/// gradients can flow back through the decimator.
#[derive(Debug, Clone)]
pub struct Decimator {
    taps: Vec<f64>,
    reversed: Vec<f64>,
    factor: usize,
}

impl Decimator {
    pub fn new(taps: Vec<f64>, factor: usize) -> Self {
        assert!(factor > 0 && taps.len() % 2 == 1);
        let reversed = taps.iter().rev().copied().collect();
        Self { taps, reversed, factor }
    }

    /// Anti-alias low-pass at [`DECIMATION_CUTOFF_HZ`] followed by 192 kHz → 16 kHz.
    pub fn standard() -> Self {
        let taps = lowpass_taps(DECIMATION_CUTOFF_HZ, SIM_RATE_HZ).expect("valid cutoff");
        Self::new(taps, DECIMATION)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        input_len.div_ceil(self.factor)
    }

    /// Input range `j0..=j1` and the matching offset into the reversed taps for output `m`.
    fn window(&self, m: usize, n: usize) -> (usize, usize, usize) {
        let last = self.taps.len() - 1;
        let hi = m * self.factor + last / 2;
        let k_min = hi.saturating_sub(n - 1);
        let k_max = hi.min(last);
        let j0 = hi - k_max;
        (j0, hi - k_min, last + j0 - hi)
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let n = input.len();
        (0..self.output_len(n))
            .map(|m| {
                let (j0, j1, r0) = self.window(m, n);
                dot(&self.reversed[r0..r0 + j1 - j0 + 1], &input[j0..=j1])
            })
            .collect()
    }

    /// Adjoint of [`Decimator::apply`]: maps an output-space gradient back onto an input of length `input_len`.
    pub fn adjoint(&self, grad_out: &[f64], input_len: usize) -> Vec<f64> {
        let n = input_len;
        let mut grad_in = vec![0.0; n];
        for (m, g) in grad_out.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            let (j0, j1, r0) = self.window(m, n);
            axpy(&mut grad_in[j0..=j1], *g, &self.reversed[r0..r0 + j1 - j0 + 1]);
        }
        grad_in
    }
}

/// Circular band-limited interpolator from the 16 kHz baseband grid to 192 kHz.
///
/// `output[n] = factor * sum_m input[m] * taps[(n - m * factor + delay) mod N]`
/// where `N` is the output length. Periodic indexing matches signals that are
/// played in a loop.
#[derive(Debug, Clone)]
pub struct CyclicInterpolator {
    taps: Vec<f64>,
    factor: usize,
}

impl CyclicInterpolator {
    pub fn standard() -> Self {
        let taps = lowpass_taps(DECIMATION_CUTOFF_HZ, SIM_RATE_HZ).expect("valid cutoff");
        Self {
            taps,
            factor: DECIMATION,
        }
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// First output index touched by input sample `m`, reduced modulo `n_out`.
    fn start(&self, m: usize, n_out: usize) -> usize {
        let delay = (self.taps.len() - 1) / 2;
        (m * self.factor + n_out * (delay / n_out + 1) - delay) % n_out
    }

    /// Visits the taps of input `m` as contiguous output runs `(output start, tap range)`.
    fn runs(&self, m: usize, n_out: usize, mut f: impl FnMut(usize, std::ops::Range<usize>)) {
        let mut pos = self.start(m, n_out);
        let mut k = 0;
        while k < self.taps.len() {
            let len = (self.taps.len() - k).min(n_out - pos);
            f(pos, k..k + len);
            k += len;
            pos = 0;
        }
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let n_out = input.len() * self.factor;
        let mut out = vec![0.0; n_out];
        if n_out == 0 {
            return out;
        }
        let gain = self.factor as f64;
        for (m, x) in input.iter().enumerate() {
            if *x == 0.0 {
                continue;
            }
            self.runs(m, n_out, |pos, r| {
                let len = r.len();
                axpy(&mut out[pos..pos + len], gain * x, &self.taps[r]);
            });
        }
        out
    }

    /// Adjoint of [`CyclicInterpolator::apply`].
    pub fn adjoint(&self, grad_out: &[f64]) -> Vec<f64> {
        let n_out = grad_out.len();
        assert!(n_out % self.factor == 0);
        let n_in = n_out / self.factor;
        let gain = self.factor as f64;
        (0..n_in)
            .map(|m| {
                let mut acc = 0.0;
                self.runs(m, n_out, |pos, r| {
                    let len = r.len();
                    acc += dot(&self.taps[r], &grad_out[pos..pos + len]);
                });
                gain * acc
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn taps_are_symmetric_with_unit_dc_gain() {
        let taps = lowpass_taps(8_000.0, SIM_RATE_HZ).unwrap();
        assert_eq!(taps.len(), NUM_TAPS);
        for i in 0..NUM_TAPS {
            assert!((taps[i] - taps[NUM_TAPS - 1 - i]).abs() < 1e-15);
        }
        assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cutoff_at_nyquist_is_rejected() {
        assert!(lowpass_taps(96_000.0, SIM_RATE_HZ).is_err());
        assert!(lowpass_taps(0.0, SIM_RATE_HZ).is_err());
    }

    #[test]
    fn decimator_matches_filter_then_downsample() {
        let x = tone(1_234.0, SIM_RATE_HZ, 5_000);
        let dec = Decimator::standard();
        let full = filter_same(dec.taps(), &x);
        let fast = dec.apply(&x);
        assert_eq!(fast.len(), full.len().div_ceil(DECIMATION));
        for (m, y) in fast.iter().enumerate() {
            assert!((y - full[m * DECIMATION]).abs() < 1e-13);
        }
    }

    #[test]
    fn decimator_adjoint_identity() {
        let dec = Decimator::standard();
        let x: Vec<f64> = (0..1_000).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let y: Vec<f64> = (0..dec.output_len(x.len()))
            .map(|i| ((i * 13 % 29) as f64 / 14.0) - 1.0)
            .collect();
        let ax = dec.apply(&x);
        let aty = dec.adjoint(&y, x.len());
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn interpolator_adjoint_identity_and_tone_gain() {
        let interp = CyclicInterpolator::standard();
        let n_in = 400;
        // integer number of cycles so the periodic tone is exact
        let x = tone(1_000.0, BASEBAND_RATE_HZ, n_in);
        let up = interp.apply(&x);
        let reference = tone(1_000.0, SIM_RATE_HZ, n_in * DECIMATION);
        let err = up
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "interpolation error {err}");

        let y: Vec<f64> = (0..up.len()).map(|i| ((i * 7 % 23) as f64) - 11.0).collect();
        let lhs: f64 = up.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(interp.adjoint(&y)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
