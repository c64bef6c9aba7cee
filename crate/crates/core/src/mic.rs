//! Microphone front-end: quadratic nonlinearity followed by the built-in low-pass.

use crate::error::{config, Result};
use crate::filter;
use crate::signal::{lowpass, SampledSignal};

/// Gains of the linear and quadratic response terms and the front-end low-pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearityParams {
    pub gain_linear: f64,
    pub gain_quadratic: f64,
    pub lowpass_cutoff_hz: f64,
}

impl Default for NonlinearityParams {
    fn default() -> Self {
        Self {
            gain_linear: 1.0,
            gain_quadratic: 0.5,
            lowpass_cutoff_hz: 8_000.0,
        }
    }
}

impl NonlinearityParams {
    /// Validates the parameters against a signal rate.
    ///
    /// A zero quadratic gain is accepted only through [`NonlinearityParams::linear_only`].
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if !(self.gain_linear.is_finite() && self.gain_quadratic.is_finite()) {
            return Err(config("nonlinearity gains must be finite"));
        }
        if !(self.lowpass_cutoff_hz > 0.0 && self.lowpass_cutoff_hz < sample_rate_hz / 2.0) {
            return Err(config(format!(
                "mic low-pass cutoff {} Hz must lie below Nyquist {} Hz",
                self.lowpass_cutoff_hz,
                sample_rate_hz / 2.0
            )));
        }
        Ok(())
    }

    /// Parameters with the quadratic term switched off; downconversion is disabled.
    pub fn linear_only(gain_linear: f64, lowpass_cutoff_hz: f64) -> Self {
        Self {
            gain_linear,
            gain_quadratic: 0.0,
            lowpass_cutoff_hz,
        }
    }

    pub fn new(gain_linear: f64, gain_quadratic: f64, lowpass_cutoff_hz: f64) -> Result<Self> {
        if gain_quadratic == 0.0 {
            return Err(config(
                "quadratic gain of zero disables downconversion; use NonlinearityParams::linear_only",
            ));
        }
        if !(gain_linear.is_finite() && gain_quadratic.is_finite()) {
            return Err(config("nonlinearity gains must be finite"));
        }
        if !(lowpass_cutoff_hz > 0.0 && lowpass_cutoff_hz.is_finite()) {
            return Err(config("mic low-pass cutoff must be positive"));
        }
        Ok(Self {
            gain_linear,
            gain_quadratic,
            lowpass_cutoff_hz,
        })
    }

    pub(crate) fn respond(&self, s: f64) -> f64 {
        self.gain_linear * s + self.gain_quadratic * s * s
    }

    /// Derivative of [`NonlinearityParams::respond`].
    pub(crate) fn slope(&self, s: f64) -> f64 {
        self.gain_linear + 2.0 * self.gain_quadratic * s
    }

    pub(crate) fn taps(&self, sample_rate_hz: f64) -> Result<Vec<f64>> {
        filter::lowpass_taps(self.lowpass_cutoff_hz, sample_rate_hz)
    }
}

/// `lowpass(A·s + B·s²)` at the input's sample rate.
pub fn mic_nonlinearity(input: &SampledSignal, params: &NonlinearityParams) -> Result<SampledSignal> {
    params.validate(input.sample_rate_hz())?;
    let mixed: Vec<f64> = input.samples().iter().map(|s| params.respond(*s)).collect();
    let mixed = SampledSignal::from_parts_unchecked(mixed, input.sample_rate_hz());
    lowpass(&mixed, params.lowpass_cutoff_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{am_modulate, pearson};
    use std::f64::consts::PI;

    const FS: f64 = 192_000.0;

    #[test]
    fn silence_stays_silent() {
        let x = SampledSignal::zeros(1_000, FS).unwrap();
        let y = mic_nonlinearity(&x, &NonlinearityParams::default()).unwrap();
        assert!(y.samples().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_quadratic_gain_needs_explicit_constructor() {
        assert!(NonlinearityParams::new(1.0, 0.0, 8_000.0).is_err());
        let p = NonlinearityParams::linear_only(2.0, 8_000.0);
        let x = SampledSignal::from_fn(4_000, FS, |t| (2.0 * PI * 500.0 * t).sin()).unwrap();
        let y = mic_nonlinearity(&x, &p).unwrap();
        let reference = lowpass(&x, 8_000.0).unwrap().scaled(2.0);
        for (a, b) in y.samples().iter().zip(reference.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cutoff_above_nyquist_rejected() {
        let p = NonlinearityParams {
            lowpass_cutoff_hz: 100_000.0,
            ..Default::default()
        };
        let x = SampledSignal::zeros(10, FS).unwrap();
        assert!(mic_nonlinearity(&x, &p).is_err());
    }

    #[test]
    fn pure_carrier_squares_to_half() {
        // cos² = ½ + ½ cos(2ωt): with A = B = 1 only the ½ survives the filter
        let n = 38_400;
        let x = SampledSignal::from_fn(n, FS, |t| (2.0 * PI * 21_000.0 * t).cos()).unwrap();
        let p = NonlinearityParams::new(1.0, 1.0, 8_000.0).unwrap();
        let y = mic_nonlinearity(&x, &p).unwrap();
        let edge = filter::NUM_TAPS;
        let body = &y.samples()[edge..n - edge];
        let worst = body.iter().fold(0.0f64, |m, v| m.max((v - 0.5).abs()));
        // residual ripple relative to the unit carrier
        assert!(20.0 * worst.log10() < -60.0, "ripple {worst}");
    }

    #[test]
    fn downconverts_modulated_tone() {
        let n = 38_400;
        let v = SampledSignal::from_fn(n, FS, |t| 0.5 * (2.0 * PI * 1_000.0 * t).cos()).unwrap();
        let s = am_modulate(&v, 21_000.0, true).unwrap();
        let p = NonlinearityParams::new(0.0, 1.0, 8_000.0).unwrap();
        let y = mic_nonlinearity(&s, &p).unwrap();
        let edge = filter::NUM_TAPS;
        let body = SampledSignal::new(y.samples()[edge..n - edge].to_vec(), FS)
            .unwrap()
            .remove_dc();
        let r = pearson(body.samples(), &v.samples()[edge..n - edge]);
        assert!(r > 0.95, "correlation {r}");
    }
}
