//! Log-magnitude spectral frames and their reverse pass.

use std::f64::consts::PI;

use crate::error::{config, Result};
use crate::filter::{dot, BASEBAND_RATE_HZ};
use crate::signal::SampledSignal;

pub const NUM_FEATURES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub frame_len_s: f64,
    pub hop_s: f64,
    /// Spacing of the analysed frequencies; bin `k` sits at `k * bin_spacing_hz`.
    pub bin_spacing_hz: f64,
    pub log_floor: f64,
    pub magnitude_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_len_s: 0.025,
            hop_s: 0.010,
            bin_spacing_hz: 62.5,
            log_floor: 1e-6,
            magnitude_floor: 1e-12,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop_s > 0.0 && self.frame_len_s > self.hop_s) {
            return Err(config("frame length must exceed a positive hop"));
        }
        if !(self.log_floor > 0.0 && self.magnitude_floor > 0.0) {
            return Err(config("feature floors must be positive"));
        }
        let top = self.bin_spacing_hz * (NUM_FEATURES - 1) as f64;
        if !(self.bin_spacing_hz > 0.0 && top < BASEBAND_RATE_HZ / 2.0) {
            return Err(config("analysed bins must lie below the baseband Nyquist"));
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        (self.frame_len_s * BASEBAND_RATE_HZ).round() as usize
    }

    pub fn hop(&self) -> usize {
        (self.hop_s * BASEBAND_RATE_HZ).round() as usize
    }

    /// `floor((n - frame_len) / hop) + 1`, or 0 when shorter than a frame.
    pub fn num_frames(&self, n: usize) -> usize {
        if n < self.frame_len() {
            0
        } else {
            (n - self.frame_len()) / self.hop() + 1
        }
    }
}

/// Hann-windowed DFT at the analysed frequencies, precomputed.
#[derive(Debug, Clone)]
pub struct Featurizer {
    config: FeatureConfig,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

/// Per-frame DFT values kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    re: Vec<f64>,
    im: Vec<f64>,
    len: usize,
}

impl Featurizer {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        config.validate()?;
        let n = config.frame_len();
        let mut cos = vec![0.0; NUM_FEATURES * n];
        let mut sin = vec![0.0; NUM_FEATURES * n];
        for k in 0..NUM_FEATURES {
            let w = 2.0 * PI * k as f64 * config.bin_spacing_hz / BASEBAND_RATE_HZ;
            for j in 0..n {
                let hann = 0.5 - 0.5 * (2.0 * PI * j as f64 / (n - 1) as f64).cos();
                cos[k * n + j] = hann * (w * j as f64).cos();
                sin[k * n + j] = -hann * (w * j as f64).sin();
            }
        }
        Ok(Self { config, cos, sin })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    fn feature(&self, re: f64, im: f64) -> f64 {
        let mag = (self.config.magnitude_floor + re * re + im * im).sqrt();
        (self.config.log_floor + mag).ln()
    }

    pub fn featurize(&self, signal: &SampledSignal) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward(signal)?.0)
    }

    /// Features plus the cache needed by [`Featurizer::backward`].
    pub fn forward(&self, signal: &SampledSignal) -> Result<(Vec<Vec<f64>>, FeatureCache)> {
        if signal.sample_rate_hz() != BASEBAND_RATE_HZ {
            return Err(config(format!(
                "features expect a {BASEBAND_RATE_HZ} Hz stream, got {} Hz",
                signal.sample_rate_hz()
            )));
        }
        let x = signal.samples();
        let frames = self.config.num_frames(x.len());
        if frames == 0 {
            return Err(config(format!(
                "signal of {} samples is shorter than one {}-sample frame",
                x.len(),
                self.config.frame_len()
            )));
        }
        let (n, hop) = (self.config.frame_len(), self.config.hop());
        let mut re = vec![0.0; frames * NUM_FEATURES];
        let mut im = vec![0.0; frames * NUM_FEATURES];
        let mut feats = Vec::with_capacity(frames);
        for t in 0..frames {
            let seg = &x[t * hop..t * hop + n];
            let mut row = vec![0.0; NUM_FEATURES];
            for k in 0..NUM_FEATURES {
                let c = &self.cos[k * n..(k + 1) * n];
                let s = &self.sin[k * n..(k + 1) * n];
                let (a, b) = (dot(c, seg), dot(s, seg));
                re[t * NUM_FEATURES + k] = a;
                im[t * NUM_FEATURES + k] = b;
                row[k] = self.feature(a, b);
            }
            feats.push(row);
        }
        Ok((feats, FeatureCache { re, im, len: x.len() }))
    }

    /// Gradient with respect to the input samples given the gradient per feature.
    pub fn backward(&self, cache: &FeatureCache, grad: &[Vec<f64>]) -> Vec<f64> {
        let (n, hop) = (self.config.frame_len(), self.config.hop());
        let mut out = vec![0.0; cache.len];
        for (t, g_row) in grad.iter().enumerate() {
            let dst = &mut out[t * hop..t * hop + n];
            for (k, g) in g_row.iter().enumerate() {
                if *g == 0.0 {
                    continue;
                }
                let re = cache.re[t * NUM_FEATURES + k];
                let im = cache.im[t * NUM_FEATURES + k];
                let mag = (self.config.magnitude_floor + re * re + im * im).sqrt();
                let scale = g / (mag * (self.config.log_floor + mag));
                let (gr, gi) = (scale * re, scale * im);
                let c = &self.cos[k * n..(k + 1) * n];
                let s = &self.sin[k * n..(k + 1) * n];
                for j in 0..n {
                    dst[j] += gr * c[j] + gi * s[j];
                }
            }
        }
        out
    }
}

/// One-shot feature extraction.
pub fn featurize(signal: &SampledSignal, config: &FeatureConfig) -> Result<Vec<Vec<f64>>> {
    Featurizer::new(*config)?.featurize(signal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FS: f64 = BASEBAND_RATE_HZ;

    #[test]
    fn frame_count_and_silence_floor() {
        let c = FeatureConfig::default();
        assert_eq!((c.frame_len(), c.hop()), (400, 160));
        let x = SampledSignal::zeros(1_000, FS).unwrap();
        let f = featurize(&x, &c).unwrap();
        assert_eq!(f.len(), (1_000 - 400) / 160 + 1);
        let floor = (1e-6 + 1e-12f64.sqrt()).ln();
        assert!(f.iter().flatten().all(|v| (v - floor).abs() < 1e-15));
        assert!(featurize(&SampledSignal::zeros(399, FS).unwrap(), &c).is_err());
        assert!(featurize(&SampledSignal::zeros(1_000, 8_000.0).unwrap(), &c).is_err());
    }

    #[test]
    fn tone_peaks_in_its_bin() {
        let x = SampledSignal::from_fn(3_200, FS, |t| (2.0 * PI * 1_000.0 * t).sin()).unwrap();
        let f = featurize(&x, &FeatureConfig::default()).unwrap();
        // 1000 / 62.5 = 16
        for row in &f {
            let best = (0..NUM_FEATURES).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(best, 16);
        }
    }

    #[test]
    fn gain_shifts_loud_bins_by_its_log() {
        let x = SampledSignal::from_fn(3_200, FS, |t| 0.05 * (2.0 * PI * 1_000.0 * t).sin()).unwrap();
        let c = FeatureConfig::default();
        let a = featurize(&x, &c).unwrap();
        let b = featurize(&x.scaled(10.0), &c).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert!((rb[16] - ra[16] - 10f64.ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..800).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let fz = Featurizer::new(FeatureConfig::default()).unwrap();
        let sig = SampledSignal::new(x.clone(), FS).unwrap();
        let (f, cache) = fz.forward(&sig).unwrap();
        let g: Vec<Vec<f64>> = f.iter().map(|r| r.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let grad = fz.backward(&cache, &g);
        let objective = |v: &[f64]| -> f64 {
            let ff = fz.featurize(&SampledSignal::new(v.to_vec(), FS).unwrap()).unwrap();
            ff.iter().zip(&g).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>()).sum()
        };
        for i in [0usize, 17, 160, 399, 401, 555, 799] {
            let h = 1e-6;
            let mut p = x.clone();
            let mut m = x.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (objective(&p) - objective(&m)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5 * grad[i].abs().max(1.0), "{i}: {fd} vs {}", grad[i]);
        }
    }
}
