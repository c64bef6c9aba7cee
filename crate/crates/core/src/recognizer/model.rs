//! Per-frame affine acoustic model over the spectral features.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{SampledSignal, Transcript};

use super::ctc::{ctc_loss, greedy_decode, log_softmax, logit_gradient};
use super::features::{FeatureCache, FeatureConfig, Featurizer, NUM_FEATURES};
use super::vocab::Vocabulary;

/// Ten words plus blank.
pub const NUM_CLASSES: usize = 11;
pub const BLANK: usize = NUM_CLASSES - 1;

const FORMAT_TAG: &str = "platewave-recognizer";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Recognizer {
    /// Row-major `NUM_CLASSES x NUM_FEATURES`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    featurizer: Featurizer,
    vocabulary: Vocabulary,
}

/// Everything the reverse pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub log_probs: Vec<Vec<f64>>,
    cache: FeatureCache,
}

impl PartialEq for Recognizer {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights
            && self.bias == other.bias
            && self.featurizer.config() == other.featurizer.config()
            && self.vocabulary == other.vocabulary
    }
}

impl Recognizer {
    pub fn zeros(vocabulary: Vocabulary, feature_config: FeatureConfig) -> Result<Self> {
        Self::from_parts(
            vec![0.0; NUM_CLASSES * NUM_FEATURES],
            vec![0.0; NUM_CLASSES],
            vocabulary,
            feature_config,
        )
    }

    pub fn from_parts(
        weights: Vec<f64>,
        bias: Vec<f64>,
        vocabulary: Vocabulary,
        feature_config: FeatureConfig,
    ) -> Result<Self> {
        vocabulary.validate()?;
        if weights.len() != NUM_CLASSES * NUM_FEATURES || bias.len() != NUM_CLASSES {
            return Err(Error::Domain(format!(
                "recognizer needs {NUM_CLASSES}x{NUM_FEATURES} weights and {NUM_CLASSES} biases"
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Domain("recognizer weights must be finite".into()));
        }
        Ok(Self {
            weights,
            bias,
            featurizer: Featurizer::new(feature_config)?,
            vocabulary,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        self.featurizer.config()
    }

    pub fn logits(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        features
            .iter()
            .map(|x| {
                if x.len() != NUM_FEATURES {
                    return Err(Error::Domain(format!("feature width {} != {NUM_FEATURES}", x.len())));
                }
                Ok((0..NUM_CLASSES)
                    .map(|c| {
                        let w = &self.weights[c * NUM_FEATURES..(c + 1) * NUM_FEATURES];
                        self.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect())
            })
            .collect()
    }

    /// Per-frame log-probabilities over the ten words and blank.
    pub fn forward(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(log_softmax(&self.logits(features)?))
    }

    /// Features, then log-probabilities, for a 16 kHz stream.
    pub fn trace(&self, baseband: &SampledSignal) -> Result<ForwardTrace> {
        let (features, cache) = self.featurizer.forward(baseband)?;
        Ok(ForwardTrace {
            log_probs: self.forward(&features)?,
            cache,
        })
    }

    pub fn transcribe(&self, baseband: &SampledSignal) -> Result<Transcript> {
        Ok(greedy_decode(&self.trace(baseband)?.log_probs))
    }

    /// CTC loss of `label` and its gradient with respect to the 16 kHz input.
    pub fn loss_and_input_gradient(&self, trace: &ForwardTrace, label: &Transcript) -> Result<(f64, Vec<f64>)> {
        let ctc = ctc_loss(&trace.log_probs, label)?;
        let g_logits = logit_gradient(&trace.log_probs, &ctc.grad);
        let g_feat: Vec<Vec<f64>> = g_logits
            .iter()
            .map(|g| {
                let mut row = vec![0.0; NUM_FEATURES];
                for (c, gc) in g.iter().enumerate() {
                    let w = &self.weights[c * NUM_FEATURES..(c + 1) * NUM_FEATURES];
                    for (r, wv) in row.iter_mut().zip(w) {
                        *r += gc * wv;
                    }
                }
                row
            })
            .collect();
        Ok((ctc.loss, self.featurizer.backward(&trace.cache, &g_feat)))
    }

    /// Header line, then one row per class: 64 weights followed by the bias, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = format!("{FORMAT_TAG} {FORMAT_VERSION} {NUM_CLASSES} {}\n", NUM_FEATURES + 1);
        for c in 0..NUM_CLASSES {
            let row = self.weights[c * NUM_FEATURES..(c + 1) * NUM_FEATURES]
                .iter()
                .chain(std::iter::once(&self.bias[c]));
            let mut first = true;
            for v in row {
                if !first {
                    s.push(' ');
                }
                first = false;
                write!(s, "{v:.16e}").expect("string write");
            }
            s.push('\n');
        }
        s
    }

    /// Inverse of [`Recognizer::to_text`]; the standard vocabulary and features are assumed.
    pub fn from_text(text: &str) -> Result<Self> {
        let parse_err = |m: String| Error::Parse {
            context: "recognizer".into(),
            message: m,
        };
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        let expected = [
            FORMAT_TAG.to_string(),
            FORMAT_VERSION.to_string(),
            NUM_CLASSES.to_string(),
            (NUM_FEATURES + 1).to_string(),
        ];
        if header.len() != 4 || header.iter().zip(&expected).any(|(a, b)| a != b) {
            return Err(parse_err(format!("bad header {header:?}")));
        }
        let mut weights = Vec::with_capacity(NUM_CLASSES * NUM_FEATURES);
        let mut bias = Vec::with_capacity(NUM_CLASSES);
        for c in 0..NUM_CLASSES {
            let line = lines.next().ok_or_else(|| parse_err(format!("missing row {c}")))?;
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("row {c}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != NUM_FEATURES + 1 {
                return Err(parse_err(format!("row {c} has {} values", vals.len())));
            }
            weights.extend_from_slice(&vals[..NUM_FEATURES]);
            bias.push(vals[NUM_FEATURES]);
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(parse_err("trailing data".into()));
        }
        Self::from_parts(weights, bias, Vocabulary::standard(), FeatureConfig::default())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64) -> Recognizer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = (0..NUM_CLASSES * NUM_FEATURES).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = (0..NUM_CLASSES).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Recognizer::from_parts(w, b, Vocabulary::standard(), FeatureConfig::default()).unwrap()
    }

    fn random_features(seed: u64, frames: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..frames).map(|_| (0..NUM_FEATURES).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = Recognizer::zeros(Vocabulary::standard(), FeatureConfig::default()).unwrap();
        let lp = m.forward(&random_features(1, 3)).unwrap();
        for v in lp.iter().flatten() {
            assert!((v - (1.0 / 11.0f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_normalise_and_ignore_shifts() {
        let m = random_model(2);
        let f = random_features(3, 5);
        let lp = m.forward(&f).unwrap();
        for row in &lp {
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            assert!(lse.abs() < 1e-9);
        }
        let logits = m.logits(&f).unwrap();
        let shifted: Vec<Vec<f64>> = logits.iter().map(|r| r.iter().map(|v| v + 42.0).collect()).collect();
        let a = log_softmax(&logits);
        let b = log_softmax(&shifted);
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!(m.forward(&[vec![0.0; 3]]).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = random_model(4);
        let back = Recognizer::from_text(&m.to_text()).unwrap();
        assert_eq!(m, back);
        assert!(Recognizer::from_text("platewave-recognizer 2 11 65\n").is_err());
        let mut broken = m.to_text();
        broken.push_str("1.0\n");
        assert!(Recognizer::from_text(&broken).is_err());
    }
}
