//! Ten-word tone vocabulary and command synthesis.

use std::f64::consts::PI;

use crate::error::{config, Result};
use crate::signal::{SampledSignal, Transcript};

pub const NUM_WORDS: usize = 10;
pub const WORD_DURATION_S: f64 = 0.2;
pub const RAMP_S: f64 = 0.01;
pub const PEAK_AMPLITUDE: f64 = 0.8;
pub const MAX_COMMAND_WORDS: usize = 7;
/// Gap between words used throughout the toolkit.
pub const DEFAULT_GAP_S: f64 = 0.05;

const BAND_LO_HZ: f64 = 300.0;
const BAND_HI_HZ: f64 = 3_400.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Word {
    pub id: usize,
    pub label: String,
    pub freqs_hz: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<Word>,
}

const LABELS: [&str; NUM_WORDS] = [
    "open", "close", "call", "play", "stop", "send", "light", "lock", "music", "home",
];

impl Vocabulary {
    /// Word `i` sounds at `375 + 150 i` Hz and `1875 + 150 i` Hz.
    pub fn standard() -> Self {
        let words = LABELS
            .iter()
            .enumerate()
            .map(|(i, l)| Word {
                id: i,
                label: (*l).to_string(),
                freqs_hz: [375.0 + 150.0 * i as f64, 1_875.0 + 150.0 * i as f64],
            })
            .collect();
        Self { words }
    }

    pub fn new(words: Vec<Word>) -> Result<Self> {
        let v = Self { words };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.words.len() != NUM_WORDS {
            return Err(config(format!("vocabulary needs {NUM_WORDS} words, got {}", self.words.len())));
        }
        let mut all: Vec<f64> = Vec::new();
        for (i, w) in self.words.iter().enumerate() {
            if w.id != i {
                return Err(config(format!("word {i} has id {}", w.id)));
            }
            for f in w.freqs_hz {
                if !(BAND_LO_HZ..=BAND_HI_HZ).contains(&f) {
                    return Err(config(format!("word '{}' tone {f} Hz outside 300-3400 Hz", w.label)));
                }
                if all.iter().any(|g| (g - f).abs() < 1e-9) {
                    return Err(config(format!("tone {f} Hz is used twice")));
                }
                all.push(f);
            }
        }
        Ok(())
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Space-separated word labels.
    pub fn render(&self, t: &Transcript) -> String {
        t.tokens
            .iter()
            .map(|&k| self.words.get(k).map_or("?", |w| w.label.as_str()))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn envelope(t: f64) -> f64 {
    if t < 0.0 || t > WORD_DURATION_S {
        0.0
    } else if t < RAMP_S {
        0.5 - 0.5 * (PI * t / RAMP_S).cos()
    } else if t > WORD_DURATION_S - RAMP_S {
        0.5 - 0.5 * (PI * (WORD_DURATION_S - t) / RAMP_S).cos()
    } else {
        1.0
    }
}

/// Word waveforms separated by `gap_s` of silence, scaled to a peak of 0.8.
pub fn synth_command(words: &Transcript, vocab: &Vocabulary, gap_s: f64, sample_rate_hz: f64) -> Result<SampledSignal> {
    if words.is_empty() || words.len() > MAX_COMMAND_WORDS {
        return Err(config(format!("a command has 1-{MAX_COMMAND_WORDS} words, got {}", words.len())));
    }
    if !(gap_s >= 0.0 && gap_s.is_finite()) {
        return Err(config("word gap must be non-negative"));
    }
    if let Some(bad) = words.tokens.iter().find(|&&k| k >= vocab.len()) {
        return Err(config(format!("token {bad} is not in the vocabulary")));
    }
    let word_len = (WORD_DURATION_S * sample_rate_hz).round() as usize;
    let gap_len = (gap_s * sample_rate_hz).round() as usize;
    let n = words.len() * word_len + (words.len() - 1) * gap_len;
    let mut out = vec![0.0; n];
    for (i, &k) in words.tokens.iter().enumerate() {
        let start = i * (word_len + gap_len);
        let [f1, f2] = vocab.words[k].freqs_hz;
        for j in 0..word_len {
            let t = j as f64 / sample_rate_hz;
            out[start + j] = envelope(t) * ((2.0 * PI * f1 * t).sin() + (2.0 * PI * f2 * t).sin());
        }
    }
    let peak = out.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    out.iter_mut().for_each(|v| *v *= PEAK_AMPLITUDE / peak);
    SampledSignal::new(out, sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_vocabulary_is_valid() {
        let v = Vocabulary::standard();
        v.validate().unwrap();
        let mut dup = v.words().to_vec();
        dup[3].freqs_hz[1] = dup[4].freqs_hz[1];
        assert!(Vocabulary::new(dup).is_err());
    }

    #[test]
    fn durations_and_peak() {
        let v = Vocabulary::standard();
        let one = synth_command(&Transcript::new(vec![2]), &v, 0.05, 16_000.0).unwrap();
        assert_eq!(one.len(), 3_200);
        assert!((one.duration_s() - 0.2).abs() < 1e-12);
        let three = synth_command(&Transcript::new(vec![0, 9, 0]), &v, 0.05, 16_000.0).unwrap();
        assert!((three.duration_s() - 0.7).abs() < 1e-12);
        assert!((three.peak() - 0.8).abs() < 1e-12);
        // silence in the gap
        assert!(three.samples()[3_200..4_000].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn bad_commands_rejected() {
        let v = Vocabulary::standard();
        assert!(synth_command(&Transcript::new(vec![]), &v, 0.05, 16_000.0).is_err());
        assert!(synth_command(&Transcript::new(vec![1; 8]), &v, 0.05, 16_000.0).is_err());
        assert!(synth_command(&Transcript::new(vec![10]), &v, 0.05, 16_000.0).is_err());
        assert!(synth_command(&Transcript::new(vec![1]), &v, -0.1, 16_000.0).is_err());
    }
}
