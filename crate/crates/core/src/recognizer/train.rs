//! Full-batch gradient descent on the mean CTC loss over synthetic commands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{config, Error, Result};
use crate::filter::{BASEBAND_RATE_HZ, SIM_RATE_HZ};
use crate::metrics::cer;
use crate::receiver::Receiver;
use crate::signal::{add_noise, am_modulate, SampledSignal, Transcript};

use super::ctc::{ctc_loss, greedy_decode, log_softmax, logit_gradient};
use super::features::{FeatureConfig, Featurizer, NUM_FEATURES};
use super::model::{Recognizer, BLANK, NUM_CLASSES};
use super::vocab::{synth_command, Vocabulary, DEFAULT_GAP_S};

#[derive(Debug, Clone, PartialEq)]
pub struct RecognizerTrainingSpec {
    pub num_commands: usize,
    pub num_held_out: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub gap_s: f64,
    /// SNR of the lightly noised copies.
    pub noise_snr_db: f64,
    /// Carriers used for the copies rendered through the ultrasonic reception path.
    pub attack_carriers_hz: Vec<f64>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Leading epochs trained on the known frame alignment instead of CTC.
    pub warm_start_epochs: usize,
    pub min_epochs: usize,
    pub eval_every: usize,
    pub target_cer: f64,
}

impl Default for RecognizerTrainingSpec {
    fn default() -> Self {
        Self {
            num_commands: 240,
            num_held_out: 40,
            min_words: 2,
            max_words: 7,
            gap_s: DEFAULT_GAP_S,
            noise_snr_db: 20.0,
            attack_carriers_hz: vec![20_000.0, 21_000.0, 22_000.0, 23_000.0, 24_000.0],
            learning_rate: 0.05,
            max_epochs: 2_000,
            warm_start_epochs: 200,
            min_epochs: 400,
            eval_every: 25,
            target_cer: 0.05,
        }
    }
}

impl RecognizerTrainingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_commands == 0 || self.num_held_out == 0 {
            return Err(config("training and held-out sets must be non-empty"));
        }
        if !(1 <= self.min_words && self.min_words <= self.max_words && self.max_words <= super::vocab::MAX_COMMAND_WORDS) {
            return Err(config("word counts must satisfy 1 <= min <= max <= 7"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config("learning rate must be positive"));
        }
        if self.eval_every == 0 || self.max_epochs == 0 {
            return Err(config("epoch budget and evaluation interval must be positive"));
        }
        if !(self.target_cer > 0.0) {
            return Err(config("target CER must be positive"));
        }
        if self.attack_carriers_hz.iter().any(|f| !(*f > 0.0 && *f < SIM_RATE_HZ / 2.0)) {
            return Err(config("attack carriers must lie below the simulation Nyquist"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub epochs: usize,
    pub held_out_cer: f64,
    pub final_loss: f64,
}

/// `n` random commands of `min..=max` words.
pub fn random_commands(n: usize, min_words: usize, max_words: usize, seed: u64) -> Vec<Transcript> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(min_words..=max_words);
            Transcript::new((0..len).map(|_| rng.gen_range(0..super::vocab::NUM_WORDS)).collect())
        })
        .collect()
}

/// Renders a command at 192 kHz and passes it through the microphone front end, either
/// as audible sound or AM-modulated on `carrier_hz`.
pub fn receive_command(
    command: &Transcript,
    vocab: &Vocabulary,
    gap_s: f64,
    carrier_hz: Option<f64>,
    receiver: &Receiver,
) -> Result<SampledSignal> {
    let x = synth_command(command, vocab, gap_s, SIM_RATE_HZ)?;
    let incident = match carrier_hz {
        Some(f) => am_modulate(&x, f, true)?,
        None => x,
    };
    receiver.receive_signal(&incident)
}

struct Example {
    features: Vec<Vec<f64>>,
    label: Transcript,
    /// Word index (or blank) under each frame centre, known from synthesis.
    frame_labels: Vec<usize>,
}

/// Class under the centre of every frame of a synthesized command.
fn frame_alignment(num_words: usize, gap_s: f64, frames: usize, tokens: &[usize]) -> Vec<usize> {
    let cfg = FeatureConfig::default();
    let word = (super::vocab::WORD_DURATION_S * BASEBAND_RATE_HZ).round() as usize;
    let gap = (gap_s * BASEBAND_RATE_HZ).round() as usize;
    (0..frames)
        .map(|t| {
            let centre = t * cfg.hop() + cfg.frame_len() / 2;
            let slot = centre / (word + gap);
            if slot < num_words && centre % (word + gap) < word {
                tokens[slot]
            } else {
                BLANK
            }
        })
        .collect()
}

impl Example {
    fn new(features: Vec<Vec<f64>>, label: &Transcript, gap_s: f64) -> Self {
        let frame_labels = frame_alignment(label.len(), gap_s, features.len(), &label.tokens);
        Self {
            features,
            label: label.clone(),
            frame_labels,
        }
    }
}

fn render_training_example(
    i: usize,
    command: &Transcript,
    vocab: &Vocabulary,
    spec: &RecognizerTrainingSpec,
    receiver: &Receiver,
    featurizer: &Featurizer,
    seed: u64,
) -> Result<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let gain = rng.gen_range(0.2..1.0);
    let signal = match i % 4 {
        0 => synth_command(command, vocab, spec.gap_s, BASEBAND_RATE_HZ)?.scaled(gain),
        1 => add_noise(
            &synth_command(command, vocab, spec.gap_s, BASEBAND_RATE_HZ)?.scaled(gain),
            spec.noise_snr_db,
            rng.gen(),
        )?,
        2 => receive_command(command, vocab, spec.gap_s, None, receiver)?,
        _ => {
            let carriers = &spec.attack_carriers_hz;
            let f = if carriers.is_empty() {
                None
            } else {
                Some(carriers[rng.gen_range(0..carriers.len())])
            };
            let rx = receive_command(command, vocab, spec.gap_s, f, receiver)?;
            if rng.gen_bool(0.5) {
                add_noise(&rx, spec.noise_snr_db, rng.gen())?
            } else {
                rx
            }
        }
    };
    Ok(Example::new(featurizer.featurize(&signal)?, command, spec.gap_s))
}

/// `z = P (x - mean)` with `P = D^{-1/2} V^T` from the feature covariance.
struct Whitener {
    mean: Vec<f64>,
    /// Row-major `NUM_FEATURES x NUM_FEATURES`.
    proj: Vec<f64>,
}

impl Whitener {
    fn fit(examples: &[Example]) -> Self {
        let rows: Vec<&Vec<f64>> = examples.iter().flat_map(|e| &e.features).collect();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; NUM_FEATURES];
        for r in &rows {
            mean.iter_mut().zip(r.iter()).for_each(|(m, v)| *m += v / n);
        }
        let mut cov = DMatrix::<f64>::zeros(NUM_FEATURES, NUM_FEATURES);
        for r in &rows {
            let d = DVector::from_iterator(NUM_FEATURES, r.iter().zip(&mean).map(|(v, m)| v - m));
            cov += &d * d.transpose() / n;
        }
        let eig = SymmetricEigen::new(cov);
        let top = eig.eigenvalues.max();
        let mut proj = vec![0.0; NUM_FEATURES * NUM_FEATURES];
        for i in 0..NUM_FEATURES {
            let s = 1.0 / eig.eigenvalues[i].max(1e-8 * top).sqrt();
            for j in 0..NUM_FEATURES {
                proj[i * NUM_FEATURES + j] = s * eig.eigenvectors[(j, i)];
            }
        }
        Self { mean, proj }
    }

    fn apply(&self, rows: &mut [Vec<f64>]) {
        for row in rows {
            let d: Vec<f64> = row.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
            for (i, out) in row.iter_mut().enumerate() {
                *out = self.proj[i * NUM_FEATURES..(i + 1) * NUM_FEATURES].iter().zip(&d).map(|(p, v)| p * v).sum();
            }
        }
    }

    /// Affine map on raw features equal to `(w, b)` on whitened ones.
    fn fold(&self, w: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut wf = vec![0.0; NUM_CLASSES * NUM_FEATURES];
        let mut bf = b.to_vec();
        for c in 0..NUM_CLASSES {
            for i in 0..NUM_FEATURES {
                let wc = w[c * NUM_FEATURES + i];
                for j in 0..NUM_FEATURES {
                    wf[c * NUM_FEATURES + j] += wc * self.proj[i * NUM_FEATURES + j];
                }
            }
            bf[c] -= (0..NUM_FEATURES).map(|j| wf[c * NUM_FEATURES + j] * self.mean[j]).sum::<f64>();
        }
        (wf, bf)
    }
}

fn logits(w: &[f64], b: &[f64], rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|x| {
            (0..NUM_CLASSES)
                .map(|c| b[c] + w[c * NUM_FEATURES..(c + 1) * NUM_FEATURES].iter().zip(x).map(|(p, q)| p * q).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Summed frame-wise cross-entropy and its logit gradient.
fn frame_cross_entropy(log_probs: &[Vec<f64>], labels: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let mut loss = 0.0;
    let grad = log_probs
        .iter()
        .zip(labels)
        .map(|(lp, &k)| {
            loss -= lp[k];
            let mut g: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
            g[k] -= 1.0;
            g
        })
        .collect();
    (loss, grad)
}

fn mean_cer(w: &[f64], b: &[f64], set: &[Example]) -> Result<f64> {
    let total = set
        .iter()
        .map(|e| cer(&e.label, &greedy_decode(&logits(w, b, &e.features))))
        .collect::<Result<Vec<f64>>>()?;
    Ok(total.iter().sum::<f64>() / set.len() as f64)
}

/// Trains the affine model on synthetic commands; deterministic for a given seed.
///
/// A quarter of the training commands are heard clean, a quarter with light
/// noise, a quarter through the audible microphone path and a quarter through
/// the ultrasonic reception path. Held-out commands are clean.
///
/// Features are whitened for the optimisation and the whitening is folded
/// back into the returned affine map. The first `warm_start_epochs` fit the
/// known frame alignment with cross-entropy; CTC alone from a zero start
/// settles on spikes at word edges that break under reception distortion.
/// Training stops at the first evaluation after `min_epochs` where the
/// held-out CER is below `target_cer`.
pub fn train_recognizer(
    vocab: &Vocabulary,
    spec: &RecognizerTrainingSpec,
    seed: u64,
) -> Result<(Recognizer, TrainingReport)> {
    spec.validate()?;
    vocab.validate()?;
    let receiver = Receiver::default();
    let featurizer = Featurizer::new(FeatureConfig::default())?;
    let commands = random_commands(spec.num_commands, spec.min_words, spec.max_words, seed);
    let held_commands = random_commands(spec.num_held_out, spec.min_words, spec.max_words, seed.wrapping_add(1));

    let mut train = commands
        .par_iter()
        .enumerate()
        .map(|(i, c)| render_training_example(i, c, vocab, spec, &receiver, &featurizer, seed))
        .collect::<Result<Vec<Example>>>()?;
    let mut held = held_commands
        .iter()
        .map(|c| {
            Ok(Example::new(
                featurizer.featurize(&synth_command(c, vocab, spec.gap_s, BASEBAND_RATE_HZ)?)?,
                c,
                spec.gap_s,
            ))
        })
        .collect::<Result<Vec<Example>>>()?;
    let norm = Whitener::fit(&train);
    train.iter_mut().for_each(|e| norm.apply(&mut e.features));
    held.iter_mut().for_each(|e| norm.apply(&mut e.features));

    let mut w = vec![0.0; NUM_CLASSES * NUM_FEATURES];
    let mut b = vec![0.0; NUM_CLASSES];
    let n_utt = train.len() as f64;
    let mut epochs = 0;
    let mut held_cer = mean_cer(&w, &b, &held)?;
    let mut loss = f64::INFINITY;

    while epochs < spec.max_epochs {
        let parts = train
            .par_iter()
            .map(|e| -> Result<(f64, Vec<f64>, Vec<f64>)> {
                let lp = log_softmax(&logits(&w, &b, &e.features));
                let (l, g) = if epochs < spec.warm_start_epochs {
                    frame_cross_entropy(&lp, &e.frame_labels)
                } else {
                    let out = ctc_loss(&lp, &e.label)?;
                    (out.loss, logit_gradient(&lp, &out.grad))
                };
                let scale = 1.0 / n_utt;
                let mut gw = vec![0.0; NUM_CLASSES * NUM_FEATURES];
                let mut gb = vec![0.0; NUM_CLASSES];
                for (gt, x) in g.iter().zip(&e.features) {
                    for c in 0..NUM_CLASSES {
                        let gc = gt[c] * scale;
                        gb[c] += gc;
                        for (acc, xv) in gw[c * NUM_FEATURES..(c + 1) * NUM_FEATURES].iter_mut().zip(x) {
                            *acc += gc * xv;
                        }
                    }
                }
                Ok((l, gw, gb))
            })
            .collect::<Result<Vec<_>>>()?;
        // fixed-order reduction
        let mut gw = vec![0.0; NUM_CLASSES * NUM_FEATURES];
        let mut gb = vec![0.0; NUM_CLASSES];
        loss = 0.0;
        for (l, pw, pb) in &parts {
            loss += l / n_utt;
            gw.iter_mut().zip(pw).for_each(|(a, v)| *a += v);
            gb.iter_mut().zip(pb).for_each(|(a, v)| *a += v);
        }
        w.iter_mut().zip(&gw).for_each(|(a, g)| *a -= spec.learning_rate * g);
        b.iter_mut().zip(&gb).for_each(|(a, g)| *a -= spec.learning_rate * g);
        epochs += 1;
        if epochs % spec.eval_every == 0 || epochs == spec.max_epochs {
            held_cer = mean_cer(&w, &b, &held)?;
            if epochs >= spec.min_epochs && held_cer < spec.target_cer {
                break;
            }
        }
    }
    if held_cer >= spec.target_cer {
        return Err(Error::TrainingFailed { cer: held_cer, epochs });
    }

    let (w, bias) = norm.fold(&w, &b);
    let model = Recognizer::from_parts(w, bias, vocab.clone(), FeatureConfig::default())?;
    Ok((
        model,
        TrainingReport {
            epochs,
            held_out_cer: held_cer,
            final_loss: loss,
        },
    ))
}
