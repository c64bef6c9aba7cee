//! Universal perturbation training against carrier- and time-randomized attacks.
//!
//! The perturbation `δ` lives on the 16 kHz grid. It is upsampled cyclically to
//! 192 kHz, modulated onto `f_x` and added to the incident ultrasound, so the
//! gradient is taken with respect to what the defending speaker emits.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::attack::COMMAND_PAD_S;
use crate::error::{config, Error, Result};
use crate::filter::{CyclicInterpolator, BASEBAND_RATE_HZ, DECIMATION, SIM_RATE_HZ};
use crate::metrics::cer;
use crate::receiver::Receiver;
use crate::recognizer::{greedy_decode, synth_command, Recognizer, DEFAULT_GAP_S};
use crate::signal::{am_modulate, carrier_wave, circular_shift, SampledSignal, Transcript};
use crate::wav::write_wav;

pub const DEFAULT_PERTURB_CARRIER_HZ: f64 = 18_000.0;
pub const MAX_EPSILON: f64 = 0.2;
pub const MIN_ATTACK_CARRIER_HZ: f64 = 20_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epsilon: f64,
    pub step: f64,
    pub max_iters: usize,
    /// Circular shifts of the padded attack, in 192 kHz samples.
    pub delay_set: Vec<usize>,
    pub freq_set: Vec<f64>,
    pub perturb_carrier_hz: f64,
    pub cer_threshold: f64,
    pub target_rate: f64,
    /// Passes over the command set before giving up on `target_rate`.
    pub max_passes: usize,
}

impl TrainConfig {
    /// Eight shifts across `padded_len` and carriers 20 to 24 kHz.
    pub fn standard(padded_len: usize) -> Self {
        let epsilon = 0.05;
        Self {
            epsilon,
            step: epsilon / 20.0,
            max_iters: 200,
            delay_set: uniform_shifts(padded_len, 8),
            freq_set: default_freqs(),
            perturb_carrier_hz: DEFAULT_PERTURB_CARRIER_HZ,
            cer_threshold: 0.7,
            target_rate: 0.9,
            max_passes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= MAX_EPSILON) {
            return Err(config(format!("epsilon must lie in (0, {MAX_EPSILON}], got {}", self.epsilon)));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(config("IGSM step must be positive"));
        }
        if !(self.cer_threshold > 0.0 && self.cer_threshold <= 1.0) {
            return Err(config("CER threshold must lie in (0, 1]"));
        }
        if !(self.target_rate > 0.0 && self.target_rate <= 1.0) {
            return Err(config("target rate must lie in (0, 1]"));
        }
        if self.delay_set.is_empty() || self.freq_set.is_empty() {
            return Err(config("shift and carrier sets must be non-empty"));
        }
        if self.max_passes == 0 {
            return Err(config("at least one training pass is required"));
        }
        check_carriers(&self.freq_set, self.perturb_carrier_hz)
    }

    /// Stable textual form hashed into the provenance.
    fn canonical(&self) -> String {
        format!(
            "epsilon={:e};step={:e};max_iters={};delays={:?};freqs={:?};fx={:e};cer={:e};rate={:e};passes={}",
            self.epsilon,
            self.step,
            self.max_iters,
            self.delay_set,
            self.freq_set.iter().map(|f| format!("{f:e}")).collect::<Vec<_>>(),
            self.perturb_carrier_hz,
            self.cer_threshold,
            self.target_rate,
            self.max_passes
        )
    }
}

fn check_carriers(freqs: &[f64], fx: f64) -> Result<()> {
    if !(fx > 0.0 && fx < SIM_RATE_HZ / 2.0) {
        return Err(config(format!("perturbation carrier {fx} Hz must lie below Nyquist")));
    }
    for &f in freqs {
        if !(f >= MIN_ATTACK_CARRIER_HZ && f < SIM_RATE_HZ / 2.0) {
            return Err(config(format!("attack carrier {f} Hz must lie in [20 kHz, Nyquist)")));
        }
        if f == fx {
            return Err(config(format!("attack carrier {f} Hz coincides with the perturbation carrier")));
        }
    }
    Ok(())
}

/// `count` shifts `k * len / count`.
pub fn uniform_shifts(len: usize, count: usize) -> Vec<usize> {
    (0..count).map(|k| k * len / count.max(1)).collect()
}

/// The uniform grid moved by half a step; disjoint from [`uniform_shifts`].
pub fn half_offset_shifts(len: usize, count: usize) -> Vec<usize> {
    (0..count).map(|k| (2 * k + 1) * len / (2 * count.max(1))).collect()
}

pub fn default_freqs() -> Vec<f64> {
    vec![20_000.0, 21_000.0, 22_000.0, 23_000.0, 24_000.0]
}

pub fn held_out_freqs() -> Vec<f64> {
    vec![20_500.0, 21_500.0, 22_500.0, 23_500.0]
}

/// Where a perturbation came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    delta: SampledSignal,
    epsilon_used: f64,
    perturb_carrier_hz: f64,
    pub provenance: Provenance,
}

const FORMAT_TAG: &str = "platewave-perturbation";
const FORMAT_VERSION: u32 = 1;

impl Perturbation {
    /// All-zero `δ` of `len` baseband samples.
    pub fn zeros(len: usize, epsilon: f64, perturb_carrier_hz: f64) -> Result<Self> {
        Self::from_parts(vec![0.0; len], epsilon, perturb_carrier_hz, Provenance {
            config_hash: "none".into(),
            seed: 0,
        })
    }

    pub fn from_parts(delta: Vec<f64>, epsilon: f64, perturb_carrier_hz: f64, provenance: Provenance) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon <= MAX_EPSILON) {
            return Err(config(format!("epsilon must lie in [0, {MAX_EPSILON}]")));
        }
        if delta.is_empty() {
            return Err(config("perturbation is empty"));
        }
        if let Some(v) = delta.iter().find(|v| !(v.abs() <= epsilon)) {
            return Err(Error::Domain(format!("perturbation sample {v} exceeds the bound {epsilon}")));
        }
        check_carriers(&[], perturb_carrier_hz)?;
        Ok(Self {
            delta: SampledSignal::new(delta, BASEBAND_RATE_HZ)?,
            epsilon_used: epsilon,
            perturb_carrier_hz,
            provenance,
        })
    }

    pub fn delta(&self) -> &SampledSignal {
        &self.delta
    }

    pub fn epsilon_used(&self) -> f64 {
        self.epsilon_used
    }

    pub fn perturb_carrier_hz(&self) -> f64 {
        self.perturb_carrier_hz
    }

    /// Length of the 192 kHz waveform the perturbation covers.
    pub fn incident_len(&self) -> usize {
        self.delta.len() * DECIMATION
    }

    /// `δ` upsampled and modulated onto `f_x`, as the defending speaker emits it.
    pub fn emitted(&self) -> SampledSignal {
        let up = CyclicInterpolator::standard().apply(self.delta.samples());
        let c = carrier_wave(up.len(), self.perturb_carrier_hz, SIM_RATE_HZ, 0.0);
        SampledSignal::from_parts_unchecked(up.iter().zip(&c).map(|(a, b)| a * b).collect(), SIM_RATE_HZ)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{FORMAT_TAG} {FORMAT_VERSION}\n");
        writeln!(s, "epsilon {:.16e}", self.epsilon_used).expect("string write");
        writeln!(s, "carrier_hz {:.16e}", self.perturb_carrier_hz).expect("string write");
        writeln!(s, "config_hash {}", self.provenance.config_hash).expect("string write");
        writeln!(s, "seed {}", self.provenance.seed).expect("string write");
        writeln!(s, "samples {}", self.delta.len()).expect("string write");
        for v in self.delta.samples() {
            writeln!(s, "{v:.16e}").expect("string write");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |m: String| Error::Parse {
            context: "perturbation".into(),
            message: m,
        };
        let mut lines = text.lines();
        if lines.next() != Some(&format!("{FORMAT_TAG} {FORMAT_VERSION}")) {
            return Err(err("bad header".into()));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| err(format!("missing {key}")))?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(err(format!("expected {key}, got {line:?}"))),
            }
        };
        let num = |v: String, key: &str| v.parse::<f64>().map_err(|e| err(format!("{key}: {e}")));
        let epsilon = num(field("epsilon")?, "epsilon")?;
        let carrier = num(field("carrier_hz")?, "carrier_hz")?;
        let config_hash = field("config_hash")?;
        let seed = field("seed")?.parse::<u64>().map_err(|e| err(format!("seed: {e}")))?;
        let n = field("samples")?.parse::<usize>().map_err(|e| err(format!("samples: {e}")))?;
        let delta = lines
            .by_ref()
            .take(n)
            .map(|l| l.trim().parse::<f64>().map_err(|e| err(format!("sample: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if delta.len() != n || lines.any(|l| !l.trim().is_empty()) {
            return Err(err(format!("expected exactly {n} samples")));
        }
        Self::from_parts(delta, epsilon, carrier, Provenance { config_hash, seed })
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

    /// The modulated 192 kHz form, for listening; 16-bit quantised.
    pub fn write_emitted_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        write_wav(path, &self.emitted())
    }
}

/// Common 192 kHz length for a command set: the longest command plus silence, a multiple of 12.
pub fn padded_length(commands: &[Transcript], recognizer: &Recognizer) -> Result<usize> {
    let mut longest = 0;
    for c in commands {
        longest = longest.max(synth_command(c, recognizer.vocabulary(), DEFAULT_GAP_S, SIM_RATE_HZ)?.len());
    }
    let pad = (COMMAND_PAD_S * SIM_RATE_HZ).round() as usize;
    Ok((longest + 2 * pad).div_ceil(DECIMATION) * DECIMATION)
}

/// A command rendered at 192 kHz with leading silence, zero-padded to `len`.
pub fn render_padded(command: &Transcript, recognizer: &Recognizer, len: usize) -> Result<SampledSignal> {
    let x = synth_command(command, recognizer.vocabulary(), DEFAULT_GAP_S, SIM_RATE_HZ)?;
    let pad = (COMMAND_PAD_S * SIM_RATE_HZ).round() as usize;
    if x.len() + pad > len {
        return Err(config(format!("command of {} samples does not fit a {len}-sample frame", x.len())));
    }
    let mut s = vec![0.0; pad];
    s.extend_from_slice(x.samples());
    s.resize(len, 0.0);
    SampledSignal::new(s, SIM_RATE_HZ)
}

/// Receive chain with the perturbation path, forward and reverse.
#[derive(Debug, Clone)]
pub struct DefenseChain {
    receiver: Receiver,
    interp: CyclicInterpolator,
}

impl Default for DefenseChain {
    fn default() -> Self {
        Self::new(Receiver::default())
    }
}

/// Gradient of the CTC loss with respect to `δ`, with the forward results it came from.
#[derive(Debug, Clone)]
pub struct DeltaGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub decoded: Transcript,
}

impl DefenseChain {
    pub fn new(receiver: Receiver) -> Self {
        Self {
            receiver,
            interp: CyclicInterpolator::standard(),
        }
    }

    fn check(&self, command: &SampledSignal, perturbation: Option<&Perturbation>) -> Result<()> {
        if command.sample_rate_hz() != SIM_RATE_HZ {
            return Err(config("commands must be rendered at 192 kHz"));
        }
        if let Some(p) = perturbation {
            if p.incident_len() != command.len() {
                return Err(config(format!(
                    "perturbation covers {} samples, command has {}",
                    p.incident_len(),
                    command.len()
                )));
            }
        }
        Ok(())
    }

    /// Incident ultrasound for a shifted attack on `carrier_hz`, without any perturbation.
    pub fn attack_incident(&self, command: &SampledSignal, shift: usize, carrier_hz: f64, perturb_carrier_hz: f64) -> Result<Vec<f64>> {
        self.check(command, None)?;
        check_carriers(&[carrier_hz], perturb_carrier_hz)?;
        let modulated = am_modulate(command, carrier_hz, true)?;
        Ok(circular_shift(&modulated, shift as i64).into_samples())
    }

    fn receive_with(&self, base: &[f64], emitted: Option<&[f64]>) -> SampledSignal {
        match emitted {
            Some(e) => {
                let incident: Vec<f64> = base.iter().zip(e).map(|(a, b)| a + b).collect();
                baseband(self.receiver.receive(&incident))
            }
            None => baseband(self.receiver.receive(base)),
        }
    }

    pub fn received_attack(
        &self,
        command: &SampledSignal,
        shift: usize,
        carrier_hz: f64,
        perturbation: Option<&Perturbation>,
    ) -> Result<SampledSignal> {
        self.check(command, perturbation)?;
        let fx = perturbation.map_or(DEFAULT_PERTURB_CARRIER_HZ, |p| p.perturb_carrier_hz);
        let base = self.attack_incident(command, shift, carrier_hz, fx)?;
        let emitted = perturbation.map(|p| p.emitted().into_samples());
        Ok(self.receive_with(&base, emitted.as_deref()))
    }

    /// Audible command plus the emitted perturbation.
    pub fn received_clean(&self, command: &SampledSignal, perturbation: Option<&Perturbation>) -> Result<SampledSignal> {
        self.check(command, perturbation)?;
        let emitted = perturbation.map(|p| p.emitted().into_samples());
        Ok(self.receive_with(command.samples(), emitted.as_deref()))
    }

    /// Forward through the recognizer and reverse from the CTC loss on `label` back to `δ`.
    ///
    /// `emitted` is the modulated perturbation and `fx_carrier` the bare `f_x` cosine.
    fn grad_from_base(
        &self,
        base: &[f64],
        emitted: &[f64],
        fx_carrier: &[f64],
        recognizer: &Recognizer,
        label: &Transcript,
    ) -> Result<DeltaGradient> {
        let part = self.carrier_grad(base, emitted, fx_carrier, recognizer, label)?;
        Ok(DeltaGradient {
            grad: self.interp.adjoint(&part.grad),
            ..part
        })
    }

    /// Like `grad_from_base` but stops at the 192 kHz interpolator output, so batches can share one adjoint.
    fn carrier_grad(
        &self,
        base: &[f64],
        emitted: &[f64],
        fx_carrier: &[f64],
        recognizer: &Recognizer,
        label: &Transcript,
    ) -> Result<DeltaGradient> {
        let incident: Vec<f64> = base.iter().zip(emitted).map(|(a, b)| a + b).collect();
        let received = baseband(self.receiver.receive(&incident));
        let trace = recognizer.trace(&received)?;
        let decoded = greedy_decode(&trace.log_probs);
        let (loss, g_base) = recognizer.loss_and_input_gradient(&trace, label)?;
        let mut g = self.receiver.backward(&incident, &g_base);
        for (gi, ci) in g.iter_mut().zip(fx_carrier) {
            *gi *= ci;
        }
        Ok(DeltaGradient { loss, grad: g, decoded })
    }

    pub fn grad_wrt_delta(
        &self,
        command: &SampledSignal,
        shift: usize,
        carrier_hz: f64,
        perturbation: &Perturbation,
        recognizer: &Recognizer,
        label: &Transcript,
    ) -> Result<DeltaGradient> {
        self.check(command, Some(perturbation))?;
        let base = self.attack_incident(command, shift, carrier_hz, perturbation.perturb_carrier_hz)?;
        let fx = carrier_wave(base.len(), perturbation.perturb_carrier_hz, SIM_RATE_HZ, 0.0);
        self.grad_from_base(&base, perturbation.emitted().samples(), &fx, recognizer, label)
    }
}

fn baseband(samples: Vec<f64>) -> SampledSignal {
    SampledSignal::from_parts_unchecked(samples, BASEBAND_RATE_HZ)
}

pub fn simulate_received_attack(
    command: &SampledSignal,
    shift: usize,
    carrier_hz: f64,
    perturbation: Option<&Perturbation>,
) -> Result<SampledSignal> {
    DefenseChain::default().received_attack(command, shift, carrier_hz, perturbation)
}

pub fn simulate_received_clean(command: &SampledSignal, perturbation: Option<&Perturbation>) -> Result<SampledSignal> {
    DefenseChain::default().received_clean(command, perturbation)
}

pub fn ctc_grad_wrt_delta(
    command: &SampledSignal,
    shift: usize,
    carrier_hz: f64,
    perturbation: &Perturbation,
    recognizer: &Recognizer,
    label: &Transcript,
) -> Result<DeltaGradient> {
    DefenseChain::default().grad_wrt_delta(command, shift, carrier_hz, perturbation, recognizer, label)
}

/// One attack instance: a padded command, its shift and carrier, and the transcript to disrupt.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub command: SampledSignal,
    pub shift: usize,
    pub carrier_hz: f64,
    pub label: Transcript,
}

/// What the recognizer hears from an undefended attack; falls back to the intended
/// command when that decode is empty.
pub fn attack_reference(
    chain: &DefenseChain,
    command: &SampledSignal,
    intended: &Transcript,
    shift: usize,
    carrier_hz: f64,
    recognizer: &Recognizer,
) -> Result<Transcript> {
    let heard = recognizer.transcribe(&chain.received_attack(command, shift, carrier_hz, None)?)?;
    Ok(if heard.is_empty() { intended.clone() } else { heard })
}

/// A batch item with its undefended incident waveform precomputed.
struct Prepared {
    base: Vec<f64>,
    label: Transcript,
}

/// The emitted perturbation and the bare `f_x` carrier, shared by a whole batch.
struct Emission {
    emitted: Vec<f64>,
    fx_carrier: Vec<f64>,
}

impl Emission {
    fn of(p: &Perturbation) -> Self {
        Self {
            emitted: p.emitted().into_samples(),
            fx_carrier: carrier_wave(p.incident_len(), p.perturb_carrier_hz, SIM_RATE_HZ, 0.0),
        }
    }
}

fn prepare(chain: &DefenseChain, batch: &[BatchItem], p: &Perturbation) -> Result<Vec<Prepared>> {
    batch
        .par_iter()
        .map(|b| {
            chain.check(&b.command, Some(p))?;
            Ok(Prepared {
                base: chain.attack_incident(&b.command, b.shift, b.carrier_hz, p.perturb_carrier_hz)?,
                label: b.label.clone(),
            })
        })
        .collect()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean gradient over the batch, summed in batch order, and every item's decode.
fn batch_gradient(
    chain: &DefenseChain,
    p: &Perturbation,
    prepared: &[Prepared],
    recognizer: &Recognizer,
) -> Result<(Vec<f64>, Vec<Transcript>)> {
    let em = Emission::of(p);
    let parts: Vec<DeltaGradient> = prepared
        .par_iter()
        .map(|b| chain.carrier_grad(&b.base, &em.emitted, &em.fx_carrier, recognizer, &b.label))
        .collect::<Result<_>>()?;
    let mut sum = vec![0.0; em.emitted.len()];
    for part in &parts {
        for (s, g) in sum.iter_mut().zip(&part.grad) {
            *s += g;
        }
    }
    let n = prepared.len() as f64;
    let mut grad = chain.interp.adjoint(&sum);
    grad.iter_mut().for_each(|s| *s /= n);
    Ok((grad, parts.into_iter().map(|d| d.decoded).collect()))
}

fn apply_sign_step(p: &Perturbation, grad: &[f64], cfg: &TrainConfig) -> Perturbation {
    let eps = cfg.epsilon.min(p.epsilon_used);
    let delta: Vec<f64> = p
        .delta
        .samples()
        .iter()
        .zip(grad)
        .map(|(d, g)| (d + cfg.step * sign(*g)).clamp(-eps, eps))
        .collect();
    assert!(delta.iter().all(|v| v.abs() <= eps), "projection left the l-inf ball");
    Perturbation {
        delta: SampledSignal::from_parts_unchecked(delta, BASEBAND_RATE_HZ),
        ..p.clone()
    }
}

/// Sign-of-mean-gradient ascent on the CTC loss followed by per-sample clamping to `±ε`.
pub fn igsm_step(p: &Perturbation, batch: &[BatchItem], cfg: &TrainConfig, recognizer: &Recognizer) -> Result<Perturbation> {
    igsm_step_with(&DefenseChain::default(), p, batch, cfg, recognizer)
}

pub fn igsm_step_with(
    chain: &DefenseChain,
    p: &Perturbation,
    batch: &[BatchItem],
    cfg: &TrainConfig,
    recognizer: &Recognizer,
) -> Result<Perturbation> {
    if batch.is_empty() {
        return Err(config("IGSM batch is empty"));
    }
    let prepared = prepare(chain, batch, p)?;
    let (grad, _) = batch_gradient(chain, p, &prepared, recognizer)?;
    Ok(apply_sign_step(p, &grad, cfg))
}

/// Final state of one `(command, shift, carrier)` triple after its inner loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub pass: usize,
    pub command_id: usize,
    pub shift: usize,
    pub carrier_hz: f64,
    pub iterations: usize,
    pub final_cer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UapTraining {
    pub perturbation: Perturbation,
    pub log: Vec<LogRow>,
    /// Fraction of training triples defeated with `δ` frozen after each pass.
    pub pass_success: Vec<f64>,
    /// How far the last pass fell short of `target_rate`, if it did.
    pub shortfall: Option<f64>,
}

impl UapTraining {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("pass,x_id,tau_samples,carrier_hz,iterations,final_cer\n");
        for r in &self.log {
            writeln!(s, "{},{},{},{},{},{}", r.pass, r.command_id, r.shift, r.carrier_hz, r.iterations, r.final_cer)
                .expect("string write");
        }
        s
    }
}

/// CER of every prepared item's decode under `δ`.
fn batch_cers(chain: &DefenseChain, p: &Perturbation, prepared: &[Prepared], recognizer: &Recognizer) -> Result<Vec<f64>> {
    let em = Emission::of(p);
    prepared
        .par_iter()
        .map(|b| cer(&b.label, &recognizer.transcribe(&chain.receive_with(&b.base, Some(&em.emitted)))?))
        .collect()
}

fn rate_above(cers: &[f64], threshold: f64) -> f64 {
    cers.iter().filter(|c| **c > threshold).count() as f64 / cers.len() as f64
}

fn provenance(commands: &[Transcript], len: usize, cfg: &TrainConfig, seed: u64) -> Provenance {
    let mut h = Sha256::new();
    h.update(cfg.canonical().as_bytes());
    h.update(format!(";len={len};commands={:?}", commands.iter().map(|c| &c.tokens).collect::<Vec<_>>()).as_bytes());
    Provenance {
        config_hash: hex::encode(h.finalize()),
        seed,
    }
}

/// Time- and carrier-randomized universal perturbation training.
///
/// Each pass visits the commands in a seeded random order. For each command the
/// batch is every `(shift, carrier)` pair, and sign steps continue while fewer
/// than `target_rate` of the pairs are defeated and fewer than `max_iters` steps
/// have been taken.
pub fn train_uap(commands: &[Transcript], cfg: &TrainConfig, recognizer: &Recognizer, seed: u64) -> Result<UapTraining> {
    train_uap_with(&DefenseChain::default(), commands, cfg, recognizer, seed)
}

pub fn train_uap_with(
    chain: &DefenseChain,
    commands: &[Transcript],
    cfg: &TrainConfig,
    recognizer: &Recognizer,
    seed: u64,
) -> Result<UapTraining> {
    cfg.validate()?;
    if commands.is_empty() {
        return Err(config("UAP training needs at least one command"));
    }
    let len = padded_length(commands, recognizer)?;
    if let Some(s) = cfg.delay_set.iter().find(|&&s| s >= len) {
        return Err(config(format!("shift {s} is not below the padded length {len}")));
    }
    let mut delta = Perturbation::from_parts(
        vec![0.0; len / DECIMATION],
        cfg.epsilon,
        cfg.perturb_carrier_hz,
        provenance(commands, len, cfg, seed),
    )?;
    let pairs: Vec<(usize, f64)> = cfg
        .delay_set
        .iter()
        .flat_map(|&s| cfg.freq_set.iter().map(move |&f| (s, f)))
        .collect();
    let batches: Vec<Vec<BatchItem>> = commands
        .iter()
        .map(|c| {
            let x = render_padded(c, recognizer, len)?;
            pairs
                .par_iter()
                .map(|&(shift, f)| {
                    Ok(BatchItem {
                        command: x.clone(),
                        shift,
                        carrier_hz: f,
                        label: attack_reference(chain, &x, c, shift, f, recognizer)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::new();
    let mut pass_success = Vec::new();
    for pass in 0..cfg.max_passes {
        let mut order: Vec<usize> = (0..commands.len()).collect();
        order.shuffle(&mut rng);
        for &i in &order {
            let prepared = prepare(chain, &batches[i], &delta)?;
            let mut k = 0;
            let cers = loop {
                if k >= cfg.max_iters {
                    break batch_cers(chain, &delta, &prepared, recognizer)?;
                }
                let (grad, heard) = batch_gradient(chain, &delta, &prepared, recognizer)?;
                let cers = prepared
                    .iter()
                    .zip(&heard)
                    .map(|(b, h)| cer(&b.label, h))
                    .collect::<Result<Vec<_>>>()?;
                if rate_above(&cers, cfg.cer_threshold) >= cfg.target_rate {
                    break cers;
                }
                delta = apply_sign_step(&delta, &grad, cfg);
                k += 1;
            };
            for (b, c) in batches[i].iter().zip(cers) {
                log.push(LogRow {
                    pass,
                    command_id: i,
                    shift: b.shift,
                    carrier_hz: b.carrier_hz,
                    iterations: k,
                    final_cer: c,
                });
            }
        }
        let mut all = Vec::new();
        for batch in &batches {
            all.extend(batch_cers(chain, &delta, &prepare(chain, batch, &delta)?, recognizer)?);
        }
        let rate = rate_above(&all, cfg.cer_threshold);
        pass_success.push(rate);
        if rate >= cfg.target_rate {
            break;
        }
    }
    let last = *pass_success.last().expect("at least one pass");
    Ok(UapTraining {
        perturbation: delta,
        log,
        pass_success,
        shortfall: (last < cfg.target_rate).then_some(cfg.target_rate - last),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefenseReport {
    /// Fraction of held-out triples whose decode moved more than the CER threshold.
    pub defense_success_rate: f64,
    /// Mean clean-command CER with `δ` playing minus without.
    pub clean_cer_delta: f64,
    pub clean_cer_without: f64,
    pub triples: usize,
}

pub fn evaluate_defense(
    p: &Perturbation,
    commands: &[Transcript],
    shifts: &[usize],
    freqs: &[f64],
    cer_threshold: f64,
    recognizer: &Recognizer,
) -> Result<DefenseReport> {
    evaluate_defense_with(&DefenseChain::default(), p, commands, shifts, freqs, cer_threshold, recognizer)
}

pub fn evaluate_defense_with(
    chain: &DefenseChain,
    p: &Perturbation,
    commands: &[Transcript],
    shifts: &[usize],
    freqs: &[f64],
    cer_threshold: f64,
    recognizer: &Recognizer,
) -> Result<DefenseReport> {
    if commands.is_empty() || shifts.is_empty() || freqs.is_empty() {
        return Err(config("held-out commands, shifts and carriers must be non-empty"));
    }
    check_carriers(freqs, p.perturb_carrier_hz)?;
    let len = p.incident_len();
    if let Some(s) = shifts.iter().find(|&&s| s >= len) {
        return Err(config(format!("shift {s} is not below the perturbation length {len}")));
    }
    let em = Emission::of(p);
    let mut hits = 0;
    let mut triples = 0;
    let mut clean = Vec::with_capacity(commands.len());
    for c in commands {
        let x = render_padded(c, recognizer, len)?;
        let pairs: Vec<(usize, f64)> = shifts.iter().flat_map(|&s| freqs.iter().map(move |&f| (s, f))).collect();
        let defeated: Vec<bool> = pairs
            .par_iter()
            .map(|&(s, f)| {
                let base = chain.attack_incident(&x, s, f, p.perturb_carrier_hz)?;
                let plain = recognizer.transcribe(&chain.receive_with(&base, None))?;
                let reference = if plain.is_empty() { c.clone() } else { plain };
                let heard = recognizer.transcribe(&chain.receive_with(&base, Some(&em.emitted)))?;
                Ok(cer(&reference, &heard)? > cer_threshold)
            })
            .collect::<Result<_>>()?;
        hits += defeated.iter().filter(|d| **d).count();
        triples += defeated.len();
        let without = cer(c, &recognizer.transcribe(&chain.receive_with(x.samples(), None))?)?;
        let with = cer(c, &recognizer.transcribe(&chain.receive_with(x.samples(), Some(&em.emitted)))?)?;
        clean.push((without, with));
    }
    let n = clean.len() as f64;
    let without = clean.iter().map(|c| c.0).sum::<f64>() / n;
    let with = clean.iter().map(|c| c.1).sum::<f64>() / n;
    Ok(DefenseReport {
        defense_success_rate: hits as f64 / triples as f64,
        clean_cer_delta: with - without,
        clean_cer_without: without,
        triples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rules() {
        let mut c = TrainConfig::standard(1_200);
        assert!(c.validate().is_ok());
        assert_eq!(c.delay_set, vec![0, 150, 300, 450, 600, 750, 900, 1_050]);
        assert_eq!(half_offset_shifts(1_200, 8)[0], 75);
        c.freq_set.push(18_000.0);
        assert!(c.validate().is_err());
        let mut c = TrainConfig::standard(1_200);
        c.freq_set = vec![19_000.0];
        assert!(c.validate().is_err());
        let mut c = TrainConfig::standard(1_200);
        c.epsilon = 0.3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let d: Vec<f64> = (0..50).map(|i| 0.04 * ((i as f64) * 0.37).sin()).collect();
        let p = Perturbation::from_parts(d, 0.05, 18_000.0, Provenance {
            config_hash: "abc".into(),
            seed: 9,
        })
        .unwrap();
        assert_eq!(Perturbation::from_text(&p.to_text()).unwrap(), p);
        assert!(Perturbation::from_parts(vec![0.06], 0.05, 18_000.0, p.provenance.clone()).is_err());
        let mut t = p.to_text();
        t.push_str("0.0\n");
        assert!(Perturbation::from_text(&t).is_err());
    }

    #[test]
    fn sign_step_clamps() {
        let p = Perturbation::from_parts(vec![0.049, -0.049, 0.0], 0.05, 18_000.0, Provenance {
            config_hash: String::new(),
            seed: 0,
        })
        .unwrap();
        let mut cfg = TrainConfig::standard(36);
        cfg.step = 0.01;
        let q = apply_sign_step(&p, &[1.0, -1.0, 0.0], &cfg);
        assert_eq!(q.delta().samples(), &[0.05, -0.05, 0.0]);
    }
}
