//! End-to-end attack runs and the distance, material and noise sweeps.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dispersion::{compensate, delay_profile, propagate, ChannelConfig, PlateMaterial};
use crate::error::{config, Result};
use crate::filter::SIM_RATE_HZ;
use crate::metrics::cer;
use crate::receiver::Receiver;
use crate::recognizer::{random_commands, synth_command, Recognizer, DEFAULT_GAP_S, MAX_COMMAND_WORDS};
use crate::signal::{add_noise, am_modulate, SampledSignal, Transcript};

pub const DEFAULT_CARRIER_HZ: f64 = 21_000.0;

/// Silence placed before and after the command so channel delays stay inside the buffer.
pub const COMMAND_PAD_S: f64 = 0.05;

/// Upper edge of the command band.
pub const COMMAND_BANDWIDTH_HZ: f64 = 3_400.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackScenario {
    pub command: Transcript,
    pub channel: ChannelConfig,
    pub carrier_hz: f64,
    pub precompensate: bool,
    /// `None` is a noiseless channel.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl AttackScenario {
    pub fn new(command: Transcript, channel: ChannelConfig) -> Self {
        Self {
            command,
            channel,
            carrier_hz: DEFAULT_CARRIER_HZ,
            precompensate: false,
            snr_db: None,
            seed: 0,
        }
    }

    pub fn validate(&self, recognizer: &Recognizer) -> Result<()> {
        self.channel.validate()?;
        if !(self.carrier_hz > 0.0 && self.carrier_hz < SIM_RATE_HZ / 2.0) {
            return Err(config(format!("carrier {} Hz must lie below {} Hz", self.carrier_hz, SIM_RATE_HZ / 2.0)));
        }
        if self.command.is_empty() {
            return Err(config("attack command is empty"));
        }
        if let Some(bad) = self.command.tokens.iter().find(|&&t| t >= recognizer.vocabulary().len()) {
            return Err(config(format!("command token {bad} is outside the vocabulary")));
        }
        if let Some(snr) = self.snr_db {
            if snr.is_nan() {
                return Err(config("SNR must be a number"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub received_baseband: SampledSignal,
    pub decoded: Transcript,
    pub cer_vs_command: f64,
    pub success: bool,
}

/// Zero-padded 192 kHz rendering of a command.
pub fn render_command(command: &Transcript, recognizer: &Recognizer) -> Result<SampledSignal> {
    let x = synth_command(command, recognizer.vocabulary(), DEFAULT_GAP_S, SIM_RATE_HZ)?;
    let pad = (COMMAND_PAD_S * SIM_RATE_HZ).round() as usize;
    let mut samples = vec![0.0; pad];
    samples.extend_from_slice(x.samples());
    samples.resize(samples.len() + pad, 0.0);
    SampledSignal::new(samples, SIM_RATE_HZ)
}

/// The ultrasonic waveform the transmitter emits, compensated for the channel if asked.
pub fn attack_waveform(scenario: &AttackScenario, recognizer: &Recognizer) -> Result<SampledSignal> {
    scenario.validate(recognizer)?;
    let x = render_command(&scenario.command, recognizer)?;
    let modulated = am_modulate(&x, scenario.carrier_hz, true)?;
    if scenario.precompensate {
        compensate(&modulated, &scenario.channel)
    } else {
        Ok(modulated)
    }
}

pub fn run_attack(scenario: &AttackScenario, recognizer: &Recognizer) -> Result<AttackOutcome> {
    run_attack_with(scenario, recognizer, &Receiver::default())
}

pub fn run_attack_with(scenario: &AttackScenario, recognizer: &Recognizer, receiver: &Receiver) -> Result<AttackOutcome> {
    let emitted = attack_waveform(scenario, recognizer)?;
    let mut incident = propagate(&emitted, &scenario.channel)?;
    if let Some(snr) = scenario.snr_db {
        incident = add_noise(&incident, snr, scenario.seed)?;
    }
    let received = receiver.receive_signal(&incident)?;
    let decoded = recognizer.transcribe(&received)?;
    let c = cer(&scenario.command, &decoded)?;
    Ok(AttackOutcome {
        received_baseband: received,
        decoded,
        cer_vs_command: c,
        success: c == 0.0,
    })
}

/// Commands and repetition used at every sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub commands_per_seed: usize,
    pub seeds: Vec<u64>,
    pub min_words: usize,
    pub max_words: usize,
    pub carrier_hz: f64,
    pub snr_db: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            commands_per_seed: 20,
            seeds: vec![1, 2, 3, 4, 5],
            min_words: 3,
            max_words: 7,
            carrier_hz: DEFAULT_CARRIER_HZ,
            snr_db: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.commands_per_seed == 0 || self.seeds.is_empty() {
            return Err(config("a sweep needs at least one command and one seed"));
        }
        if !(1 <= self.min_words && self.min_words <= self.max_words && self.max_words <= MAX_COMMAND_WORDS) {
            return Err(config("sweep word counts must satisfy 1 <= min <= max <= 7"));
        }
        Ok(())
    }

    /// Every `(command, noise seed)` pair evaluated at one grid point, in a fixed order.
    pub fn commands(&self) -> Vec<(Transcript, u64)> {
        self.seeds
            .iter()
            .flat_map(|&seed| {
                random_commands(self.commands_per_seed, self.min_words, self.max_words, seed)
                    .into_iter()
                    .enumerate()
                    .map(move |(i, c)| (c, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
            })
            .collect()
    }
}

/// The standard distance grid, 0.2 to 1.6 m in 0.2 m steps.
pub fn default_distances() -> Vec<f64> {
    (1..=8).map(|i| 0.2 * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistancePoint {
    pub distance_m: f64,
    pub success_uncompensated: f64,
    pub success_compensated: f64,
    pub mean_cer_uncompensated: f64,
    pub mean_cer_compensated: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSweep {
    pub material: String,
    pub points: Vec<DistancePoint>,
}

/// Success rate and mean CER over a batch of scenarios, evaluated in parallel.
fn batch_rates(scenarios: &[AttackScenario], recognizer: &Recognizer, receiver: &Receiver) -> Result<(f64, f64)> {
    let outcomes: Vec<(bool, f64)> = scenarios
        .par_iter()
        .map(|s| run_attack_with(s, recognizer, receiver).map(|o| (o.success, o.cer_vs_command)))
        .collect::<Result<_>>()?;
    let n = outcomes.len() as f64;
    let wins = outcomes.iter().filter(|o| o.0).count() as f64;
    Ok((wins / n, outcomes.iter().map(|o| o.1).sum::<f64>() / n))
}

fn scenarios_at(channel: &ChannelConfig, precompensate: bool, cfg: &SweepConfig) -> Vec<AttackScenario> {
    cfg.commands()
        .into_iter()
        .map(|(command, seed)| AttackScenario {
            command,
            channel: channel.clone(),
            carrier_hz: cfg.carrier_hz,
            precompensate,
            snr_db: cfg.snr_db,
            seed,
        })
        .collect()
}

/// Success with and without compensation at each distance, on the same commands.
pub fn sweep_distance(
    material: &PlateMaterial,
    distances_m: &[f64],
    cfg: &SweepConfig,
    recognizer: &Recognizer,
) -> Result<DistanceSweep> {
    cfg.validate()?;
    if distances_m.is_empty() {
        return Err(config("distance grid is empty"));
    }
    if distances_m.windows(2).any(|w| w[1] <= w[0]) {
        return Err(config("distance grid must be strictly increasing"));
    }
    let receiver = Receiver::default();
    let mut points = Vec::with_capacity(distances_m.len());
    for &d in distances_m {
        let channel = ChannelConfig::new(material.clone(), d)?;
        let (su, cu) = batch_rates(&scenarios_at(&channel, false, cfg), recognizer, &receiver)?;
        let (sc, cc) = batch_rates(&scenarios_at(&channel, true, cfg), recognizer, &receiver)?;
        points.push(DistancePoint {
            distance_m: d,
            success_uncompensated: su,
            success_compensated: sc,
            mean_cer_uncompensated: cu,
            mean_cer_compensated: cc,
        });
    }
    Ok(DistanceSweep {
        material: material.name.clone(),
        points,
    })
}

impl DistanceSweep {
    pub fn effective_distance(&self, compensated: bool) -> Result<EffectiveDistance> {
        let d: Vec<f64> = self.points.iter().map(|p| p.distance_m).collect();
        let r: Vec<f64> = self
            .points
            .iter()
            .map(|p| if compensated { p.success_compensated } else { p.success_uncompensated })
            .collect();
        effective_attack_distance(&d, &r)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "material,distance_m,success_uncompensated,success_compensated,mean_cer_uncompensated,mean_cer_compensated\n",
        );
        for p in &self.points {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                self.material,
                p.distance_m,
                p.success_uncompensated,
                p.success_compensated,
                p.mean_cer_uncompensated,
                p.mean_cer_compensated
            )
            .expect("string write");
        }
        s
    }
}

/// Largest distance with at least 50% success.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EffectiveDistance {
    Finite(f64),
    /// Every grid point succeeds at least half the time.
    UnboundedAbove,
    /// No grid point does.
    UnboundedBelow,
}

impl EffectiveDistance {
    /// Metres, with the sentinels mapped to `±inf` so distances compare numerically.
    pub fn as_f64(&self) -> f64 {
        match self {
            Self::Finite(d) => *d,
            Self::UnboundedAbove => f64::INFINITY,
            Self::UnboundedBelow => f64::NEG_INFINITY,
        }
    }
}

impl std::fmt::Display for EffectiveDistance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Finite(d) => write!(f, "{d}"),
            Self::UnboundedAbove => f.write_str("above_range"),
            Self::UnboundedBelow => f.write_str("below_range"),
        }
    }
}

/// Linear interpolation of the last downward crossing of a 0.5 success rate.
pub fn effective_attack_distance(distances_m: &[f64], success: &[f64]) -> Result<EffectiveDistance> {
    if distances_m.is_empty() || distances_m.len() != success.len() {
        return Err(config("effective distance needs one success rate per grid distance"));
    }
    if success.iter().all(|&r| r >= 0.5) {
        return Ok(EffectiveDistance::UnboundedAbove);
    }
    if success.iter().all(|&r| r < 0.5) {
        return Ok(EffectiveDistance::UnboundedBelow);
    }
    let last_ok = success.iter().rposition(|&r| r >= 0.5).expect("some rate is >= 0.5");
    if last_ok + 1 == success.len() {
        return Ok(EffectiveDistance::UnboundedAbove);
    }
    let (d0, d1) = (distances_m[last_ok], distances_m[last_ok + 1]);
    let (r0, r1) = (success[last_ok], success[last_ok + 1]);
    Ok(EffectiveDistance::Finite(d0 + (r0 - 0.5) / (r0 - r1) * (d1 - d0)))
}

/// Group-delay difference across the modulated command band at 1 m.
pub fn band_delay_spread_s(material: &PlateMaterial, carrier_hz: f64) -> Result<f64> {
    let ch = ChannelConfig::lossless(material.clone(), 1.0)?;
    let t = delay_profile(&ch, &[carrier_hz - COMMAND_BANDWIDTH_HZ, carrier_hz + COMMAND_BANDWIDTH_HZ]);
    Ok(0.5 * (t[0] - t[1]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialRow {
    pub material: String,
    pub delay_spread_s: f64,
    pub uncompensated: EffectiveDistance,
    pub compensated: EffectiveDistance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialSweep {
    pub rows: Vec<MaterialRow>,
    pub sweeps: Vec<DistanceSweep>,
}

pub fn sweep_material(
    materials: &[PlateMaterial],
    distances_m: &[f64],
    cfg: &SweepConfig,
    recognizer: &Recognizer,
) -> Result<MaterialSweep> {
    let mut rows = Vec::new();
    let mut sweeps = Vec::new();
    for m in materials {
        let sweep = sweep_distance(m, distances_m, cfg, recognizer)?;
        rows.push(MaterialRow {
            material: m.name.clone(),
            delay_spread_s: band_delay_spread_s(m, cfg.carrier_hz)?,
            uncompensated: sweep.effective_distance(false)?,
            compensated: sweep.effective_distance(true)?,
        });
        sweeps.push(sweep);
    }
    Ok(MaterialSweep { rows, sweeps })
}

impl MaterialSweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("material,delay_spread_s,effective_distance_uncompensated_m,effective_distance_compensated_m\n");
        for r in &self.rows {
            writeln!(s, "{},{:e},{},{}", r.material, r.delay_spread_s, r.uncompensated, r.compensated).expect("string write");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePoint {
    /// `None` is the noiseless row.
    pub snr_db: Option<f64>,
    pub success_rate: f64,
}

/// Compensated attack success over an SNR grid at a fixed distance.
pub fn sweep_noise(
    channel: &ChannelConfig,
    snr_grid_db: &[Option<f64>],
    cfg: &SweepConfig,
    recognizer: &Recognizer,
) -> Result<Vec<NoisePoint>> {
    cfg.validate()?;
    if snr_grid_db.is_empty() {
        return Err(config("SNR grid is empty"));
    }
    let receiver = Receiver::default();
    snr_grid_db
        .iter()
        .map(|&snr| {
            let point_cfg = SweepConfig { snr_db: snr, ..cfg.clone() };
            let (rate, _) = batch_rates(&scenarios_at(channel, true, &point_cfg), recognizer, &receiver)?;
            Ok(NoisePoint { snr_db: snr, success_rate: rate })
        })
        .collect()
}

pub fn noise_csv(points: &[NoisePoint]) -> String {
    let mut s = String::from("snr_db,success_rate\n");
    for p in points {
        match p.snr_db {
            Some(v) => writeln!(s, "{v},{}", p.success_rate),
            None => writeln!(s, "inf,{}", p.success_rate),
        }
        .expect("string write");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_distance_interpolates_and_flags_edges() {
        let d = [0.8, 1.0, 1.2, 1.4];
        let e = effective_attack_distance(&d, &[1.0, 1.0, 0.0, 0.0]).unwrap();
        match e {
            EffectiveDistance::Finite(v) => assert!((v - 1.1).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert_eq!(effective_attack_distance(&d, &[1.0; 4]).unwrap(), EffectiveDistance::UnboundedAbove);
        assert_eq!(effective_attack_distance(&d, &[0.0; 4]).unwrap(), EffectiveDistance::UnboundedBelow);
        // the last crossing wins
        let e = effective_attack_distance(&d, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((e.as_f64() - 1.3).abs() < 1e-12);
        assert!(effective_attack_distance(&d, &[1.0]).is_err());
    }

    #[test]
    fn sweep_commands_are_fixed_by_the_config() {
        let cfg = SweepConfig::default();
        let a = cfg.commands();
        assert_eq!(a.len(), 100);
        assert_eq!(a, cfg.commands());
        assert!(a.iter().all(|(c, _)| (3..=7).contains(&c.len())));
    }
}
