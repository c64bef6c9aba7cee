//! Scenario files: TOML with fixed sections, unknown keys rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use platewave::attack::DEFAULT_CARRIER_HZ;
use platewave::dispersion::{ChannelConfig, MaterialPresets, PlateMaterial};
use platewave::locator::{CorrelationMode, MicArrayGeometry, Point, NUM_MICS};
use platewave::recognizer::{Recognizer, RecognizerTrainingSpec, MAX_COMMAND_WORDS, NUM_WORDS};
use platewave::uap::{default_freqs, held_out_freqs, DEFAULT_PERTURB_CARRIER_HZ, MAX_EPSILON};
use platewave::Transcript;

pub const PRESET_DIR_ENV: &str = "PLATEWAVE_PRESET_DIR";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub material: Option<MaterialSection>,
    pub channel: Option<ChannelSection>,
    pub array: Option<ArraySection>,
    pub recognizer: Option<RecognizerSection>,
    pub attack: Option<AttackSection>,
    pub defense: Option<DefenseSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSection {
    pub preset: String,
    pub preset_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub distance_m: f64,
    pub attenuation_db_per_m_per_khz: Option<f64>,
    pub snr_db: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub positions: Option<Vec<Point>>,
    pub radius_m: Option<f64>,
    #[serde(default)]
    pub centre: Point,
    pub solid_speed_m_s: Option<f64>,
    #[serde(default)]
    pub anchor: Point,
    pub energy_threshold: f64,
    #[serde(default)]
    pub correlation: Correlation,
}

#[derive(Debug, Default, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Correlation {
    #[default]
    Raw,
    GccPhat,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecognizerSection {
    pub model: Option<PathBuf>,
    pub num_commands: Option<usize>,
    pub num_held_out: Option<usize>,
    pub max_epochs: Option<usize>,
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default = "default_carrier")]
    pub carrier_hz: f64,
    #[serde(default)]
    pub precompensate: bool,
    pub commands: Option<Vec<Vec<usize>>>,
    #[serde(default = "default_num_commands")]
    pub num_commands: usize,
    #[serde(default = "default_min_words")]
    pub min_words: usize,
    #[serde(default = "default_max_words")]
    pub max_words: usize,
    pub seeds: Option<Vec<u64>>,
    pub distances_m: Option<Vec<f64>>,
    pub materials: Option<Vec<String>>,
    pub snr_grid_db: Option<Vec<f64>>,
}

fn default_carrier() -> f64 {
    DEFAULT_CARRIER_HZ
}
fn default_num_commands() -> usize {
    20
}
fn default_min_words() -> usize {
    3
}
fn default_max_words() -> usize {
    MAX_COMMAND_WORDS
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSection {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub step: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_shifts")]
    pub num_shifts: usize,
    #[serde(default = "default_freqs")]
    pub carriers_hz: Vec<f64>,
    #[serde(default = "default_fx")]
    pub perturb_carrier_hz: f64,
    #[serde(default = "default_threshold")]
    pub cer_threshold: f64,
    #[serde(default = "default_rate")]
    pub target_rate: f64,
    #[serde(default = "default_passes")]
    pub max_passes: usize,
    #[serde(default = "default_train_commands")]
    pub train_commands: usize,
    #[serde(default = "default_uap_min_words")]
    pub min_words: usize,
    #[serde(default = "default_uap_max_words")]
    pub max_words: usize,
    #[serde(default = "default_held_commands")]
    pub held_out_commands: usize,
    #[serde(default = "default_held_shifts")]
    pub held_out_shifts: usize,
    #[serde(default = "held_out_freqs")]
    pub held_out_carriers_hz: Vec<f64>,
}

fn default_epsilon() -> f64 {
    0.05
}
fn default_max_iters() -> usize {
    200
}
fn default_shifts() -> usize {
    8
}
fn default_fx() -> f64 {
    DEFAULT_PERTURB_CARRIER_HZ
}
fn default_threshold() -> f64 {
    0.7
}
fn default_rate() -> f64 {
    0.9
}
fn default_passes() -> usize {
    2
}
fn default_train_commands() -> usize {
    20
}
fn default_uap_min_words() -> usize {
    2
}
fn default_uap_max_words() -> usize {
    3
}
fn default_held_commands() -> usize {
    10
}
fn default_held_shifts() -> usize {
    8
}

/// A parsed scenario plus the directory its relative paths resolve against.
#[derive(Debug)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub base_dir: PathBuf,
    /// Raw file bytes, hashed into the run manifest.
    pub raw: Vec<u8>,
}

fn check_words(min: usize, max: usize, what: &str) -> Result<()> {
    if !(1 <= min && min <= max && max <= MAX_COMMAND_WORDS) {
        bail!("{what}: word counts must satisfy 1 <= min_words <= max_words <= {MAX_COMMAND_WORDS}");
    }
    Ok(())
}

fn finite_positive(v: f64, what: &str) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{what} must be positive and finite, got {v}");
    }
    Ok(())
}

impl LoadedScenario {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).with_context(|| format!("cannot read scenario {}", path.display()))?;
        let text = std::str::from_utf8(&raw).context("scenario is not UTF-8")?;
        let scenario: Scenario = toml::from_str(text).with_context(|| format!("invalid scenario {}", path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { scenario, base_dir, raw };
        loaded.check()?;
        Ok(loaded)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Range and path checks for every section present.
    fn check(&self) -> Result<()> {
        let s = &self.scenario;
        if let Some(m) = &s.material {
            if let Some(dir) = &m.preset_dir {
                let dir = self.resolve(dir);
                if !dir.is_dir() {
                    bail!("[material] preset_dir {} does not exist", dir.display());
                }
            }
        }
        if let Some(c) = &s.channel {
            finite_positive(c.distance_m, "[channel] distance_m")?;
            if let Some(a) = c.attenuation_db_per_m_per_khz {
                if !(a >= 0.0 && a.is_finite()) {
                    bail!("[channel] attenuation_db_per_m_per_khz must be non-negative");
                }
            }
            if let Some(snr) = c.snr_db {
                if !snr.is_finite() {
                    bail!("[channel] snr_db must be finite");
                }
            }
        }
        if let Some(a) = &s.array {
            if a.positions.is_some() == a.radius_m.is_some() {
                bail!("[array] needs exactly one of positions or radius_m");
            }
            if let Some(p) = &a.positions {
                if p.len() != NUM_MICS {
                    bail!("[array] positions needs {NUM_MICS} points, got {}", p.len());
                }
            }
            if let Some(r) = a.radius_m {
                finite_positive(r, "[array] radius_m")?;
            }
            if let Some(c) = a.solid_speed_m_s {
                finite_positive(c, "[array] solid_speed_m_s")?;
            }
            finite_positive(a.energy_threshold, "[array] energy_threshold")?;
        }
        if let Some(r) = &s.recognizer {
            if let Some(m) = &r.model {
                let m = self.resolve(m);
                if !m.is_file() {
                    bail!("[recognizer] model {} does not exist", m.display());
                }
            }
            if let Some(lr) = r.learning_rate {
                finite_positive(lr, "[recognizer] learning_rate")?;
            }
        }
        if let Some(a) = &s.attack {
            finite_positive(a.carrier_hz, "[attack] carrier_hz")?;
            check_words(a.min_words, a.max_words, "[attack]")?;
            if a.num_commands == 0 {
                bail!("[attack] num_commands must be positive");
            }
            if let Some(cmds) = &a.commands {
                if cmds.is_empty() {
                    bail!("[attack] commands must not be empty");
                }
                for c in cmds {
                    if c.is_empty() || c.len() > MAX_COMMAND_WORDS || c.iter().any(|&w| w >= NUM_WORDS) {
                        bail!("[attack] command {c:?} must hold 1..={MAX_COMMAND_WORDS} word ids below {NUM_WORDS}");
                    }
                }
            }
            if let Some(d) = &a.distances_m {
                if d.is_empty() {
                    bail!("[attack] distances_m must not be empty");
                }
                for v in d {
                    finite_positive(*v, "[attack] distances_m entry")?;
                }
            }
            if a.snr_grid_db.iter().flatten().any(|v| !v.is_finite()) {
                bail!("[attack] snr_grid_db entries must be finite");
            }
        }
        if let Some(d) = &s.defense {
            if !(d.epsilon > 0.0 && d.epsilon <= MAX_EPSILON) {
                bail!("[defense] epsilon must lie in (0, {MAX_EPSILON}], got {}", d.epsilon);
            }
            if let Some(step) = d.step {
                finite_positive(step, "[defense] step")?;
            }
            if !(d.cer_threshold > 0.0 && d.cer_threshold <= 1.0) {
                bail!("[defense] cer_threshold must lie in (0, 1]");
            }
            if !(d.target_rate > 0.0 && d.target_rate <= 1.0) {
                bail!("[defense] target_rate must lie in (0, 1]");
            }
            if d.num_shifts == 0 || d.held_out_shifts == 0 || d.train_commands == 0 || d.held_out_commands == 0 {
                bail!("[defense] shift and command counts must be positive");
            }
            if d.max_passes == 0 {
                bail!("[defense] max_passes must be positive");
            }
            check_words(d.min_words, d.max_words, "[defense]")?;
        }
        Ok(())
    }

    pub fn material_section(&self) -> Result<&MaterialSection> {
        self.scenario.material.as_ref().context("scenario is missing the [material] section")
    }

    pub fn channel_section(&self) -> Result<&ChannelSection> {
        self.scenario.channel.as_ref().context("scenario is missing the [channel] section")
    }

    pub fn array_section(&self) -> Result<&ArraySection> {
        self.scenario.array.as_ref().context("scenario is missing the [array] section")
    }

    pub fn defense_section(&self) -> Result<&DefenseSection> {
        self.scenario.defense.as_ref().context("scenario is missing the [defense] section")
    }

    /// Preset table from `[material] preset_dir`, then the environment, then the built-in table.
    pub fn presets(&self) -> Result<MaterialPresets> {
        let dir = match self.scenario.material.as_ref().and_then(|m| m.preset_dir.as_ref()) {
            Some(d) => Some(self.resolve(d)),
            None => std::env::var_os(PRESET_DIR_ENV).map(PathBuf::from),
        };
        match dir {
            Some(d) => MaterialPresets::load_dir(&d).with_context(|| format!("loading presets from {}", d.display())),
            None => Ok(MaterialPresets::builtin()),
        }
    }

    pub fn material(&self) -> Result<PlateMaterial> {
        let m = self.material_section()?;
        Ok(self.presets()?.get(&m.preset)?.clone())
    }

    pub fn channel(&self) -> Result<ChannelConfig> {
        let c = self.channel_section()?;
        let mut ch = ChannelConfig::new(self.material()?, c.distance_m)?;
        if let Some(a) = c.attenuation_db_per_m_per_khz {
            ch.attenuation_db_per_m_per_khz = a;
        }
        ch.validate()?;
        Ok(ch)
    }

    pub fn recognizer(&self) -> Result<Recognizer> {
        let path = self
            .scenario
            .recognizer
            .as_ref()
            .and_then(|r| r.model.as_ref())
            .context("scenario is missing [recognizer] model")?;
        let path = self.resolve(path);
        Ok(Recognizer::load(&path)?)
    }

    pub fn training_spec(&self) -> RecognizerTrainingSpec {
        let mut spec = RecognizerTrainingSpec::default();
        if let Some(r) = &self.scenario.recognizer {
            if let Some(v) = r.num_commands {
                spec.num_commands = v;
            }
            if let Some(v) = r.num_held_out {
                spec.num_held_out = v;
            }
            if let Some(v) = r.max_epochs {
                spec.max_epochs = v;
            }
            if let Some(v) = r.learning_rate {
                spec.learning_rate = v;
            }
        }
        spec
    }

    /// Geometry, anchor and correlation mode for impact localization.
    pub fn array(&self) -> Result<(MicArrayGeometry, Point, CorrelationMode, f64)> {
        let a = self.array_section()?;
        let speed = match a.solid_speed_m_s {
            Some(c) => c,
            None => self
                .material()
                .context("[array] solid_speed_m_s is unset and no [material] preset supplies one")?
                .solid_speed_m_s,
        };
        let geometry = match (&a.positions, a.radius_m) {
            (Some(p), _) => MicArrayGeometry::new(p.clone().try_into().expect("length checked"), speed)?,
            (None, Some(r)) => MicArrayGeometry::hexagon(a.centre, r, speed)?,
            (None, None) => unreachable!("checked at load"),
        };
        let mode = match a.correlation {
            Correlation::Raw => CorrelationMode::Raw,
            Correlation::GccPhat => CorrelationMode::Phat,
        };
        Ok((geometry, a.anchor, mode, a.energy_threshold))
    }
}

/// Explicit scenario commands, or seeded random ones.
pub fn attack_commands(a: &AttackSection, seed: u64) -> Vec<Transcript> {
    match &a.commands {
        Some(c) => c.iter().cloned().map(Transcript::new).collect(),
        None => platewave::recognizer::random_commands(a.num_commands, a.min_words, a.max_words, seed),
    }
}
