//! Solid-channel model: flexural phase velocity, per-frequency delay, and the
//! dispersive all-pass (plus optional loss) with its inverse.

use std::path::Path;

use realfft::num_complex::Complex;
use realfft::RealFftPlanner;
use serde::Deserialize;

use crate::error::{config, Error, Result};
use crate::signal::SampledSignal;

/// Physical parameters of a plate.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateMaterial {
    pub name: String,
    pub youngs_modulus_pa: f64,
    pub density_kg_m3: f64,
    pub thickness_m: f64,
    pub poisson_ratio: f64,
    /// Loss used when a channel is built from this preset.
    #[serde(default)]
    pub attenuation_db_per_m_per_khz: f64,
    /// Scalar propagation speed for localization.
    pub solid_speed_m_s: f64,
}

impl PlateMaterial {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("youngs_modulus_pa", self.youngs_modulus_pa),
            ("density_kg_m3", self.density_kg_m3),
            ("thickness_m", self.thickness_m),
            ("solid_speed_m_s", self.solid_speed_m_s),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config(format!("material {}: {field} must be positive, got {v}", self.name)));
            }
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return Err(config(format!(
                "material {}: poisson_ratio must lie in (0, 0.5), got {}",
                self.name, self.poisson_ratio
            )));
        }
        if !(self.attenuation_db_per_m_per_khz >= 0.0 && self.attenuation_db_per_m_per_khz.is_finite()) {
            return Err(config(format!("material {}: attenuation must be non-negative", self.name)));
        }
        Ok(())
    }

    /// `(E h / (12 ρ (1 - ν²)))^(1/4)`, so that `v(f) = stiffness_factor · sqrt(f)`.
    pub fn stiffness_factor(&self) -> f64 {
        (self.youngs_modulus_pa * self.thickness_m
            / (12.0 * self.density_kg_m3 * (1.0 - self.poisson_ratio * self.poisson_ratio)))
            .powf(0.25)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetFile {
    material: Vec<PlateMaterial>,
}

/// The shipped preset table, in file order.
#[derive(Debug, Clone)]
pub struct MaterialPresets {
    materials: Vec<PlateMaterial>,
}

const BUILTIN_PRESETS: &str = include_str!("../presets/materials.toml");

/// File name looked up inside a preset directory.
pub const PRESET_FILE_NAME: &str = "materials.toml";

impl MaterialPresets {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_PRESETS).expect("built-in presets are valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: PresetFile = toml::from_str(text).map_err(|e| Error::Parse {
            context: "material presets".into(),
            message: e.to_string(),
        })?;
        for m in &file.material {
            m.validate()?;
        }
        Ok(Self {
            materials: file.material,
        })
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(PRESET_FILE_NAME);
        let text = std::fs::read_to_string(&path).map_err(|source| Error::Io { path, source })?;
        Self::parse(&text)
    }

    pub fn get(&self, name: &str) -> Result<&PlateMaterial> {
        self.materials
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| config(format!("unknown material preset '{name}'")))
    }

    pub fn all(&self) -> &[PlateMaterial] {
        &self.materials
    }
}

/// Default dispersion floor: delays below this frequency are clamped.
pub const DEFAULT_MIN_FREQ_HZ: f64 = 50.0;

/// A plate channel of fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub material: PlateMaterial,
    pub distance_m: f64,
    pub attenuation_db_per_m_per_khz: f64,
    pub min_freq_hz: f64,
}

impl ChannelConfig {
    /// Channel with the material's preset attenuation.
    pub fn new(material: PlateMaterial, distance_m: f64) -> Result<Self> {
        let attenuation = material.attenuation_db_per_m_per_khz;
        let c = Self {
            material,
            distance_m,
            attenuation_db_per_m_per_khz: attenuation,
            min_freq_hz: DEFAULT_MIN_FREQ_HZ,
        };
        c.validate()?;
        Ok(c)
    }

    /// Lossless (pure phase) channel.
    pub fn lossless(material: PlateMaterial, distance_m: f64) -> Result<Self> {
        let mut c = Self::new(material, distance_m)?;
        c.attenuation_db_per_m_per_khz = 0.0;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        if !(self.distance_m > 0.0 && self.distance_m.is_finite()) {
            return Err(config(format!("channel distance must be positive, got {}", self.distance_m)));
        }
        if !(self.attenuation_db_per_m_per_khz >= 0.0 && self.attenuation_db_per_m_per_khz.is_finite()) {
            return Err(config("channel attenuation must be non-negative"));
        }
        if !(self.min_freq_hz > 0.0 && self.min_freq_hz.is_finite()) {
            return Err(config("dispersion floor must be positive"));
        }
        Ok(())
    }

    /// Delay at `freq_hz` with the floor applied; accepts 0 Hz.
    fn delay_at(&self, freq_hz: f64) -> f64 {
        let f = freq_hz.max(self.min_freq_hz);
        self.distance_m / (self.material.stiffness_factor() * f.sqrt())
    }

    fn gain_at(&self, freq_hz: f64) -> f64 {
        let db = self.attenuation_db_per_m_per_khz * (freq_hz / 1_000.0) * self.distance_m;
        10f64.powf(-db / 20.0)
    }
}

/// Flexural phase velocity `(E h f² / (12 ρ (1 - ν²)))^(1/4)` in m/s.
pub fn phase_velocity(material: &PlateMaterial, freq_hz: f64) -> Result<f64> {
    if !(freq_hz > 0.0 && freq_hz.is_finite()) {
        return Err(Error::Domain(format!("frequency must be positive, got {freq_hz}")));
    }
    Ok(material.stiffness_factor() * freq_hz.sqrt())
}

/// `τ(f) = L / v(max(f, min_freq))` per frequency.
pub fn delay_profile(config: &ChannelConfig, freqs_hz: &[f64]) -> Vec<f64> {
    freqs_hz.iter().map(|f| config.delay_at(f.abs())).collect()
}

/// Applies `e^{-j2πfτ(f)}` and the path loss.
pub fn propagate(input: &SampledSignal, config: &ChannelConfig) -> Result<SampledSignal> {
    apply_channel(input, config, Direction::Forward)
}

/// Applies `e^{+j2πfτ(f)}`; the path loss is left untouched.
pub fn compensate(input: &SampledSignal, config: &ChannelConfig) -> Result<SampledSignal> {
    apply_channel(input, config, Direction::Inverse)
}

#[derive(Clone, Copy, PartialEq)]
enum Direction {
    Forward,
    Inverse,
}

/// Smallest `2^a 3^b 5^c` that is at least `n`.
fn fast_len(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p5 = 1usize;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            let mut v = p35;
            while v < n {
                v *= 2;
            }
            best = best.min(v);
            p35 *= 3;
        }
        p5 *= 5;
    }
    best
}

/// Relative magnitude below which a bin does not count as occupied.
const OCCUPIED_BAND_FLOOR: f64 = 1e-3;

fn apply_channel(input: &SampledSignal, config: &ChannelConfig, dir: Direction) -> Result<SampledSignal> {
    config.validate()?;
    let n = input.len();
    if n < 2 {
        return Err(config_err_len(n));
    }
    let fs = input.sample_rate_hz();
    let max_delay = config.delay_at(0.0);
    let pad = (max_delay * fs).ceil() as usize + 1;
    let m = fast_len(n + 2 * pad);

    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);

    let mut buf = vec![0.0; m];
    buf[pad..pad + n].copy_from_slice(input.samples());
    let mut spec = fwd.make_output_vec();
    fwd.process(&mut buf, &mut spec).expect("fft length");

    // delay spread over the occupied band
    let peak = spec.iter().fold(0.0f64, |a, c| a.max(c.norm()));
    let bin_hz = fs / m as f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (k, c) in spec.iter().enumerate() {
        if peak > 0.0 && c.norm() >= OCCUPIED_BAND_FLOOR * peak {
            let tau = config.delay_at(k as f64 * bin_hz);
            lo = lo.min(tau);
            hi = hi.max(tau);
        }
    }
    if hi > lo {
        let spread = ((hi - lo) * fs).ceil() as usize;
        if spread > n {
            return Err(Error::DelaySpread {
                spread_samples: spread,
                len: n,
                required_padding: spread - n,
            });
        }
    }

    let sign = match dir {
        Direction::Forward => -1.0,
        Direction::Inverse => 1.0,
    };
    let nyquist_bin = (m % 2 == 0).then_some(m / 2);
    for (k, c) in spec.iter_mut().enumerate() {
        let f = k as f64 * bin_hz;
        let gain = match dir {
            Direction::Forward => config.gain_at(f),
            Direction::Inverse => 1.0,
        };
        // DC and Nyquist bins must stay real
        let h = if k == 0 || Some(k) == nyquist_bin {
            Complex::new(gain, 0.0)
        } else {
            let phase = sign * 2.0 * std::f64::consts::PI * f * config.delay_at(f);
            Complex::from_polar(gain, phase)
        };
        *c *= h;
    }
    inv.process(&mut spec, &mut buf).expect("fft length");
    let scale = 1.0 / m as f64;
    let out: Vec<f64> = buf[pad..pad + n].iter().map(|x| x * scale).collect();
    Ok(SampledSignal::from_parts_unchecked(out, fs))
}

fn config_err_len(n: usize) -> Error {
    config(format!("channel input needs at least 2 samples, got {n}"))
}
