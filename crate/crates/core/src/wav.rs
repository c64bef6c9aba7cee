//! Mono 16-bit PCM WAV import and export.
//!
//! Samples map linearly between `[-1, 1)` and `i16`: `x * 32768`, rounded and
//! saturated on write, `s / 32768` on read.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{config, Result};
use crate::signal::SampledSignal;

const FULL_SCALE: f64 = 32_768.0;

fn to_pcm(x: f64) -> i16 {
    (x * FULL_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn write_wav(path: impl AsRef<Path>, signal: &SampledSignal) -> Result<()> {
    let rate = signal.sample_rate_hz();
    if rate.fract() != 0.0 || rate > u32::MAX as f64 {
        return Err(config(format!("WAV needs an integer sample rate, got {rate}")));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: rate as u32,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for x in signal.samples() {
        writer.write_sample(to_pcm(*x))?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<SampledSignal> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int
    {
        return Err(config(format!(
            "expected mono 16-bit PCM, got {} channel(s) at {} bits ({:?})",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    SampledSignal::new(samples, spec.sample_rate as f64)
}
