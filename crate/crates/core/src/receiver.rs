//! Microphone front end and decimator fused into one filter, with its adjoint.
//!
//! The 192 kHz incident waveform `s` is mapped to `A s + B s²`, passed through
//! the microphone low-pass and the decimation low-pass (convolved into a single
//! 509-tap filter evaluated only on the 16 kHz grid), and finally has its mean
//! removed. Away from the buffer edges this equals
//! `decimate_to_baseband(mic_nonlinearity(s))` minus its DC.

use crate::error::{config, Result};
use crate::filter::{self, Decimator, BASEBAND_RATE_HZ, DECIMATION, SIM_RATE_HZ};
use crate::mic::NonlinearityParams;
use crate::signal::SampledSignal;

#[derive(Debug, Clone)]
pub struct Receiver {
    params: NonlinearityParams,
    fused: Decimator,
}

impl Receiver {
    pub fn new(params: NonlinearityParams) -> Result<Self> {
        params.validate(SIM_RATE_HZ)?;
        let mic = params.taps(SIM_RATE_HZ)?;
        let dec = Decimator::standard();
        let fused = Decimator::new(filter::convolve(&mic, dec.taps()), DECIMATION);
        Ok(Self { params, fused })
    }

    pub fn params(&self) -> &NonlinearityParams {
        &self.params
    }

    /// Baseband length produced from `incident_len` samples at 192 kHz.
    pub fn output_len(&self, incident_len: usize) -> usize {
        self.fused.output_len(incident_len)
    }

    pub fn receive(&self, incident: &[f64]) -> Vec<f64> {
        let mixed: Vec<f64> = incident.iter().map(|s| self.params.respond(*s)).collect();
        let mut out = self.fused.apply(&mixed);
        remove_mean(&mut out);
        out
    }

    pub fn receive_signal(&self, incident: &SampledSignal) -> Result<SampledSignal> {
        if incident.sample_rate_hz() != SIM_RATE_HZ {
            return Err(config(format!(
                "receiver expects {SIM_RATE_HZ} Hz input, got {} Hz",
                incident.sample_rate_hz()
            )));
        }
        Ok(SampledSignal::from_parts_unchecked(
            self.receive(incident.samples()),
            BASEBAND_RATE_HZ,
        ))
    }

    /// Gradient with respect to `incident` given the gradient at the baseband output.
    pub fn backward(&self, incident: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        remove_mean(&mut g);
        let mut grad = self.fused.adjoint(&g, incident.len());
        for (gi, s) in grad.iter_mut().zip(incident) {
            *gi *= self.params.slope(*s);
        }
        grad
    }
}

impl Default for Receiver {
    fn default() -> Self {
        Self::new(NonlinearityParams::default()).expect("default front end is valid")
    }
}

fn remove_mean(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}
