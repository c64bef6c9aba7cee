//! Impact localization from a six-microphone array: energy-envelope onset,
//! cross-correlation TDoA, and hyperbolic least squares.

use std::f64::consts::PI;

use realfft::num_complex::Complex;
use realfft::RealFftPlanner;

use crate::error::{config, Error, Result};
use crate::signal::SampledSignal;

pub type Point = [f64; 2];

pub const NUM_MICS: usize = 6;

/// Energy-envelope window length.
pub const ONSET_WINDOW_S: f64 = 1e-3;
/// Energy-envelope hop.
pub const ONSET_HOP_S: f64 = 0.25e-3;
/// Default length of the reference segment cut from channel 0.
pub const DEFAULT_SEGMENT_S: f64 = 0.7e-3;
/// Minimum peak / second-peak ratio of a usable cross-correlation.
pub const MIN_PEAK_RATIO: f64 = 1.2;

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Microphone positions (index 0 is the reference) and the solid's sound speed.
#[derive(Debug, Clone, PartialEq)]
pub struct MicArrayGeometry {
    pub positions: [Point; NUM_MICS],
    pub solid_speed_m_s: f64,
}

impl MicArrayGeometry {
    pub fn new(positions: [Point; NUM_MICS], solid_speed_m_s: f64) -> Result<Self> {
        let g = Self {
            positions,
            solid_speed_m_s,
        };
        g.validate()?;
        Ok(g)
    }

    /// Regular hexagon of the given radius centred on `centre`, mic 0 on the +x axis.
    pub fn hexagon(centre: Point, radius_m: f64, solid_speed_m_s: f64) -> Result<Self> {
        let mut positions = [[0.0; 2]; NUM_MICS];
        for (i, p) in positions.iter_mut().enumerate() {
            let a = 2.0 * PI * i as f64 / NUM_MICS as f64;
            *p = [centre[0] + radius_m * a.cos(), centre[1] + radius_m * a.sin()];
        }
        Self::new(positions, solid_speed_m_s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.solid_speed_m_s > 0.0 && self.solid_speed_m_s.is_finite()) {
            return Err(config("solid sound speed must be positive"));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(config("microphone positions must be finite"));
        }
        let scale = self.aperture();
        for i in 0..NUM_MICS {
            for j in i + 1..NUM_MICS {
                if dist(self.positions[i], self.positions[j]) <= 1e-9 * scale.max(1e-12) {
                    return Err(config(format!("microphones {i} and {j} coincide")));
                }
            }
        }
        // any four on one line make the hyperbola intersection degenerate
        let p = &self.positions;
        let tol = 1e-9 * scale * scale;
        for a in 0..NUM_MICS {
            for b in a + 1..NUM_MICS {
                let on_line = |c: usize| {
                    let cross = (p[b][0] - p[a][0]) * (p[c][1] - p[a][1])
                        - (p[b][1] - p[a][1]) * (p[c][0] - p[a][0]);
                    cross.abs() <= tol
                };
                let count = (0..NUM_MICS).filter(|&c| on_line(c)).count();
                if count >= 4 {
                    return Err(config(format!(
                        "four or more microphones are collinear (line through {a} and {b})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest pairwise microphone distance.
    pub fn aperture(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..NUM_MICS {
            for j in i + 1..NUM_MICS {
                best = best.max(dist(self.positions[i], self.positions[j]));
            }
        }
        best
    }

    pub fn centroid(&self) -> Point {
        let mut c = [0.0; 2];
        for p in &self.positions {
            c[0] += p[0] / NUM_MICS as f64;
            c[1] += p[1] / NUM_MICS as f64;
        }
        c
    }

    /// Exact `(‖P - M_i‖ - ‖P - M_0‖) / c_s` for `i = 1..=5`.
    pub fn exact_tdoas(&self, source: Point) -> [f64; NUM_MICS - 1] {
        let d0 = dist(source, self.positions[0]);
        let mut out = [0.0; NUM_MICS - 1];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (dist(source, self.positions[i + 1]) - d0) / self.solid_speed_m_s;
        }
        out
    }
}

/// Six equally sampled channels plus the onset parameters.
#[derive(Debug, Clone)]
pub struct ImpactRecording {
    pub channels: Vec<SampledSignal>,
    pub energy_threshold: f64,
    pub segment_len_s: f64,
}

impl ImpactRecording {
    pub fn new(channels: Vec<SampledSignal>, energy_threshold: f64) -> Result<Self> {
        let r = Self {
            channels,
            energy_threshold,
            segment_len_s: DEFAULT_SEGMENT_S,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != NUM_MICS {
            return Err(config(format!(
                "impact recording needs {NUM_MICS} channels, got {}",
                self.channels.len()
            )));
        }
        let fs = self.channels[0].sample_rate_hz();
        let n = self.channels[0].len();
        if self.channels.iter().any(|c| c.sample_rate_hz() != fs || c.len() != n) {
            return Err(config("impact channels must share sample rate and length"));
        }
        if !(self.energy_threshold > 0.0 && self.energy_threshold.is_finite()) {
            return Err(config("energy threshold must be positive"));
        }
        if !(self.segment_len_s > 0.0 && self.segment_len_s.is_finite()) {
            return Err(config("segment length must be positive"));
        }
        Ok(())
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.channels[0].sample_rate_hz()
    }
}

/// Where the impact begins on the reference channel.
#[derive(Debug, Clone)]
pub struct Onset {
    /// Start of the first envelope window whose mean-square energy exceeds γ.
    pub t0_s: f64,
    /// Sample index at which the reference segment starts.
    pub segment_start: usize,
    /// The reference slice of channel 0.
    pub segment: SampledSignal,
}

/// Finds the impact on channel 0 with a 1 ms / 0.25 ms mean-square envelope.
///
/// The segment starts at the first sample inside the triggering window whose
/// instantaneous power reaches γ, or at the window start if none does.
pub fn detect_onset(recording: &ImpactRecording) -> Result<Onset> {
    recording.validate()?;
    let fs = recording.sample_rate_hz();
    let x = recording.channels[0].samples();
    let win = ((ONSET_WINDOW_S * fs).round() as usize).max(1);
    let hop = ((ONSET_HOP_S * fs).round() as usize).max(1);
    let gamma = recording.energy_threshold;
    let seg_len = ((recording.segment_len_s * fs).round() as usize).max(1);

    let mut start = 0;
    while start < x.len() {
        let end = (start + win).min(x.len());
        let energy = x[start..end].iter().map(|v| v * v).sum::<f64>() / win as f64;
        if energy > gamma {
            let onset = x[start..end]
                .iter()
                .position(|v| v * v >= gamma)
                .map_or(start, |k| start + k);
            let seg_end = (onset + seg_len).min(x.len());
            return Ok(Onset {
                t0_s: start as f64 / fs,
                segment_start: onset,
                segment: SampledSignal::from_parts_unchecked(x[onset..seg_end].to_vec(), fs),
            });
        }
        if end == x.len() {
            break;
        }
        start += hop;
    }
    Err(Error::NoImpact { threshold: gamma })
}

/// Cross-correlation weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrelationMode {
    /// Plain time-domain cross-correlation.
    #[default]
    Raw,
    /// Generalized cross-correlation with phase transform weighting.
    Phat,
}

fn max_lag_samples(geometry: &MicArrayGeometry, fs: f64) -> usize {
    (geometry.aperture() / geometry.solid_speed_m_s * fs).ceil() as usize
}

/// Returns `(best_lag, peak / second-peak)` over `-max_lag..=max_lag`.
fn pick_peak(corr: &[f64], max_lag: usize) -> (i64, f64) {
    let (best, &peak) = corr
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty correlation");
    let mut second = f64::NEG_INFINITY;
    for l in 0..corr.len() {
        if l == best {
            continue;
        }
        let left = if l > 0 { corr[l - 1] } else { f64::NEG_INFINITY };
        let right = corr.get(l + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if corr[l] >= left && corr[l] >= right {
            second = second.max(corr[l]);
        }
    }
    let ratio = if peak <= 0.0 {
        0.0
    } else if second <= 0.0 {
        f64::INFINITY
    } else {
        peak / second
    };
    (best as i64 - max_lag as i64, ratio)
}

fn raw_correlation(seg: &[f64], ch: &[f64], start: usize, max_lag: usize) -> Vec<f64> {
    (-(max_lag as i64)..=max_lag as i64)
        .map(|lag| {
            let mut acc = 0.0;
            for (n, s) in seg.iter().enumerate() {
                let idx = start as i64 + n as i64 + lag;
                if idx >= 0 && (idx as usize) < ch.len() {
                    acc += s * ch[idx as usize];
                }
            }
            acc
        })
        .collect()
}

fn phat_correlation(seg: &[f64], ch: &[f64], start: usize, max_lag: usize) -> Vec<f64> {
    // window of channel i covering every admissible lag
    let span = seg.len() + 2 * max_lag;
    let m = (2 * span).next_power_of_two();
    let mut a = vec![0.0; m];
    let mut b = vec![0.0; m];
    a[..seg.len()].copy_from_slice(seg);
    for k in 0..span {
        let idx = start as i64 - max_lag as i64 + k as i64;
        if idx >= 0 && (idx as usize) < ch.len() {
            b[k] = ch[idx as usize];
        }
    }
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut sa = fwd.make_output_vec();
    let mut sb = fwd.make_output_vec();
    fwd.process(&mut a, &mut sa).expect("fft length");
    fwd.process(&mut b, &mut sb).expect("fft length");
    let mut cross: Vec<Complex<f64>> = sa
        .iter()
        .zip(&sb)
        .map(|(x, y)| {
            let c = x.conj() * y;
            let mag = c.norm();
            if mag > 1e-300 {
                c / mag
            } else {
                Complex::new(0.0, 0.0)
            }
        })
        .collect();
    cross[0].im = 0.0;
    if let Some(last) = cross.last_mut() {
        last.im = 0.0;
    }
    let mut r = vec![0.0; m];
    inv.process(&mut cross, &mut r).expect("fft length");
    // r[k] pairs seg[n] with b[n + k], i.e. lag k - max_lag
    (0..=2 * max_lag).map(|k| r[k]).collect()
}

/// Five TDoAs of channels 1..=5 relative to channel 0, in seconds.
pub fn estimate_tdoa(
    recording: &ImpactRecording,
    onset: &Onset,
    geometry: &MicArrayGeometry,
    mode: CorrelationMode,
) -> Result<[f64; NUM_MICS - 1]> {
    recording.validate()?;
    let fs = recording.sample_rate_hz();
    let max_lag = max_lag_samples(geometry, fs);
    let seg = onset.segment.samples();
    let mut out = [0.0; NUM_MICS - 1];
    for (i, o) in out.iter_mut().enumerate() {
        let ch = recording.channels[i + 1].samples();
        let corr = match mode {
            CorrelationMode::Raw => raw_correlation(seg, ch, onset.segment_start, max_lag),
            CorrelationMode::Phat => phat_correlation(seg, ch, onset.segment_start, max_lag),
        };
        let (lag, ratio) = pick_peak(&corr, max_lag);
        if ratio < MIN_PEAK_RATIO {
            return Err(Error::AmbiguousTdoa {
                channel: i + 1,
                ratio,
                min_ratio: MIN_PEAK_RATIO,
            });
        }
        *o = lag as f64 / fs;
    }
    Ok(out)
}

/// Damped Gauss-Newton settings.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub step_tolerance_m: f64,
    /// Residual norm (m) above which the estimate is flagged low-confidence.
    pub residual_threshold_m: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance_m: 1e-9,
            residual_threshold_m: 0.02,
        }
    }
}

/// Located impact and the distance to the configured anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactEstimate {
    pub position: Point,
    pub distance_m: f64,
    /// Final residual norm `‖r(P)‖` in metres.
    pub residual: f64,
    pub tdoas_s: [f64; NUM_MICS - 1],
    pub low_confidence: bool,
    pub iterations: usize,
    /// Residual norm after every accepted iterate, starting with the initial guess.
    pub residual_history: Vec<f64>,
}

fn residuals(p: Point, geometry: &MicArrayGeometry, dd: &[f64; NUM_MICS - 1]) -> ([f64; 5], [[f64; 2]; 5]) {
    let m = &geometry.positions;
    let d0 = dist(p, m[0]).max(1e-300);
    let u0 = [(p[0] - m[0][0]) / d0, (p[1] - m[0][1]) / d0];
    let mut r = [0.0; 5];
    let mut j = [[0.0; 2]; 5];
    for i in 0..5 {
        let di = dist(p, m[i + 1]).max(1e-300);
        r[i] = di - d0 - dd[i];
        j[i] = [
            (p[0] - m[i + 1][0]) / di - u0[0],
            (p[1] - m[i + 1][1]) / di - u0[1],
        ];
    }
    (r, j)
}

fn norm5(r: &[f64; 5]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Least-squares intersection of the five hyperbolas `‖P-M_i‖ - ‖P-M_0‖ = τ_i c_s`.
///
/// Levenberg-style damping only accepts steps that do not increase the
/// residual, so the residual history is non-increasing.
pub fn solve_position(
    tdoas: &[f64; NUM_MICS - 1],
    geometry: &MicArrayGeometry,
    initial_guess: Option<Point>,
    anchor: Point,
    options: &SolverOptions,
) -> Result<ImpactEstimate> {
    geometry.validate()?;
    if tdoas.iter().any(|t| !t.is_finite()) {
        return Err(Error::Domain("TDoAs must be finite".into()));
    }
    let dd: [f64; 5] = std::array::from_fn(|i| tdoas[i] * geometry.solid_speed_m_s);
    let mut p = initial_guess.unwrap_or_else(|| geometry.centroid());
    let (mut r, mut jac) = residuals(p, geometry, &dd);
    let mut cost = norm5(&r);
    let mut history = vec![cost];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let mut a = [[0.0; 2]; 2];
        let mut g = [0.0; 2];
        for i in 0..5 {
            for (row, ar) in a.iter_mut().enumerate() {
                for (col, v) in ar.iter_mut().enumerate() {
                    *v += jac[i][row] * jac[i][col];
                }
                g[row] += jac[i][row] * r[i];
            }
        }
        let mut accepted = None;
        while lambda < 1e16 {
            let a00 = a[0][0] * (1.0 + lambda) + 1e-300;
            let a11 = a[1][1] * (1.0 + lambda) + 1e-300;
            let det = a00 * a11 - a[0][1] * a[1][0];
            if det.abs() > 0.0 && det.is_finite() {
                let step = [
                    -(a11 * g[0] - a[0][1] * g[1]) / det,
                    -(a00 * g[1] - a[1][0] * g[0]) / det,
                ];
                let cand = [p[0] + step[0], p[1] + step[1]];
                let (rc, jc) = residuals(cand, geometry, &dd);
                let cc = norm5(&rc);
                if cc <= cost {
                    accepted = Some((cand, rc, jc, cc, step));
                    break;
                }
            }
            lambda *= 10.0;
        }
        match accepted {
            Some((cand, rc, jc, cc, step)) => {
                p = cand;
                r = rc;
                jac = jc;
                cost = cc;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                if (step[0] * step[0] + step[1] * step[1]).sqrt() < options.step_tolerance_m {
                    converged = true;
                    break;
                }
            }
            None => {
                // no descent direction left at machine precision
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            best: p,
            residual: cost,
        });
    }
    Ok(ImpactEstimate {
        position: p,
        distance_m: dist(p, anchor),
        residual: cost,
        tdoas_s: *tdoas,
        low_confidence: cost > options.residual_threshold_m,
        iterations,
        residual_history: history,
    })
}

/// Onset detection, TDoA estimation and hyperbolic solve in sequence.
pub fn attack_distance(
    recording: &ImpactRecording,
    geometry: &MicArrayGeometry,
    anchor: Point,
    mode: CorrelationMode,
    options: &SolverOptions,
) -> Result<ImpactEstimate> {
    let onset = detect_onset(recording)?;
    let tdoas = estimate_tdoa(recording, &onset, geometry, mode)?;
    solve_position(&tdoas, geometry, None, anchor, options)
}

/// Damped tone burst used to synthesize table impacts: `sin(2π f t) e^{-t/decay}` for `t ≥ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ImpactBurst {
    pub freq_hz: f64,
    pub decay_s: f64,
    pub amplitude: f64,
}

impl Default for ImpactBurst {
    fn default() -> Self {
        Self {
            freq_hz: 5_000.0,
            decay_s: 0.1e-3,
            amplitude: 1.0,
        }
    }
}

impl ImpactBurst {
    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            0.0
        } else {
            self.amplitude * (2.0 * PI * self.freq_hz * t).sin() * (-t / self.decay_s).exp()
        }
    }
}

/// Renders the six channels of an impact at `source` striking at `impact_time_s`,
/// with exact (fractional) non-dispersive arrival delays.
pub fn synthesize_impact(
    geometry: &MicArrayGeometry,
    source: Point,
    burst: &ImpactBurst,
    impact_time_s: f64,
    duration_s: f64,
    sample_rate_hz: f64,
) -> Result<Vec<SampledSignal>> {
    let n = (duration_s * sample_rate_hz).round() as usize;
    geometry
        .positions
        .iter()
        .map(|m| {
            let arrival = impact_time_s + dist(source, *m) / geometry.solid_speed_m_s;
            SampledSignal::from_fn(n, sample_rate_hz, |t| burst.eval(t - arrival))
        })
        .collect()
}
