//! Exhaustive path enumeration for small CTC problems.

use std::collections::HashMap;

use platewave::recognizer::ctc::{ctc_loss, logit_gradient};
use platewave::recognizer::log_softmax;
use platewave::Transcript;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLASSES: usize = 4;
pub const BLANK: usize = CLASSES - 1;

pub fn random_logits(rng: &mut ChaCha8Rng, frames: usize, classes: usize) -> Vec<Vec<f64>> {
    (0..frames).map(|_| (0..classes).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect()
}

pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Probability of every collapsed label, by summing over all `CLASSES^frames` paths.
pub fn enumerate(log_probs: &[Vec<f64>]) -> HashMap<Vec<usize>, f64> {
    let frames = log_probs.len();
    let mut totals = HashMap::new();
    let mut path = vec![0usize; frames];
    for code in 0..CLASSES.pow(frames as u32) {
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % CLASSES;
            c /= CLASSES;
        }
        let lp: f64 = path.iter().enumerate().map(|(t, &k)| log_probs[t][k]).sum();
        *totals.entry(collapse(&path)).or_insert(0.0) += lp.exp();
    }
    totals
}

pub fn all_labels(max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for l in &frontier {
            for k in 0..BLANK {
                let mut m: Vec<usize> = l.clone();
                m.push(k);
                next.push(m);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Outcome of comparing the loss with enumeration on every label of up to three symbols.
#[derive(Debug, Default)]
pub struct EnumerationCheck {
    pub checked: usize,
    pub max_error: f64,
    /// Labels whose feasibility disagreed between the two methods.
    pub disagreements: usize,
    pub max_mass_error: f64,
}

pub fn check_against_enumeration(seed: u64, draws_per_length: usize) -> EnumerationCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = EnumerationCheck::default();
    for frames in 1..=6 {
        for _ in 0..draws_per_length {
            let lp = log_softmax(&random_logits(&mut rng, frames, CLASSES));
            let totals = enumerate(&lp);
            for label in all_labels(3) {
                let p = totals.get(&label).copied();
                match (ctc_loss(&lp, &Transcript::new(label.clone())), p) {
                    (Ok(loss), Some(p)) => {
                        out.max_error = out.max_error.max((loss.loss + p.ln()).abs());
                        out.checked += 1;
                    }
                    (Err(_), None) => {}
                    _ => out.disagreements += 1,
                }
            }
            let mass: f64 = totals.values().sum();
            out.max_mass_error = out.max_mass_error.max((mass - 1.0).abs());
        }
    }
    out
}

fn loss_of_logits(logits: &[Vec<f64>], label: &Transcript) -> f64 {
    ctc_loss(&log_softmax(logits), label).unwrap().loss
}

/// Largest `max|analytic - numeric| / max|numeric|` over `instances` feasible random problems.
pub fn worst_gradient_error(seed: u64, instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < instances {
        let classes = rng.gen_range(2..=11);
        let frames = rng.gen_range(1..=12);
        let label_len = rng.gen_range(0..=frames.min(4));
        let label = Transcript::new((0..label_len).map(|_| rng.gen_range(0..classes - 1)).collect());
        let mut logits = random_logits(&mut rng, frames, classes);
        let lp = log_softmax(&logits);
        let Ok(out) = ctc_loss(&lp, &label) else { continue };
        let analytic = logit_gradient(&lp, &out.grad);
        let mut err: f64 = 0.0;
        let mut scale: f64 = 1e-8;
        for t in 0..frames {
            for k in 0..classes {
                let v = logits[t][k];
                logits[t][k] = v + h;
                let up = loss_of_logits(&logits, &label);
                logits[t][k] = v - h;
                let down = loss_of_logits(&logits, &label);
                logits[t][k] = v;
                let num = (up - down) / (2.0 * h);
                scale = scale.max(num.abs());
                err = err.max((analytic[t][k] - num).abs());
            }
        }
        worst = worst.max(err / scale);
        done += 1;
    }
    worst
}
