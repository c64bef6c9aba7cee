//! CTC loss in log space with its exact gradient, and best-path decoding.
//!
//! The blank symbol is the last column of the probability matrix.

use crate::error::{Error, Result};
use crate::signal::Transcript;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Fewest frames that can emit `label`: one per symbol plus a blank between repeats.
pub fn required_frames(label: &[usize]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

#[derive(Debug, Clone)]
pub struct CtcOutput {
    pub loss: f64,
    /// `∂loss / ∂log_probs[t][k]`.
    pub grad: Vec<Vec<f64>>,
}

/// Negative log of the summed probability of every alignment of `label`.
pub fn ctc_loss(log_probs: &[Vec<f64>], label: &Transcript) -> Result<CtcOutput> {
    let t_len = log_probs.len();
    let classes = log_probs.first().map_or(0, Vec::len);
    if classes < 2 || log_probs.iter().any(|r| r.len() != classes) {
        return Err(Error::Domain("log-probability rows must share a width of at least 2".into()));
    }
    let blank = classes - 1;
    let lab = &label.tokens;
    if let Some(bad) = lab.iter().find(|&&k| k >= blank) {
        return Err(Error::Domain(format!("label symbol {bad} collides with blank or is out of range")));
    }
    let required = required_frames(lab);
    if t_len < required.max(1) {
        return Err(Error::InfeasibleLabel {
            label_len: lab.len(),
            required,
            frames: t_len,
        });
    }

    let s_len = 2 * lab.len() + 1;
    let ext: Vec<usize> = (0..s_len).map(|s| if s % 2 == 0 { blank } else { lab[s / 2] }).collect();
    let skip_ok = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![vec![ninf; s_len]; t_len];
    alpha[0][0] = log_probs[0][ext[0]];
    if s_len > 1 {
        alpha[0][1] = log_probs[0][ext[1]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[t - 1][s];
            if s >= 1 {
                a = log_add(a, alpha[t - 1][s - 1]);
            }
            if skip_ok(s) {
                a = log_add(a, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = a + log_probs[t][ext[s]];
        }
    }

    // beta excludes the emission at its own frame
    let mut beta = vec![vec![ninf; s_len]; t_len];
    beta[t_len - 1][s_len - 1] = 0.0;
    if s_len > 1 {
        beta[t_len - 1][s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[t + 1][s] + log_probs[t + 1][ext[s]];
            if s + 1 < s_len {
                b = log_add(b, beta[t + 1][s + 1] + log_probs[t + 1][ext[s + 1]]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_add(b, beta[t + 1][s + 2] + log_probs[t + 1][ext[s + 2]]);
            }
            beta[t][s] = b;
        }
    }

    let mut log_p = alpha[t_len - 1][s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[t_len - 1][s_len - 2]);
    }
    let mut grad = vec![vec![0.0; classes]; t_len];
    if log_p.is_finite() {
        for t in 0..t_len {
            for s in 0..s_len {
                let g = alpha[t][s] + beta[t][s] - log_p;
                if g > ninf {
                    grad[t][ext[s]] -= g.exp();
                }
            }
        }
    }
    Ok(CtcOutput { loss: -log_p, grad })
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
    logits
        .iter()
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter().map(|v| v - lse).collect()
        })
        .collect()
}

/// Pulls a gradient on log-softmax outputs back onto the logits.
pub fn logit_gradient(log_probs: &[Vec<f64>], grad_log_probs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    log_probs
        .iter()
        .zip(grad_log_probs)
        .map(|(lp, g)| {
            let total: f64 = g.iter().sum();
            lp.iter().zip(g).map(|(l, gi)| gi - l.exp() * total).collect()
        })
        .collect()
}

/// Index of the row maximum; ties go to the highest index so a flat row reads as blank.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v >= row[best] {
            best = k;
        }
    }
    best
}

/// Per-frame argmax, repeats collapsed, blanks dropped.
pub fn greedy_decode(log_probs: &[Vec<f64>]) -> Transcript {
    let Some(blank) = log_probs.first().map(|r| r.len().saturating_sub(1)) else {
        return Transcript::new(Vec::new());
    };
    let mut out = Vec::new();
    let mut prev = None;
    for row in log_probs {
        let k = argmax(row);
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    Transcript::new(out)
}
