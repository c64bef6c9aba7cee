//! Token error rate between transcripts.

use crate::error::{config, Result};
use crate::signal::Transcript;

/// Levenshtein distance over token sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the reference length. Values above 1 are possible.
pub fn cer(reference: &Transcript, hypothesis: &Transcript) -> Result<f64> {
    if reference.is_empty() {
        return Err(config("CER needs a non-empty reference transcript"));
    }
    Ok(edit_distance(&reference.tokens, &hypothesis.tokens) as f64 / reference.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Full edit matrix, filled without the rolling-row trick.
    fn edit_matrix_oracle(a: &[usize], b: &[usize]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
                d[i][j] = (d[i - 1][j] + 1)
                    .min(d[i][j - 1] + 1)
                    .min(d[i - 1][j - 1] + cost);
            }
        }
        d[a.len()][b.len()]
    }

    fn t(v: &[usize]) -> Transcript {
        Transcript::new(v.to_vec())
    }

    #[test]
    fn basic_cases() {
        assert_eq!(cer(&t(&[1, 2, 3]), &t(&[1, 2, 3])).unwrap(), 0.0);
        assert!((cer(&t(&[0, 1, 2]), &t(&[0, 9, 2])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(cer(&t(&[]), &t(&[1])).is_err());
        assert_eq!(cer(&t(&[1]), &t(&[])).unwrap(), 1.0);
    }

    #[test]
    fn kitten_sitting() {
        // k i t t e n  /  s i t t i n g as token ids
        let kitten = [10, 8, 19, 19, 4, 13];
        let sitting = [18, 8, 19, 19, 8, 13, 6];
        assert_eq!(edit_matrix_oracle(&kitten, &sitting), 3);
        assert_eq!(edit_distance(&kitten, &sitting), 3);
        assert!((cer(&t(&kitten), &t(&sitting)).unwrap() - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn matches_full_matrix(a in proptest::collection::vec(0usize..4, 0..9),
                               b in proptest::collection::vec(0usize..4, 0..9)) {
            prop_assert_eq!(edit_distance(&a, &b), edit_matrix_oracle(&a, &b));
        }

        #[test]
        fn triangle_inequality(a in proptest::collection::vec(0usize..4, 0..8),
                               b in proptest::collection::vec(0usize..4, 0..8),
                               c in proptest::collection::vec(0usize..4, 0..8)) {
            prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        }
    }
}
