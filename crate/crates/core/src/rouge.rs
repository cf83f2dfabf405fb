//! ROUGE-N (clipped n-gram overlap) and ROUGE-L (longest common
//! subsequence) precision, recall and F1 over token sequences.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(matched: usize, hyp_total: usize, ref_total: usize) -> Self {
        if hyp_total == 0 || ref_total == 0 {
            return RougeScore::default();
        }
        RougeScore {
            precision: matched as f64 / hyp_total as f64,
            recall: matched as f64 / ref_total as f64,
            f1: snap(2.0 * matched as f64 / (hyp_total + ref_total) as f64),
        }
    }
}

/// Grid spacing of reported F1 values.
pub const F1_GRID: f64 = 1.0 / (1u64 << 48) as f64;

/// Rounds to a multiple of [`F1_GRID`]. Differences and running sums of
/// snapped values in [0, 1] are exact in f64, so per-sentence reward
/// increments add back to the full score without rounding.
pub fn snap(x: f64) -> f64 {
    (x / F1_GRID).round() * F1_GRID
}

/// Harmonic mean `2PR/(P+R)`, zero when both are zero.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap. Either side having no n-grams scores zero.
pub fn rouge_n<T: Eq + Hash>(hyp: &[T], reference: &[T], n: usize) -> RougeScore {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    RougeScore::from_counts(matched, h.values().sum(), r.values().sum())
}

/// Length of the longest common subsequence, single-row dynamic program.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l<T: Eq>(hyp: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(hyp, reference), hyp.len(), reference.len())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeMetric {
    #[serde(rename = "rouge_1")]
    Rouge1,
    #[serde(rename = "rouge_2")]
    Rouge2,
    #[default]
    #[serde(rename = "rouge_l")]
    RougeL,
}

impl RougeMetric {
    pub fn score<T: Eq + Hash>(self, hyp: &[T], reference: &[T]) -> RougeScore {
        match self {
            RougeMetric::Rouge1 => rouge_n(hyp, reference, 1),
            RougeMetric::Rouge2 => rouge_n(hyp, reference, 2),
            RougeMetric::RougeL => rouge_l(hyp, reference),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RougeMetric::Rouge1 => "rouge_1",
            RougeMetric::Rouge2 => "rouge_2",
            RougeMetric::RougeL => "rouge_l",
        }
    }
}

/// ROUGE-1, ROUGE-2 and ROUGE-L for one pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RougeTriple {
    pub rouge_1: RougeScore,
    pub rouge_2: RougeScore,
    pub rouge_l: RougeScore,
}

pub fn rouge_all<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> RougeTriple {
    RougeTriple {
        rouge_1: rouge_n(hyp, reference, 1),
        rouge_2: rouge_n(hyp, reference, 2),
        rouge_l: rouge_l(hyp, reference),
    }
}

/// Tab-separated report: a header, one `P R F1` row per pair for each metric,
/// and a closing `mean` row.
pub fn score_report(hyps: &[Vec<String>], refs: &[Vec<String>]) -> String {
    let mut out = String::from("id\tr1_p\tr1_r\tr1_f\tr2_p\tr2_r\tr2_f\trl_p\trl_r\trl_f\n");
    let mut sums = [0.0; 9];
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        let t = rouge_all(h, r);
        let vals = [
            t.rouge_1.precision,
            t.rouge_1.recall,
            t.rouge_1.f1,
            t.rouge_2.precision,
            t.rouge_2.recall,
            t.rouge_2.f1,
            t.rouge_l.precision,
            t.rouge_l.recall,
            t.rouge_l.f1,
        ];
        out.push_str(&i.to_string());
        for (s, v) in sums.iter_mut().zip(vals) {
            *s += v;
            out.push_str(&format!("\t{v:.6}"));
        }
        out.push('\n');
    }
    let n = hyps.len().min(refs.len()).max(1) as f64;
    out.push_str("mean");
    for s in sums {
        out.push_str(&format!("\t{:.6}", s / n));
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    // exhaustive LCS: longest subsequence of `a` that is also a subsequence of `b`
    fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
        fn is_subseq(x: &[u8], y: &[u8]) -> bool {
            let mut it = y.iter();
            x.iter().all(|c| it.any(|d| d == c))
        }
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<u8> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
            if sub.len() > best && is_subseq(&sub, b) {
                best = sub.len();
            }
        }
        best
    }

    #[test]
    fn rouge_n_examples() {
        let s = rouge_n(&w("a b d"), &w("a b c"), 2);
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 0.5);
        assert_eq!(s.f1, 0.5);
        let s = rouge_n(&w("the the the"), &w("the cat"), 1);
        assert!((s.precision - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.recall, 0.5);
        assert_eq!(rouge_n(&w(""), &w("a"), 1), RougeScore::default());
        assert_eq!(rouge_n(&w("a"), &w("a"), 2), RougeScore::default());
    }

    #[test]
    fn rouge_l_examples() {
        let s = rouge_l(&w("a c e"), &w("a b c d e"));
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.6);
        assert_eq!(s.f1, 0.75);
        assert_eq!(rouge_l(&w("x y"), &w("a b")).f1, 0.0);
        assert_eq!(rouge_l::<&str>(&[], &[]), RougeScore::default());
        assert_eq!(rouge_l(&w("a b c"), &w("a b c")).f1, 1.0);
        assert_eq!(lcs_len(&w("a b c d e"), &w("e d c b a")), 1);
    }

    #[test]
    fn clipped_counts() {
        let hyp = vec!["x"; 10];
        let s = rouge_n(&hyp, &w("x y z"), 1);
        assert_eq!(s.recall, 1.0 / 3.0);
        assert_eq!(s.precision, 0.1);
    }

    #[test]
    fn snapped_differences_are_exact() {
        for (a, b) in [(0.1, 0.7), (1.0 / 3.0, 0.01), (0.999, 1e-9)] {
            let (a, b) = (snap(a), snap(b));
            assert_eq!(a + (b - a), b);
        }
    }

    #[test]
    fn report_has_mean_row() {
        let h = vec![vec!["a".to_string(), "b".to_string()]];
        let r = vec![vec!["a".to_string(), "c".to_string()]];
        let rep = score_report(&h, &r);
        let lines: Vec<&str> = rep.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0\t0.500000\t0.500000\t0.500000\t0.000000"));
        assert!(lines[2].starts_with("mean\t0.500000"));
    }

    proptest! {
        #[test]
        fn lcs_matches_brute_force(a in prop::collection::vec(0u8..4, 0..10), b in prop::collection::vec(0u8..4, 0..10)) {
            prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
        }

        #[test]
        fn scores_are_bounded_and_symmetric(a in prop::collection::vec(0u8..5, 0..15), b in prop::collection::vec(0u8..5, 0..15)) {
            for m in [RougeMetric::Rouge1, RougeMetric::Rouge2, RougeMetric::RougeL] {
                let s = m.score(&a, &b);
                let t = m.score(&b, &a);
                for v in [s.precision, s.recall, s.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert_eq!(s.precision, t.recall);
                prop_assert_eq!(s.f1, t.f1);
                prop_assert!((s.f1 - f1(s.precision, s.recall)).abs() < 1e-14);
            }
            if !a.is_empty() {
                prop_assert_eq!(rouge_l(&a, &a).f1, 1.0);
            }
        }

        #[test]
        fn lcs_grows_with_a_shared_suffix(a in prop::collection::vec(0u8..4, 0..10), b in prop::collection::vec(0u8..4, 0..10), tail in prop::collection::vec(0u8..4, 1..4)) {
            let (mut a2, mut b2) = (a.clone(), b.clone());
            a2.extend(&tail);
            b2.extend(&tail);
            prop_assert_eq!(lcs_len(&a2, &b2), lcs_len(&a, &b) + tail.len());
        }
    }
}
