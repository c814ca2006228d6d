//! Agreement between method outputs and human gold labels.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::report::FactRecord;
use crate::suite::{read_jsonl, Fact};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldLabel {
    #[serde(flatten)]
    pub fact: Fact,
    /// Mean of the annotators' 0/1 ratings.
    pub mean_score: f64,
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldLabel>> {
    read_jsonl::<GoldLabel>(path)?
        .into_iter()
        .map(|(line, g)| {
            if (0.0..=1.0).contains(&g.mean_score) {
                Ok(g)
            } else {
                Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("mean_score {} outside [0, 1]", g.mean_score),
                })
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    /// Permutation distribution, tie-free samples with n <= 10.
    Exact,
    /// Normal approximation with tie-corrected variance.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauResult {
    pub tau: f64,
    /// Two-sided.
    pub p_value: f64,
    pub p_value_method: PValueMethod,
    pub n: usize,
}

/// Pair statistics from an `O(n log n)` pass (Knight's algorithm).
struct PairCounts {
    n: u64,
    /// Pairs tied in x.
    tied_x: u64,
    tied_y: u64,
    /// Pairs strictly discordant in y after sorting by (x, y).
    swaps: u64,
    tied_xy: u64,
}

fn count_runs<T>(sorted: &[T], same: impl Fn(&T, &T) -> bool) -> (u64, Vec<u64>) {
    let mut pairs = 0u64;
    let mut runs = Vec::new();
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if same(&w[0], &w[1]) {
            run += 1;
        } else {
            pairs += run * (run - 1) / 2;
            runs.push(run);
            run = 1;
        }
    }
    if !sorted.is_empty() {
        pairs += run * (run - 1) / 2;
        runs.push(run);
    }
    (pairs, runs)
}

/// Merge sort counting strict inversions.
fn sort_counting_inversions(values: &mut Vec<f64>) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mut right = values.split_off(n / 2);
    let mut left = std::mem::take(values);
    let mut inversions = sort_counting_inversions(&mut left) + sort_counting_inversions(&mut right);
    values.reserve(n);
    let (mut i, mut j) = (0, 0);
    while i < left.len() && j < right.len() {
        if right[j] < left[i] {
            inversions += (left.len() - i) as u64;
            values.push(right[j]);
            j += 1;
        } else {
            values.push(left[i]);
            i += 1;
        }
    }
    values.extend_from_slice(&left[i..]);
    values.extend_from_slice(&right[j..]);
    inversions
}

fn pair_counts(x: &[f64], y: &[f64]) -> (PairCounts, Vec<u64>, Vec<u64>) {
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let (tied_x, x_runs) = count_runs(&pairs, |a, b| a.0 == b.0);
    let (tied_xy, _) = count_runs(&pairs, |a, b| a.0 == b.0 && a.1 == b.1);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = sort_counting_inversions(&mut ys);
    let (tied_y, y_runs) = count_runs(&ys, |a, b| a == b);
    (
        PairCounts {
            n: x.len() as u64,
            tied_x,
            tied_y,
            swaps,
            tied_xy,
        },
        x_runs,
        y_runs,
    )
}

/// Number of permutations of `n` items with each inversion count.
fn inversion_distribution(n: usize) -> Vec<f64> {
    let mut dist = vec![1.0];
    for m in 1..n {
        let mut next = vec![0.0; dist.len() + m];
        for (inv, count) in dist.iter().enumerate() {
            for extra in 0..=m {
                next[inv + extra] += count;
            }
        }
        dist = next;
    }
    dist
}

fn tie_sums(runs: &[u64]) -> (f64, f64, f64) {
    runs.iter().fold((0.0, 0.0, 0.0), |(a, b, c), &t| {
        let t = t as f64;
        (a + t * (t - 1.0) * (2.0 * t + 5.0), b + t * (t - 1.0), c + t * (t - 1.0) * (t - 2.0))
    })
}

/// Tie-corrected Kendall rank correlation (τ-b) with a two-sided p-value.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<TauResult> {
    if x.len() != y.len() {
        return Err(Error::Invalid(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Invalid("kendall tau needs at least 2 paired observations".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Invalid("kendall tau inputs contain NaN".into()));
    }
    let (c, x_runs, y_runs) = pair_counts(x, y);
    let n0 = c.n * (c.n - 1) / 2;
    let untied_x = n0 - c.tied_x;
    let untied_y = n0 - c.tied_y;
    if untied_x == 0 || untied_y == 0 {
        return Err(Error::Invalid("kendall tau undefined: one variable is constant".into()));
    }
    let s = n0 as i64 - c.tied_x as i64 - c.tied_y as i64 + c.tied_xy as i64 - 2 * c.swaps as i64;
    let tau = s as f64 / ((untied_x as f64) * (untied_y as f64)).sqrt();

    let n = c.n as usize;
    let (p_value, p_value_method) = if n <= 10 && c.tied_x == 0 && c.tied_y == 0 {
        let dist = inversion_distribution(n);
        let total: f64 = dist.iter().sum();
        let observed = s.unsigned_abs();
        let extreme: f64 = dist
            .iter()
            .enumerate()
            .filter(|(inv, _)| (n0 as i64 - 2 * *inv as i64).unsigned_abs() >= observed)
            .map(|(_, count)| count)
            .sum();
        ((extreme / total).min(1.0), PValueMethod::Exact)
    } else {
        let nf = n as f64;
        let (xt_a, xt_b, xt_c) = tie_sums(&x_runs);
        let (yt_a, yt_b, yt_c) = tie_sums(&y_runs);
        let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
        let mut var = (v0 - xt_a - yt_a) / 18.0 + xt_b * yt_b / (2.0 * nf * (nf - 1.0));
        if n > 2 {
            var += xt_c * yt_c / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
        }
        let z = s as f64 / var.sqrt();
        (erfc(z.abs() / std::f64::consts::SQRT_2), PValueMethod::Normal)
    };
    Ok(TauResult {
        tau,
        p_value,
        p_value_method,
        n,
    })
}

fn pair_with_gold<'a>(records: &'a [FactRecord], gold: &'a [GoldLabel]) -> Vec<(&'a FactRecord, &'a GoldLabel)> {
    let by_fact: HashMap<&Fact, &FactRecord> = records.iter().map(|r| (&r.fact, r)).collect();
    gold.iter()
        .filter_map(|g| by_fact.get(&g.fact).map(|r| (*r, g)))
        .collect()
}

/// τ-b between per-fact method scores and gold means, over facts present in both.
pub fn kendall_tau(method_scores: &[FactRecord], gold: &[GoldLabel]) -> Result<TauResult> {
    let pairs = pair_with_gold(method_scores, gold);
    let x: Vec<f64> = pairs.iter().map(|(r, _)| r.rank_score()).collect();
    let y: Vec<f64> = pairs.iter().map(|(_, g)| g.mean_score).collect();
    kendall_tau_b(&x, &y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallResult {
    pub recall: f64,
    /// Gold facts below the cutoff.
    pub positives: usize,
    /// Of those, how many the method judged unknown.
    pub flagged: usize,
    pub cutoff: f64,
}

/// Recall of the method at identifying facts humans judge not consistently
/// known (gold mean below `cutoff`).
pub fn recall_unknown(verdicts: &[FactRecord], gold: &[GoldLabel], cutoff: f64) -> Result<RecallResult> {
    let pairs = pair_with_gold(verdicts, gold);
    let positives: Vec<_> = pairs
        .iter()
        .filter(|(_, g)| g.mean_score.partial_cmp(&cutoff) == Some(Ordering::Less))
        .collect();
    if positives.is_empty() {
        return Err(Error::Invalid(format!("recall undefined: no gold facts below {cutoff}")));
    }
    let flagged = positives.iter().filter(|(r, _)| !r.known).count();
    Ok(RecallResult {
        recall: flagged as f64 / positives.len() as f64,
        positives: positives.len(),
        flagged,
        cutoff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::BaselineVerdict;
    use crate::report::Method;

    #[test]
    fn perfect_and_reversed() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(kendall_tau_b(&x, &[2.0, 4.0, 6.0, 8.0, 10.0]).unwrap().tau, 1.0);
        assert_eq!(kendall_tau_b(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap().tau, -1.0);
    }

    #[test]
    fn exact_p_value_small_sample() {
        // n=3 perfect agreement: 1 of 6 permutations at each extreme
        let r = kendall_tau_b(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.p_value_method, PValueMethod::Exact);
        assert!((r.p_value - 2.0 / 6.0).abs() < 1e-12);
        let r = kendall_tau_b(&[1.0, 3.0, 2.0, 5.0, 4.0, 7.0, 6.0, 8.0], &[2.0, 1.0, 4.0, 3.0, 6.0, 5.0, 8.0, 7.0]).unwrap();
        assert!((r.tau - 0.5).abs() < 1e-12);
        assert!((r.p_value - 0.10868055555555556).abs() < 1e-12, "{}", r.p_value);
    }

    #[test]
    fn scipy_reference_with_ties() {
        // scipy.stats.kendalltau([1,2,2,3,4,5,5,6,7,8,9,10], [2,1,3,3,5,4,6,8,7,7,10,9])
        let x = [1.0, 2.0, 2.0, 3.0, 4.0, 5.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let y = [2.0, 1.0, 3.0, 3.0, 5.0, 4.0, 6.0, 8.0, 7.0, 7.0, 10.0, 9.0];
        let r = kendall_tau_b(&x, &y).unwrap();
        assert!((r.tau - 0.8125).abs() < 1e-12, "{}", r.tau);
        assert_eq!(r.p_value_method, PValueMethod::Normal);
        assert!((r.p_value - 0.00031911866958115725).abs() < 1e-12, "{}", r.p_value);
    }

    #[test]
    fn constant_input_is_undefined() {
        assert!(kendall_tau_b(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(kendall_tau_b(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn inversion_counts_sum_to_factorial() {
        let d = inversion_distribution(5);
        assert_eq!(d.iter().sum::<f64>(), 120.0);
        assert_eq!(d.len(), 11);
    }

    fn verdict(subject: &str, known: bool) -> FactRecord {
        FactRecord::from_verdict(BaselineVerdict {
            fact: Fact::new(subject, "R", "O"),
            method: Method::Lama1,
            known,
            score: None,
        })
    }

    fn gold(subject: &str, mean_score: f64) -> GoldLabel {
        GoldLabel {
            fact: Fact::new(subject, "R", "O"),
            mean_score,
        }
    }

    #[test]
    fn recall_counts() {
        let verdicts = [verdict("a", false), verdict("b", false), verdict("c", false), verdict("d", true), verdict("e", true)];
        let labels = [gold("a", 0.0), gold("b", 0.25), gold("c", 0.4), gold("d", 0.2), gold("e", 1.0)];
        let r = recall_unknown(&verdicts, &labels, 0.5).unwrap();
        assert_eq!((r.flagged, r.positives), (3, 4));
        assert_eq!(r.recall, 0.75);
        assert!(recall_unknown(&verdicts, &[gold("e", 1.0)], 0.5).is_err());
    }
}
