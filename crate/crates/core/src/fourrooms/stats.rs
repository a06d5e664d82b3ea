//! Exact rank-sum test for small samples.

use crate::error::{Error, Result};

/// Ranks `1..=n` with tied values sharing the mean of their ranks.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// One-sided p-value of the Mann-Whitney test against "`x` tends to be
/// smaller than `y`": the fraction of all ways to split the pooled midranks
/// into groups of the two sizes whose `x`-group rank sum is at most the
/// observed one. Exact, including ties.
pub fn mann_whitney_less(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("rank test needs two nonempty samples"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("rank test needs finite values"));
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    // Midranks are multiples of ½, so doubled ranks are integers.
    let doubled: Vec<usize> = midranks(&pooled).iter().map(|r| (2.0 * r).round() as usize).collect();
    let observed: usize = doubled[..x.len()].iter().sum();
    let total: usize = doubled.iter().sum();
    let n1 = x.len();
    // ways[k][s]: subsets of size k with doubled rank sum s.
    let mut ways = vec![vec![0.0f64; total + 1]; n1 + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=n1).rev() {
            for s in (r..=total).rev() {
                ways[k][s] += ways[k - 1][s - r];
            }
        }
    }
    let all: f64 = ways[n1].iter().sum();
    let low: f64 = ways[n1][..=observed].iter().sum();
    Ok(low / all)
}
