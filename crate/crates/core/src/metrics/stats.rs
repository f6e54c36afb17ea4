//! Cohen's kappa and the Mann-Whitney U test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Kappa over the flattened binary (sample × label) decisions of two raters.
pub fn cohens_kappa(a: &[Vec<bool>], b: &[Vec<bool>]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::shape("cohens_kappa", "rater matrices differ in shape"));
    }
    let (mut agree, mut a_pos, mut b_pos, mut n) = (0u64, 0u64, 0u64, 0u64);
    for (ra, rb) in a.iter().zip(b) {
        for (&x, &y) in ra.iter().zip(rb) {
            agree += u64::from(x == y);
            a_pos += u64::from(x);
            b_pos += u64::from(y);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("kappa of empty matrices".into()));
    }
    let n = n as f64;
    let p_o = agree as f64 / n;
    let (pa, pb) = (a_pos as f64 / n, b_pos as f64 / n);
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if p_e == 1.0 {
        return if p_o == 1.0 {
            Ok(1.0)
        } else {
            Err(Error::Undefined("kappa with chance agreement 1 and imperfect observed agreement".into()))
        };
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first group.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// Normal-approximation z with tie and continuity correction.
    pub z: f64,
    /// `|z| / sqrt(n_a + n_b)`.
    pub r: f64,
    pub exact: bool,
}

/// Above this many DP cell updates the exact test falls back to the normal
/// approximation.
const EXACT_BUDGET: f64 = 2e9;

struct Ranked {
    /// Midrank of every pooled value, in sorted order.
    all: Vec<f64>,
    /// Midranks of the first group's values.
    first: Vec<f64>,
    tie_sizes: Vec<f64>,
}

fn midranks(a: &[f64], b: &[f64]) -> Ranked {
    let mut pooled: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut all = vec![0.0; pooled.len()];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        all[i..j].iter_mut().for_each(|x| *x = r);
        tie_sizes.push((j - i) as f64);
        i = j;
    }
    let first = all.iter().zip(&pooled).filter(|(_, v)| v.1).map(|(r, _)| *r).collect();
    Ranked { all, first, tie_sizes }
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("Mann-Whitney U needs two non-empty groups".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "mann_whitney_u" });
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let ranked = midranks(a, b);
    let rank_sum: f64 = ranked.first.iter().sum();
    let u = rank_sum - (na * (na + 1)) as f64 / 2.0;

    let mu = (na * nb) as f64 / 2.0;
    let nf = n as f64;
    let tie_term: f64 = ranked.tie_sizes.iter().map(|t| t * t * t - t).sum::<f64>() / (nf * (nf - 1.0).max(1.0));
    let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - tie_term);
    let z = if var > 0.0 {
        let d = (u - mu).abs();
        let corrected = (d - 0.5).max(0.0);
        corrected.copysign(u - mu) / var.sqrt()
    } else {
        0.0
    };
    let r = z.abs() / nf.sqrt();

    let small = na.min(nb);
    let max_sum = 2.0 * nf * small as f64;
    let exact = (na <= 20 || nb <= 20) && nf * small as f64 * max_sum <= EXACT_BUDGET;
    let p = if exact {
        exact_p(&ranked.all, &ranked.first, na)
    } else if var > 0.0 {
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0)
    } else {
        1.0
    };
    Ok(MannWhitney { u, p, z, r, exact })
}

/// Two-sided permutation p-value of the rank sum of a size-`k` subset, by
/// dynamic programming over doubled midranks (which are integers).
fn exact_p(all_ranks: &[f64], group_ranks: &[f64], k: usize) -> f64 {
    let doubled: Vec<usize> = all_ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // Count subsets of the smaller side; complements mirror the statistic.
    let n = doubled.len();
    let k_small = k.min(n - k);
    let mut dp = vec![vec![0.0f64; total + 1]; k_small + 1];
    dp[0][0] = 1.0;
    for &r in &doubled {
        for j in (1..=k_small).rev() {
            let (lo, hi) = dp.split_at_mut(j);
            let prev = &lo[j - 1];
            let cur = &mut hi[0];
            for s in (r..=total).rev() {
                if prev[s - r] != 0.0 {
                    cur[s] += prev[s - r];
                }
            }
        }
    }
    let observed: usize = group_ranks.iter().map(|r| (2.0 * r).round() as usize).sum();
    let observed = if k_small == k { observed } else { total - observed };
    // Expected doubled sum is k_small · (n + 1).
    let centre = (k_small * (n + 1)) as i64;
    let dev = (observed as i64 - centre).abs();
    let counts = &dp[k_small];
    let all: f64 = counts.iter().sum();
    let tail: f64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as i64 - centre).abs() >= dev)
        .map(|(_, c)| c)
        .sum();
    (tail / all).min(1.0)
}
