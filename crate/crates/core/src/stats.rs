//! Two-sided Mann–Whitney U test.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

/// Largest per-sample size for which the exact null distribution is used.
pub const EXACT_MAX: usize = 8;
/// Significance level for flagging a difference.
pub const FLAG_ALPHA: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("sample {0} is empty")]
    EmptySample(char),
    #[error("sample {0} contains a non-finite value")]
    NonFinite(char),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UTestMethod {
    Exact,
    NormalApprox,
}

impl UTestMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            UTestMethod::Exact => "exact",
            UTestMethod::NormalApprox => "normal_approx",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    /// min(U_a, U_b).
    pub u_statistic: f64,
    pub p_two_sided: f64,
    pub method: UTestMethod,
    pub flagged: bool,
}

/// 1-based ranks with ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Number of arrangements of `m` + `n` distinct values giving each U in 0..=m*n.
pub fn u_null_counts(m: usize, n: usize) -> Vec<u64> {
    // table[j][u] for the current i: arrangements of i a-values and j b-values
    let max_u = m * n;
    let mut prev: Vec<Vec<u64>> = (0..=n)
        .map(|_| {
            let mut row = vec![0u64; max_u + 1];
            row[0] = 1;
            row
        })
        .collect();
    for i in 1..=m {
        let mut cur: Vec<Vec<u64>> = vec![vec![0u64; max_u + 1]; n + 1];
        cur[0][0] = 1;
        for j in 1..=n {
            for u in 0..=i * j {
                // largest value belongs to a: it beats all j b-values
                let from_a = if u >= j { prev[j][u - j] } else { 0 };
                let from_b = cur[j - 1][u];
                cur[j][u] = from_a + from_b;
            }
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

fn has_ties(values: &mut [f64]) -> bool {
    values.sort_by(f64::total_cmp);
    values.windows(2).any(|w| w[0] == w[1])
}

/// Two-sided Mann–Whitney U test of `a` against `b`.
///
/// Uses the exact null distribution when both samples have at most
/// [`EXACT_MAX`] values and there are no ties; otherwise the normal
/// approximation with tie-corrected variance and a 0.5 continuity correction.
pub fn mann_whitney_u_two_sided(a: &[f64], b: &[f64]) -> Result<UTestResult, StatsError> {
    for (name, s) in [('a', a), ('b', b)] {
        if s.is_empty() {
            return Err(StatsError::EmptySample(name));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(name));
        }
    }
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..n1].iter().sum();
    let u_a = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;
    let u_b = (n1 * n2) as f64 - u_a;
    let u = u_a.min(u_b);

    let tied = has_ties(&mut pooled.clone());
    let (p, method) = if n1 <= EXACT_MAX && n2 <= EXACT_MAX && !tied {
        let counts = u_null_counts(n1, n2);
        let total: u64 = counts.iter().sum();
        let tail: u64 = counts[..=u as usize].iter().sum();
        (((2 * tail) as f64 / total as f64).min(1.0), UTestMethod::Exact)
    } else {
        let n = (n1 + n2) as f64;
        let mut sorted = pooled;
        sorted.sort_by(f64::total_cmp);
        let mut tie_term = 0.0;
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i + 1;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            let t = (j - i) as f64;
            tie_term += t * t * t - t;
            i = j;
        }
        let mean = (n1 * n2) as f64 / 2.0;
        let var = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
            erfc(z / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
        };
        (p, UTestMethod::NormalApprox)
    };
    Ok(UTestResult { u_statistic: u, p_two_sided: p, method, flagged: p < FLAG_ALPHA })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_triples_exact() {
        let r = mann_whitney_u_two_sided(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u_statistic, 0.0);
        assert_eq!(r.p_two_sided, 0.1);
        assert_eq!(r.method, UTestMethod::Exact);
        assert!(!r.flagged);
    }

    #[test]
    fn identical_samples_cap_at_one() {
        let r = mann_whitney_u_two_sided(&[5.0; 3], &[5.0; 3]).unwrap();
        assert_eq!(r.u_statistic, 4.5);
        assert_eq!(r.p_two_sided, 1.0);
        assert_eq!(r.method, UTestMethod::NormalApprox);
    }

    #[test]
    fn large_separated_samples() {
        let a: Vec<f64> = (1..=20).map(f64::from).collect();
        let b: Vec<f64> = (21..=40).map(f64::from).collect();
        let r = mann_whitney_u_two_sided(&a, &b).unwrap();
        assert_eq!(r.method, UTestMethod::NormalApprox);
        assert!(r.p_two_sided < 1e-6 && r.p_two_sided > 0.0);
        assert!(r.flagged);
    }

    #[test]
    fn null_counts_are_binomial() {
        assert_eq!(u_null_counts(3, 3), vec![1, 1, 2, 3, 3, 3, 3, 2, 1, 1]);
        assert_eq!(u_null_counts(8, 8).iter().sum::<u64>(), 12870);
        assert_eq!(u_null_counts(1, 4), vec![1; 5]);
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn empty_rejected() {
        assert_eq!(mann_whitney_u_two_sided(&[], &[1.0]), Err(StatsError::EmptySample('a')));
        assert_eq!(mann_whitney_u_two_sided(&[1.0], &[f64::NAN]), Err(StatsError::NonFinite('b')));
    }
}
