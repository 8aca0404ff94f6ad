use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest pooled sample size tested by exact enumeration.
pub const EXACT_LIMIT: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MannWhitney {
    /// Pairs with `a > b`, plus one half per tie.
    pub u: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

/// Twice the U statistic of `a` against `b`, as an integer.
fn doubled_u(a: &[f64], b: &[f64]) -> u64 {
    let mut twice = 0;
    for x in a {
        for y in b {
            twice += if x > y { 2 } else { u64::from(x == y) };
        }
    }
    twice
}

/// Mann-Whitney U test of `a` against `b`.
///
/// With at most [`EXACT_LIMIT`] values in total the two-sided p-value counts
/// every split of the pooled values into groups of the original sizes whose
/// U lies at least as far from `|a| |b| / 2` as the observed one. Larger
/// samples use the normal approximation with tie and continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("Mann-Whitney needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("Mann-Whitney samples must be finite".into()));
    }
    let (m, n) = (a.len(), b.len());
    let twice = doubled_u(a, b);
    let u = twice as f64 / 2.0;
    let centre = (m * n) as i64;
    let observed = (twice as i64 - centre).abs();

    if m + n <= EXACT_LIMIT {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let total = m + n;
        let (mut extreme, mut count) = (0u64, 0u64);
        let mut left = Vec::with_capacity(m);
        let mut right = Vec::with_capacity(n);
        for bits in 0u32..1 << total {
            if bits.count_ones() as usize != m {
                continue;
            }
            left.clear();
            right.clear();
            for (i, v) in pooled.iter().enumerate() {
                if bits >> i & 1 == 1 {
                    left.push(*v);
                } else {
                    right.push(*v);
                }
            }
            count += 1;
            if (doubled_u(&left, &right) as i64 - centre).abs() >= observed {
                extreme += 1;
            }
        }
        return Ok(MannWhitney {
            u,
            p_two_sided: extreme as f64 / count as f64,
            exact: true,
        });
    }

    Ok(MannWhitney {
        u,
        p_two_sided: normal_p(a, b, u),
        exact: false,
    })
}

/// Normal approximation with tie and continuity corrections.
fn normal_p(a: &[f64], b: &[f64], u: f64) -> f64 {
    let (m, n) = (a.len(), b.len());
    let total = (m + n) as f64;
    let mut sorted: Vec<f64> = a.iter().chain(b).copied().collect();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        tie_term += (j * j * j - j) as f64;
        i += j;
    }
    let mn = (m * n) as f64;
    let var = mn / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
    if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mn / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * Normal::standard().sf(z)).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn separated_triples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!((r.p_two_sided - 0.1).abs() < 1e-12);
        assert!(r.exact);
    }

    #[test]
    fn identical_samples() {
        let a = [0.3, 0.7, 0.7, 0.9];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.u, 8.0);
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn large_identical_samples_use_normal_path() {
        let a: Vec<f64> = (0..10).map(f64::from).collect();
        let r = mann_whitney_u(&a, &a).unwrap();
        assert!(!r.exact);
        assert_eq!(r.u, 50.0);
        assert_eq!(r.p_two_sided, 1.0);
        let constant = mann_whitney_u(&[1.0; 8], &[1.0; 9]).unwrap();
        assert_eq!(constant.p_two_sided, 1.0);
    }

    #[test]
    fn empty_rejected() {
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn swapping_mirrors_u(
            a in proptest::collection::vec(0u8..6, 1..8), b in proptest::collection::vec(0u8..6, 1..8)
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let ab = mann_whitney_u(&a, &b).unwrap();
            let ba = mann_whitney_u(&b, &a).unwrap();
            prop_assert_eq!(ab.u + ba.u, (a.len() * b.len()) as f64);
            prop_assert!((ab.p_two_sided - ba.p_two_sided).abs() < 1e-12);
        }

        #[test]
        fn exact_and_normal_agree_without_ties(values in proptest::collection::hash_set(0u32..10_000, 12)) {
            let v: Vec<f64> = values.into_iter().map(f64::from).collect();
            let (a, b) = v.split_at(6);
            let exact = mann_whitney_u(a, b).unwrap();
            prop_assert!(exact.exact);

            let approx = normal_p(a, b, exact.u);
            prop_assert!((exact.p_two_sided - approx).abs() <= 0.05, "{} vs {}", exact.p_two_sided, approx);
        }
    }
}
