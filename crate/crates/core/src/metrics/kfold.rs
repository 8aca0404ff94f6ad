use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Splits indices into `k` folds with per-class proportions preserved.
///
/// Each class is shuffled with the seeded RNG (class 0 first) and dealt
/// round-robin into the folds; the dealing position carries over from one
/// class to the next so fold sizes stay within one of each other. Indices
/// inside a fold are ascending.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k = {k}, need at least 2 folds")));
    }
    if let Some(bad) = labels.iter().find(|l| **l > 1) {
        return Err(Error::InvalidParameter(format!("label {bad} is not 0 or 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut offset = 0;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == class).collect();
        if members.len() < k {
            return Err(Error::InsufficientClassMembers {
                class,
                count: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng);
        for (j, idx) in members.iter().enumerate() {
            folds[(offset + j) % k].push(*idx);
        }
        offset += members.len();
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn class_counts(labels: &[u8], fold: &[usize]) -> (usize, usize) {
        let pos = fold.iter().filter(|i| labels[**i] == 1).count();
        (pos, fold.len() - pos)
    }

    #[test]
    fn balanced_ten_items() {
        let labels = [1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let folds = stratified_kfold(&labels, 5, 7).unwrap();
        for f in &folds {
            assert_eq!(class_counts(&labels, f), (1, 1));
        }
    }

    #[test]
    fn uneven_classes() {
        let labels: Vec<u8> = [1; 7].into_iter().chain([0; 5]).collect();
        for seed in 0..20 {
            for f in stratified_kfold(&labels, 3, seed).unwrap() {
                let (pos, neg) = class_counts(&labels, &f);
                assert!((2..=3).contains(&pos) && (1..=2).contains(&neg), "{pos} / {neg}");
            }
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            stratified_kfold(&[1, 1, 1, 0], 2, 0),
            Err(Error::InsufficientClassMembers { class: 0, count: 1, k: 2 })
        ));
        assert!(stratified_kfold(&[0, 1, 0, 1], 1, 0).is_err());
        assert!(stratified_kfold(&[0, 2, 0, 1], 2, 0).is_err());
    }

    #[test]
    fn same_seed_same_split() {
        let labels: Vec<u8> = (0..40).map(|i| (i % 3 == 0) as u8).collect();
        assert_eq!(stratified_kfold(&labels, 5, 11).unwrap(), stratified_kfold(&labels, 5, 11).unwrap());
    }

    proptest! {
        #[test]
        fn folds_partition_and_stratify(
            labels in proptest::collection::vec(0u8..=1, 4..80), k in 2usize..6, seed in any::<u64>()
        ) {
            let pos = labels.iter().filter(|l| **l == 1).count();
            let neg = labels.len() - pos;
            prop_assume!(pos >= k && neg >= k);
            let folds = stratified_kfold(&labels, k, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for f in &folds {
                let (p, n) = class_counts(&labels, f);
                prop_assert!((p as f64 - pos as f64 / k as f64).abs() <= 1.0);
                prop_assert!((n as f64 - neg as f64 / k as f64).abs() <= 1.0);
            }
        }
    }
}
