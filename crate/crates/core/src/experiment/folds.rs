use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Stratified k-fold split of `labels.len()` samples.
///
/// Each class is shuffled and its members dealt round-robin, continuing from
/// where the previous class stopped, so per-class and total fold sizes both
/// differ by at most one. Folds are returned with sorted indices.
pub fn kfold_split(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if folds < 2 || folds > n {
        return Err(Error::Config(format!(
            "cannot split {n} samples into {folds} folds"
        )));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut r = rng::seeded(seed);
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for (c, members) in by_class.iter_mut().enumerate() {
        if !members.is_empty() && members.len() < folds {
            log::warn!(
                "class {c} has {} samples for {folds} folds; some folds will lack it",
                members.len()
            );
        }
        members.shuffle(&mut r);
        for &i in members.iter() {
            out[next].push(i);
            next = (next + 1) % folds;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// Indices outside fold `f`.
pub fn training_indices(folds: &[Vec<usize>], f: usize) -> Vec<usize> {
    let mut v: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != f)
        .flat_map(|(_, fold)| fold.iter().copied())
        .collect();
    v.sort_unstable();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mutag_like() -> Vec<usize> {
        (0..188).map(|i| usize::from(i >= 63)).collect()
    }

    #[test]
    fn sizes_for_188_samples() {
        let f = kfold_split(&mutag_like(), 10, 1).unwrap();
        let mut sizes: Vec<usize> = f.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, [18, 18, 19, 19, 19, 19, 19, 19, 19, 19]);
    }

    #[test]
    fn folds_partition_the_samples() {
        let labels = mutag_like();
        let f = kfold_split(&labels, 10, 7).unwrap();
        let mut all: Vec<usize> = f.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..188).collect::<Vec<_>>());
        for i in 0..10 {
            let train = training_indices(&f, i);
            assert_eq!(train.len() + f[i].len(), 188);
            assert!(f[i].iter().all(|x| train.binary_search(x).is_err()));
        }
    }

    #[test]
    fn class_ratio_close_to_global() {
        let labels = mutag_like();
        let f = kfold_split(&labels, 10, 3).unwrap();
        let global = 125.0 / 188.0;
        for fold in &f {
            let pos = fold.iter().filter(|&&i| labels[i] == 1).count() as f64;
            assert!((pos - global * fold.len() as f64).abs() <= 1.0, "{pos} of {}", fold.len());
        }
        let per_class: Vec<Vec<usize>> = (0..2)
            .map(|c| f.iter().map(|fold| fold.iter().filter(|&&i| labels[i] == c).count()).collect())
            .collect();
        for counts in per_class {
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn seeded_and_validated() {
        let labels = mutag_like();
        assert_eq!(kfold_split(&labels, 10, 5).unwrap(), kfold_split(&labels, 10, 5).unwrap());
        assert_ne!(kfold_split(&labels, 10, 5).unwrap(), kfold_split(&labels, 10, 6).unwrap());
        assert!(kfold_split(&labels[..3], 4, 1).is_err());
        assert!(kfold_split(&labels, 1, 1).is_err());
        // Rare class: best effort, still a partition.
        let rare = [0, 0, 0, 0, 0, 1];
        let f = kfold_split(&rare, 3, 1).unwrap();
        assert_eq!(f.iter().map(Vec::len).sum::<usize>(), 6);
    }
}
