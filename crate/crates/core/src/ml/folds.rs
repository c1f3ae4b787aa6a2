use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MlError;

/// One fold: training indices and validation indices, both sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

/// Shuffled k-fold partition of `0..n`.
///
/// The first `n % k` folds hold one extra sample; each training set is the
/// complement of its validation set.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>, MlError> {
    if k < 2 || k > n {
        return Err(MlError::InvalidFolds { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        let mut valid = order[start..start + size].to_vec();
        valid.sort_unstable();
        let mut in_valid = vec![false; n];
        for &v in &valid {
            in_valid[v] = true;
        }
        let train = (0..n).filter(|&j| !in_valid[j]).collect();
        folds.push(Fold { train, valid });
        start += size;
    }
    Ok(folds)
}
