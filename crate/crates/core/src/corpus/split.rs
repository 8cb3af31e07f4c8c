use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, CorpusError, IN_HOUSE_INSTITUTION};

pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

/// Separates the in-house training source (institution 1) from the external test
/// institutions (2..=6). Record order is preserved in both halves.
pub fn partition(c: &Corpus) -> Result<(Corpus, Corpus), CorpusError> {
    let (inside, outside): (Vec<_>, Vec<_>) = c
        .records
        .iter()
        .cloned()
        .partition(|r| r.institution == IN_HOUSE_INSTITUTION);
    if inside.is_empty() {
        return Err(CorpusError::EmptyTrainSource);
    }
    Ok((
        Corpus::new(inside, format!("{}/institution-1", c.provenance)),
        Corpus::new(outside, format!("{}/external", c.provenance)),
    ))
}

/// Seeded Fisher–Yates shuffle of record indices, then the first `floor(ratio * n)`
/// records become the training split and the remainder the evaluation split.
pub fn split_train_eval(c: &Corpus, ratio: f64, seed: u64) -> Result<(Corpus, Corpus), CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::InvalidRatio(ratio));
    }
    let n = c.len();
    if n < 2 {
        return Err(CorpusError::TooSmallToSplit(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let cut = (ratio * n as f64).floor() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| c.records[i].clone()).collect::<Vec<_>>();
    Ok((
        Corpus::new(pick(&order[..cut]), format!("{}-train seed={seed}", c.provenance)),
        Corpus::new(pick(&order[cut..]), format!("{}-eval seed={seed}", c.provenance)),
    ))
}
