use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disjoint, covering train/test index lists, each ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per class of size `n`, `floor(fraction·n)` samples plus one more with
/// probability equal to the fractional part go to training. Classes with at
/// least two samples keep one or more on each side; smaller classes go
/// entirely to training.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!(
            "train fraction {fraction} outside (0, 1)"
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut idx) in members.into_iter().enumerate() {
        let n = idx.len();
        if n == 0 {
            continue;
        }
        if n < 2 {
            log::warn!("class {class} has {n} sample; assigning it to training only");
            train.extend(idx);
            continue;
        }
        let exact = fraction * n as f64;
        let mut take = exact.floor() as usize;
        if rng.random::<f64>() < exact - exact.floor() {
            take += 1;
        }
        let take = take.clamp(1, n - 1);
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..take]);
        test.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}
