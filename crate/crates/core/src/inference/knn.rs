use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::ops::sq_dist;
use crate::numerics::Tensor;

/// Class-averaged nearest-neighbour rule: for each class, the mean squared
/// distance to its `k` nearest training samples (all of them when `k` is
/// `None` or exceeds the class size); the class with the smallest mean wins,
/// ties going to the lowest index. Classes without training samples never win.
pub fn classify_knn_classavg(
    train: &Tensor,
    train_labels: &[usize],
    test: &Tensor,
    k: Option<usize>,
) -> Result<Vec<usize>> {
    let (n, d) = train.dims2()?;
    let (_, dt) = test.dims2()?;
    if n == 0 {
        return Err(Error::Usage("nearest-neighbour rule with no training samples".into()));
    }
    if train_labels.len() != n {
        return Err(Error::Alignment(format!("{n} training rows, {} labels", train_labels.len())));
    }
    if d != dt {
        return Err(Error::dim(format!("training width {d}, test width {dt}")));
    }
    if k == Some(0) {
        return Err(Error::Usage("k must be at least 1".into()));
    }
    let n_classes = train_labels.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); n_classes];
    for (i, &l) in train_labels.iter().enumerate() {
        members[l].push(i);
    }
    Ok(test
        .iter_rows()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|x| {
            let mut best = (f64::INFINITY, 0);
            let mut dists = Vec::new();
            for (c, rows) in members.iter().enumerate() {
                if rows.is_empty() {
                    continue;
                }
                dists.clear();
                dists.extend(rows.iter().map(|&i| sq_dist(x, train.row(i))));
                let take = k.map_or(dists.len(), |k| k.min(dists.len()));
                if take < dists.len() {
                    dists.select_nth_unstable_by(take - 1, f64::total_cmp);
                }
                let mut nearest = dists[..take].to_vec();
                // Summation order fixed so results do not depend on selection internals.
                nearest.sort_by(f64::total_cmp);
                let mean = nearest.iter().sum::<f64>() / take as f64;
                if mean < best.0 {
                    best = (mean, c);
                }
            }
            best.1
        })
        .collect())
}
