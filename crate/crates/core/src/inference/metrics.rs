use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Accuracy summary. `confusion[t][p]` counts samples of true class `t`
/// predicted as `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall_accuracy: f64,
    pub average_accuracy: f64,
    pub kappa: f64,
    /// Recall per class; `None` for classes absent from the truth.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn n_samples(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Per-class rows followed by an OA/AA/kappa footer.
    pub fn to_text(&self) -> String {
        let mut s = String::from("class  support  accuracy\n");
        for (c, (acc, row)) in self.per_class_accuracy.iter().zip(&self.confusion).enumerate() {
            let support: u64 = row.iter().sum();
            match acc {
                Some(a) => s.push_str(&format!("{c:>5}  {support:>7}  {a:.6}\n")),
                None => s.push_str(&format!("{c:>5}  {support:>7}  -\n")),
            }
        }
        s.push_str(&format!(
            "OA {:.6}  AA {:.6}  kappa {:.6}\n",
            self.overall_accuracy, self.average_accuracy, self.kappa
        ));
        s
    }
}

/// OA, AA and Cohen's kappa over `n_classes` classes.
pub fn compute_metrics(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<MetricsReport> {
    if truth.len() != predicted.len() {
        return Err(Error::Usage(format!(
            "{} true labels against {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Usage("metrics of zero samples".into()));
    }
    if let Some(&l) = truth.iter().chain(predicted).find(|&&l| l >= n_classes) {
        return Err(Error::Usage(format!("label {l} outside [0, {n_classes})")));
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let n = truth.len() as f64;
    let diag: u64 = (0..n_classes).map(|c| confusion[c][c]).sum();
    let p_o = diag as f64 / n;

    let per_class: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let support: u64 = row.iter().sum();
            (support > 0).then(|| row[c] as f64 / support as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let aa = present.iter().sum::<f64>() / present.len() as f64;

    let p_e: f64 = (0..n_classes)
        .map(|c| {
            let row: u64 = confusion[c].iter().sum();
            let col: u64 = confusion.iter().map(|r| r[c]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum();
    let kappa = if 1.0 - p_e == 0.0 {
        if p_o == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    Ok(MetricsReport {
        overall_accuracy: p_o,
        average_accuracy: aa,
        kappa,
        per_class_accuracy: per_class,
        confusion,
    })
}

/// Mean silhouette with Euclidean distance. Samples whose class has a single
/// member contribute 0.
pub fn silhouette(z: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, _) = z.dims2()?;
    if labels.len() != n {
        return Err(Error::Alignment(format!("{n} points, {} labels", labels.len())));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_classes];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Usage("silhouette needs at least two classes".into()));
    }
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; n_classes];
            let zi = z.row(i);
            for j in 0..n {
                if j != i {
                    sums[labels[j]] += crate::numerics::ops::sq_dist(zi, z.row(j)).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..n_classes)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let r = compute_metrics(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!((r.overall_accuracy, r.average_accuracy, r.kappa), (1.0, 1.0, 1.0));
    }

    #[test]
    fn two_class_kappa_example() {
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for (t, p, count) in [(0, 0, 40), (0, 1, 10), (1, 0, 20), (1, 1, 30)] {
            truth.extend(std::iter::repeat_n(t, count));
            pred.extend(std::iter::repeat_n(p, count));
        }
        let r = compute_metrics(&truth, &pred, 2).unwrap();
        assert!((r.overall_accuracy - 0.70).abs() < 1e-12);
        assert!((r.average_accuracy - 0.70).abs() < 1e-12);
        assert!((r.kappa - 0.40).abs() < 1e-12);
        assert_eq!(r.confusion, vec![vec![40, 10], vec![20, 30]]);
    }

    #[test]
    fn constant_predictor_has_zero_kappa() {
        let r = compute_metrics(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        assert_eq!(r.kappa, 0.0);
        assert_eq!(r.overall_accuracy, 0.5);
    }

    #[test]
    fn length_mismatch_is_usage_error() {
        assert!(matches!(compute_metrics(&[0], &[0, 1], 2), Err(Error::Usage(_))));
    }

    #[test]
    fn separated_clusters_score_near_one() {
        let z = Tensor::from_rows(&[[0.0, 0.0], [0.01, 0.0], [10.0, 0.0], [10.0, 0.01]]).unwrap();
        assert!(silhouette(&z, &[0, 0, 1, 1]).unwrap() > 0.95);
    }

    #[test]
    fn singletons_contribute_zero_and_one_class_errors() {
        let z = Tensor::from_rows(&[[0.0], [1.0], [5.0]]).unwrap();
        // class 1 is a singleton; the two class-0 points score (b - a) / b
        let s = silhouette(&z, &[0, 0, 1]).unwrap();
        let s0 = (5.0 - 1.0) / 5.0;
        let s1 = (4.0 - 1.0) / 4.0;
        assert!((s - (s0 + s1) / 3.0).abs() < 1e-12);
        assert!(silhouette(&z, &[0, 0, 0]).is_err());
    }

    #[test]
    fn text_report_has_footer() {
        let r = compute_metrics(&[0, 1], &[0, 0], 3).unwrap();
        let t = r.to_text();
        assert!(t.contains("OA 0.500000"));
        assert!(t.lines().any(|l| l.trim_end().ends_with('-')));
    }
}
