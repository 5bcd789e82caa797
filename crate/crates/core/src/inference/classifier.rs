use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fit_mlp, Activation, FitSchedule, Mlp};
use crate::numerics::{softmax_rows, Tensor};

fn default_hidden() -> Vec<usize> {
    vec![128, 64]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierPlan {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(flatten)]
    pub schedule: FitSchedule,
}

impl ClassifierPlan {
    pub fn new(hidden: &[usize], epochs: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            hidden: hidden.to_vec(),
            schedule: FitSchedule {
                epochs,
                batch_size: 64,
                learning_rate,
                seed,
            },
        }
    }
}

/// `tanh` hidden layers and a softmax output over the classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ShallowClassifier {
    pub network: Mlp,
}

impl ShallowClassifier {
    pub fn n_classes(&self) -> usize {
        self.network.out_dim()
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.network.forward(x)
    }

    /// Class probabilities, one row per sample.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        softmax_rows(&self.logits(x)?)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_proba(x)?))
    }
}

/// Index of each row's maximum, lowest index on ties.
pub fn argmax_rows(p: &Tensor) -> Vec<usize> {
    p.iter_rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Cross-entropy training with Adam over `n_classes` outputs.
pub fn train_classifier(
    x: &Tensor,
    labels: &[usize],
    n_classes: usize,
    plan: &ClassifierPlan,
) -> Result<ShallowClassifier> {
    let (n, d) = x.dims2()?;
    if labels.len() != n {
        return Err(Error::Alignment(format!("{n} rows, {} labels", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Usage(format!("label {l} outside [0, {n_classes})")));
    }
    let mut seen = vec![false; n_classes];
    labels.iter().for_each(|&l| seen[l] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::config("classifier training set has fewer than two classes"));
    }
    let mut widths = vec![d];
    widths.extend(&plan.hidden);
    widths.push(n_classes);
    let mut acts = vec![Activation::Tanh; plan.hidden.len()];
    acts.push(Activation::Identity);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.schedule.seed);
    let mut network = Mlp::new(&widths, &acts, &mut rng)?;
    fit_mlp(
        &mut network,
        x,
        &plan.schedule,
        |tape, logits, rows| {
            let y: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
            tape.softmax_cross_entropy(logits, &y)
        },
        |_, _, _| Ok(()),
    )?;
    Ok(ShallowClassifier { network })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (Tensor, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let t = i as f64 / 40.0;
            rows.push([-0.6 + 0.1 * (t * 7.0).sin(), 0.1 * (t * 3.0).cos()]);
            labels.push(0);
            rows.push([0.6 + 0.1 * (t * 5.0).cos(), 0.1 * (t * 11.0).sin()]);
            labels.push(1);
        }
        (Tensor::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs();
        let clf = train_classifier(&x, &y, 2, &ClassifierPlan::new(&[8], 60, 0.01, 1)).unwrap();
        let pred = clf.predict(&x).unwrap();
        let correct = pred.iter().zip(&y).filter(|(a, b)| a == b).count();
        assert!(correct as f64 / y.len() as f64 >= 0.99);
    }

    #[test]
    fn untrained_network_is_near_uniform() {
        let (x, y) = blobs();
        let clf = train_classifier(&x, &y, 2, &ClassifierPlan::new(&[8], 0, 0.01, 1)).unwrap();
        let p = clf.predict_proba(&x).unwrap();
        for row in p.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| (v - 0.5).abs() < 0.35));
        }
    }

    #[test]
    fn single_class_is_config_error() {
        let x = Tensor::zeros(&[3, 2]);
        assert!(matches!(
            train_classifier(&x, &[1, 1, 1], 2, &ClassifierPlan::new(&[4], 1, 0.01, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        let p = Tensor::from_rows(&[[0.4, 0.4, 0.2], [0.1, 0.2, 0.7]]).unwrap();
        assert_eq!(argmax_rows(&p), vec![0, 2]);
    }
}
