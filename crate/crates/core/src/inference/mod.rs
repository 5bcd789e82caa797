//! Classification in the shared manifold and evaluation metrics.

mod classifier;
mod knn;
mod metrics;

pub use classifier::{argmax_rows, train_classifier, ClassifierPlan, ShallowClassifier};
pub use knn::classify_knn_classavg;
pub use metrics::{compute_metrics, silhouette, MetricsReport};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EmbeddingSet;
use crate::numerics::Tensor;

/// Row-wise concatenation of aligned embedding sets, in the given order.
pub fn fuse_embeddings(sets: &[&EmbeddingSet]) -> Result<Tensor> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Usage("fusing zero embedding sets".into()))?;
    for s in &sets[1..] {
        if s.sample_ids != first.sample_ids {
            return Err(Error::Alignment(format!(
                "sensors {} and {} list different samples",
                first.sensor_id, s.sensor_id
            )));
        }
    }
    let parts: Vec<&Tensor> = sets.iter().map(|s| &s.z).collect();
    Tensor::hstack(&parts)
}

/// One voter in an ensemble.
#[derive(Debug, Clone)]
pub enum Member {
    Knn {
        train: Tensor,
        labels: Vec<usize>,
        k: Option<usize>,
    },
    Network(ShallowClassifier),
}

impl Member {
    /// Class probabilities; the nearest-neighbour rule puts all mass on its decision.
    pub fn probabilities(&self, x: &Tensor, n_classes: usize) -> Result<Tensor> {
        match self {
            Member::Knn { train, labels, k } => {
                let pred = classify_knn_classavg(train, labels, x, *k)?;
                let mut p = Tensor::zeros(&[pred.len(), n_classes]);
                for (i, &c) in pred.iter().enumerate() {
                    p.row_mut(i)[c] = 1.0;
                }
                Ok(p)
            }
            Member::Network(clf) => {
                if clf.n_classes() != n_classes {
                    return Err(Error::dim(format!(
                        "network has {} outputs, ensemble expects {n_classes}",
                        clf.n_classes()
                    )));
                }
                clf.predict_proba(x)
            }
        }
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        match self {
            Member::Knn { train, labels, k } => classify_knn_classavg(train, labels, x, *k),
            Member::Network(clf) => clf.predict(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    /// Mean of member probability vectors.
    #[default]
    Average,
    /// Most frequent member decision.
    Majority,
}

/// Ensemble decision, lowest class index on ties.
pub fn ensemble_predict(
    members: &[Member],
    x: &Tensor,
    n_classes: usize,
    rule: Combine,
) -> Result<Vec<usize>> {
    if members.is_empty() {
        return Err(Error::Usage("ensemble without members".into()));
    }
    let n = x.rows();
    let mut acc = Tensor::zeros(&[n, n_classes]);
    for m in members {
        let p = match rule {
            Combine::Average => m.probabilities(x, n_classes)?,
            Combine::Majority => {
                let mut votes = Tensor::zeros(&[n, n_classes]);
                for (i, c) in m.predict(x)?.into_iter().enumerate() {
                    votes.row_mut(i)[c] = 1.0;
                }
                votes
            }
        };
        acc.values_mut()
            .iter_mut()
            .zip(p.values())
            .for_each(|(a, v)| *a += v);
    }
    let scale = 1.0 / members.len() as f64;
    Ok(argmax_rows(&acc.map(|v| v * scale)))
}

/// How a unified classifier is built from one sensor's embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    Knn { k: Option<usize> },
    Network(ClassifierPlan),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossEntry {
    pub train_sensor: String,
    pub test_sensor: String,
    pub report: MetricsReport,
}

/// Trains one classifier per sensor in `train` and evaluates it on every
/// sensor in `test`: the full train-sensor × test-sensor matrix.
pub fn unified_cross_eval(
    train: &[&EmbeddingSet],
    test: &[&EmbeddingSet],
    method: &Method,
    n_classes: usize,
) -> Result<Vec<CrossEntry>> {
    let dims: Vec<usize> = train.iter().chain(test).map(|s| s.dim()).collect();
    if dims.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Alignment(format!("latent widths differ: {dims:?}")));
    }
    let rows: Vec<Vec<CrossEntry>> = train
        .par_iter()
        .map(|x| {
            let member = match method {
                Method::Knn { k } => Member::Knn {
                    train: x.z.clone(),
                    labels: x.labels.clone(),
                    k: *k,
                },
                Method::Network(plan) => {
                    Member::Network(train_classifier(&x.z, &x.labels, n_classes, plan)?)
                }
            };
            test.iter()
                .map(|y| {
                    let pred = member.predict(&y.z)?;
                    Ok(CrossEntry {
                        train_sensor: x.sensor_id.clone(),
                        test_sensor: y.sensor_id.clone(),
                        report: compute_metrics(&y.labels, &pred, n_classes)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}
