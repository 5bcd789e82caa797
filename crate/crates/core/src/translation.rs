//! Missing-sensor prediction: a small `tanh` regressor maps one sensor's
//! latent codes to another's, and that sensor's decoder turns the predicted
//! codes back into data.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fit_mlp, Activation, FitSchedule, Mlp, SensorAutoencoder};
use crate::numerics::{mse, Tensor};

fn default_hidden() -> Vec<usize> {
    vec![128, 64]
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorPlan {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(flatten)]
    pub schedule: FitSchedule,
}

/// `tanh` on every layer, so predictions stay inside `(-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRegressor {
    pub network: Mlp,
}

impl LatentRegressor {
    pub fn new(dim_in: usize, dim_out: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut widths = vec![dim_in];
        widths.extend(hidden);
        widths.push(dim_out);
        let acts = vec![Activation::Tanh; widths.len() - 1];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            network: Mlp::new(&widths, &acts, &mut rng)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorReport {
    /// Held-out per-element MSE of each fold's model.
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
    pub std_mse: f64,
    /// Held-out MSE of predicting the training folds' per-coordinate mean.
    pub baseline_mse: f64,
    /// Held-out MSE after each epoch, averaged over folds.
    pub heldout_curve: Vec<f64>,
}

/// `folds` disjoint index sets covering `0..n` once, sizes within one.
pub fn kfold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(Error::config(format!("{folds} folds over {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (i, idx) in order.into_iter().enumerate() {
        out[i % folds].push(idx);
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    Ok(out)
}

fn fit(x: &Tensor, y: &Tensor, plan: &RegressorPlan, mut after_epoch: impl FnMut(&Mlp) -> Result<()>) -> Result<LatentRegressor> {
    let mut reg = LatentRegressor::new(x.cols(), y.cols(), &plan.hidden, plan.schedule.seed)?;
    fit_mlp(
        &mut reg.network,
        x,
        &plan.schedule,
        |tape, out, rows| {
            let target = tape.leaf_owned(y.select_rows(rows)?);
            let diff = tape.sub(out, target)?;
            let sq = tape.square(diff);
            Ok(tape.mean(sq))
        },
        |_, net, _| after_epoch(net),
    )?;
    Ok(reg)
}

fn column_mean(y: &Tensor) -> Vec<f64> {
    let mut m = vec![0.0; y.cols()];
    for row in y.iter_rows() {
        m.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    m.iter_mut().for_each(|a| *a /= y.rows() as f64);
    m
}

/// Per-element MSE of predicting `mean` for every row of `y`.
pub fn mean_predictor_mse(mean: &[f64], y: &Tensor) -> Result<f64> {
    let rows: Vec<&[f64]> = (0..y.rows()).map(|_| mean).collect();
    mse(&Tensor::from_rows(&rows)?, y)
}

/// Cross-validates, then fits the returned regressor on every sample.
pub fn train_regressor(
    z_available: &Tensor,
    z_missing: &Tensor,
    plan: &RegressorPlan,
) -> Result<(LatentRegressor, RegressorReport)> {
    let (n, _) = z_available.dims2()?;
    let (m, _) = z_missing.dims2()?;
    if n != m {
        return Err(Error::Alignment(format!(
            "{n} available codes against {m} targets"
        )));
    }
    plan.schedule.validate()?;
    let folds = kfold_indices(n, plan.folds, plan.schedule.seed)?;
    let mut fold_mse = Vec::with_capacity(folds.len());
    let mut baseline = 0.0;
    let mut curve = vec![0.0; plan.schedule.epochs];
    for held in &folds {
        let train: Vec<usize> = (0..n).filter(|i| held.binary_search(i).is_err()).collect();
        let (xt, yt) = (z_available.select_rows(&train)?, z_missing.select_rows(&train)?);
        let (xh, yh) = (z_available.select_rows(held)?, z_missing.select_rows(held)?);
        let mut epoch = 0;
        let reg = fit(&xt, &yt, plan, |net| {
            curve[epoch] += mse(&net.forward(&xh)?, &yh)? / folds.len() as f64;
            epoch += 1;
            Ok(())
        })?;
        fold_mse.push(mse(&predict_latent(&reg, &xh)?, &yh)?);
        baseline += mean_predictor_mse(&column_mean(&yt), &yh)? / folds.len() as f64;
    }
    let mean_mse = fold_mse.iter().sum::<f64>() / fold_mse.len() as f64;
    let var = fold_mse.iter().map(|v| (v - mean_mse).powi(2)).sum::<f64>() / fold_mse.len() as f64;
    let reg = fit(z_available, z_missing, plan, |_| Ok(()))?;
    Ok((
        reg,
        RegressorReport {
            fold_mse,
            mean_mse,
            std_mse: var.sqrt(),
            baseline_mse: baseline,
            heldout_curve: curve,
        },
    ))
}

pub fn predict_latent(reg: &LatentRegressor, z_available: &Tensor) -> Result<Tensor> {
    reg.network.forward(z_available)
}

/// Predicted codes decoded into the missing sensor's data space.
pub fn translate(reg: &LatentRegressor, decoder: &SensorAutoencoder, z_available: &Tensor) -> Result<Tensor> {
    if reg.network.out_dim() != decoder.latent_dim() {
        return Err(Error::config(format!(
            "regressor predicts {} dims, decoder of {} expects {}",
            reg.network.out_dim(),
            decoder.sensor_id(),
            decoder.latent_dim()
        )));
    }
    decoder.decode(&predict_latent(reg, z_available)?)
}
