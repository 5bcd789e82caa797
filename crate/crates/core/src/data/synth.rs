//! Heterogeneous views of one shared class structure.
//!
//! Samples are drawn from Gaussian class clusters in a low-dimensional truth
//! space. Each sensor observes the truth through its own fixed random map
//! (stacked affine + tanh layers), adds Gaussian noise, and is min-max
//! normalized.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{normalize_minmax, MultimodalDataset, SensorData};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub id: String,
    pub output_dim: usize,
    /// Number of affine + tanh layers. Zero observes the truth directly.
    pub depth: usize,
    pub noise: f64,
    /// Probability that a channel is blanked to a constant.
    #[serde(default)]
    pub channel_dropout: f64,
}

impl ViewConfig {
    pub fn new(id: impl Into<String>, output_dim: usize, depth: usize, noise: f64) -> Self {
        Self {
            id: id.into(),
            output_dim,
            depth,
            noise,
            channel_dropout: 0.0,
        }
    }
}

fn default_spread() -> f64 {
    0.25
}

fn default_gain() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub truth_dim: usize,
    /// Standard deviation of each class cluster around its center; centers
    /// are standard normal.
    #[serde(default = "default_spread")]
    pub class_spread: f64,
    /// Scale of the random view weights relative to `1/sqrt(fan_in)`.
    #[serde(default = "default_gain")]
    pub map_gain: f64,
    pub views: Vec<ViewConfig>,
    pub seed: u64,
}

impl SynthConfig {
    /// Three balanced classes of 200 samples seen by a 20-channel and a
    /// 6-channel sensor, noise 0.05.
    pub fn two_sensor(seed: u64) -> Self {
        Self {
            n_classes: 3,
            samples_per_class: 200,
            truth_dim: 4,
            class_spread: default_spread(),
            map_gain: default_gain(),
            views: vec![
                ViewConfig::new("A", 20, 2, 0.05),
                ViewConfig::new("B", 6, 2, 0.05),
            ],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config(format!("{} classes, need at least 2", self.n_classes)));
        }
        if self.samples_per_class == 0 || self.truth_dim == 0 {
            return Err(Error::config("samples per class and truth dim must be positive"));
        }
        if self.views.is_empty() {
            return Err(Error::config("no sensor views"));
        }
        if !(self.class_spread >= 0.0) || !(self.map_gain >= 0.0) {
            return Err(Error::config("spread and gain must be non-negative"));
        }
        for v in &self.views {
            if v.output_dim == 0 {
                return Err(Error::config(format!("view {} has zero width", v.id)));
            }
            if !(v.noise >= 0.0) {
                return Err(Error::config(format!("view {} noise {} is negative", v.id, v.noise)));
            }
            if !(0.0..1.0).contains(&v.channel_dropout) {
                return Err(Error::config(format!(
                    "view {} channel dropout {} outside [0, 1)",
                    v.id, v.channel_dropout
                )));
            }
            if v.depth == 0 && v.output_dim != self.truth_dim {
                return Err(Error::config(format!(
                    "view {} has depth 0 so its width must equal the truth dim {}",
                    v.id, self.truth_dim
                )));
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

fn observe(truth: &Tensor, view: &ViewConfig, gain: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let mut x = truth.clone();
    for _ in 0..view.depth {
        let fan_in = x.cols();
        let w = Tensor::matrix(
            fan_in,
            view.output_dim,
            gaussian(rng, fan_in * view.output_dim, gain / (fan_in as f64).sqrt()),
        )?;
        let b = Tensor::matrix(1, view.output_dim, gaussian(rng, view.output_dim, 0.25))?;
        x = crate::numerics::tanh_forward(&crate::numerics::affine(&x, &w, &b)?);
    }
    if view.noise > 0.0 {
        let noise = Normal::new(0.0, view.noise).map_err(|e| Error::config(e.to_string()))?;
        x.values_mut().iter_mut().for_each(|v| *v += noise.sample(rng));
    }
    if view.channel_dropout > 0.0 {
        let c = x.cols();
        let dropped: Vec<bool> = (0..c).map(|_| rng.random::<f64>() < view.channel_dropout).collect();
        for row in x.values_mut().chunks_exact_mut(c) {
            row.iter_mut().zip(&dropped).filter(|(_, &d)| d).for_each(|(v, _)| *v = 0.0);
        }
    }
    Ok(x)
}

/// Sample `i` belongs to class `i mod C`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<MultimodalDataset> {
    cfg.validate()?;
    let c = cfg.n_classes;
    let n = c * cfg.samples_per_class;
    let t = cfg.truth_dim;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = gaussian(&mut rng, c * t, 1.0);
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let mut truth = Vec::with_capacity(n * t);
    for &l in &labels {
        let offsets = gaussian(&mut rng, t, cfg.class_spread);
        truth.extend(centers[l * t..(l + 1) * t].iter().zip(offsets).map(|(m, o)| m + o));
    }
    let truth = Tensor::matrix(n, t, truth)?;

    let mut sensors = Vec::with_capacity(cfg.views.len());
    for (k, view) in cfg.views.iter().enumerate() {
        let mut view_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        view_rng.set_stream(k as u64 + 1);
        sensors.push(SensorData {
            id: view.id.clone(),
            data: observe(&truth, view, cfg.map_gain, &mut view_rng)?,
        });
    }
    let raw = MultimodalDataset::new(sensors, labels, c)?;
    Ok(normalize_minmax(&raw)?.0)
}
