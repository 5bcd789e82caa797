//! Per-sensor autoencoders mapping into a shared, `tanh`-bounded latent space.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MultimodalDataset;
use crate::error::{Error, Result};
use crate::numerics::{checkpoint, glorot_uniform, ops, Gradients, Tape, Tensor, Var};

/// Shared latent dimensionality used by the published presets.
pub const DEFAULT_LATENT_DIM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: Tensor) -> Tensor {
        match self {
            Activation::Identity => x,
            Activation::Tanh => ops::tanh_forward(&x),
            Activation::Sigmoid => ops::sigmoid_forward(&x),
        }
    }

    fn record(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Dense layer `activation(x · W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// Stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Tape handles for an [`Mlp`]'s parameters, one `(W, b)` pair per layer.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    vars: Vec<(Var, Var)>,
}

impl Mlp {
    /// `widths` lists every layer boundary, input first; `activations` has one
    /// entry per layer. Weights are Glorot-uniform, biases zero.
    pub fn new(widths: &[usize], activations: &[Activation], rng: &mut ChaCha8Rng) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::config(format!(
                "{} widths need {} activations, got {}",
                widths.len(),
                widths.len().saturating_sub(1),
                activations.len()
            )));
        }
        if let Some(pos) = widths.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("layer width {pos} is zero")));
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Layer {
                weight: glorot_uniform(w[0], w[1], rng),
                bias: Tensor::zeros(&[1, w[1]]),
                activation,
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, width) = x.dims2()?;
        if width != self.in_dim() {
            return Err(Error::dim(format!(
                "input width {width}, network expects {}",
                self.in_dim()
            )));
        }
        let mut h = x.detached();
        for l in &self.layers {
            h = l.activation.apply(ops::affine(&h, &l.weight, &l.bias)?);
        }
        Ok(h)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        BoundMlp {
            vars: self
                .layers
                .iter()
                .map(|l| (tape.leaf(&l.weight), tape.leaf(&l.bias)))
                .collect(),
        }
    }

    pub fn apply(&self, tape: &mut Tape, bound: &BoundMlp, x: Var) -> Result<Var> {
        let width = tape.value(x).dims2()?.1;
        if width != self.in_dim() {
            return Err(Error::dim(format!(
                "input width {width}, network expects {}",
                self.in_dim()
            )));
        }
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().zip(&bound.vars) {
            let z = tape.affine(h, w, b)?;
            h = l.activation.record(tape, z);
        }
        Ok(h)
    }

    /// Add tape gradients for `bound` into the layers' gradient buffers.
    pub fn absorb_grads(&mut self, bound: &BoundMlp, grads: &Gradients) -> Result<()> {
        for (l, &(w, b)) in self.layers.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(w) {
                l.weight.accumulate_grad(g)?;
            }
            if let Some(g) = grads.get(b) {
                l.bias.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Ensure every parameter carries a gradient buffer, zeros where absent.
    pub fn ensure_grads(&mut self) {
        for p in self.params_mut() {
            if p.grad().is_none() {
                let zeros = vec![0.0; p.len()];
                p.accumulate_grad(&zeros).expect("same length");
            }
        }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.{i}.weight"), &l.weight),
                    (format!("{prefix}.{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn load_named(&mut self, prefix: &str, source: &[(String, Tensor)]) -> Result<()> {
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (suffix, slot) in [("weight", &mut l.weight), ("bias", &mut l.bias)] {
                let name = format!("{prefix}.{i}.{suffix}");
                let t = source
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, t)| t)
                    .ok_or_else(|| Error::Validation(format!("checkpoint lacks {name}")))?;
                if !t.same_shape(slot) {
                    return Err(Error::Validation(format!(
                        "{name} has shape {:?}, model expects {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                *slot = t.detached();
            }
        }
        Ok(())
    }
}

/// Minibatch schedule shared by the small supervised networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl FitSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Trains `mlp` on the rows of `x` with Adam. `loss` receives the tape, the
/// network output for the batch and the batch's row indices; `after_epoch`
/// sees the epoch number, the network and the mean batch loss.
pub(crate) fn fit_mlp(
    mlp: &mut Mlp,
    x: &Tensor,
    schedule: &FitSchedule,
    mut loss: impl FnMut(&mut Tape, Var, &[usize]) -> Result<Var>,
    mut after_epoch: impl FnMut(usize, &Mlp, f64) -> Result<()>,
) -> Result<()> {
    use rand::seq::SliceRandom;

    schedule.validate()?;
    let n = x.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut adam = crate::numerics::Adam::new(schedule.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(schedule.batch_size) {
            let xb = x.select_rows(batch)?;
            let mut tape = Tape::new();
            let bound = mlp.bind(&mut tape);
            let input = tape.leaf_owned(xb);
            let out = mlp.apply(&mut tape, &bound, input)?;
            let l = loss(&mut tape, out, batch)?;
            let value = tape.scalar(l);
            if !value.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss {value} at epoch {epoch}, batch of {} rows",
                    batch.len()
                )));
            }
            let grads = tape.backward(l)?;
            mlp.absorb_grads(&bound, &grads)?;
            mlp.ensure_grads();
            adam.step(mlp.params_mut())?;
            total += value * batch.len() as f64;
        }
        after_epoch(epoch, mlp, total / n.max(1) as f64)?;
    }
    Ok(())
}

fn default_hidden() -> Vec<usize> {
    vec![128, 64]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

/// Description of one sensor's encoder/decoder pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub sensor_id: String,
    pub input_dim: usize,
    pub latent_dim: usize,
    #[serde(default = "default_hidden")]
    pub encoder_hidden: Vec<usize>,
    /// Mirrors `encoder_hidden` when absent.
    #[serde(default)]
    pub decoder_hidden: Option<Vec<usize>>,
    #[serde(default = "default_activation")]
    pub hidden_activation: Activation,
}

impl AutoencoderConfig {
    pub fn new(sensor_id: impl Into<String>, input_dim: usize, latent_dim: usize) -> Self {
        Self {
            sensor_id: sensor_id.into(),
            input_dim,
            latent_dim,
            encoder_hidden: default_hidden(),
            decoder_hidden: None,
            hidden_activation: default_activation(),
        }
    }

    pub fn with_hidden(mut self, hidden: &[usize]) -> Self {
        self.encoder_hidden = hidden.to_vec();
        self
    }

    pub fn decoder_widths(&self) -> Vec<usize> {
        self.decoder_hidden
            .clone()
            .unwrap_or_else(|| self.encoder_hidden.iter().rev().copied().collect())
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(Error::config(format!(
                "sensor {}: input_dim and latent_dim must be positive",
                self.sensor_id
            )));
        }
        if self.sensor_id.is_empty() {
            return Err(Error::config("sensor_id must not be empty"));
        }
        Ok(())
    }

    /// Closed-form parameter count of the encoder plus decoder.
    pub fn param_count(&self) -> usize {
        fn stack(widths: &[usize]) -> usize {
            widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
        }
        stack(&self.encoder_widths()) + stack(&self.full_decoder_widths())
    }

    fn encoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.encoder_hidden);
        w.push(self.latent_dim);
        w
    }

    fn full_decoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.latent_dim];
        w.extend(self.decoder_widths());
        w.push(self.input_dim);
        w
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }
}

/// Encoder `e_X` and decoder `d_X` for one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorAutoencoder {
    config: AutoencoderConfig,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// Tape handles for both halves of an autoencoder.
pub struct BoundAutoencoder {
    pub encoder: BoundMlp,
    pub decoder: BoundMlp,
}

impl SensorAutoencoder {
    /// Build with Glorot weights drawn from a generator seeded by `seed`.
    pub fn build(config: &AutoencoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = config.hidden_activation;

        let enc_widths = config.encoder_widths();
        let mut enc_acts = vec![act; enc_widths.len() - 2];
        enc_acts.push(Activation::Tanh);
        let encoder = Mlp::new(&enc_widths, &enc_acts, &mut rng)?;

        let dec_widths = config.full_decoder_widths();
        let mut dec_acts = vec![act; dec_widths.len() - 2];
        dec_acts.push(Activation::Sigmoid);
        let decoder = Mlp::new(&dec_widths, &dec_acts, &mut rng)?;

        Ok(Self {
            config: config.clone(),
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    pub fn sensor_id(&self) -> &str {
        &self.config.sensor_id
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    /// Latent codes, every coordinate strictly inside `(-1, 1)`.
    pub fn encode(&self, batch: &Tensor) -> Result<Tensor> {
        self.encoder.forward(batch)
    }

    /// Reconstructions in `(0, 1)`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.forward(z)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundAutoencoder {
        BoundAutoencoder {
            encoder: self.encoder.bind(tape),
            decoder: self.decoder.bind(tape),
        }
    }

    pub fn absorb_grads(&mut self, bound: &BoundAutoencoder, grads: &Gradients) -> Result<()> {
        self.encoder.absorb_grads(&bound.encoder, grads)?;
        self.decoder.absorb_grads(&bound.decoder, grads)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.encoder.params_mut().chain(self.decoder.params_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.encoder.params().chain(self.decoder.params())
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.encoder.named_params("encoder");
        v.extend(self.decoder.named_params("decoder"));
        v
    }

    /// Serialized parameters in the `MALN1` layout.
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let named = self.named_params();
        let refs: Vec<(&str, &Tensor)> = named.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        checkpoint::encode_tensors(&refs)
    }

    /// SHA-256 of the encoder parameters, hex encoded.
    pub fn encoder_digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let named = self.encoder.named_params("encoder");
        let refs: Vec<(&str, &Tensor)> = named.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        hex::encode(Sha256::digest(checkpoint::encode_tensors(&refs)))
    }

    /// Write `<stem>.toml` (config) and `<stem>.maln` (parameters) into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let cfg = dir.join(format!("{stem}.toml"));
        std::fs::write(&cfg, self.config.to_toml()).map_err(|e| Error::file(&cfg, e))?;
        let params = dir.join(format!("{stem}.maln"));
        std::fs::write(&params, self.checkpoint_bytes()).map_err(|e| Error::file(&params, e))
    }

    /// Embeds rows `indices` of this model's sensor in `dataset`.
    pub fn embed(&self, dataset: &MultimodalDataset, indices: &[usize]) -> Result<EmbeddingSet> {
        let rows = dataset.rows(self.sensor_id(), indices)?;
        let z = self.encode(&rows)?;
        let labels = indices.iter().map(|&i| dataset.labels()[i]).collect();
        EmbeddingSet::new(self.sensor_id(), z, labels, indices.to_vec())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let cfg_path = dir.join(format!("{stem}.toml"));
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::file(&cfg_path, e))?;
        let config = AutoencoderConfig::from_toml(&text)?;
        let tensors = checkpoint::load_tensors(&dir.join(format!("{stem}.maln")))?;
        let mut model = Self::build(&config, 0)?;
        model.encoder.load_named("encoder", &tensors)?;
        model.decoder.load_named("decoder", &tensors)?;
        Ok(model)
    }
}

/// Latent vectors of one sensor, tagged with labels and dataset sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub sensor_id: String,
    pub z: Tensor,
    pub labels: Vec<usize>,
    pub sample_ids: Vec<usize>,
}

impl EmbeddingSet {
    pub fn new(
        sensor_id: impl Into<String>,
        z: Tensor,
        labels: Vec<usize>,
        sample_ids: Vec<usize>,
    ) -> Result<Self> {
        let (n, _) = z.dims2()?;
        if labels.len() != n || sample_ids.len() != n {
            return Err(Error::Alignment(format!(
                "{n} embeddings, {} labels, {} sample ids",
                labels.len(),
                sample_ids.len()
            )));
        }
        if let Some(v) = z.values().iter().find(|v| !(v.abs() < 1.0)) {
            return Err(Error::Validation(format!(
                "embedding value {v} outside (-1, 1)"
            )));
        }
        Ok(Self {
            sensor_id: sensor_id.into(),
            z,
            labels,
            sample_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.z.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.z.row(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> AutoencoderConfig {
        AutoencoderConfig::new("hsi", 8, 4).with_hidden(&[16])
    }

    #[test]
    fn parameter_shapes_follow_config() {
        let m = SensorAutoencoder::build(&small(), 1).unwrap();
        let shapes: Vec<_> = m.encoder.params().map(|p| p.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![8, 16], vec![1, 16], vec![16, 4], vec![1, 4]]);
        assert_eq!(m.param_count(), small().param_count());
        assert_eq!(m.decoder.out_dim(), 8);
        assert!(m.params().skip(1).step_by(2).all(|b| b.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn empty_hidden_is_single_affine() {
        let m = SensorAutoencoder::build(&small().with_hidden(&[]), 1).unwrap();
        assert_eq!(m.encoder.layers().len(), 1);
        assert_eq!(m.encoder.layers()[0].weight.shape(), &[8, 4]);
    }

    #[test]
    fn glorot_bounds_hold() {
        let m = SensorAutoencoder::build(&small(), 3).unwrap();
        let limit = (6.0f64 / 24.0).sqrt();
        assert!(m.encoder.layers()[0]
            .weight
            .values()
            .iter()
            .all(|v| v.abs() <= limit));
    }

    #[test]
    fn zero_width_rejected() {
        let bad = small().with_hidden(&[0]);
        assert!(matches!(SensorAutoencoder::build(&bad, 0), Err(Error::Config(_))));
        let bad = AutoencoderConfig::new("x", 3, 0);
        assert!(matches!(SensorAutoencoder::build(&bad, 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_weights_give_zero_latent_and_half_output() {
        let mut m = SensorAutoencoder::build(&small(), 5).unwrap();
        m.params_mut().for_each(|p| p.values_mut().fill(0.0));
        let x = Tensor::full(&[3, 8], 0.7);
        let z = m.encode(&x).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        let y = m.decode(&z).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let m = SensorAutoencoder::build(&small(), 5).unwrap();
        assert!(matches!(m.encode(&Tensor::zeros(&[2, 7])), Err(Error::Dimension(_))));
        assert!(matches!(m.decode(&Tensor::zeros(&[2, 3])), Err(Error::Dimension(_))));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = SensorAutoencoder::build(&small(), 11).unwrap();
        let b = SensorAutoencoder::build(&small(), 11).unwrap();
        let c = SensorAutoencoder::build(&small(), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn save_load_reproduces_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let m = SensorAutoencoder::build(&small(), 9).unwrap();
        m.save(dir.path(), "model_a").unwrap();
        let back = SensorAutoencoder::load(dir.path(), "model_a").unwrap();
        let x = Tensor::full(&[2, 8], 0.25);
        let (z1, z2) = (m.encode(&x).unwrap(), back.encode(&x).unwrap());
        assert_eq!(z1.values(), z2.values());
        let (r1, r2) = (m.decode(&z1).unwrap(), back.decode(&z2).unwrap());
        assert_eq!(r1.values(), r2.values());
        assert_eq!(m.checkpoint_bytes(), back.checkpoint_bytes());
    }

    #[test]
    fn embedding_set_validates() {
        let z = Tensor::from_rows(&[[0.1, 0.2], [0.3, -0.4]]).unwrap();
        assert!(EmbeddingSet::new("a", z.clone(), vec![0, 1], vec![0, 1]).is_ok());
        assert!(matches!(
            EmbeddingSet::new("a", z, vec![0], vec![0, 1]),
            Err(Error::Alignment(_))
        ));
        let z = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(EmbeddingSet::new("a", z, vec![0], vec![0]).is_err());
    }
}
