//! Checkpoint-driven training of two sensor autoencoders into one shared
//! manifold, the alternating variant, and mapping of additional sensors.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MultimodalDataset;
use crate::error::{Error, Result};
use crate::inference::silhouette;
use crate::losses::{
    record_objective, record_sensor_c, LossBreakdown, LossConfig, TripletLatents,
};
use crate::mining::{mine_checkpoint, Difficulty, MiningConfig, TripletBatch};
use crate::model::{EmbeddingSet, SensorAutoencoder};
use crate::numerics::{Adam, Tape, Tensor};

/// Which sensor supplies anchor, positive and negative in the triplet terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TripletSensor {
    A,
    B,
    /// Sensor A on odd checkpoints, sensor B on even ones.
    #[serde(rename = "alt", alias = "alternating")]
    Alternating,
}

impl std::str::FromStr for TripletSensor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Self::A),
            "B" | "b" => Ok(Self::B),
            "alt" | "alternating" => Ok(Self::Alternating),
            other => Err(Error::config(format!(
                "unknown triplet sensor {other:?}; expected A, B or alt"
            ))),
        }
    }
}

impl std::fmt::Display for TripletSensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::A => "A",
            Self::B => "B",
            Self::Alternating => "alt",
        })
    }
}

impl TripletSensor {
    /// Whether checkpoint `index` (1-based) uses sensor A as triplet sensor.
    pub fn uses_a(self, index: usize) -> bool {
        match self {
            Self::A => true,
            Self::B => false,
            Self::Alternating => index % 2 == 1,
        }
    }
}

fn default_silhouette_limit() -> usize {
    4000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub n_checkpoints: usize,
    pub epochs_per_checkpoint: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub triplet_sensor: TripletSensor,
    pub seed: u64,
    pub loss: LossConfig,
    pub mining: MiningConfig,
    /// Pooled embeddings beyond this many points are subsampled with a fixed
    /// stride before the silhouette is computed.
    #[serde(default = "default_silhouette_limit")]
    pub silhouette_limit: usize,
}

impl TrainingPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_checkpoints == 0 {
            return Err(Error::config("n_checkpoints must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        self.loss.validate()?;
        self.mining.validate()
    }

    /// Mining settings for checkpoint `index`: margin tied to the loss and a
    /// per-checkpoint seed.
    pub fn mining_for(&self, index: usize) -> MiningConfig {
        MiningConfig {
            margin: self.loss.margin_alpha,
            seed: derive_seed(self.seed, 1, index as u64),
            ..self.mining.clone()
        }
    }
}

pub(crate) fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | index);
    rng.random()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningCounts {
    pub hard: usize,
    pub semi_hard: usize,
    pub easy: usize,
}

impl MiningCounts {
    fn of(batch: &TripletBatch) -> Self {
        Self {
            hard: batch.count(Difficulty::Hard),
            semi_hard: batch.count(Difficulty::SemiHard),
            easy: batch.count(Difficulty::Easy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    /// 1-based.
    pub index: usize,
    pub triplet_sensor: String,
    pub mining: MiningCounts,
    /// Mean loss terms per epoch.
    pub history: Vec<LossBreakdown>,
    /// Silhouette of both sensors' training embeddings, pooled.
    pub silhouette: f64,
    pub seconds: f64,
    pub snapshot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub initial_silhouette: f64,
    pub checkpoints: Vec<CheckpointRecord>,
}

impl TrainingReport {
    pub fn final_silhouette(&self) -> f64 {
        self.checkpoints
            .last()
            .map_or(self.initial_silhouette, |c| c.silhouette)
    }
}

/// Hooks called during training. Both methods default to doing nothing.
pub trait TrainingObserver {
    fn epoch(&mut self, _checkpoint: usize, _epoch: usize, _loss: &LossBreakdown) {}

    /// Called after each checkpoint; may persist the models and return a
    /// reference to the snapshot.
    fn checkpoint(
        &mut self,
        _record: &CheckpointRecord,
        _model_a: &SensorAutoencoder,
        _model_b: &SensorAutoencoder,
    ) -> Result<Option<String>> {
        Ok(None)
    }
}

impl TrainingObserver for () {}

/// Silhouette of `a` and `b` stacked, every `stride`-th point when the pool
/// exceeds `limit`.
pub fn pooled_silhouette(a: &EmbeddingSet, b: &EmbeddingSet, limit: usize) -> Result<f64> {
    let z = Tensor::vstack(&[&a.z, &b.z])?;
    let labels: Vec<usize> = a.labels.iter().chain(&b.labels).copied().collect();
    if limit == 0 || z.rows() <= limit {
        return silhouette(&z, &labels);
    }
    let stride = z.rows().div_ceil(limit);
    let keep: Vec<usize> = (0..z.rows()).step_by(stride).collect();
    let sub_labels: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
    silhouette(&z.select_rows(&keep)?, &sub_labels)
}

fn check_pair(dataset: &MultimodalDataset, a: &SensorAutoencoder, b: &SensorAutoencoder) -> Result<()> {
    if a.latent_dim() != b.latent_dim() {
        return Err(Error::config(format!(
            "latent dims differ: {} has {}, {} has {}",
            a.sensor_id(),
            a.latent_dim(),
            b.sensor_id(),
            b.latent_dim()
        )));
    }
    if a.sensor_id() == b.sensor_id() {
        return Err(Error::config("both models describe the same sensor"));
    }
    for m in [a, b] {
        let dim = dataset.sensor(m.sensor_id())?.dim();
        if dim != m.input_dim() {
            return Err(Error::config(format!(
                "sensor {} has width {dim}, model expects {}",
                m.sensor_id(),
                m.input_dim()
            )));
        }
    }
    dataset.check_unit_range()
}

/// One model with its optimizer, so Adam state follows the model when the
/// triplet role swaps.
struct Trainee<'m> {
    model: &'m mut SensorAutoencoder,
    adam: Adam,
}

/// One optimizer step on a minibatch of triplets; `primary` is the triplet
/// sensor. Returns the minibatch loss breakdown.
fn step<'m>(
    dataset: &MultimodalDataset,
    primary: &mut Trainee<'m>,
    secondary: &mut Trainee<'m>,
    triplets: &TripletBatch,
    rows: &[usize],
    loss: &LossConfig,
) -> Result<LossBreakdown> {
    let k = rows.len();
    let pick = |v: &[usize]| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
    let (a, p, n, b) = (
        pick(&triplets.anchor_a),
        pick(&triplets.positive_a),
        pick(&triplets.negative_a),
        pick(&triplets.anchor_b),
    );
    let apn: Vec<usize> = a.iter().chain(&p).chain(&n).copied().collect();
    let s_primary = dataset.rows(primary.model.sensor_id(), &apn)?;
    let s_secondary = dataset.rows(secondary.model.sensor_id(), &b)?;

    let mut tape = Tape::new();
    let bound_p = primary.model.bind(&mut tape);
    let bound_s = secondary.model.bind(&mut tape);
    let sp = tape.leaf_owned(s_primary);
    let sb = tape.leaf_owned(s_secondary);

    let zp = primary.model.encoder.apply(&mut tape, &bound_p.encoder, sp)?;
    let zb = secondary.model.encoder.apply(&mut tape, &bound_s.encoder, sb)?;
    let rp = primary.model.decoder.apply(&mut tape, &bound_p.decoder, zp)?;
    let rb = secondary.model.decoder.apply(&mut tape, &bound_s.decoder, zb)?;

    let mut split = |v| -> Result<[crate::numerics::Var; 3]> {
        Ok([
            tape.slice_rows(v, 0, k)?,
            tape.slice_rows(v, k, k)?,
            tape.slice_rows(v, 2 * k, k)?,
        ])
    };
    let [za, zpos, zneg] = split(zp)?;
    let [oa, opos, oneg] = split(sp)?;
    let [ra, rpos, rneg] = split(rp)?;

    let latents = TripletLatents {
        anchor_a: za,
        positive_a: zpos,
        negative_a: zneg,
        anchor_b: zb,
    };
    let obj = record_objective(
        &mut tape,
        &latents,
        [(oa, ra), (opos, rpos), (oneg, rneg), (sb, rb)],
        loss,
    )?;
    let breakdown = obj.breakdown(&tape);
    if !breakdown.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite loss {breakdown:?} on triplet rows {:?} (anchor ids {:?})",
            &rows[..rows.len().min(16)],
            &a[..a.len().min(16)]
        )));
    }
    let grads = tape.backward(obj.total)?;
    if !grads.all_finite() {
        return Err(Error::Divergence(format!(
            "non-finite gradients at loss {breakdown:?}, anchor ids {:?}",
            &a[..a.len().min(16)]
        )));
    }
    primary.model.absorb_grads(&bound_p, &grads)?;
    secondary.model.absorb_grads(&bound_s, &grads)?;
    for t in [&mut *primary, &mut *secondary] {
        t.model.encoder.ensure_grads();
        t.model.decoder.ensure_grads();
        t.adam.step(t.model.params_mut())?;
    }
    Ok(breakdown)
}

/// Trains `model_a` and `model_b` in place on the samples `train`.
///
/// Every checkpoint mines a fresh triplet pool (random for the first, then
/// against the embeddings of the models as they stand), shuffles it each
/// epoch and takes Adam steps on minibatches of the full objective.
pub fn train_commanet(
    dataset: &MultimodalDataset,
    model_a: &mut SensorAutoencoder,
    model_b: &mut SensorAutoencoder,
    train: &[usize],
    plan: &TrainingPlan,
    observer: &mut dyn TrainingObserver,
) -> Result<TrainingReport> {
    plan.validate()?;
    check_pair(dataset, model_a, model_b)?;
    if train.is_empty() {
        return Err(Error::Usage("no training samples".into()));
    }
    let labels: Vec<usize> = train.iter().map(|&i| dataset.labels()[i]).collect();
    let initial_silhouette = pooled_silhouette(
        &model_a.embed(dataset, train)?,
        &model_b.embed(dataset, train)?,
        plan.silhouette_limit,
    )?;
    let mut ta = Trainee {
        model: model_a,
        adam: Adam::new(plan.learning_rate),
    };
    let mut tb = Trainee {
        model: model_b,
        adam: Adam::new(plan.learning_rate),
    };

    let mut records = Vec::with_capacity(plan.n_checkpoints);
    for index in 1..=plan.n_checkpoints {
        let started = Instant::now();
        let uses_a = plan.triplet_sensor.uses_a(index);
        let (primary, secondary) = if uses_a {
            (&mut ta, &mut tb)
        } else {
            (&mut tb, &mut ta)
        };
        let cfg = plan.mining_for(index);
        let triplets = if index == 1 {
            mine_checkpoint(&labels, train, None, &cfg)?
        } else {
            let ep = primary.model.embed(dataset, train)?;
            let es = secondary.model.embed(dataset, train)?;
            mine_checkpoint(&labels, train, Some((&ep, &es)), &cfg)?
        };

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, 2, index as u64));
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        let mut history = Vec::with_capacity(plan.epochs_per_checkpoint);
        for epoch in 0..plan.epochs_per_checkpoint {
            order.shuffle(&mut rng);
            let mut mean = LossBreakdown::default();
            for rows in order.chunks(plan.batch_size) {
                let b = step(dataset, primary, secondary, &triplets, rows, &plan.loss)?;
                mean.accumulate(&b, rows.len() as f64 / order.len() as f64);
            }
            observer.epoch(index, epoch, &mean);
            history.push(mean);
        }

        let sil = pooled_silhouette(
            &ta.model.embed(dataset, train)?,
            &tb.model.embed(dataset, train)?,
            plan.silhouette_limit,
        )?;
        let mut record = CheckpointRecord {
            index,
            triplet_sensor: if uses_a { "A" } else { "B" }.into(),
            mining: MiningCounts::of(&triplets),
            history,
            silhouette: sil,
            seconds: started.elapsed().as_secs_f64(),
            snapshot: None,
        };
        record.snapshot = observer.checkpoint(&record, ta.model, tb.model)?;
        log::info!(
            "checkpoint {index}: silhouette {sil:.4}, final loss {:.6}",
            record.history.last().map_or(f64::NAN, |h| h.total)
        );
        records.push(record);
    }
    Ok(TrainingReport {
        initial_silhouette,
        checkpoints: records,
    })
}

/// [`train_commanet`] with the triplet sensor alternating between A and B.
pub fn train_alternating(
    dataset: &MultimodalDataset,
    model_a: &mut SensorAutoencoder,
    model_b: &mut SensorAutoencoder,
    train: &[usize],
    plan: &TrainingPlan,
    observer: &mut dyn TrainingObserver,
) -> Result<TrainingReport> {
    let plan = TrainingPlan {
        triplet_sensor: TripletSensor::Alternating,
        ..plan.clone()
    };
    train_commanet(dataset, model_a, model_b, train, &plan, observer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// Target for the final mean latent gap `‖z_A − z_C‖²`.
    #[serde(default)]
    pub gap_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingEpoch {
    pub loss: f64,
    pub latent_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingReport {
    pub history: Vec<MappingEpoch>,
    pub initial_gap: f64,
    pub final_gap: f64,
    /// Whether `final_gap` met the plan's threshold; `None` without one.
    pub reached_threshold: Option<bool>,
    pub frozen_digest: String,
}

/// Mean squared distance between co-registered rows of two code matrices.
pub fn latent_gap(z_a: &Tensor, z_c: &Tensor) -> f64 {
    crate::numerics::ops::sq_dist(z_a.values(), z_c.values()) / z_a.rows() as f64
}

/// Trains `model_c` so its latent codes match the frozen encoder's codes of
/// the same samples while still reconstructing its own sensor.
pub fn train_additional_sensor(
    dataset: &MultimodalDataset,
    frozen: &SensorAutoencoder,
    model_c: &mut SensorAutoencoder,
    train: &[usize],
    plan: &MappingPlan,
) -> Result<MappingReport> {
    if frozen.latent_dim() != model_c.latent_dim() {
        return Err(Error::config(format!(
            "latent dims differ: frozen {} has {}, new sensor {} has {}",
            frozen.sensor_id(),
            frozen.latent_dim(),
            model_c.sensor_id(),
            model_c.latent_dim()
        )));
    }
    if plan.batch_size == 0 || !(plan.learning_rate > 0.0) {
        return Err(Error::config("mapping needs a positive batch size and learning rate"));
    }
    if train.is_empty() {
        return Err(Error::Usage("no training samples".into()));
    }
    let dim_c = dataset.sensor(model_c.sensor_id())?.dim();
    if dim_c != model_c.input_dim() {
        return Err(Error::config(format!(
            "sensor {} has width {dim_c}, model expects {}",
            model_c.sensor_id(),
            model_c.input_dim()
        )));
    }
    dataset.check_unit_range()?;
    let digest = frozen.encoder_digest();
    let z_a = frozen.embed(dataset, train)?.z;
    let s_c = dataset.rows(model_c.sensor_id(), train)?;
    let initial_gap = latent_gap(&z_a, &model_c.encode(&s_c)?);

    let mut adam = Adam::new(plan.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(plan.epochs);
    for epoch in 0..plan.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for rows in order.chunks(plan.batch_size) {
            let mut tape = Tape::new();
            let bound = model_c.bind(&mut tape);
            let sc = tape.leaf_owned(s_c.select_rows(rows)?);
            let za = tape.leaf_owned(z_a.select_rows(rows)?);
            let zc = model_c.encoder.apply(&mut tape, &bound.encoder, sc)?;
            let rc = model_c.decoder.apply(&mut tape, &bound.decoder, zc)?;
            let l = record_sensor_c(&mut tape, za, zc, sc, rc)?;
            let value = tape.scalar(l);
            if !value.is_finite() {
                return Err(Error::Divergence(format!(
                    "mapping loss {value} at epoch {epoch}"
                )));
            }
            let grads = tape.backward(l)?;
            model_c.absorb_grads(&bound, &grads)?;
            model_c.encoder.ensure_grads();
            model_c.decoder.ensure_grads();
            adam.step(model_c.params_mut())?;
            total += value * rows.len() as f64;
        }
        let gap = latent_gap(&z_a, &model_c.encode(&s_c)?);
        history.push(MappingEpoch {
            loss: total / train.len() as f64,
            latent_gap: gap,
        });
    }
    let final_gap = history.last().map_or(initial_gap, |h| h.latent_gap);
    debug_assert_eq!(digest, frozen.encoder_digest());
    Ok(MappingReport {
        history,
        initial_gap,
        final_gap,
        reached_threshold: plan.gap_threshold.map(|t| final_gap <= t),
        frozen_digest: digest,
    })
}
