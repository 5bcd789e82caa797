//! Offline multimodal triplet mining.
//!
//! At the start of every training checkpoint the current encoders embed the
//! training samples and triplets are chosen against those embeddings. The
//! intra-sensor stage draws anchor, positive and negative from sensor A; the
//! inter-sensor stage draws the anchor from sensor B and the positive and
//! negative from sensor A. The partner anchor in the other sensor is a random
//! sample of the anchor's class.
//!
//! Each triplet gets its own random stream, so results do not depend on
//! thread count or scheduling.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EmbeddingSet;
use crate::numerics::ops::sq_dist;
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Hard,
    SemiHard,
    Random,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Strategy::Hard),
            "semi_hard" | "semi-hard" | "semihard" => Ok(Strategy::SemiHard),
            "random" => Ok(Strategy::Random),
            other => Err(Error::config(format!(
                "unknown strategy {other:?}; expected hard, semi_hard or random"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Hard => "hard",
            Strategy::SemiHard => "semi_hard",
            Strategy::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    /// No distance condition: random, or a fallback when nothing harder exists.
    Easy,
    /// `d_ap < d_an < d_ap + margin`.
    SemiHard,
    /// `d_an < d_ap`.
    Hard,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::SemiHard => "semi_hard",
            Difficulty::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Intra,
    Inter,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Intra => "intra",
            Stage::Inter => "inter",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Stage::Intra => 1,
            Stage::Inter => 2,
        }
    }
}

/// Stream reserved for the easy (random) share of a checkpoint.
const EASY_STREAM: u64 = 0;

fn default_easy_fraction() -> f64 {
    0.2
}

fn default_margin() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub triplets_per_checkpoint: usize,
    pub strategy: Strategy,
    /// Share of every checkpoint's triplets drawn at random.
    #[serde(default = "default_easy_fraction")]
    pub easy_fraction: f64,
    /// Semi-hard band width; training sets it to the loss margin.
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub seed: u64,
}

impl MiningConfig {
    pub fn new(triplets_per_checkpoint: usize, strategy: Strategy, margin: f64, seed: u64) -> Self {
        Self {
            triplets_per_checkpoint,
            strategy,
            easy_fraction: default_easy_fraction(),
            margin,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.triplets_per_checkpoint == 0 {
            return Err(Error::config("triplets per checkpoint must be positive"));
        }
        if !(0.0..=1.0).contains(&self.easy_fraction) {
            return Err(Error::config(format!(
                "easy fraction {} outside [0, 1]",
                self.easy_fraction
            )));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::config(format!("mining margin {} must be non-negative", self.margin)));
        }
        Ok(())
    }

    /// `(easy, intra, inter)` counts for one checkpoint.
    pub fn stage_counts(&self) -> (usize, usize, usize) {
        let k = self.triplets_per_checkpoint;
        let easy = ((self.easy_fraction * k as f64).floor() as usize).min(k);
        let mined = k - easy;
        (easy, mined.div_ceil(2), mined / 2)
    }
}

/// Index quadruples into a dataset, with per-triplet tags.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletBatch {
    pub anchor_a: Vec<usize>,
    pub positive_a: Vec<usize>,
    pub negative_a: Vec<usize>,
    pub anchor_b: Vec<usize>,
    pub difficulty: Vec<Difficulty>,
    pub stage: Vec<Stage>,
    /// The first `easy_count` triplets are the random share of a checkpoint.
    pub easy_count: usize,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchor_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_a.is_empty()
    }

    fn push(&mut self, t: Triplet, stage: Stage) {
        self.anchor_a.push(t.anchor_a);
        self.positive_a.push(t.positive);
        self.negative_a.push(t.negative);
        self.anchor_b.push(t.anchor_b);
        self.difficulty.push(t.difficulty);
        self.stage.push(stage);
    }

    pub fn extend(&mut self, other: TripletBatch) {
        self.anchor_a.extend(other.anchor_a);
        self.positive_a.extend(other.positive_a);
        self.negative_a.extend(other.negative_a);
        self.anchor_b.extend(other.anchor_b);
        self.difficulty.extend(other.difficulty);
        self.stage.extend(other.stage);
    }

    pub fn count(&self, difficulty: Difficulty) -> usize {
        self.difficulty.iter().filter(|&&d| d == difficulty).count()
    }

    /// Fails on the first triplet that breaks a label constraint or indexes
    /// past `labels`.
    pub fn check_labels(&self, labels: &[usize]) -> Result<()> {
        for k in 0..self.len() {
            let idx = [self.anchor_a[k], self.positive_a[k], self.negative_a[k], self.anchor_b[k]];
            if let Some(&i) = idx.iter().find(|&&i| i >= labels.len()) {
                return Err(Error::Validation(format!(
                    "triplet {k} references sample {i} of {}",
                    labels.len()
                )));
            }
            let [a, p, n, b] = idx.map(|i| labels[i]);
            if a != p || a != b || a == n {
                return Err(Error::Validation(format!(
                    "triplet {k} labels a={a} p={p} n={n} b={b}"
                )));
            }
        }
        Ok(())
    }

    /// Audit lines `a p n b tag stage`.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        for k in 0..self.len() {
            writeln!(
                w,
                "{} {} {} {} {} {}",
                self.anchor_a[k],
                self.positive_a[k],
                self.negative_a[k],
                self.anchor_b[k],
                self.difficulty[k].as_str(),
                self.stage[k].as_str()
            )?;
        }
        Ok(())
    }
}

/// `M[i, j] = ‖Z1[i] − Z2[j]‖²`.
pub fn pairwise_sq_distances(z1: &Tensor, z2: &Tensor) -> Result<Tensor> {
    let (n1, d1) = z1.dims2()?;
    let (n2, d2) = z2.dims2()?;
    if d1 != d2 {
        return Err(Error::dim(format!(
            "pairwise distances of width {d1} against width {d2}"
        )));
    }
    let mut out = vec![0.0; n1 * n2];
    if n2 > 0 {
        out.par_chunks_mut(n2).enumerate().for_each(|(i, row)| {
            let a = z1.row(i);
            for (j, m) in row.iter_mut().enumerate() {
                *m = sq_dist(a, z2.row(j));
            }
        });
    }
    Tensor::matrix(n1, n2, out)
}

/// Rows grouped by class, plus the rows usable as anchors.
struct Classes {
    members: Vec<Vec<usize>>,
    anchors: Vec<usize>,
}

impl Classes {
    fn new(labels: &[usize]) -> Result<Self> {
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); n_classes];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        let present = members.iter().filter(|m| !m.is_empty()).count();
        let mut anchors = Vec::new();
        for (c, m) in members.iter().enumerate() {
            match m.len() {
                0 => {}
                1 => log::warn!("class {c} has a single sample; it is not used as an anchor"),
                _ => anchors.extend_from_slice(m),
            }
        }
        anchors.sort_unstable();
        if present < 2 || anchors.is_empty() {
            return Err(Error::MiningExhausted(format!(
                "{present} classes present, {} usable anchors",
                anchors.len()
            )));
        }
        Ok(Self { members, anchors })
    }
}

#[derive(Debug, Clone, Copy)]
struct Triplet {
    anchor_a: usize,
    positive: usize,
    negative: usize,
    anchor_b: usize,
    difficulty: Difficulty,
}

fn stream_rng(seed: u64, stream: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 48) | k);
    rng
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

/// Candidate sets for one anchor row.
struct AnchorView<'a> {
    anchor: usize,
    class: &'a [usize],
    /// Same-class pool rows other than the anchor's own row.
    positives: Vec<usize>,
    /// `(distance, row)` of every other-class pool row, ascending.
    negatives: Vec<(f64, usize)>,
    /// Per admissible positive: the admissible range in `negatives`.
    admissible: Vec<(usize, usize, usize)>,
}

impl<'a> AnchorView<'a> {
    fn build(
        anchor: usize,
        anchor_vec: Option<&[f64]>,
        pool: Option<&Tensor>,
        labels: &[usize],
        classes: &'a Classes,
        strategy: Strategy,
        margin: f64,
    ) -> Self {
        let class = &classes.members[labels[anchor]][..];
        let positives: Vec<usize> = class.iter().copied().filter(|&p| p != anchor).collect();
        let dist = |j: usize| match (anchor_vec, pool) {
            (Some(a), Some(z)) => sq_dist(a, z.row(j)),
            _ => 0.0,
        };
        let mut negatives: Vec<(f64, usize)> = (0..labels.len())
            .filter(|&j| labels[j] != labels[anchor])
            .map(|j| (dist(j), j))
            .collect();
        let mut admissible = Vec::new();
        if strategy != Strategy::Random && pool.is_some() {
            negatives.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            for &p in &positives {
                let d_ap = dist(p);
                let (lo, hi) = match strategy {
                    Strategy::Hard => (0, negatives.partition_point(|&(d, _)| d < d_ap)),
                    Strategy::SemiHard => {
                        let upper = d_ap + margin;
                        (
                            negatives.partition_point(|&(d, _)| d <= d_ap),
                            negatives.partition_point(|&(d, _)| d < upper),
                        )
                    }
                    Strategy::Random => unreachable!(),
                };
                if hi > lo {
                    admissible.push((p, lo, hi));
                }
            }
        }
        Self {
            anchor,
            class,
            positives,
            negatives,
            admissible,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, strategy: Strategy, stage: Stage) -> Triplet {
        let partner = pick(rng, self.class);
        let (positive, negative, difficulty) = if strategy == Strategy::Random {
            let p = pick(rng, &self.positives);
            let n = pick(rng, &self.negatives).1;
            (p, n, Difficulty::Easy)
        } else if self.admissible.is_empty() {
            // Nothing satisfies the condition: closest negative, tagged easy.
            let p = pick(rng, &self.positives);
            (p, self.negatives[0].1, Difficulty::Easy)
        } else {
            let (p, lo, hi) = pick(rng, &self.admissible);
            let n = self.negatives[rng.random_range(lo..hi)].1;
            let tag = match strategy {
                Strategy::Hard => Difficulty::Hard,
                _ => Difficulty::SemiHard,
            };
            (p, n, tag)
        };
        let (anchor_a, anchor_b) = match stage {
            Stage::Intra => (self.anchor, partner),
            Stage::Inter => (partner, self.anchor),
        };
        Triplet {
            anchor_a,
            positive,
            negative,
            anchor_b,
            difficulty,
        }
    }
}

fn check_aligned(anchors: &EmbeddingSet, pool: &EmbeddingSet) -> Result<()> {
    if anchors.sample_ids != pool.sample_ids || anchors.labels != pool.labels {
        return Err(Error::Alignment(format!(
            "sensors {} and {} do not list the same samples",
            anchors.sensor_id, pool.sensor_id
        )));
    }
    if anchors.dim() != pool.dim() {
        return Err(Error::dim(format!(
            "latent widths {} and {}",
            anchors.dim(),
            pool.dim()
        )));
    }
    Ok(())
}

struct Request<'a> {
    labels: &'a [usize],
    sample_ids: &'a [usize],
    anchors: Option<&'a Tensor>,
    pool: Option<&'a Tensor>,
    strategy: Strategy,
    stage: Stage,
    count: usize,
    margin: f64,
    seed: u64,
    stream: u64,
}

fn run(req: Request<'_>) -> Result<TripletBatch> {
    let classes = Classes::new(req.labels)?;
    let mut rng = stream_rng(req.seed, req.stream, 0);
    let drawn: Vec<usize> = (0..req.count).map(|_| pick(&mut rng, &classes.anchors)).collect();

    let mut by_anchor: Vec<(usize, Vec<usize>)> = Vec::new();
    {
        let mut order: Vec<usize> = (0..req.count).collect();
        order.sort_by_key(|&k| (drawn[k], k));
        for k in order {
            match by_anchor.last_mut() {
                Some((a, ks)) if *a == drawn[k] => ks.push(k),
                _ => by_anchor.push((drawn[k], vec![k])),
            }
        }
    }

    let shards: Vec<Vec<(usize, Triplet)>> = by_anchor
        .par_iter()
        .map(|(anchor, ks)| {
            let view = AnchorView::build(
                *anchor,
                req.anchors.map(|z| z.row(*anchor)),
                req.pool,
                req.labels,
                &classes,
                req.strategy,
                req.margin,
            );
            ks.iter()
                .map(|&k| {
                    let mut r = stream_rng(req.seed, req.stream, k as u64 + 1);
                    (k, view.draw(&mut r, req.strategy, req.stage))
                })
                .collect()
        })
        .collect();

    let mut slots: Vec<Option<Triplet>> = vec![None; req.count];
    for (k, t) in shards.into_iter().flatten() {
        slots[k] = Some(t);
    }
    let mut batch = TripletBatch::default();
    for t in slots.into_iter().map(|t| t.expect("every slot filled")) {
        let ids = Triplet {
            anchor_a: req.sample_ids[t.anchor_a],
            positive: req.sample_ids[t.positive],
            negative: req.sample_ids[t.negative],
            anchor_b: req.sample_ids[t.anchor_b],
            ..t
        };
        batch.push(ids, req.stage);
    }
    Ok(batch)
}

/// Mines `count` triplets with anchors from `anchors` and positives and
/// negatives from `pool`. For [`Stage::Intra`] the anchor is sensor A's
/// sample; for [`Stage::Inter`] it is sensor B's. `stream` selects an
/// independent random stream under `cfg.seed`.
pub fn select_triplets(
    anchors: &EmbeddingSet,
    pool: &EmbeddingSet,
    stage: Stage,
    count: usize,
    cfg: &MiningConfig,
    stream: u64,
) -> Result<TripletBatch> {
    cfg.validate()?;
    check_aligned(anchors, pool)?;
    run(Request {
        labels: &pool.labels,
        sample_ids: &pool.sample_ids,
        anchors: Some(&anchors.z),
        pool: Some(&pool.z),
        strategy: cfg.strategy,
        stage,
        count,
        margin: cfg.margin,
        seed: cfg.seed,
        stream,
    })
}

pub fn select_intra_triplets(emb_a: &EmbeddingSet, count: usize, cfg: &MiningConfig) -> Result<TripletBatch> {
    select_triplets(emb_a, emb_a, Stage::Intra, count, cfg, Stage::Intra.stream())
}

pub fn select_inter_triplets(
    emb_a: &EmbeddingSet,
    emb_b: &EmbeddingSet,
    count: usize,
    cfg: &MiningConfig,
) -> Result<TripletBatch> {
    select_triplets(emb_b, emb_a, Stage::Inter, count, cfg, Stage::Inter.stream())
}

/// Triplets satisfying only the label constraints, tagged easy.
pub fn select_random_triplets(
    labels: &[usize],
    sample_ids: &[usize],
    count: usize,
    seed: u64,
    stream: u64,
) -> Result<TripletBatch> {
    if labels.len() != sample_ids.len() {
        return Err(Error::Alignment(format!(
            "{} labels, {} sample ids",
            labels.len(),
            sample_ids.len()
        )));
    }
    run(Request {
        labels,
        sample_ids,
        anchors: None,
        pool: None,
        strategy: Strategy::Random,
        stage: Stage::Intra,
        count,
        margin: 0.0,
        seed,
        stream,
    })
}

/// One checkpoint's triplets: the easy share first, then intra- and
/// inter-sensor mined triplets. Without embeddings (the first checkpoint)
/// every triplet is random.
pub fn mine_checkpoint(
    labels: &[usize],
    sample_ids: &[usize],
    embeddings: Option<(&EmbeddingSet, &EmbeddingSet)>,
    cfg: &MiningConfig,
) -> Result<TripletBatch> {
    cfg.validate()?;
    let k = cfg.triplets_per_checkpoint;
    let Some((emb_a, emb_b)) = embeddings else {
        let mut batch = select_random_triplets(labels, sample_ids, k, cfg.seed, EASY_STREAM)?;
        batch.easy_count = k;
        return Ok(batch);
    };
    if emb_a.labels != labels || emb_a.sample_ids != sample_ids {
        return Err(Error::Alignment(
            "embeddings do not list the mining samples".into(),
        ));
    }
    let (easy, intra, inter) = cfg.stage_counts();
    let mut batch = select_random_triplets(labels, sample_ids, easy, cfg.seed, EASY_STREAM)?;
    batch.easy_count = easy;
    if intra > 0 {
        batch.extend(select_intra_triplets(emb_a, intra, cfg)?);
    }
    if inter > 0 {
        batch.extend(select_inter_triplets(emb_a, emb_b, inter, cfg)?);
    }
    log::debug!(
        "mined {} triplets: {} hard, {} semi-hard, {} easy",
        batch.len(),
        batch.count(Difficulty::Hard),
        batch.count(Difficulty::SemiHard),
        batch.count(Difficulty::Easy)
    );
    Ok(batch)
}
