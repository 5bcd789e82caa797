//! Scalar-loop reference implementations used as test oracles.
#![allow(dead_code, clippy::needless_range_loop)]

pub mod gradients;

use std::collections::HashMap;

use manifold_core::losses::{
    commanet_loss, multimodal_triplet_loss, reconstruction_loss, sensor_c_loss, similarity_enhancement,
};
use manifold_core::mining::{Difficulty, Stage, TripletBatch};
use manifold_core::{EmbeddingSet, LossConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let v = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, v).unwrap()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

fn triplet_mean(a: &Tensor, p: &Tensor, n: &Tensor, cfg: &LossConfig) -> f64 {
    let mut total = 0.0;
    for k in 0..a.rows() {
        let mut v = sq(a.row(k), p.row(k)) - sq(a.row(k), n.row(k)) + cfg.margin_alpha;
        if cfg.hinge_enabled && v < 0.0 {
            v = 0.0;
        }
        total += v;
    }
    total / a.rows() as f64
}

/// `(intra, inter)` triplet terms.
pub fn triplet_terms(a: &Tensor, p: &Tensor, n: &Tensor, b: &Tensor, cfg: &LossConfig) -> (f64, f64) {
    (triplet_mean(a, p, n, cfg), triplet_mean(b, p, n, cfg))
}

pub fn reconstruction(orig: &Tensor, rec: &Tensor) -> f64 {
    let mut total = 0.0;
    for k in 0..orig.rows() {
        total += sq(orig.row(k), rec.row(k));
    }
    total / orig.rows() as f64
}

pub fn similarity(a: &Tensor, b: &Tensor, gamma: f64) -> f64 {
    gamma * reconstruction(a, b)
}

pub fn sensor_c(za: &Tensor, zc: &Tensor, orig: &Tensor, rec: &Tensor) -> f64 {
    let mut total = 0.0;
    for k in 0..za.rows() {
        total += sq(za.row(k), zc.row(k)) + sq(orig.row(k), rec.row(k));
    }
    total / za.rows() as f64
}

/// Largest absolute difference between the batched losses and the loops
/// above over `trials` random batches with K ≤ 64 and D ≤ 16.
pub fn batched_loss_error(seed: u64, trials: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut see = |x: f64, y: f64| worst = worst.max((x - y).abs());
    for _ in 0..trials {
        let k = rng.random_range(1..=64);
        let d = rng.random_range(1..=16);
        let (na, nb) = (rng.random_range(1..=20), rng.random_range(1..=20));
        let cfg = LossConfig {
            margin_alpha: rng.random_range(0.0..2.0),
            se_weight_gamma: rng.random_range(0.0..0.99),
            hinge_enabled: rng.random_bool(0.5),
        };
        let z: Vec<_> = (0..4).map(|_| uniform(&mut rng, k, d, -1.0, 1.0)).collect();
        let s: Vec<_> = [na, na, na, nb, na, na, na, nb]
            .iter()
            .map(|&n| uniform(&mut rng, k, n, 0.0, 1.0))
            .collect();

        let (intra, inter) = triplet_terms(&z[0], &z[1], &z[2], &z[3], &cfg);
        let l_t = multimodal_triplet_loss(&z[0], &z[1], &z[2], &z[3], &cfg).unwrap().value;
        see(l_t, intra + inter);

        let l_e_oracle: f64 = (0..4).map(|i| reconstruction(&s[i], &s[i + 4])).sum();
        let pairs: Vec<_> = (0..4).map(|i| (&s[i], &s[i + 4])).collect();
        let l_e = reconstruction_loss(&pairs).unwrap().value;
        see(l_e, l_e_oracle);

        let se_oracle = similarity(&z[0], &z[3], cfg.se_weight_gamma);
        let se = similarity_enhancement(&z[0], &z[3], cfg.se_weight_gamma).unwrap().value;
        see(se, se_oracle);

        let (b, _) = commanet_loss(
            [&z[0], &z[1], &z[2], &z[3]],
            [(&s[0], &s[4]), (&s[1], &s[5]), (&s[2], &s[6]), (&s[3], &s[7])],
            &cfg,
        )
        .unwrap();
        see(b.intra, intra);
        see(b.inter, inter);
        see(b.l_e, l_e_oracle);
        see(b.l_se, se_oracle);
        see(b.total, intra + inter + l_e_oracle + se_oracle);

        let c = sensor_c_loss(&z[0], &z[1], &s[0], &s[4]).unwrap().value;
        see(c, sensor_c(&z[0], &z[1], &s[0], &s[4]));
    }
    worst
}

/// `(OA, AA, kappa)` from label vectors, by counting.
pub fn accuracy_triple(truth: &[usize], pred: &[usize], n_classes: usize) -> (f64, f64, f64) {
    let n = truth.len() as f64;
    let correct = truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64;
    let oa = correct / n;
    let mut recalls = Vec::new();
    let mut pe = 0.0;
    for c in 0..n_classes {
        let support = truth.iter().filter(|&&t| t == c).count() as f64;
        let predicted = pred.iter().filter(|&&p| p == c).count() as f64;
        if support > 0.0 {
            let hit = truth.iter().zip(pred).filter(|(&t, &p)| t == c && p == c).count() as f64;
            recalls.push(hit / support);
        }
        pe += (support / n) * (predicted / n);
    }
    let aa = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let kappa = if (1.0 - pe).abs() < 1e-300 {
        if oa == 1.0 { 1.0 } else { 0.0 }
    } else {
        (oa - pe) / (1.0 - pe)
    };
    (oa, aa, kappa)
}

/// Mean silhouette with Euclidean distances, singleton-class points scoring 0.
pub fn silhouette(z: &Tensor, labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut by_class: HashMap<usize, (f64, usize)> = HashMap::new();
        for j in 0..n {
            if i == j {
                continue;
            }
            let e = by_class.entry(labels[j]).or_insert((0.0, 0));
            e.0 += sq(z.row(i), z.row(j)).sqrt();
            e.1 += 1;
        }
        let Some(&(own_sum, own_n)) = by_class.get(&labels[i]) else {
            continue;
        };
        let a = own_sum / own_n as f64;
        let b = by_class
            .iter()
            .filter(|(c, _)| **c != labels[i])
            .map(|(_, (s, m))| s / *m as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Random `n×d` codes in `(-1, 1)` with labels cycling over `c` classes and
/// sample ids offset so row and id differ.
pub fn random_embeddings(rng: &mut ChaCha8Rng, id: &str, n: usize, d: usize, c: usize) -> EmbeddingSet {
    let z = uniform(rng, n, d, -0.99, 0.99);
    let labels = (0..n).map(|i| i % c).collect();
    let ids = (0..n).map(|i| 1000 + 3 * i).collect();
    EmbeddingSet::new(id, z, labels, ids).unwrap()
}

/// Violations among mined triplets: `(label, condition)` counts. Intra
/// triplets measure from sensor A's anchor row, inter triplets from sensor B's.
pub fn audit(batch: &TripletBatch, a: &EmbeddingSet, b: &EmbeddingSet, margin: f64) -> (usize, usize) {
    let row: HashMap<usize, usize> = a.sample_ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
    let (mut label_bad, mut cond_bad) = (0, 0);
    for k in 0..batch.len() {
        let [ra, rp, rn, rb] =
            [batch.anchor_a[k], batch.positive_a[k], batch.negative_a[k], batch.anchor_b[k]].map(|id| row[&id]);
        let l = &a.labels;
        if !(l[ra] == l[rp] && l[ra] == l[rb] && l[ra] != l[rn]) {
            label_bad += 1;
        }
        let anchor = match batch.stage[k] {
            Stage::Intra => a.row(ra),
            Stage::Inter => b.row(rb),
        };
        let d_ap = sq(anchor, a.row(rp));
        let d_an = sq(anchor, a.row(rn));
        let ok = match batch.difficulty[k] {
            Difficulty::Hard => d_an < d_ap,
            Difficulty::SemiHard => d_ap < d_an && d_an < d_ap + margin,
            Difficulty::Easy => true,
        };
        if !ok {
            cond_bad += 1;
        }
    }
    (label_bad, cond_bad)
}
