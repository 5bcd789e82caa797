use manifold_core::losses::{
    commanet_loss, multimodal_triplet_loss, reconstruction_loss, sensor_c_loss, similarity_enhancement,
};
use manifold_core::numerics::{finite_diff_check, Evaluated, Tape, Tensor, Var};
use manifold_core::{LossConfig, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TRIALS: usize = 100;
pub const STEP: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let v = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, v).unwrap()
}

fn unit(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let v = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
    Tensor::matrix(rows, cols, v).unwrap()
}

/// Runs `trials` checks and returns the worst relative error seen.
pub fn sweep(seed: u64, mut trial: impl FnMut(&mut ChaCha8Rng) -> f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..TRIALS).map(|_| trial(&mut rng)).fold(0.0, f64::max)
}

pub fn on_tape(params: &[Tensor], build: impl FnOnce(&mut Tape, &[Var]) -> Result<Var>) -> Result<Evaluated> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(Evaluated {
        value: tape.scalar(out),
        grads: vars.iter().zip(params).map(|(&v, p)| grads.tensor(v, p)).collect(),
    })
}

fn loss_config(rng: &mut ChaCha8Rng) -> LossConfig {
    LossConfig {
        margin_alpha: rng.random_range(0.1..1.5),
        se_weight_gamma: rng.random_range(0.0..0.9),
        hinge_enabled: rng.random_bool(0.8),
    }
}

pub fn triplet_term(seed: u64) -> f64 {
        sweep(seed, |rng| {
        let (k, d) = (rng.random_range(1..6), rng.random_range(1..5));
        let params: Vec<Tensor> = (0..4).map(|_| random(rng, k, d, 1.0)).collect();
        let cfg = loss_config(rng);
        finite_diff_check(|p| multimodal_triplet_loss(&p[0], &p[1], &p[2], &p[3], &cfg), &params, STEP).unwrap()
    })
}

pub fn reconstruction(seed: u64) -> f64 {
        sweep(seed, |rng| {
        let (k, n) = (rng.random_range(1..6), rng.random_range(1..7));
        let params: Vec<Tensor> = (0..4).map(|_| unit(rng, k, n)).collect();
        finite_diff_check(
            |p| reconstruction_loss(&[(&p[0], &p[1]), (&p[2], &p[3])]),
            &params,
            STEP,
        )
        .unwrap()
    })
}

pub fn similarity(seed: u64) -> f64 {
        sweep(seed, |rng| {
        let (k, d) = (rng.random_range(1..6), rng.random_range(1..5));
        let params = vec![random(rng, k, d, 1.0), random(rng, k, d, 1.0)];
        let gamma = rng.random_range(0.0..0.9);
        finite_diff_check(|p| similarity_enhancement(&p[0], &p[1], gamma), &params, STEP).unwrap()
    })
}

pub fn full_objective(seed: u64) -> f64 {
        sweep(seed, |rng| {
        let (k, d) = (rng.random_range(1..5), rng.random_range(1..4));
        let (na, nb) = (rng.random_range(1..5), rng.random_range(1..4));
        let mut params: Vec<Tensor> = (0..4).map(|_| random(rng, k, d, 1.0)).collect();
        for n in [na, na, na, nb] {
            params.push(unit(rng, k, n));
            params.push(unit(rng, k, n));
        }
        let cfg = loss_config(rng);
        finite_diff_check(
            |p| {
                let (b, grads) = commanet_loss(
                    [&p[0], &p[1], &p[2], &p[3]],
                    [(&p[4], &p[5]), (&p[6], &p[7]), (&p[8], &p[9]), (&p[10], &p[11])],
                    &cfg,
                )?;
                Ok(Evaluated { value: b.total, grads })
            },
            &params,
            STEP,
        )
        .unwrap()
    })
}

pub fn extra_sensor(seed: u64) -> f64 {
        sweep(seed, |rng| {
        let (k, d, n) = (rng.random_range(1..6), rng.random_range(1..5), rng.random_range(1..6));
        let params = vec![random(rng, k, d, 1.0), random(rng, k, d, 1.0), unit(rng, k, n), unit(rng, k, n)];
        finite_diff_check(|p| sensor_c_loss(&p[0], &p[1], &p[2], &p[3]), &params, STEP).unwrap()
    })
}

pub fn classifier_cross_entropy(seed: u64) -> f64 {
    // Input, then one tanh hidden layer and a linear output layer.
        sweep(seed, |rng| {
        let (n, i, h, c) = (
            rng.random_range(1..6),
            rng.random_range(1..5),
            rng.random_range(1..5),
            rng.random_range(2..5),
        );
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let params = vec![
            random(rng, n, i, 1.0),
            random(rng, i, h, 1.0),
            random(rng, 1, h, 0.5),
            random(rng, h, c, 1.0),
            random(rng, 1, c, 0.5),
        ];
        finite_diff_check(
            |p| {
                on_tape(p, |t, v| {
                    let a = t.affine(v[0], v[1], v[2])?;
                    let hidden = t.tanh(a);
                    let logits = t.affine(hidden, v[3], v[4])?;
                    t.softmax_cross_entropy(logits, &labels)
                })
            },
            &params,
            STEP,
        )
        .unwrap()
    })
}

pub fn regressor_mse(seed: u64) -> f64 {
        sweep(seed, |rng| {
        let (n, d, h) = (rng.random_range(1..6), rng.random_range(1..5), rng.random_range(1..5));
        let params = vec![
            random(rng, n, d, 1.0),
            random(rng, d, h, 1.0),
            random(rng, 1, h, 0.5),
            random(rng, h, d, 1.0),
            random(rng, 1, d, 0.5),
            random(rng, n, d, 0.9),
        ];
        finite_diff_check(
            |p| {
                on_tape(p, |t, v| {
                    let a = t.affine(v[0], v[1], v[2])?;
                    let hidden = t.tanh(a);
                    let b = t.affine(hidden, v[3], v[4])?;
                    let out = t.tanh(b);
                    let diff = t.sub(out, v[5])?;
                    let sq = t.square(diff);
                    Ok(t.mean(sq))
                })
            },
            &params,
            STEP,
        )
        .unwrap()
    })
}

pub fn decoder_path(seed: u64) -> f64 {
    // Sigmoid output layer against a target, as in every reconstruction term.
        sweep(seed, |rng| {
        let (n, d, o) = (rng.random_range(1..6), rng.random_range(1..5), rng.random_range(1..6));
        let params = vec![
            random(rng, n, d, 1.0),
            random(rng, d, o, 1.0),
            random(rng, 1, o, 0.5),
            unit(rng, n, o),
        ];
        finite_diff_check(
            |p| {
                on_tape(p, |t, v| {
                    let a = t.affine(v[0], v[1], v[2])?;
                    let s = t.sigmoid(a);
                    let d = t.row_sq_dist(s, v[3])?;
                    Ok(t.mean(d))
                })
            },
            &params,
            STEP,
        )
        .unwrap()
    })
}

pub type Check = fn(u64) -> f64;

/// Every objective with its worst relative error over `TRIALS` instances.
pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("triplet_term", triplet_term),
        ("reconstruction", reconstruction),
        ("similarity", similarity),
        ("full_objective", full_objective),
        ("extra_sensor", extra_sensor),
        ("classifier_cross_entropy", classifier_cross_entropy),
        ("regressor_mse", regressor_mse),
        ("decoder_path", decoder_path),
    ]
}
