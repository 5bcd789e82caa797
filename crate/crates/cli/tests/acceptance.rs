//! One PASS/FAIL line per acceptance criterion. Exits nonzero on any FAIL.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use manifold_core::inference::{
    classify_knn_classavg, compute_metrics, fuse_embeddings, silhouette, unified_cross_eval, Method,
};
use manifold_core::mining::{mine_checkpoint, Difficulty};
use manifold_core::training::{latent_gap, train_additional_sensor, train_commanet};
use manifold_core::translation::{mean_predictor_mse, predict_latent, train_regressor, translate};
use manifold_core::{
    EmbeddingSet, ExperimentConfig, MiningConfig, MultimodalDataset, SensorAutoencoder, Split, Strategy, Tensor,
};
use rand::Rng;

const GRAD_TOL: f64 = 1e-4;
const LOSS_TOL: f64 = 1e-10;
const METRIC_TOL: f64 = 1e-9;
const MIN_SILHOUETTE: f64 = 0.6;
const MIN_FUSED_OA: f64 = 0.95;
const MAX_TRAIN_SECONDS: f64 = 300.0;
const CROSS_OA_POINTS: f64 = 0.05;
const MAX_CONTROL_OA: f64 = 0.40;
const SE_SILHOUETTE_SLACK: f64 = 0.02;
const MAX_MAPPING_GAP: f64 = 0.1;
const MAX_BASELINE_RATIO: f64 = 0.5;
const MAX_TRANSLATION_MSE: f64 = 0.05;
const MAX_IDENTICAL_RATIO: f64 = 2.0;
const EXTENDED_OA: f64 = 0.85;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Ledger(Vec<Verdict>);

impl Ledger {
    fn record(&mut self, id: u32, name: &str, ok: bool, detail: String) {
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("{tag} {id:>2} {name}: {detail}");
        self.0.push(if ok { Verdict::Pass } else { Verdict::Fail });
    }

    fn skip(&mut self, id: u32, name: &str, detail: &str) {
        println!("SKIP {id:>2} {name}: {detail}");
        self.0.push(Verdict::Skip);
    }
}

struct Trained {
    ds: MultimodalDataset,
    split: Split,
    a: SensorAutoencoder,
    b: SensorAutoencoder,
    silhouette: f64,
    seconds: f64,
}

impl Trained {
    fn run(cfg: &ExperimentConfig, ds: MultimodalDataset) -> Self {
        let split = cfg.split(&ds).unwrap();
        let [a_id, b_id] = &cfg.data.sensors;
        let mut a = SensorAutoencoder::build(&cfg.autoencoder(a_id, ds.sensor(a_id).unwrap().dim()), cfg.init_seed(0))
            .unwrap();
        let mut b = SensorAutoencoder::build(&cfg.autoencoder(b_id, ds.sensor(b_id).unwrap().dim()), cfg.init_seed(1))
            .unwrap();
        let start = Instant::now();
        let report = train_commanet(&ds, &mut a, &mut b, &split.train, &cfg.training_plan(), &mut ()).unwrap();
        let seconds = start.elapsed().as_secs_f64();
        Trained {
            ds,
            split,
            a,
            b,
            silhouette: report.final_silhouette(),
            seconds,
        }
    }

    fn train(&self, m: &SensorAutoencoder) -> EmbeddingSet {
        m.embed(&self.ds, &self.split.train).unwrap()
    }

    fn test(&self, m: &SensorAutoencoder) -> EmbeddingSet {
        m.embed(&self.ds, &self.split.test).unwrap()
    }

    fn anchor_gap(&self) -> f64 {
        latent_gap(&self.test(&self.a).z, &self.test(&self.b).z)
    }
}

fn oa(truth: &[usize], pred: &[usize], n_classes: usize) -> f64 {
    compute_metrics(truth, pred, n_classes).unwrap().overall_accuracy
}

fn mse(x: &Tensor, y: &Tensor) -> f64 {
    let d: f64 = x.values().iter().zip(y.values()).map(|(a, b)| (a - b) * (a - b)).sum();
    d / x.len() as f64
}

fn gradients(l: &mut Ledger) {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for (i, (name, check)) in support::gradients::all().into_iter().enumerate() {
        worst.push((name, check(100 + i as u64)));
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail = worst.iter().map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    l.record(
        1,
        "gradient correctness",
        max < GRAD_TOL,
        format!("worst relative error {max:.2e} < {GRAD_TOL:e} over {} instances each ({detail})", support::gradients::TRIALS),
    );
}

fn loss_oracles(l: &mut Ledger) {
    let worst = support::batched_loss_error(200, 500);
    l.record(2, "loss oracle equivalence", worst < LOSS_TOL, format!("max |batched - loop| {worst:.2e} < {LOSS_TOL:e}"));
}

fn mining(l: &mut Ledger) {
    let mut rng = support::rng(300);
    let a = support::random_embeddings(&mut rng, "a", 200, 4, 3);
    let b = support::random_embeddings(&mut rng, "b", 200, 4, 3);
    let mut ok = true;
    let mut parts = Vec::new();
    for strategy in [Strategy::Hard, Strategy::SemiHard] {
        let cfg = MiningConfig {
            easy_fraction: 0.0,
            ..MiningConfig::new(1000, strategy, 0.5, 301)
        };
        let batch = mine_checkpoint(&a.labels, &a.sample_ids, Some((&a, &b)), &cfg).unwrap();
        let (label_bad, cond_bad) = support::audit(&batch, &a, &b, cfg.margin);
        let tagged = batch.count(Difficulty::Hard) + batch.count(Difficulty::SemiHard);
        ok &= batch.len() == 1000 && label_bad == 0 && cond_bad == 0;
        parts.push(format!(
            "{strategy}: {} triplets, {tagged} tagged mined, {label_bad} label and {cond_bad} condition violations",
            batch.len()
        ));
    }
    l.record(3, "mining compliance", ok, parts.join("; "));
}

fn alignment(l: &mut Ledger, t: &Trained) {
    let (atr, btr, ate, bte) = (t.train(&t.a), t.train(&t.b), t.test(&t.a), t.test(&t.b));
    let pred = classify_knn_classavg(
        &fuse_embeddings(&[&atr, &btr]).unwrap(),
        &atr.labels,
        &fuse_embeddings(&[&ate, &bte]).unwrap(),
        Some(5),
    )
    .unwrap();
    let fused = oa(&ate.labels, &pred, t.ds.n_classes());
    l.record(
        4,
        "end-to-end alignment",
        t.silhouette >= MIN_SILHOUETTE && fused >= MIN_FUSED_OA && t.seconds <= MAX_TRAIN_SECONDS,
        format!(
            "silhouette {:.4} >= {MIN_SILHOUETTE}, fused KNN OA {:.2}% >= {:.0}%, training {:.1}s <= {MAX_TRAIN_SECONDS}s",
            t.silhouette,
            100.0 * fused,
            100.0 * MIN_FUSED_OA,
            t.seconds
        ),
    );
}

const CONTROL_DRAWS: u64 = 100;

/// The negative control averages over independently initialized, untrained
/// sensor-B encoders, since any single draw may land near a class by chance.
fn unified(l: &mut Ledger, cfg: &ExperimentConfig, t: &Trained) {
    let (atr, ate, bte) = (t.train(&t.a), t.test(&t.a), t.test(&t.b));
    let controls: Vec<EmbeddingSet> = (0..CONTROL_DRAWS)
        .map(|i| t.test(&SensorAutoencoder::build(t.b.config(), cfg.init_seed(3 + i)).unwrap()))
        .collect();
    let mut tests = vec![&ate, &bte];
    tests.extend(&controls);
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, method) in [("knn", Method::Knn { k: Some(cfg.classify.k) }), ("network", Method::Network(cfg.network_plan(0)))] {
        let row = unified_cross_eval(&[&atr], &tests, &method, t.ds.n_classes()).unwrap();
        let (aa, ab) = (row[0].report.overall_accuracy, row[1].report.overall_accuracy);
        let draws: Vec<f64> = row[2..].iter().map(|e| e.report.overall_accuracy).collect();
        let control = draws.iter().sum::<f64>() / draws.len() as f64;
        ok &= (aa - ab).abs() <= CROSS_OA_POINTS && control <= MAX_CONTROL_OA;
        parts.push(format!(
            "{name} A->A {:.2}%, A->B {:.2}%, untrained control {:.2}% (draws {:.1}..{:.1}%)",
            100.0 * aa,
            100.0 * ab,
            100.0 * control,
            100.0 * draws.iter().cloned().fold(f64::INFINITY, f64::min),
            100.0 * draws.iter().cloned().fold(0.0, f64::max)
        ));
    }
    l.record(
        5,
        "unified classification",
        ok,
        format!("{} (gap <= 5 points, mean control over {CONTROL_DRAWS} draws <= 40%)", parts.join("; ")),
    );
}

fn se_effect(l: &mut Ledger, with: &Trained, without: &Trained) {
    let (g1, g0) = (with.anchor_gap(), without.anchor_gap());
    let ok = g1 < g0 && with.silhouette >= without.silhouette - SE_SILHOUETTE_SLACK;
    l.record(
        6,
        "similarity term effect",
        ok,
        format!(
            "anchor gap {g1:.4} (gamma 0.2) < {g0:.4} (gamma 0); silhouette {:.4} vs {:.4}, slack {SE_SILHOUETTE_SLACK}",
            with.silhouette, without.silhouette
        ),
    );
}

fn mapping(l: &mut Ledger, cfg: &ExperimentConfig, t: &Trained) {
    let c_id = cfg.data.extra_sensor.as_deref().unwrap();
    let mut c = SensorAutoencoder::build(&cfg.autoencoder(c_id, t.ds.sensor(c_id).unwrap().dim()), cfg.init_seed(2))
        .unwrap();
    let before = t.a.checkpoint_bytes();
    let report = train_additional_sensor(&t.ds, &t.a, &mut c, &t.split.train, &cfg.mapping_plan()).unwrap();
    let frozen = before == t.a.checkpoint_bytes();
    let (atr, ate, cte) = (t.train(&t.a), t.test(&t.a), t.test(&c));
    let row = unified_cross_eval(&[&atr], &[&ate, &cte], &Method::Knn { k: Some(cfg.classify.k) }, t.ds.n_classes())
        .unwrap();
    let [aa, ac] = [0, 1].map(|i| row[i].report.overall_accuracy);
    l.record(
        7,
        "additional-sensor mapping",
        report.final_gap <= MAX_MAPPING_GAP && (aa - ac).abs() <= CROSS_OA_POINTS && frozen,
        format!(
            "latent gap {:.4} -> {:.4} <= {MAX_MAPPING_GAP} (test {:.4}); A->A {:.2}%, A->C {:.2}%; frozen bit-identical {frozen}",
            report.initial_gap,
            report.final_gap,
            latent_gap(&ate.z, &cte.z),
            100.0 * aa,
            100.0 * ac
        ),
    );
}

/// Test-set `(translation MSE, own reconstruction MSE)` of `available -> missing`.
fn translation_pair(cfg: &ExperimentConfig, t: &Trained, src: &SensorAutoencoder, dst: &SensorAutoencoder) -> (f64, f64) {
    let (reg, _) = train_regressor(&t.train(src).z, &t.train(dst).z, &cfg.regressor_plan()).unwrap();
    let truth = t.ds.rows(dst.sensor_id(), &t.split.test).unwrap();
    let translated = translate(&reg, dst, &t.test(src).z).unwrap();
    let own = dst.decode(&dst.encode(&truth).unwrap()).unwrap();
    (mse(&translated, &truth), mse(&own, &truth))
}

fn translation(l: &mut Ledger, cfg: &ExperimentConfig, t: &Trained) {
    let (src, dst) = (&t.a, &t.b);
    let (reg, cv) = train_regressor(&t.train(src).z, &t.train(dst).z, &cfg.regressor_plan()).unwrap();
    let dte = t.test(dst);
    let test_latent = predict_latent(&reg, &t.test(src).z).unwrap();
    let dtr = t.train(dst);
    let mut mean_code = vec![0.0; dst.latent_dim()];
    for i in 0..dtr.len() {
        for (m, v) in mean_code.iter_mut().zip(dtr.row(i)) {
            *m += v / dtr.len() as f64;
        }
    }
    let test_baseline = mean_predictor_mse(&mean_code, &dte.z).unwrap();
    let (decoded, _) = translation_pair(cfg, t, src, dst);

    let mut twin_cfg = cfg.clone();
    twin_cfg.data.sensors = ["a".into(), "a-copy".into()];
    let base = cfg.dataset(None).unwrap();
    let copy = base.sensor("a").unwrap().data.clone();
    let twins = Trained::run(&twin_cfg, base.with_sensor("a-copy", copy).unwrap());
    let (twin_mse, twin_own) = translation_pair(&twin_cfg, &twins, &twins.a, &twins.b);

    let ok = cv.mean_mse <= MAX_BASELINE_RATIO * cv.baseline_mse
        && decoded < MAX_TRANSLATION_MSE
        && twin_mse <= MAX_IDENTICAL_RATIO * twin_own;
    l.record(
        8,
        "translation",
        ok,
        format!(
            "CV latent MSE {:.5} <= 0.5 x baseline {:.5} (test {:.5} vs {:.5}); decoded MSE {decoded:.5} < {MAX_TRANSLATION_MSE}; \
             identical sensors {twin_mse:.5} <= 2 x own reconstruction {twin_own:.5}",
            cv.mean_mse,
            cv.baseline_mse,
            mse(&test_latent, &dte.z),
            test_baseline
        ),
    );
}

fn metric_oracles(l: &mut Ledger) {
    let mut truth = vec![0; 50];
    truth.extend(vec![1; 50]);
    let mut pred = vec![0; 40];
    pred.extend(vec![1; 10]);
    pred.extend(vec![0; 20]);
    pred.extend(vec![1; 30]);
    let reference = compute_metrics(&truth, &pred, 2).unwrap();
    let mut worst = (reference.kappa - 0.4).abs().max((reference.overall_accuracy - 0.7).abs());

    let mut rng = support::rng(900);
    for _ in 0..300 {
        let c = rng.random_range(2..7);
        let n = rng.random_range(1..120);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.random_bool(0.6) { t } else { rng.random_range(0..c) })
            .collect();
        let r = compute_metrics(&truth, &pred, c).unwrap();
        let (o, a, k) = support::accuracy_triple(&truth, &pred, c);
        worst = worst
            .max((r.overall_accuracy - o).abs())
            .max((r.average_accuracy - a).abs())
            .max((r.kappa - k).abs());
    }
    for _ in 0..60 {
        let n = rng.random_range(3..80);
        let z = support::uniform(&mut rng, n, 3, -1.0, 1.0);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        labels[0] = 0;
        labels[1] = 1;
        worst = worst.max((silhouette(&z, &labels).unwrap() - support::silhouette(&z, &labels)).abs());
    }
    l.record(
        9,
        "metric oracles",
        worst < METRIC_TOL,
        format!("reference kappa {:.6}; max deviation from counting oracles {worst:.2e} < {METRIC_TOL:e}", reference.kappa),
    );
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_manifold"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = walkdir::WalkDir::new(root)
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file() && e.file_name() != "manifest.json")
        .map(|e| e.path().strip_prefix(root).unwrap().to_path_buf())
        .collect();
    out.sort();
    out
}

fn determinism(l: &mut Ledger) {
    let tmp = tempfile::tempdir().unwrap();
    let commands: [&[&str]; 6] = [
        &["generate"],
        &["train"],
        &["map-sensor"],
        &["classify", "--unified", "--knn-sweep"],
        &["translate"],
        &["ablate"],
    ];
    let mut compared = 0;
    let mut differing = Vec::new();
    for cmd in commands {
        let runs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("{}-{i}", cmd[0]))).collect();
        for run in &runs {
            let mut args = cmd.to_vec();
            args.extend(["--preset", "synth-quick", "--seed", "19", "--out", run.to_str().unwrap()]);
            if !cli(&args) {
                differing.push(format!("{} failed", cmd[0]));
            }
        }
        let (x, y) = (files(&runs[0]), files(&runs[1]));
        if x != y {
            differing.push(format!("{}: file sets differ", cmd[0]));
            continue;
        }
        for f in &x {
            compared += 1;
            if fs::read(runs[0].join(f)).unwrap() != fs::read(runs[1].join(f)).unwrap() {
                differing.push(format!("{}: {}", cmd[0], f.display()));
            }
        }
    }
    l.record(
        10,
        "determinism",
        differing.is_empty() && compared > 0,
        if differing.is_empty() {
            format!("{compared} artifacts bit-identical across paired runs of 6 commands")
        } else {
            format!("differences: {}", differing.join(", "))
        },
    );
}

fn extended(l: &mut Ledger) {
    let Some(path) = std::env::var_os("MANIFOLD_MUUFL_DATASET") else {
        l.skip(11, "extended real-data benchmark", "set MANIFOLD_MUUFL_DATASET to an MMDS1 file to run");
        return;
    };
    let mut cfg = ExperimentConfig::preset("muufl-classify").unwrap();
    cfg.training.epochs_per_checkpoint = 5;
    let ds = cfg.dataset(Some(Path::new(&path))).unwrap();
    let t = Trained::run(&cfg, ds);
    let (atr, btr, ate, bte) = (t.train(&t.a), t.train(&t.b), t.test(&t.a), t.test(&t.b));
    let pred = classify_knn_classavg(
        &fuse_embeddings(&[&atr, &btr]).unwrap(),
        &atr.labels,
        &fuse_embeddings(&[&ate, &bte]).unwrap(),
        Some(cfg.classify.k),
    )
    .unwrap();
    let fused = oa(&ate.labels, &pred, t.ds.n_classes());
    println!(
        "INFO 11 extended real-data benchmark: fused KNN OA {:.2}% (informational target {:.0}%, {:.0}s)",
        100.0 * fused,
        100.0 * EXTENDED_OA,
        t.seconds
    );
    l.0.push(Verdict::Skip);
}

fn main() {
    let started = Instant::now();
    let mut l = Ledger(Vec::new());
    gradients(&mut l);
    loss_oracles(&mut l);
    mining(&mut l);

    let cfg = ExperimentConfig::preset("synth").unwrap();
    let with = Trained::run(&cfg, cfg.dataset(None).unwrap());
    alignment(&mut l, &with);
    unified(&mut l, &cfg, &with);
    let mut plain = cfg.clone();
    plain.loss.se_weight_gamma = 0.0;
    let without = Trained::run(&plain, plain.dataset(None).unwrap());
    se_effect(&mut l, &with, &without);
    mapping(&mut l, &cfg, &with);
    translation(&mut l, &cfg, &with);
    metric_oracles(&mut l);
    determinism(&mut l);
    extended(&mut l);

    let count = |f: fn(&Verdict) -> bool| l.0.iter().filter(|v| f(v)).count();
    let (pass, fail, skip) = (
        count(|v| matches!(v, Verdict::Pass)),
        count(|v| matches!(v, Verdict::Fail)),
        count(|v| matches!(v, Verdict::Skip)),
    );
    println!("{pass} passed, {fail} failed, {skip} skipped in {:.1}s", started.elapsed().as_secs_f64());
    if fail > 0 {
        std::process::exit(1);
    }
}
