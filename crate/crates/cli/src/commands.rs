use std::path::{Path, PathBuf};

use log::info;
use manifold_core::data::{encode_dataset, SensorData};
use manifold_core::inference::{
    classify_knn_classavg, compute_metrics, ensemble_predict, fuse_embeddings, train_classifier,
    unified_cross_eval, Member, Method,
};
use manifold_core::mining::Strategy;
use manifold_core::numerics::{checkpoint, mse};
use manifold_core::training::{
    latent_gap, pooled_silhouette, train_additional_sensor, train_commanet, CheckpointRecord,
    TrainingObserver,
};
use manifold_core::translation::{mean_predictor_mse, predict_latent, train_regressor, translate};
use manifold_core::{
    EmbeddingSet, Error, ExperimentConfig, LossBreakdown, MetricsReport, MultimodalDataset, Result,
    SensorAutoencoder, Split, Tensor, TrainingPlan, TrainingReport, TripletSensor,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::run::{file_error, JsonLines, Staging};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum Action {
    Generate,
    Train,
    MapSensor,
    Classify { unified: bool, knn_sweep: bool },
    Translate,
    Ablate,
}

/// A fully resolved command: overrides are already folded into `config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Invocation {
    pub action: Action,
    pub config: String,
    pub dataset: Option<PathBuf>,
    /// Output directory of an earlier run whose models are reused.
    pub from: Option<PathBuf>,
}

pub fn execute(inv: &Invocation, out: &Path) -> Result<PathBuf> {
    let cfg = ExperimentConfig::from_toml(&inv.config)?;
    let mut st = Staging::new(out)?;
    st.write("config.toml", inv.config.as_bytes())?;
    let ds = cfg.dataset(inv.dataset.as_deref())?;
    if inv.action == Action::Generate {
        st.write("dataset.mmds", &encode_dataset(&ds)?)?;
        info!("generated {} samples over sensors {:?}", ds.len(), ds.sensor_ids());
        return st.commit(cfg.seed, inv.clone());
    }
    let split = cfg.split(&ds)?;
    st.write_json("split.json", &split)?;
    let mut ctx = Context {
        cfg: &cfg,
        ds: &ds,
        split: &split,
        st,
    };
    match &inv.action {
        Action::Generate => unreachable!(),
        Action::Train => {
            ctx.manifold(None)?;
        }
        Action::MapSensor => ctx.map_sensor(inv.from.as_deref())?,
        Action::Classify { unified, knn_sweep } => ctx.classify(inv.from.as_deref(), *unified, *knn_sweep)?,
        Action::Translate => ctx.translate(inv.from.as_deref())?,
        Action::Ablate => ctx.ablate()?,
    }
    ctx.st.commit(cfg.seed, inv.clone())
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    ds: &'a MultimodalDataset,
    split: &'a Split,
    st: Staging,
}

/// Sensor models of a run; the first two form the triplet pair.
struct Models(Vec<SensorAutoencoder>);

impl Models {
    fn get(&self, id: &str) -> Result<&SensorAutoencoder> {
        self.0
            .iter()
            .find(|m| m.sensor_id() == id)
            .ok_or_else(|| Error::Config(format!("no trained model for sensor {id}")))
    }
}

#[derive(Serialize)]
struct EpochLine<'a> {
    checkpoint: usize,
    epoch: usize,
    #[serde(flatten)]
    loss: &'a LossBreakdown,
}

struct LogObserver<'s> {
    st: &'s mut Staging,
    epochs: JsonLines,
    checkpoints: JsonLines,
}

impl TrainingObserver for LogObserver<'_> {
    fn epoch(&mut self, checkpoint: usize, epoch: usize, loss: &LossBreakdown) {
        if let Err(e) = self.epochs.record(&EpochLine { checkpoint, epoch, loss }) {
            log::error!("{e}");
        }
    }

    fn checkpoint(
        &mut self,
        record: &CheckpointRecord,
        model_a: &SensorAutoencoder,
        model_b: &SensorAutoencoder,
    ) -> Result<Option<String>> {
        let rel = format!("models/checkpoint-{}", record.index);
        let dir = self.st.dir(&rel)?;
        for m in [model_a, model_b] {
            m.save(&dir, m.sensor_id())?;
            self.st.path(&format!("{rel}/{}.toml", m.sensor_id()))?;
            self.st.path(&format!("{rel}/{}.maln", m.sensor_id()))?;
        }
        self.checkpoints.record(&json!({
            "checkpoint": record.index,
            "triplet_sensor": record.triplet_sensor,
            "hard": record.mining.hard,
            "semi_hard": record.mining.semi_hard,
            "easy": record.mining.easy,
            "silhouette": record.silhouette,
            "snapshot": rel,
        }))?;
        info!(
            "checkpoint {} ({}): silhouette {:.4}, loss {:.4}",
            record.index,
            record.triplet_sensor,
            record.silhouette,
            record.history.last().map_or(f64::NAN, |l| l.total)
        );
        Ok(Some(rel))
    }
}

fn build_pair(cfg: &ExperimentConfig, ds: &MultimodalDataset) -> Result<(SensorAutoencoder, SensorAutoencoder)> {
    let [a, b] = &cfg.data.sensors;
    Ok((
        SensorAutoencoder::build(&cfg.autoencoder(a, ds.sensor(a)?.dim()), cfg.init_seed(0))?,
        SensorAutoencoder::build(&cfg.autoencoder(b, ds.sensor(b)?.dim()), cfg.init_seed(1))?,
    ))
}

/// Summary of a trained pair on held-out samples.
#[derive(Debug, Clone, Serialize)]
struct PairSummary {
    test_silhouette: f64,
    test_anchor_gap: f64,
    fused_knn: MetricsReport,
}

fn embed_all(m: &SensorAutoencoder, ds: &MultimodalDataset, split: &Split) -> Result<(EmbeddingSet, EmbeddingSet)> {
    Ok((m.embed(ds, &split.train)?, m.embed(ds, &split.test)?))
}

fn summarize_pair(
    cfg: &ExperimentConfig,
    ds: &MultimodalDataset,
    split: &Split,
    a: &SensorAutoencoder,
    b: &SensorAutoencoder,
) -> Result<PairSummary> {
    let (atr, ate) = embed_all(a, ds, split)?;
    let (btr, bte) = embed_all(b, ds, split)?;
    let pred = classify_knn_classavg(
        &fuse_embeddings(&[&atr, &btr])?,
        &atr.labels,
        &fuse_embeddings(&[&ate, &bte])?,
        Some(cfg.classify.k),
    )?;
    Ok(PairSummary {
        test_silhouette: pooled_silhouette(&ate, &bte, cfg.training.silhouette_limit)?,
        test_anchor_gap: latent_gap(&ate.z, &bte.z),
        fused_knn: compute_metrics(&ate.labels, &pred, ds.n_classes())?,
    })
}

fn report_line(r: &MetricsReport) -> String {
    format!(
        "OA {:.2}%  AA {:.2}%  kappa {:.4}",
        100.0 * r.overall_accuracy,
        100.0 * r.average_accuracy,
        r.kappa
    )
}

fn metric_record(r: &MetricsReport) -> serde_json::Value {
    json!({
        "overall_accuracy": r.overall_accuracy,
        "average_accuracy": r.average_accuracy,
        "kappa": r.kappa,
    })
}

impl Context<'_> {
    /// The shared manifold: loaded from `from`, or trained and saved here.
    fn manifold(&mut self, from: Option<&Path>) -> Result<Models> {
        if let Some(dir) = from {
            let models = dir.join("models");
            let mut out = Vec::new();
            for id in &self.cfg.data.sensors {
                out.push(SensorAutoencoder::load(&models, id)?);
            }
            if let Some(c) = &self.cfg.data.extra_sensor {
                if models.join(format!("{c}.maln")).exists() {
                    out.push(SensorAutoencoder::load(&models, c)?);
                }
            }
            info!("loaded {} models from {}", out.len(), models.display());
            return Ok(Models(out));
        }
        let (mut a, mut b) = build_pair(self.cfg, self.ds)?;
        let plan = self.cfg.training_plan();
        let report = {
            let epochs = self.st.jsonl("logs/epochs.jsonl")?;
            let checkpoints = self.st.jsonl("logs/checkpoints.jsonl")?;
            let mut obs = LogObserver {
                st: &mut self.st,
                epochs,
                checkpoints,
            };
            let report = train_commanet(self.ds, &mut a, &mut b, &self.split.train, &plan, &mut obs)?;
            obs.epochs.finish()?;
            obs.checkpoints.finish()?;
            report
        };
        self.save_models(&[&a, &b])?;
        let summary = summarize_pair(self.cfg, self.ds, self.split, &a, &b)?;
        println!(
            "silhouette {:.4} -> {:.4} (test {:.4}); fused KNN {}",
            report.initial_silhouette,
            report.final_silhouette(),
            summary.test_silhouette,
            report_line(&summary.fused_knn)
        );
        self.st.write_json(
            "metrics/train.json",
            &json!({
                "initial_silhouette": report.initial_silhouette,
                "final_silhouette": report.final_silhouette(),
                "checkpoint_silhouettes": report.checkpoints.iter().map(|c| c.silhouette).collect::<Vec<_>>(),
                "final_loss": report.checkpoints.last().and_then(|c| c.history.last()),
                "test_silhouette": summary.test_silhouette,
                "test_anchor_gap": summary.test_anchor_gap,
                "fused_knn": metric_record(&summary.fused_knn),
            }),
        )?;
        Ok(Models(vec![a, b]))
    }

    fn save_models(&mut self, models: &[&SensorAutoencoder]) -> Result<()> {
        let dir = self.st.dir("models")?;
        for m in models {
            m.save(&dir, m.sensor_id())?;
            self.st.path(&format!("models/{}.toml", m.sensor_id()))?;
            self.st.path(&format!("models/{}.maln", m.sensor_id()))?;
        }
        Ok(())
    }

    fn map_sensor(&mut self, from: Option<&Path>) -> Result<()> {
        let c_id = self
            .cfg
            .data
            .extra_sensor
            .clone()
            .ok_or_else(|| Error::Config("data.extra_sensor is not set".into()))?;
        let models = self.manifold(from)?;
        let frozen = models.get(&self.cfg.data.sensors[0])?;
        let mut c = SensorAutoencoder::build(
            &self.cfg.autoencoder(&c_id, self.ds.sensor(&c_id)?.dim()),
            self.cfg.init_seed(2),
        )?;
        let before = frozen.encoder_digest();
        let report = train_additional_sensor(self.ds, frozen, &mut c, &self.split.train, &self.cfg.mapping_plan())?;
        let after = frozen.encoder_digest();
        println!("frozen encoder {}: sha256 {before} before, {after} after", frozen.sensor_id());
        if before != after {
            return Err(Error::Numeric(format!("frozen encoder {} changed", frozen.sensor_id())));
        }
        let mut log = self.st.jsonl("logs/mapping.jsonl")?;
        for (i, e) in report.history.iter().enumerate() {
            log.record(&json!({"epoch": i + 1, "loss": e.loss, "latent_gap": e.latent_gap}))?;
        }
        log.finish()?;
        self.save_models(&[&c])?;

        let (atr, ate) = embed_all(frozen, self.ds, self.split)?;
        let cte = c.embed(self.ds, &self.split.test)?;
        let cross = unified_cross_eval(&[&atr], &[&ate, &cte], &Method::Knn { k: Some(self.cfg.classify.k) }, self.ds.n_classes())?;
        let test_gap = latent_gap(&ate.z, &cte.z);
        println!(
            "latent gap {:.5} -> {:.5} (test {:.5}); {} on {}: OA {:.2}%, on {}: OA {:.2}%",
            report.initial_gap,
            report.final_gap,
            test_gap,
            frozen.sensor_id(),
            frozen.sensor_id(),
            100.0 * cross[0].report.overall_accuracy,
            c_id,
            100.0 * cross[1].report.overall_accuracy
        );
        if report.reached_threshold == Some(false) {
            log::warn!("latent gap {:.5} above the configured threshold", report.final_gap);
        }
        self.st.write_json(
            "metrics/mapping.json",
            &json!({
                "sensor": c_id,
                "initial_gap": report.initial_gap,
                "final_gap": report.final_gap,
                "test_gap": test_gap,
                "gap_threshold": self.cfg.mapping.gap_threshold,
                "reached_threshold": report.reached_threshold,
                "frozen_digest_before": before,
                "frozen_digest_after": after,
                "frozen_unchanged": before == after,
                "same_sensor": metric_record(&cross[0].report),
                "cross_sensor": metric_record(&cross[1].report),
            }),
        )
    }

    fn classify(&mut self, from: Option<&Path>, unified: bool, knn_sweep: bool) -> Result<()> {
        let models = self.manifold(from)?;
        let n_classes = self.ds.n_classes();
        let sets: Vec<(EmbeddingSet, EmbeddingSet)> =
            models.0.iter().map(|m| embed_all(m, self.ds, self.split)).collect::<Result<_>>()?;
        let (train_sets, test_sets): (Vec<&EmbeddingSet>, Vec<&EmbeddingSet>) =
            sets.iter().take(2).map(|(a, b)| (a, b)).unzip();
        let xtr = fuse_embeddings(&train_sets)?;
        let xte = fuse_embeddings(&test_sets)?;
        let ytr = &train_sets[0].labels;
        let yte = &test_sets[0].labels;

        let knn = Member::Knn {
            train: xtr.clone(),
            labels: ytr.clone(),
            k: Some(self.cfg.classify.k),
        };
        let networks: Vec<Member> = (0..self.cfg.classify.networks)
            .into_par_iter()
            .map(|i| Ok(Member::Network(train_classifier(&xtr, ytr, n_classes, &self.cfg.network_plan(i))?)))
            .collect::<Result<_>>()?;
        let rule = self.cfg.classify.combine;
        let p_knn = knn.predict(&xte)?;
        let p_net = if networks.is_empty() {
            None
        } else {
            Some(ensemble_predict(&networks, &xte, n_classes, rule)?)
        };
        let mut all = networks.clone();
        all.push(knn);
        let p_all = ensemble_predict(&all, &xte, n_classes, rule)?;

        let mut reports = serde_json::Map::new();
        let mut text = String::new();
        let mut add = |key: &str, title: String, r: &MetricsReport| {
            println!("{title:<24}{}", report_line(r));
            text.push_str(&format!("# {title}\n{}\n", r.to_text()));
            reports.insert(key.into(), serde_json::to_value(r).expect("serializes"));
        };
        add("knn", format!("fused KNN (k={}):", self.cfg.classify.k), &compute_metrics(yte, &p_knn, n_classes)?);
        if let Some(p) = &p_net {
            add("networks", format!("fused networks (x{}):", networks.len()), &compute_metrics(yte, p, n_classes)?);
        }
        add("ensemble", "fused networks + KNN:".into(), &compute_metrics(yte, &p_all, n_classes)?);
        self.st.write_json("metrics/classify.json", &reports)?;
        self.st.write("metrics/classify.txt", text.as_bytes())?;

        let mut csv = String::from("sample_id,truth,knn,networks,ensemble\n");
        for (i, &id) in test_sets[0].sample_ids.iter().enumerate() {
            let net = p_net.as_ref().map_or(String::new(), |p| p[i].to_string());
            csv.push_str(&format!("{id},{},{},{net},{}\n", yte[i], p_knn[i], p_all[i]));
        }
        self.st.write("predictions.csv", csv.as_bytes())?;

        if unified {
            let b_id = &self.cfg.data.sensors[1];
            let untrained = SensorAutoencoder::build(
                &self.cfg.autoencoder(b_id, self.ds.sensor(b_id)?.dim()),
                self.cfg.init_seed(3),
            )?;
            let mut control = untrained.embed(self.ds, &self.split.test)?;
            control.sensor_id = format!("{b_id}-untrained");
            let trains: Vec<&EmbeddingSet> = sets.iter().map(|s| &s.0).collect();
            let mut tests: Vec<&EmbeddingSet> = sets.iter().map(|s| &s.1).collect();
            tests.push(&control);
            let mut log = self.st.jsonl("metrics/unified.jsonl")?;
            let methods = [
                ("knn", Method::Knn { k: Some(self.cfg.classify.k) }),
                ("network", Method::Network(self.cfg.network_plan(0))),
            ];
            for (name, method) in methods {
                let entries = unified_cross_eval(&trains, &tests, &method, n_classes)?;
                println!("unified {name}: rows train sensor, columns test sensor (OA %)");
                let ids: Vec<&str> = tests.iter().map(|s| s.sensor_id.as_str()).collect();
                println!("  {:>12} {}", "", ids.iter().map(|i| format!("{i:>10}")).collect::<String>());
                for row in entries.chunks(tests.len()) {
                    let cells: String = row
                        .iter()
                        .map(|e| format!("{:>10.2}", 100.0 * e.report.overall_accuracy))
                        .collect();
                    println!("  {:>12} {cells}", row[0].train_sensor);
                }
                for e in &entries {
                    let mut rec = metric_record(&e.report);
                    rec["method"] = json!(name);
                    rec["train_sensor"] = json!(e.train_sensor);
                    rec["test_sensor"] = json!(e.test_sensor);
                    log.record(&rec)?;
                }
            }
            log.finish()?;
        }

        if knn_sweep {
            let mut log = self.st.jsonl("metrics/knn_sweep.jsonl")?;
            let rows: Vec<(usize, MetricsReport)> = self
                .cfg
                .classify
                .sweep
                .par_iter()
                .map(|&k| {
                    let p = classify_knn_classavg(&xtr, ytr, &xte, Some(k))?;
                    Ok((k, compute_metrics(yte, &p, n_classes)?))
                })
                .collect::<Result<_>>()?;
            for (k, r) in rows {
                println!("k={k:<4} {}", report_line(&r));
                let mut rec = metric_record(&r);
                rec["k"] = json!(k);
                log.record(&rec)?;
            }
            log.finish()?;
        }
        Ok(())
    }

    fn translate(&mut self, from: Option<&Path>) -> Result<()> {
        let models = self.manifold(from)?;
        let t = &self.cfg.translate;
        let src = models.get(&t.available)?;
        let dst = models.get(&t.missing)?;
        let (str_, ste) = embed_all(src, self.ds, self.split)?;
        let (dtr, dte) = embed_all(dst, self.ds, self.split)?;
        let (reg, cv) = train_regressor(&str_.z, &dtr.z, &self.cfg.regressor_plan())?;

        let z_pred = predict_latent(&reg, &ste.z)?;
        let truth = self.ds.rows(&t.missing, &self.split.test)?;
        let translated = translate(&reg, dst, &ste.z)?;
        let mean_code = column_mean(&dtr.z);
        let mean_codes = Tensor::from_rows(&vec![mean_code.as_slice(); ste.len()])?;
        let latent_mse = mse(&z_pred, &dte.z)?;
        let baseline_latent = mean_predictor_mse(&mean_code, &dte.z)?;
        let recon_mse = mse(&translated, &truth)?;
        let baseline_recon = mse(&dst.decode(&mean_codes)?, &truth)?;
        let own_recon = mse(&dst.decode(&dte.z)?, &truth)?;
        println!(
            "{} -> {}: cross-validated latent MSE {:.5} ± {:.5} (mean predictor {:.5})",
            t.available, t.missing, cv.mean_mse, cv.std_mse, cv.baseline_mse
        );
        println!(
            "test latent MSE {latent_mse:.5} (mean predictor {baseline_latent:.5}); \
             reconstruction MSE {recon_mse:.5} (mean code {baseline_recon:.5}, own encoder {own_recon:.5})"
        );

        let named = reg.network.named_params("regressor");
        let refs: Vec<(&str, &Tensor)> = named.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        let path = self.st.path("models/regressor.maln")?;
        checkpoint::save_tensors(&path, &refs)?;
        self.st.write_json("metrics/regressor_cv.json", &cv)?;
        self.st.write_json(
            "metrics/translate.json",
            &json!({
                "available": t.available,
                "missing": t.missing,
                "cv_latent_mse_mean": cv.mean_mse,
                "cv_latent_mse_std": cv.std_mse,
                "test_latent_mse": latent_mse,
                "test_latent_mse_mean_predictor": baseline_latent,
                "test_reconstruction_mse": recon_mse,
                "test_reconstruction_mse_mean_code": baseline_recon,
                "test_reconstruction_mse_own_encoder": own_recon,
            }),
        )?;
        let labels = self.split.test.iter().map(|&i| self.ds.labels()[i]).collect();
        let out = MultimodalDataset::new(
            vec![
                SensorData {
                    id: t.available.clone(),
                    data: self.ds.rows(&t.available, &self.split.test)?,
                },
                SensorData {
                    id: t.missing.clone(),
                    data: translated,
                },
            ],
            labels,
            self.ds.n_classes(),
        )?;
        self.st.write("translated.mmds", &encode_dataset(&out.quantized())?)
    }

    fn ablate(&mut self) -> Result<()> {
        let gamma_on = if self.cfg.loss.se_weight_gamma > 0.0 {
            self.cfg.loss.se_weight_gamma
        } else {
            0.2
        };
        let mut grid = Vec::new();
        for gamma in [0.0, gamma_on] {
            for strategy in [Strategy::Hard, Strategy::SemiHard] {
                for sensor in [TripletSensor::A, TripletSensor::B, TripletSensor::Alternating] {
                    grid.push((gamma, strategy, sensor));
                }
            }
        }
        let (cfg, ds, split) = (self.cfg, self.ds, self.split);
        let results: Vec<(TrainingReport, PairSummary)> = grid
            .par_iter()
            .map(|&(gamma, strategy, sensor)| {
                let mut plan: TrainingPlan = cfg.training_plan();
                plan.loss.se_weight_gamma = gamma;
                plan.mining.strategy = strategy;
                plan.triplet_sensor = sensor;
                let (mut a, mut b) = build_pair(cfg, ds)?;
                let report = train_commanet(ds, &mut a, &mut b, &split.train, &plan, &mut ())?;
                info!("ablation gamma={gamma} {strategy} {sensor}: {:.4}", report.final_silhouette());
                Ok((report, summarize_pair(cfg, ds, split, &a, &b)?))
            })
            .collect::<Result<_>>()?;

        let mut log = self.st.jsonl("metrics/ablation.jsonl")?;
        println!("{:>6} {:>10} {:>8} {:>10} {:>10} {:>8}", "gamma", "strategy", "triplet", "train sil", "test sil", "KNN OA");
        for (&(gamma, strategy, sensor), (report, summary)) in grid.iter().zip(&results) {
            println!(
                "{gamma:>6} {strategy:>10} {sensor:>8} {:>10.4} {:>10.4} {:>7.2}%",
                report.final_silhouette(),
                summary.test_silhouette,
                100.0 * summary.fused_knn.overall_accuracy
            );
            log.record(&json!({
                "gamma": gamma,
                "strategy": strategy,
                "triplet_sensor": sensor,
                "initial_silhouette": report.initial_silhouette,
                "final_silhouette": report.final_silhouette(),
                "test_silhouette": summary.test_silhouette,
                "test_anchor_gap": summary.test_anchor_gap,
                "fused_knn_overall_accuracy": summary.fused_knn.overall_accuracy,
            }))?;
        }
        log.finish()?;
        let half = grid.len() / 2;
        let pairs: Vec<serde_json::Value> = (0..half)
            .map(|i| {
                let (_, strategy, sensor) = grid[i];
                let off = results[i].0.final_silhouette();
                let on = results[i + half].0.final_silhouette();
                json!({
                    "strategy": strategy,
                    "triplet_sensor": sensor,
                    "silhouette_without_se": off,
                    "silhouette_with_se": on,
                    "difference": on - off,
                })
            })
            .collect();
        self.st.write_json("metrics/ablation_se.json", &json!({ "gamma": gamma_on, "pairs": pairs }))
    }
}

fn column_mean(z: &Tensor) -> Vec<f64> {
    let mut m = vec![0.0; z.cols()];
    for row in z.iter_rows() {
        m.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    m.iter_mut().for_each(|a| *a /= z.rows() as f64);
    m
}

/// Absolute form of a user-supplied path, when it exists.
pub fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

pub fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| file_error(path, e))
}
