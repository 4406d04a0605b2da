use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{project_speaker, FeatureBuilder, Features};
use super::{Balancing, HarnessError, TrainConfig};
use crate::augment::derive_seed;
use crate::corpus::{
    apply_label_scheme, balance_augment, balance_undersample, LabeledSample, Protocol, Sample, SplitPlan,
};
use crate::metrics::{write_confusion_png, EvalReport, Prediction};
use crate::model::{save_checkpoint, CctModel, Checkpoint, CheckpointMeta, ModelInput};
use crate::nn::{AdamState, ParamStore, Tensor};
use crate::speaker::{pca_fit, PcaModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: TrainConfig,
    pub seed: u64,
    pub protocol: Protocol,
    pub held_out: String,
    pub class_names: Vec<String>,
    pub train_size: usize,
    pub synthetic: usize,
    pub loss_curve: Vec<f64>,
    pub train_accuracy_curve: Vec<f64>,
    pub val_uar_curve: Vec<f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Which checkpoint produced the reports: `best` or `final`.
    pub selected: String,
    pub train_report: EvalReport,
    pub val_report: Option<EvalReport>,
    pub test_report: Option<EvalReport>,
    /// Not serialised, so result files stay byte-identical across runs.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchLogEntry {
    pub epoch: usize,
    pub batch: usize,
    pub id: String,
}

pub struct TrainOutcome {
    pub result: ExperimentResult,
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub batch_log: Vec<BatchLogEntry>,
}

/// Model-ready split: ids with class targets, features and projected
/// speaker vectors.
struct Prepared {
    train: Vec<LabeledSample>,
    val: Vec<LabeledSample>,
    test: Vec<LabeledSample>,
    synthetic: usize,
    features: Features,
    speakers: HashMap<String, Vec<f64>>,
    pca: Option<PcaModel>,
    class_names: Vec<String>,
}

fn pick(labeled: &HashMap<&str, &LabeledSample>, ids: &[String]) -> Vec<LabeledSample> {
    ids.iter().filter_map(|id| labeled.get(id.as_str()).map(|s| (*s).clone())).collect()
}

fn prepare(samples: &[Sample], base_dir: &Path, plan: &SplitPlan, cfg: &TrainConfig) -> Result<Prepared, HarnessError> {
    cfg.validate()?;
    plan.validate(samples)?;
    let set = apply_label_scheme(samples, cfg.label_scheme);
    let by_id: HashMap<&str, &LabeledSample> = set.samples.iter().map(|s| (s.sample.id.as_str(), s)).collect();
    let originals = pick(&by_id, &plan.train);
    if originals.is_empty() {
        return Err(HarnessError::Config("training split is empty under the label scheme".into()));
    }
    let c = cfg.label_scheme.num_classes();
    let seed = derive_seed(cfg.seed, "balance");
    let train = match cfg.balancing {
        Balancing::Undersample => balance_undersample(&originals, c, seed)?,
        Balancing::Augment => balance_augment(&originals, c, seed, |_, _| Ok(()))?,
        Balancing::None => originals.clone(),
    };
    let val = pick(&by_id, &plan.val);
    let test = pick(&by_id, &plan.test);

    let mut features = Features::default();
    let mut builder = FeatureBuilder::new(cfg, base_dir)?;
    let n_orig = if cfg.balancing == Balancing::Augment { originals.len() } else { train.len() };
    for s in train[..n_orig].iter().chain(&val).chain(&test) {
        builder.add(&s.sample, &mut features)?;
    }
    for s in &train[n_orig..] {
        let src = s.sample.augmented_from.as_deref().unwrap_or_default();
        let source = by_id.get(src).ok_or_else(|| HarnessError::Sample {
            id: s.sample.id.clone(),
            reason: format!("augmentation source `{src}` not found"),
        })?;
        builder.add_synthetic(&s.sample, &source.sample, &mut features)?;
    }

    let (mut speakers, mut pca) = (HashMap::new(), None);
    if cfg.model.fusion.uses_speaker() {
        let fit: Vec<Vec<f64>> = train[..n_orig]
            .iter()
            .map(|s| features.raw_embeddings[&s.sample.id].clone())
            .collect();
        let model = pca_fit(&fit, cfg.model.speaker_dim())?;
        for (id, raw) in &features.raw_embeddings {
            speakers.insert(id.clone(), project_speaker(&model, raw)?);
        }
        pca = Some(model);
    }
    Ok(Prepared {
        synthetic: train.len() - n_orig,
        train,
        val,
        test,
        features,
        speakers,
        pca,
        class_names: set.class_names,
    })
}

fn inputs<'a>(
    items: &[&'a LabeledSample],
    features: &'a Features,
    speakers: &'a HashMap<String, Vec<f64>>,
) -> Result<Vec<ModelInput<'a>>, HarnessError> {
    items
        .iter()
        .map(|s| {
            let id = s.sample.id.as_str();
            Ok(ModelInput {
                image: features.image(id)?,
                speaker: speakers.get(id).map(Vec::as_slice),
            })
        })
        .collect()
}

fn predict(
    model: &CctModel,
    params: &ParamStore,
    items: &[LabeledSample],
    features: &Features,
    speakers: &HashMap<String, Vec<f64>>,
    batch_size: usize,
) -> Result<Vec<Prediction>, HarnessError> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch_size) {
        let refs: Vec<&LabeledSample> = chunk.iter().collect();
        let batch = inputs(&refs, features, speakers)?;
        let mut g = crate::nn::Graph::new();
        let logits = model.logits_graph(&mut g, params, &batch)?;
        let logits = g.value(logits);
        let c = logits.shape()[1];
        for (s, row) in chunk.iter().zip(logits.data().chunks(c)) {
            out.push(Prediction {
                id: s.sample.id.clone(),
                truth: s.class,
                predicted: argmax(row),
            });
        }
    }
    Ok(out)
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn report(
    model: &CctModel,
    params: &ParamStore,
    items: &[LabeledSample],
    p: &Prepared,
    batch_size: usize,
) -> Result<Option<EvalReport>, HarnessError> {
    if items.is_empty() {
        return Ok(None);
    }
    let preds = predict(model, params, items, &p.features, &p.speakers, batch_size)?;
    Ok(Some(EvalReport::from_predictions(preds, &p.class_names)?))
}

/// Trains one model on `plan.train` and evaluates it on every split.
///
/// Balancing, augmentation and the speaker PCA see the training split only.
/// With a non-empty validation split the reports come from the epoch with the
/// best validation UAR (earliest on ties), otherwise from the last epoch.
pub fn train(samples: &[Sample], base_dir: &Path, plan: &SplitPlan, cfg: &TrainConfig) -> Result<TrainOutcome, HarnessError> {
    let started = Instant::now();
    let p = prepare(samples, base_dir, plan, cfg)?;
    let mut model = CctModel::new(cfg.model.clone(), derive_seed(cfg.seed, "init"))?;
    let mut adam = AdamState::new(cfg.learning_rate);

    let mut loss_curve = Vec::new();
    let mut acc_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut batch_log = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;

    let mut order: Vec<usize> = (0..p.train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch/{epoch}"))));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&LabeledSample> = chunk.iter().map(|&i| &p.train[i]).collect();
            let targets: Vec<usize> = items.iter().map(|s| s.class).collect();
            let mut batch = inputs(&items, &p.features, &p.speakers)?;
            let masked: Vec<Tensor> = if cfg.spec_masks.is_empty() {
                Vec::new()
            } else {
                let seed = derive_seed(cfg.seed, &format!("masks/{epoch}"));
                let (h, w) = (cfg.model.image_height, cfg.model.image_width);
                items
                    .iter()
                    .map(|s| p.features.masked_image(&s.sample.id, &cfg.spec_masks, seed, h, w))
                    .collect::<Result<_, _>>()?
            };
            for (input, img) in batch.iter_mut().zip(&masked) {
                input.image = img;
            }
            let (g, loss, logits) = model.loss_graph(&model.params, &batch, &targets)?;
            let grads = g.backward(loss)?;
            loss_sum += g.value(loss).data()[0] * items.len() as f64;
            let c = g.value(logits).shape()[1];
            correct += g
                .value(logits)
                .data()
                .chunks(c)
                .zip(&targets)
                .filter(|(row, &t)| argmax(row) == t)
                .count();
            drop(g);
            adam.step(&mut model.params, &grads)?;
            batch_log.extend(items.iter().map(|s| BatchLogEntry {
                epoch,
                batch: b,
                id: s.sample.id.clone(),
            }));
        }
        let n = p.train.len() as f64;
        loss_curve.push(loss_sum / n);
        let running = correct as f64 / n;
        acc_curve.push(running);

        if let Some(r) = report(&model, &model.params, &p.val, &p, cfg.batch_size)? {
            val_curve.push(r.uar);
            if best.as_ref().is_none_or(|(_, u, _)| r.uar > *u) {
                best = Some((epoch, r.uar, model.params.clone()));
            }
        }
        if let Some(target) = cfg.stop_at_train_accuracy {
            if running >= target {
                let full = report(&model, &model.params, &p.train, &p, cfg.batch_size)?.expect("train split");
                if full.accuracy >= target {
                    break;
                }
            }
        }
    }

    let epochs_run = loss_curve.len();
    let (best_epoch, selected, chosen) = match best {
        Some((e, _, params)) => (e, "best", params),
        None => (epochs_run - 1, "final", model.params.clone()),
    };
    let result = ExperimentResult {
        config: cfg.clone(),
        seed: cfg.seed,
        protocol: plan.protocol,
        held_out: plan.held_out.clone(),
        class_names: p.class_names.clone(),
        train_size: p.train.len(),
        synthetic: p.synthetic,
        loss_curve,
        train_accuracy_curve: acc_curve,
        val_uar_curve: val_curve,
        epochs_run,
        best_epoch,
        selected: selected.into(),
        train_report: report(&model, &chosen, &p.train, &p, cfg.batch_size)?.expect("train split"),
        val_report: report(&model, &chosen, &p.val, &p, cfg.batch_size)?,
        test_report: report(&model, &chosen, &p.test, &p, cfg.batch_size)?,
        wall_clock_secs: 0.0,
    };

    let meta = |tag: &str, epoch: usize| -> Result<CheckpointMeta, HarnessError> {
        Ok(CheckpointMeta {
            config: cfg.model.clone(),
            class_names: p.class_names.clone(),
            tag: tag.into(),
            epoch,
            extra: cfg.to_toml()?,
        })
    };
    let mut best_model = model.clone();
    best_model.params = chosen;
    let best = Checkpoint {
        meta: meta("best", best_epoch)?,
        seed: cfg.seed,
        model: best_model,
        pca: p.pca.clone(),
    };
    let last = Checkpoint {
        meta: meta("final", epochs_run - 1)?,
        seed: cfg.seed,
        model,
        pca: p.pca,
    };
    let mut result = result;
    result.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        result,
        best,
        last,
        batch_log,
    })
}

/// Scores `ids` with a trained checkpoint. Ids excluded by the checkpoint's
/// label scheme are skipped.
pub fn evaluate(ckpt: &Checkpoint, samples: &[Sample], base_dir: &Path, ids: &[String]) -> Result<EvalReport, HarnessError> {
    let cfg = TrainConfig::from_toml(&ckpt.meta.extra)?;
    if cfg.model != ckpt.model.config {
        return Err(HarnessError::Config("checkpoint config does not match its training config".into()));
    }
    let set = apply_label_scheme(samples, cfg.label_scheme);
    let by_id: HashMap<&str, &LabeledSample> = set.samples.iter().map(|s| (s.sample.id.as_str(), s)).collect();
    for id in ids {
        if !samples.iter().any(|s| &s.id == id) {
            return Err(HarnessError::Sample {
                id: id.clone(),
                reason: "not in manifest".into(),
            });
        }
    }
    let items = pick(&by_id, ids);
    if items.is_empty() {
        return Err(HarnessError::Config("nothing to evaluate under the label scheme".into()));
    }
    let mut features = Features::default();
    let mut builder = FeatureBuilder::new(&cfg, base_dir)?;
    for s in &items {
        builder.add(&s.sample, &mut features)?;
    }
    let mut speakers = HashMap::new();
    if cfg.model.fusion.uses_speaker() {
        let pca = ckpt
            .pca
            .as_ref()
            .ok_or_else(|| HarnessError::Config("fusion checkpoint without PCA".into()))?;
        for (id, raw) in &features.raw_embeddings {
            speakers.insert(id.clone(), project_speaker(pca, raw)?);
        }
    }
    let preds = predict(&ckpt.model, &ckpt.model.params, &items, &features, &speakers, cfg.batch_size)?;
    Ok(EvalReport::from_predictions(preds, &ckpt.meta.class_names)?)
}

/// Writes checkpoints, `result.json`, curves, batch log and report files to
/// `dir`. Wall-clock time goes to `timing.json` on its own.
pub fn write_outcome(dir: &Path, out: &TrainOutcome) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    save_checkpoint(dir.join("checkpoint_best.ckpt"), &out.best)?;
    save_checkpoint(dir.join("checkpoint_final.ckpt"), &out.last)?;
    let json = serde_json::to_string_pretty(&out.result)?;
    std::fs::write(dir.join("result.json"), json)?;
    std::fs::write(
        dir.join("timing.json"),
        format!("{{\"wall_clock_secs\": {}}}\n", out.result.wall_clock_secs),
    )?;

    let mut log = std::io::BufWriter::new(std::fs::File::create(dir.join("batch_log.csv"))?);
    writeln!(log, "epoch,batch,id")?;
    for e in &out.batch_log {
        writeln!(log, "{},{},{}", e.epoch, e.batch, e.id)?;
    }
    log.flush()?;
    write_reports(dir, &out.result)
}

fn write_reports(dir: &Path, r: &ExperimentResult) -> Result<(), HarnessError> {
    let mut curves = std::fs::File::create(dir.join("curves.csv"))?;
    writeln!(curves, "epoch,loss,train_accuracy,val_uar")?;
    for (e, (l, a)) in r.loss_curve.iter().zip(&r.train_accuracy_curve).enumerate() {
        let v = r.val_uar_curve.get(e).map_or(String::new(), f64::to_string);
        writeln!(curves, "{e},{l},{a},{v}")?;
    }
    let reports: BTreeMap<&str, &EvalReport> = [
        ("train", Some(&r.train_report)),
        ("val", r.val_report.as_ref()),
        ("test", r.test_report.as_ref()),
    ]
    .into_iter()
    .filter_map(|(k, v)| v.map(|v| (k, v)))
    .collect();
    for (name, rep) in reports {
        rep.write_csv(dir, name)?;
        write_confusion_png(&rep.confusion, dir.join(format!("{name}_confusion.png")))?;
    }
    Ok(())
}

/// Rebuilds the CSV and PNG reports of a run directory from its `result.json`.
pub fn regenerate_report(dir: &Path) -> Result<ExperimentResult, HarnessError> {
    let text = std::fs::read_to_string(dir.join("result.json"))?;
    let r: ExperimentResult = serde_json::from_str(&text)?;
    write_reports(dir, &r)?;
    Ok(r)
}
