//! Command-line front end. `main` only parses arguments and maps errors to
//! exit codes; everything else lives here so tests can drive it directly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sercct::audio::{
    load_wav, mel_spectrogram, spectrogram_to_image, write_matrix, write_spectrogram_png, write_wav, AudioError,
    SpectrogramConfig,
};
use sercct::augment::{apply_time_augmentation, derive_seed, AugmentRanges};
use sercct::corpus::{load_manifest, split_loso, write_manifest, CorpusError, Protocol, Sample, SplitPlan};
use sercct::harness::{
    evaluate, gen_desk_corpus, regenerate_report, resolve_audio, run_cross_corpus, run_loso, train, write_outcome,
    CrossCorpusConfig, DeskCorpusSpec, HarnessError, TrainConfig,
};
use sercct::metrics::write_confusion_png;
use sercct::model::{load_checkpoint, FusionVariant, ModelError};
use sercct::speaker::{
    load_store, mds_embed, pca_fit, save_store, write_mds_csv, write_scatter_png, EmbeddingStore, MdsPoint,
    SpeakerEmbedding, SpeakerError, ToySpeakerEncoder,
};
use sercct::corpus::split_cross_corpus;

#[derive(Debug, Parser)]
#[command(name = "sercct", version, about = "Speech emotion recognition with compact convolutional transformers")]
pub struct Cli {
    /// Training config (TOML). Missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Log-Mel spectrogram of one WAV file as a PNG and optional raw matrix.
    Spectrogram {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, default_value_t = 224)]
        height: usize,
        #[arg(long, default_value_t = 224)]
        width: usize,
    },
    /// Writes five augmented copies of every manifest entry.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generates the synthetic desk corpus.
    GenDeskCorpus {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        speakers: usize,
        #[arg(long, default_value_t = 16)]
        per_class: usize,
        #[arg(long, value_delimiter = ',', default_value = "desk")]
        corpora: Vec<String>,
    },
    /// Toy speaker embeddings for every manifest entry.
    Embed {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fits PCA to a store and writes the projected store.
    PcaFit {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the fitted model as JSON.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Classical MDS of a store's Euclidean distances.
    Mds {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Trains one model.
    Train {
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        fusion: Option<Fusion>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Scores a checkpoint on manifest entries.
    Eval {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Restrict to one corpus.
        #[arg(long)]
        corpus: Option<String>,
        /// Restrict to one speaker.
        #[arg(long)]
        speaker: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Full cross-corpus rotation for every variant and balancing mode.
    CrossCorpus {
        #[command(flatten)]
        data: Data,
        /// Corpus roles (TOML). Defaults to the standard rotation.
        #[arg(long)]
        protocol: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Leave-one-speaker-out evaluation.
    Loso {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        fusion: Option<Fusion>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Rebuilds metric CSVs and plots from a run directory.
    Report { run_dir: PathBuf },
}

#[derive(Debug, Args)]
pub struct Data {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Base for relative audio paths. Defaults to the manifest's directory.
    #[arg(long)]
    pub audio_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Hold out this speaker (leave-one-speaker-out fold).
    #[arg(long, conflicts_with = "test_corpus")]
    pub test_speaker: Option<String>,
    /// Hold out this corpus.
    #[arg(long)]
    pub test_corpus: Option<String>,
    #[arg(long, value_delimiter = ',', requires = "test_corpus")]
    pub train_corpora: Vec<String>,
    #[arg(long, value_delimiter = ',', requires = "test_corpus")]
    pub val_corpora: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Fusion {
    None,
    Downstream,
    EndToEnd,
    EndToEndToken,
}

impl From<Fusion> for FusionVariant {
    fn from(f: Fusion) -> Self {
        match f {
            Fusion::None => FusionVariant::None,
            Fusion::Downstream => FusionVariant::Downstream,
            Fusion::EndToEnd => FusionVariant::EndToEnd,
            Fusion::EndToEndToken => FusionVariant::EndToEndToken,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

macro_rules! via_harness {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Harness(e.into())
            }
        }
    )*};
}
via_harness!(CorpusError, AudioError, SpeakerError, ModelError, std::io::Error, serde_json::Error);

impl CliError {
    /// 2 for bad invocations or configs, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Harness(HarnessError::Config(_)) => 2,
            _ => 1,
        }
    }
}

impl Cli {
    fn train_config(&self) -> Result<TrainConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

impl Data {
    fn load(&self) -> Result<(Vec<Sample>, PathBuf), CliError> {
        let samples = load_manifest(&self.manifest)?;
        let root = self.audio_root.clone().unwrap_or_else(|| {
            self.manifest.parent().map(Path::to_path_buf).unwrap_or_default()
        });
        Ok((samples, root))
    }
}

fn manifest_root(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn plan_for(samples: &[Sample], split: &SplitArgs) -> Result<SplitPlan, CliError> {
    if let Some(spk) = &split.test_speaker {
        return split_loso(samples)?
            .into_iter()
            .find(|p| &p.held_out == spk)
            .ok_or_else(|| CliError::Usage(format!("speaker `{spk}` not in manifest")));
    }
    if let Some(test) = &split.test_corpus {
        let val: Vec<&str> = split.val_corpora.iter().map(String::as_str).collect();
        let train: Vec<&str> = if split.train_corpora.is_empty() {
            let mut all: Vec<&str> = samples.iter().map(|s| s.corpus_id.as_str()).collect();
            all.sort_unstable();
            all.dedup();
            all.into_iter().filter(|c| c != test && !val.contains(c)).collect()
        } else {
            split.train_corpora.iter().map(String::as_str).collect()
        };
        return Ok(split_cross_corpus(samples, &train, &val, test)?);
    }
    Ok(SplitPlan {
        protocol: Protocol::Loso,
        held_out: String::new(),
        train: samples.iter().map(|s| s.id.clone()).collect(),
        val: Vec::new(),
        test: Vec::new(),
    })
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Spectrogram {
            input,
            out,
            matrix,
            height,
            width,
        } => {
            let cfg = match &cli.config {
                Some(_) => cli.train_config()?.spectrogram,
                None => SpectrogramConfig::default(),
            };
            let mel = mel_spectrogram(&load_wav(input)?, &cfg)?;
            write_spectrogram_png(out, &spectrogram_to_image(&mel, *height, *width)?)?;
            if let Some(m) = matrix {
                write_matrix(std::fs::File::create(m)?, &mel.values)?;
            }
        }
        Command::Augment { manifest, out_dir } => {
            let cfg = cli.train_config()?;
            let root = manifest_root(manifest);
            let samples = load_manifest(manifest)?;
            augment_manifest(&samples, &root, out_dir, &cfg.augment, cfg.seed)?;
        }
        Command::GenDeskCorpus {
            out_dir,
            speakers,
            per_class,
            corpora,
        } => {
            let spec = DeskCorpusSpec {
                corpora: corpora.clone(),
                speakers: *speakers,
                per_class: *per_class,
                seed: cli.seed.unwrap_or(0),
                ..DeskCorpusSpec::default()
            };
            let n = gen_desk_corpus(out_dir, &spec)?.len();
            println!("wrote {n} utterances to {}", out_dir.display());
        }
        Command::Embed { manifest, out } => {
            let root = manifest_root(manifest);
            let enc = ToySpeakerEncoder::default();
            let mut store = EmbeddingStore::new();
            for s in load_manifest(manifest)? {
                let w = load_wav(resolve_audio(&root, &s.audio_path))?;
                store.insert(enc.embed(&s.id, &w)?)?;
            }
            save_store(out, &store)?;
        }
        Command::PcaFit {
            store,
            k,
            out,
            model_out,
        } => {
            let store = load_store(store)?;
            let vectors: Vec<Vec<f64>> = store.records().iter().map(|r| r.vector.clone()).collect();
            let pca = pca_fit(&vectors, *k)?;
            let mut projected = EmbeddingStore::new();
            for r in store.records() {
                projected.insert(SpeakerEmbedding {
                    utterance_id: r.utterance_id.clone(),
                    vector: pca.project(&r.vector)?,
                })?;
            }
            save_store(out, &projected)?;
            if let Some(p) = model_out {
                std::fs::write(p, serde_json::to_string_pretty(&pca)?)?;
            }
        }
        Command::Mds {
            store,
            manifest,
            out_dir,
        } => {
            let store = load_store(store)?;
            let speakers: BTreeMap<String, String> = load_manifest(manifest)?
                .into_iter()
                .map(|s| (s.id, s.speaker_id))
                .collect();
            let recs = store.records();
            let dist: Vec<Vec<f64>> = recs
                .iter()
                .map(|a| {
                    recs.iter()
                        .map(|b| a.vector.iter().zip(&b.vector).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                        .collect()
                })
                .collect();
            let xy = mds_embed(&dist, 2)?;
            let points: Vec<MdsPoint> = recs
                .iter()
                .zip(xy)
                .map(|(r, p)| MdsPoint {
                    id: r.utterance_id.clone(),
                    speaker: speakers.get(&r.utterance_id).cloned().unwrap_or_default(),
                    x: p[0],
                    y: p[1],
                })
                .collect();
            std::fs::create_dir_all(out_dir)?;
            write_mds_csv(out_dir.join("mds.csv"), &points)?;
            write_scatter_png(out_dir.join("mds.png"), &points)?;
        }
        Command::Train {
            data,
            split,
            fusion,
            out_dir,
        } => {
            let mut cfg = cli.train_config()?;
            if let Some(f) = fusion {
                cfg.model.fusion = (*f).into();
            }
            let (samples, root) = data.load()?;
            let plan = plan_for(&samples, split)?;
            let out = train(&samples, &root, &plan, &cfg)?;
            write_outcome(out_dir, &out)?;
            summarise("train", &Some(out.result.train_report.clone()));
            summarise("val", &out.result.val_report);
            summarise("test", &out.result.test_report);
        }
        Command::Eval {
            data,
            checkpoint,
            corpus,
            speaker,
            out_dir,
        } => {
            let ckpt = load_checkpoint(checkpoint)?;
            let (samples, root) = data.load()?;
            let ids: Vec<String> = samples
                .iter()
                .filter(|s| corpus.as_ref().is_none_or(|c| &s.corpus_id == c))
                .filter(|s| speaker.as_ref().is_none_or(|p| &s.speaker_id == p))
                .map(|s| s.id.clone())
                .collect();
            let report = evaluate(&ckpt, &samples, &root, &ids)?;
            std::fs::create_dir_all(out_dir)?;
            report.write_csv(out_dir, "eval").map_err(HarnessError::from)?;
            write_confusion_png(&report.confusion, out_dir.join("eval_confusion.png")).map_err(HarnessError::from)?;
            summarise("eval", &Some(report));
        }
        Command::CrossCorpus { data, protocol, out_dir } => {
            let cfg = cli.train_config()?;
            let cc: CrossCorpusConfig = match protocol {
                Some(p) => toml::from_str(&std::fs::read_to_string(p)?)
                    .map_err(|e| HarnessError::Config(e.to_string()))?,
                None => CrossCorpusConfig::default(),
            };
            let (samples, root) = data.load()?;
            let rows = run_cross_corpus(&samples, &root, &cc, &cfg, Some(out_dir))?;
            for r in rows {
                println!(
                    "{} {} {}: acc {:.4} uar {:.4} f1 {:.4}",
                    r.test_corpus,
                    r.variant,
                    r.balancing.short(),
                    r.accuracy,
                    r.uar,
                    r.macro_f1
                );
            }
        }
        Command::Loso { data, fusion, out_dir } => {
            let mut cfg = cli.train_config()?;
            if let Some(f) = fusion {
                cfg.model.fusion = (*f).into();
            }
            let (samples, root) = data.load()?;
            let s = run_loso(&samples, &root, &cfg, Some(out_dir))?;
            println!("loso over {} speakers: acc {:.4} uar {:.4} f1 {:.4}", s.folds.len(), s.accuracy, s.uar, s.macro_f1);
        }
        Command::Report { run_dir } => {
            let r = regenerate_report(run_dir)?;
            summarise("test", &r.test_report);
        }
    }
    Ok(())
}

fn summarise(name: &str, r: &Option<sercct::metrics::EvalReport>) {
    if let Some(r) = r {
        println!("{name}: acc {:.4} uar {:.4} macro-f1 {:.4}", r.accuracy, r.uar, r.macro_f1);
    }
}

/// Five augmented copies per sample (one per kind), written under `out_dir`
/// with a manifest listing originals and copies.
pub fn augment_manifest(
    samples: &[Sample],
    root: &Path,
    out_dir: &Path,
    ranges: &AugmentRanges,
    seed: u64,
) -> Result<Vec<Sample>, CliError> {
    std::fs::create_dir_all(out_dir.join("aug"))?;
    let mut out = Vec::new();
    for s in samples {
        let src = resolve_audio(root, &s.audio_path);
        let w = load_wav(&src)?;
        let mut orig = s.clone();
        orig.audio_path = std::path::absolute(&src)?.to_string_lossy().into_owned();
        out.push(orig);
        for (k, spec) in ranges.bank(derive_seed(seed, &s.id)).iter().enumerate() {
            let aug = apply_time_augmentation(&w, spec).map_err(HarnessError::from)?;
            let id = format!("{}.aug{k}", s.id);
            let rel = format!("aug/{id}.wav");
            write_wav(out_dir.join(&rel), &aug)?;
            out.push(Sample {
                id,
                audio_path: rel,
                augmented_from: Some(s.id.clone()),
                ..s.clone()
            });
        }
    }
    write_manifest(out_dir.join("manifest.csv"), &out)?;
    Ok(out)
}
