//! The `ctg-ssl` command line. Every subcommand writes one `run_manifest.json`
//! into its output directory. Exit codes: 0 success, 1 validation error,
//! 2 runtime failure; errors go to stderr as one JSON object.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{ModelConfig, PipelineConfig};
use crate::features::{grid_features, FEATURE_NAMES};
use crate::io::{self, LabelTable};
use crate::model::Model;
use crate::pretrain::checkpoint::checkpoint_digest;
use crate::pretrain::{load_checkpoint, prepare_pretraining, save_checkpoint, segments_from_records, Trainer, CHECKPOINT_FORMAT};
use crate::probe::{
    ablation_variants, data_regime_sweep, dropout_robustness, embed_corpus, prepare_probe_segments, probe_task, raw_features,
    write_reports, DropoutBin, ProbeData, ProbeReport, ProbeSettings,
};
use crate::signal::{self, WINDOW_LEN};
use crate::synth::{generate_corpus, write_corpus, CorpusSpec, DropoutPlan};
use crate::{selfcheck, Error, Result};

pub const LONG_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (checkpoint format ctg-ssl-checkpoint/1)");

#[derive(Debug, Parser)]
#[command(name = "ctg-ssl", version = LONG_VERSION, about = "Self-supervised CTG pretraining and linear probing")]
pub struct Cli {
    /// Worker threads; 1 guarantees byte-identical outputs across runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic corpus.
    Generate(GenerateArgs),
    /// Per-patch handcrafted features as CSV.
    Features {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain an encoder.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint (its configuration must match `--config`).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Frozen representations of every segment.
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear probe on the full train split.
    Probe(EvalArgs),
    /// Linear probes at several train fractions.
    Sweep {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,1.0")]
        fractions: Vec<f64>,
    },
    /// Probe AUC per dropout bin, next to the raw-signal comparator.
    DropoutEval(EvalArgs),
    /// Pretrain and probe the full model and each ablation variant.
    Ablate(AblateArgs),
    /// Run the invariant battery.
    Selfcheck {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    /// Fraction of `abnormal` records.
    #[arg(long, default_value_t = 0.5)]
    pub mix: f64,
    /// Fraction of `near_delivery` records.
    #[arg(long, default_value_t = 0.5)]
    pub near_delivery: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seconds per record.
    #[arg(long, default_value_t = 1200)]
    pub duration: usize,
    /// Dropout fraction drawn uniformly from [0, max].
    #[arg(long, default_value_t = 0.3)]
    pub dropout_max: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Repr {
    /// The frozen encoder (`--ckpt`, or random init from `--config`).
    Encoder,
    /// The normalized signal itself.
    Raw,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, conflicts_with = "config")]
    pub ckpt: Option<PathBuf>,
    /// Randomly initialized encoder from this configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to `<data>/labels.csv`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value = "abnormal")]
    pub task: String,
    #[arg(long, value_enum, default_value = "encoder")]
    pub repr: Repr,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Pretraining corpus.
    #[arg(long)]
    pub data: PathBuf,
    /// Labelled probe corpus.
    #[arg(long)]
    pub probe_data: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "abnormal,near_delivery")]
    pub tasks: Vec<String>,
    /// Subset of variant names; all by default.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<PipelineConfig>,
    /// Input path to SHA-256 (directories hash each regular file).
    pub inputs: BTreeMap<String, String>,
    pub code_version: String,
    pub checkpoint_format: String,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn hash_inputs(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(*p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file())
                .collect();
            files.sort();
            for f in files {
                out.insert(f.display().to_string(), io::file_sha256(&f)?);
            }
        } else if p.exists() {
            out.insert(p.display().to_string(), io::file_sha256(p)?);
        } else {
            return Err(Error::MissingFile(p.to_path_buf()));
        }
    }
    Ok(out)
}

struct Run {
    manifest: RunManifest,
    out: PathBuf,
}

impl Run {
    fn start(command: &str, args: &[String], threads: Option<usize>, out: &Path, inputs: &[&Path]) -> Result<Self> {
        let inputs = hash_inputs(inputs)?;
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Run {
            manifest: RunManifest {
                command: command.into(),
                args: args.to_vec(),
                config: None,
                inputs,
                code_version: env!("CARGO_PKG_VERSION").into(),
                checkpoint_format: CHECKPOINT_FORMAT.into(),
                seed: None,
                threads,
                started_unix: now(),
                finished_unix: 0,
                outputs: vec![],
            },
            out: out.to_path_buf(),
        })
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.finished_unix = now();
        self.manifest.outputs.sort();
        self.manifest.outputs.dedup();
        io::write_json(&self.out.join("run_manifest.json"), &self.manifest)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let raw: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&raw) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            report_error("usage", &e.to_string());
            return 1;
        }
    };
    let argv: Vec<String> = raw.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            report_error("threads", &e.to_string());
            return 2;
        }
    };
    match pool.install(|| dispatch(&cli, &argv)) {
        Ok(code) => code,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn report_error(kind: &str, message: &str) {
    let v = serde_json::json!({ "error": kind, "message": message.trim() });
    eprintln!("{v}");
}

fn dispatch(cli: &Cli, argv: &[String]) -> Result<i32> {
    let threads = cli.threads;
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, argv, threads),
        Command::Features { data, out } => cmd_features(data, out, argv, threads),
        Command::Pretrain {
            config,
            data,
            out,
            resume,
        } => cmd_pretrain(config, data, out, resume.as_deref(), argv, threads),
        Command::Embed { ckpt, data, out } => cmd_embed(ckpt, data, out, argv, threads),
        Command::Probe(a) => cmd_eval(a, EvalKind::Probe, argv, threads),
        Command::Sweep { eval, fractions } => cmd_eval(eval, EvalKind::Sweep(fractions.clone()), argv, threads),
        Command::DropoutEval(a) => cmd_eval(a, EvalKind::Dropout, argv, threads),
        Command::Ablate(a) => cmd_ablate(a, argv, threads),
        Command::Selfcheck { out, seed } => cmd_selfcheck(out.as_deref(), *seed, argv, threads),
    }
}

fn cmd_generate(a: &GenerateArgs, argv: &[String], threads: Option<usize>) -> Result<i32> {
    if !(0.0..=1.0).contains(&a.dropout_max) {
        return Err(Error::InvalidInput("--dropout-max must lie in [0, 1]".into()));
    }
    let mut run = Run::start("generate", argv, threads, &a.out, &[])?;
    let spec = CorpusSpec {
        near_delivery_fraction: a.near_delivery,
        duration: a.duration,
        dropout: DropoutPlan::Uniform {
            lo: 0.0,
            hi: a.dropout_max,
        },
        ..CorpusSpec::new(a.n, a.mix, a.seed)
    };
    let corpus = generate_corpus(&spec)?;
    write_corpus(&a.out, &spec, &corpus)?;
    for f in [io::RECORDS_FILE, io::LABELS_FILE, "manifest.json"] {
        run.output(f);
    }
    run.manifest.seed = Some(a.seed);
    run.finish()?;
    Ok(0)
}

fn cmd_features(data: &Path, out: &Path, argv: &[String], threads: Option<usize>) -> Result<i32> {
    let records = io::load_records(data)?;
    let mut run = Run::start("features", argv, threads, out, &[data])?;
    let segs = segments_from_records(&records, WINDOW_LEN, false)?;
    let cfg = ModelConfig::default();
    let mut rows = Vec::new();
    for s in &segs {
        let grid = signal::to_patches(&signal::normalize(s), cfg.patch_len)?;
        for (i, f) in grid_features(&grid).iter().enumerate() {
            let mut row = vec![s.source_record.clone(), s.start_offset.to_string(), i.to_string()];
            row.extend(f.as_slice().iter().map(|v| v.to_string()));
            rows.push(row);
        }
    }
    let mut header = vec!["record_id", "segment_offset", "patch_index"];
    header.extend(FEATURE_NAMES);
    io::write_csv(&run.output("features.csv"), &header, &rows)?;
    run.finish()?;
    Ok(0)
}

/// Keeps metric lines for steps before `step`, so a resumed run appends cleanly.
fn truncate_metrics(path: &Path, step: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let v: serde_json::Value = serde_json::from_str(&line)?;
        if v["step"].as_u64().is_some_and(|s| (s as usize) < step) {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept).map_err(|e| Error::io(path, e))
}

fn cmd_pretrain(config: &Path, data: &Path, out: &Path, resume: Option<&Path>, argv: &[String], threads: Option<usize>) -> Result<i32> {
    let cfg = PipelineConfig::load(config)?;
    let records = io::load_records(data)?;
    let mut inputs = vec![config, data];
    inputs.extend(resume);
    let mut run = Run::start("pretrain", argv, threads, out, &inputs)?;
    run.manifest.config = Some(cfg.clone());
    run.manifest.seed = Some(cfg.train.seed);

    let raw = segments_from_records(&records, cfg.train.stride, true)?;
    let q = Model::<f32>::new(cfg.model.clone())?;
    let corpus = prepare_pretraining(&raw, &cfg.model, &q.sig_q, &q.feat_q)?;
    let mut trainer = match resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if ck.model.cfg != cfg.model || ck.train != cfg.train {
                return Err(Error::Config("configuration differs from the checkpoint being resumed".into()));
            }
            Trainer::resume(ck, corpus)?
        }
        None => Trainer::new(cfg.model.clone(), cfg.train.clone(), corpus)?,
    };
    std::fs::write(run.output("config.txt"), cfg.render()).map_err(|e| Error::io(out, e))?;

    let metrics_path = run.output("metrics.ndjson");
    truncate_metrics(&metrics_path, trainer.step)?;
    let mut metrics = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let interval = cfg.train.snapshot_interval;
    let mut snapshots = Vec::new();
    trainer.run_until(cfg.train.steps, |t, m| {
        let line = serde_json::to_string(m)?;
        writeln!(metrics, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        if interval > 0 && t.step % interval == 0 && t.step < cfg.train.steps {
            let name = format!("checkpoint_step{:06}.bin", t.step);
            save_checkpoint(&out.join(&name), &t.checkpoint())?;
            snapshots.push(name);
        }
        Ok(())
    })?;
    for s in snapshots {
        run.output(&s);
    }
    let digest = save_checkpoint(&run.output("checkpoint.bin"), &trainer.checkpoint())?;
    println!("{}", serde_json::json!({ "checkpoint": out.join("checkpoint.bin"), "digest": digest, "step": trainer.step }));
    run.finish()?;
    Ok(0)
}

#[derive(Serialize)]
struct EmbeddingRow<'a> {
    segment_id: &'a str,
    record_id: &'a str,
    missing_fraction: f64,
    embedding: &'a [f64],
}

fn cmd_embed(ckpt: &Path, data: &Path, out: &Path, argv: &[String], threads: Option<usize>) -> Result<i32> {
    let ck = load_checkpoint(ckpt)?;
    let digest = checkpoint_digest(ckpt)?;
    let records = io::load_records(data)?;
    let mut run = Run::start("embed", argv, threads, out, &[ckpt, data])?;
    let segs = prepare_probe_segments(&ck.model, &records, ck.train.stride)?;
    let x = embed_corpus(&ck.model, &digest, &segs, Some(&out.join("cache")))?;
    let rows: Vec<EmbeddingRow> = segs
        .iter()
        .zip(&x)
        .map(|(s, e)| EmbeddingRow {
            segment_id: &s.id,
            record_id: &s.record_id,
            missing_fraction: s.missing_fraction,
            embedding: e,
        })
        .collect();
    io::write_ndjson_rows(&run.output("embeddings.ndjson"), &rows)?;
    run.finish()?;
    Ok(0)
}

enum EvalKind {
    Probe,
    Sweep(Vec<f64>),
    Dropout,
}

struct Encoder {
    model: Model<f32>,
    name: String,
    digest: Option<String>,
    stride: usize,
}

fn load_encoder(ckpt: Option<&Path>, config: Option<&Path>) -> Result<Encoder> {
    match (ckpt, config) {
        (Some(p), _) => {
            let ck = load_checkpoint(p)?;
            Ok(Encoder {
                model: ck.model,
                name: "pretrained".into(),
                digest: Some(checkpoint_digest(p)?),
                stride: ck.train.stride,
            })
        }
        (None, Some(c)) => {
            let cfg = PipelineConfig::load(c)?;
            Ok(Encoder {
                model: Model::new(cfg.model)?,
                name: "random_init".into(),
                digest: None,
                stride: cfg.train.stride,
            })
        }
        (None, None) => Ok(Encoder {
            model: Model::new(ModelConfig::default())?,
            name: "random_init".into(),
            digest: None,
            stride: WINDOW_LEN,
        }),
    }
}

fn labels_path(data: &Path, labels: Option<&Path>) -> Result<PathBuf> {
    let p = labels.map(Path::to_path_buf).unwrap_or_else(|| data.join(io::LABELS_FILE));
    if !p.is_file() {
        return Err(Error::MissingFile(p));
    }
    Ok(p)
}

fn cmd_eval(a: &EvalArgs, kind: EvalKind, argv: &[String], threads: Option<usize>) -> Result<i32> {
    let labels_file = labels_path(&a.data, a.labels.as_deref())?;
    if a.repr == Repr::Encoder && a.ckpt.is_none() && a.config.is_none() {
        return Err(Error::InvalidInput("--ckpt or --config is required for the encoder representation".into()));
    }
    let table = LabelTable::read(&labels_file)?;
    table.get("", &a.task)?;
    let enc = load_encoder(a.ckpt.as_deref(), a.config.as_deref())?;
    let records = io::load_records(&a.data)?;
    let mut inputs: Vec<&Path> = vec![&a.data, &labels_file];
    inputs.extend(a.ckpt.as_deref());
    inputs.extend(a.config.as_deref());
    let command = match kind {
        EvalKind::Probe => "probe",
        EvalKind::Sweep(_) => "sweep",
        EvalKind::Dropout => "dropout-eval",
    };
    let mut run = Run::start(command, argv, threads, &a.out, &inputs)?;
    run.manifest.seed = Some(a.seed);
    let segs = prepare_probe_segments(&enc.model, &records, enc.stride)?;

    let mut reps: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    let want_raw = a.repr == Repr::Raw || matches!(kind, EvalKind::Dropout);
    if a.repr == Repr::Encoder {
        let cache = enc.digest.as_ref().map(|_| a.out.join("cache"));
        let x = match &enc.digest {
            Some(d) => embed_corpus(&enc.model, d, &segs, cache.as_deref())?,
            None => crate::probe::embed_segments(&enc.model, &segs)?,
        };
        reps.push((enc.name.clone(), x));
    }
    if want_raw {
        reps.push(("raw_signal".into(), raw_features(&segs)));
    }

    let settings = ProbeSettings {
        seed: a.seed,
        ..ProbeSettings::default()
    };
    let mut reports: Vec<ProbeReport> = Vec::new();
    for (name, x) in reps {
        let data = ProbeData::new(&segs, x, |r| table.get(r, &a.task))?;
        if data.is_empty() {
            return Err(Error::InvalidInput(format!("no labelled segments for task `{}`", a.task)));
        }
        match &kind {
            EvalKind::Probe => reports.push(probe_task(&data, &settings, 1.0, &name, &a.task)?),
            EvalKind::Sweep(f) => reports.extend(data_regime_sweep(&data, &settings, f, &name, &a.task)?),
            EvalKind::Dropout => reports.extend(dropout_robustness(&data, &settings, &DropoutBin::default_bins(), &name, &a.task)?),
        }
    }
    let name = match kind {
        EvalKind::Probe => "probe",
        EvalKind::Sweep(_) => "sweep",
        EvalKind::Dropout => "dropout",
    };
    write_reports(&a.out, name, &reports)?;
    for suffix in [".csv", ".ndjson", "_plot.csv"] {
        run.output(&format!("{name}{suffix}"));
    }
    run.finish()?;
    Ok(0)
}

#[derive(Serialize)]
struct AblationRow {
    variant: String,
    mean_auc: f64,
    delta_vs_full: f64,
}

fn cmd_ablate(a: &AblateArgs, argv: &[String], threads: Option<usize>) -> Result<i32> {
    let base = PipelineConfig::load(&a.config)?;
    let labels_file = labels_path(&a.probe_data, a.labels.as_deref())?;
    let table = LabelTable::read(&labels_file)?;
    for t in &a.tasks {
        table.get("", t)?;
    }
    let variants: Vec<(&str, ModelConfig)> = ablation_variants(&base.model)
        .into_iter()
        .filter(|(n, _)| a.variants.is_empty() || *n == "full" || a.variants.iter().any(|v| v == n))
        .collect();
    for v in &a.variants {
        if !variants.iter().any(|(n, _)| n == v) {
            return Err(Error::InvalidInput(format!("unknown variant `{v}`")));
        }
    }
    let records = io::load_records(&a.data)?;
    let probe_records = io::load_records(&a.probe_data)?;
    let mut run = Run::start("ablate", argv, threads, &a.out, &[&a.config, &a.data, &a.probe_data, &labels_file])?;
    run.manifest.config = Some(base.clone());
    run.manifest.seed = Some(base.train.seed);
    let raw = segments_from_records(&records, base.train.stride, true)?;
    let settings = ProbeSettings {
        seed: a.seed,
        ..ProbeSettings::default()
    };

    let mut reports = Vec::new();
    let mut means: Vec<(String, f64)> = Vec::new();
    for (name, cfg) in &variants {
        cfg.validate()?;
        let q = Model::<f32>::new(cfg.clone())?;
        let corpus = prepare_pretraining(&raw, cfg, &q.sig_q, &q.feat_q)?;
        let mut trainer = Trainer::new(cfg.clone(), base.train.clone(), corpus)?;
        trainer.run_until(base.train.steps, |_, _| Ok(()))?;
        save_checkpoint(&run.output(&format!("{name}/checkpoint.bin")), &trainer.checkpoint())?;
        let segs = prepare_probe_segments(&trainer.model, &probe_records, base.train.stride)?;
        let x = crate::probe::embed_segments(&trainer.model, &segs)?;
        let mut aucs = Vec::new();
        for task in &a.tasks {
            let data = ProbeData::new(&segs, x.clone(), |r| table.get(r, task))?;
            let r = probe_task(&data, &settings, 1.0, name, task)?;
            aucs.push(r.auc_mean.unwrap_or(f64::NAN));
            reports.push(r);
        }
        means.push((name.to_string(), aucs.iter().sum::<f64>() / aucs.len() as f64));
    }
    write_reports(&a.out, "ablation", &reports)?;
    for suffix in [".csv", ".ndjson", "_plot.csv"] {
        run.output(&format!("ablation{suffix}"));
    }
    let full = means.iter().find(|(n, _)| n == "full").map(|m| m.1).unwrap_or(f64::NAN);
    let rows: Vec<AblationRow> = means
        .iter()
        .map(|(n, m)| AblationRow {
            variant: n.clone(),
            mean_auc: *m,
            delta_vs_full: m - full,
        })
        .collect();
    let csv: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.variant.clone(), format!("{:.6}", r.mean_auc), format!("{:.6}", r.delta_vs_full)])
        .collect();
    io::write_csv(&run.output("ablation_summary.csv"), &["variant", "mean_auc", "delta_vs_full"], &csv)?;
    io::write_ndjson_rows(&run.output("ablation_summary.ndjson"), &rows)?;
    run.finish()?;
    Ok(0)
}

fn cmd_selfcheck(out: Option<&Path>, seed: u64, argv: &[String], threads: Option<usize>) -> Result<i32> {
    let checks = selfcheck::run_quick(seed)?;
    for c in &checks {
        println!("{}", serde_json::to_string(c)?);
    }
    if let Some(out) = out {
        let mut run = Run::start("selfcheck", argv, threads, out, &[])?;
        run.manifest.seed = Some(seed);
        io::write_ndjson_rows(&run.output("selfcheck.ndjson"), &checks)?;
        run.finish()?;
    }
    Ok(if checks.iter().all(|c| c.passed) { 0 } else { 2 })
}
