//! Command-line harness: model summaries, gradient checks, training,
//! evaluation, cross-validation and architecture comparisons.
//!
//! Every option may also come from a `key=value` file given with
//! `--config`; flags take precedence over the file.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::autodiff::Fault;
use crate::blocks::{BlockVariant, DEFAULT_ALPHA};
use crate::data::{kfold_split, load_dataset, synth_generate, Challenge, Dataset, SynthSpec, DEFAULT_FOLDS};
use crate::error::{Error, Result};
use crate::gradcheck::{render_table, run_gradcheck, CheckedOp, GradcheckConfig, OpReport};
use crate::metrics::{format_percent, mean_and_std, relative_improvement};
use crate::model::{
    build_model, load_checkpoint, save_checkpoint, summarize, Architecture, ModelConfig, ModelSummary, Network,
    DEFAULT_UBASE,
};
use crate::train::{evaluate, train_with, AdamConfig, EpochRecord, Evaluation, RunReport, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "multiresunet", version, about = "MultiResUNet and U-Net segmentation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the layer table and parameter count as JSON.
    Summary,
    /// Finite-difference gradient checks in 64-bit precision.
    Gradcheck {
        /// Comma-separated op names; defaults to every op.
        #[arg(long)]
        ops: Option<String>,
        /// Corrupt the convolution kernel gradient (negative control).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Train on fold 0 held out for validation.
    Train,
    /// Evaluate a checkpoint on the validation fold.
    Eval {
        /// Checkpoint stem; defaults to `<out>/best`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// k-fold cross-validation.
    Kfold,
    /// Both architectures on synthetic challenge corpora over several seeds.
    Compare {
        /// Comma-separated seeds.
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
    },
}

#[derive(Debug, Args, Default)]
struct Opts {
    /// Flat key=value file; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// unet, multiresunet, or both (kfold and compare).
    #[arg(long, global = true)]
    arch: Option<String>,
    /// multires, inception_parallel or factorized_sequence.
    #[arg(long, global = true)]
    variant: Option<String>,
    #[arg(long, global = true)]
    rank: Option<String>,
    /// Extents then channels, e.g. 256x256x3 or 80x80x48x4.
    #[arg(long, global = true)]
    input: Option<String>,
    #[arg(long, global = true)]
    ubase: Option<String>,
    #[arg(long, global = true)]
    alpha: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
    #[arg(long, global = true)]
    batch: Option<String>,
    #[arg(long, global = true)]
    lr: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Dataset root with images/ and masks/.
    #[arg(long, global = true)]
    data: Option<String>,
    /// Number of synthetic samples to generate instead of loading data.
    #[arg(long, global = true)]
    synth: Option<String>,
    /// Synthetic challenge; comma-separated for compare.
    #[arg(long, global = true)]
    challenge: Option<String>,
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    k: Option<String>,
}

const CONFIG_KEYS: [&str; 15] = [
    "arch",
    "variant",
    "rank",
    "input",
    "ubase",
    "alpha",
    "epochs",
    "batch",
    "lr",
    "seed",
    "data",
    "synth",
    "challenge",
    "out",
    "k",
];

/// Parses a flat `key=value` file; `#` starts a comment line.
pub fn parse_config_file(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", n + 1)))?;
        let k = k.trim().trim_start_matches("--");
        if !CONFIG_KEYS.contains(&k) {
            return Err(Error::Config(format!("config line {}: unknown key `{k}`", n + 1)));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

struct Resolver {
    file: HashMap<String, String>,
}

impl Resolver {
    fn raw(&self, flag: &Option<String>, key: &str) -> Option<String> {
        flag.clone().or_else(|| self.file.get(key).cloned())
    }

    fn get<T: FromStr>(&self, flag: &Option<String>, key: &str) -> Result<Option<T>> {
        match self.raw(flag, key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value `{s}` for --{key}"))),
        }
    }
}

/// Which architectures a command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchChoice {
    Unet,
    Multiresunet,
    Both,
}

impl ArchChoice {
    pub fn architectures(self) -> Vec<Architecture> {
        match self {
            ArchChoice::Unet => vec![Architecture::Unet],
            ArchChoice::Multiresunet => vec![Architecture::Multiresunet],
            ArchChoice::Both => vec![Architecture::Multiresunet, Architecture::Unet],
        }
    }
}

impl FromStr for ArchChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("both") {
            return Ok(ArchChoice::Both);
        }
        match s.parse::<Architecture>()? {
            Architecture::Unet => Ok(ArchChoice::Unet),
            Architecture::Multiresunet => Ok(ArchChoice::Multiresunet),
            Architecture::Subgraph => Err(Error::Config(format!("unknown architecture `{s}`"))),
        }
    }
}

/// Extents followed by the channel count, `x`-separated.
pub fn parse_input(s: &str, rank: usize) -> Result<(Vec<usize>, usize)> {
    let parts: Vec<usize> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("invalid --input `{s}`")))?;
    if parts.len() != rank + 1 || parts.contains(&0) {
        return Err(Error::Config(format!(
            "--input `{s}` must list {rank} positive extents and a channel count"
        )));
    }
    let channels = parts[rank];
    Ok((parts[..rank].to_vec(), channels))
}

/// Fully resolved options, embedded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunSpec {
    pub command: String,
    pub architecture: ArchChoice,
    pub variant: BlockVariant,
    pub rank: usize,
    pub input_extents: Vec<usize>,
    pub in_channels: usize,
    pub ubase: usize,
    pub alpha: f64,
    pub train: TrainConfig,
    pub k: usize,
    pub data: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    pub challenges: Vec<Challenge>,
    pub out: Option<PathBuf>,
}

impl RunSpec {
    fn resolve(command: &str, opts: &Opts) -> Result<Self> {
        let file = match &opts.config {
            Some(p) => parse_config_file(&fs::read_to_string(p)?)?,
            None => HashMap::new(),
        };
        let r = Resolver { file };
        let rank: usize = r.get(&opts.rank, "rank")?.unwrap_or(2);
        if rank != 2 && rank != 3 {
            return Err(Error::Config(format!("--rank must be 2 or 3, got {rank}")));
        }
        let default_input = if rank == 2 { "256x256x3" } else { "80x80x48x4" };
        let input = r.raw(&opts.input, "input").unwrap_or_else(|| default_input.into());
        let (input_extents, in_channels) = parse_input(&input, rank)?;
        let alpha: f64 = r.get(&opts.alpha, "alpha")?.unwrap_or(DEFAULT_ALPHA);
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("--alpha must be positive, got {alpha}")));
        }
        let seed: u64 = r.get(&opts.seed, "seed")?.unwrap_or(0);
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            epochs: r.get(&opts.epochs, "epochs")?.unwrap_or(defaults.epochs),
            batch_size: r.get(&opts.batch, "batch")?.unwrap_or(defaults.batch_size),
            adam: AdamConfig {
                learning_rate: r.get(&opts.lr, "lr")?.unwrap_or(defaults.adam.learning_rate),
                ..AdamConfig::default()
            },
            seed,
            shuffle: true,
        };
        train.validate()?;
        let challenges: Vec<Challenge> = match r.raw(&opts.challenge, "challenge") {
            Some(list) => list.split(',').map(|c| c.trim().parse()).collect::<Result<_>>()?,
            None if command == "compare" => vec![Challenge::FaintBoundary, Challenge::Perturbed],
            None => vec![Challenge::Clean],
        };
        let data: Option<PathBuf> = r.raw(&opts.data, "data").map(PathBuf::from);
        let synth = match r.get::<usize>(&opts.synth, "synth")? {
            Some(n) => {
                if rank != 2 || input_extents.len() != 2 {
                    return Err(Error::Config("synthetic data is two-dimensional".into()));
                }
                Some(SynthSpec::new(n, [input_extents[0], input_extents[1]], challenges[0], seed).with_channels(in_channels))
            }
            None => None,
        };
        if data.is_some() && synth.is_some() {
            return Err(Error::Config("pass either --data or --synth, not both".into()));
        }
        if let Some(d) = &data {
            if !d.is_dir() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("dataset directory {} not found", d.display()),
                )));
            }
        }
        Ok(RunSpec {
            command: command.to_string(),
            architecture: r.get(&opts.arch, "arch")?.unwrap_or(ArchChoice::Multiresunet),
            variant: r.get(&opts.variant, "variant")?.unwrap_or_default(),
            rank,
            input_extents,
            in_channels,
            ubase: r.get(&opts.ubase, "ubase")?.unwrap_or(DEFAULT_UBASE),
            alpha,
            train,
            k: r.get(&opts.k, "k")?.unwrap_or(DEFAULT_FOLDS),
            data,
            synth,
            challenges,
            out: r.raw(&opts.out, "out").map(PathBuf::from),
        })
    }

    fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.rank, &self.input_extents, self.in_channels)
            .with_ubase(self.ubase)
            .with_alpha(self.alpha)
            .with_variant(self.variant)
    }

    fn single_arch(&self) -> Result<Architecture> {
        match self.architecture.architectures()[..] {
            [a] => Ok(a),
            _ => Err(Error::Config(format!("`{}` needs a single --arch", self.command))),
        }
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn dataset(&self) -> Result<Dataset<f32>> {
        if self.rank != 2 {
            return Err(Error::UnsupportedRank(self.rank));
        }
        let extents = [self.input_extents[0], self.input_extents[1]];
        let ds = match (&self.data, &self.synth) {
            (Some(root), None) => load_dataset(root, Some(extents))?,
            (None, Some(spec)) => synth_generate(spec)?,
            _ => return Err(Error::Config("no dataset: pass --data or --synth".into())),
        };
        if let Some(s) = ds.iter().find(|s| s.image.shape()[2] != self.in_channels) {
            return Err(Error::Config(format!(
                "sample {} has {} channels but --input declares {}",
                s.id,
                s.image.shape()[2],
                self.in_channels
            )));
        }
        Ok(ds)
    }

    fn network(&self, arch: Architecture) -> Result<Network<f32>> {
        Network::new(build_model(arch, &self.model_config())?, self.train.seed)
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Json(_) | Error::Format(_) | Error::Pairing(_) | Error::Domain(_) => EXIT_IO,
        Error::Numeric { .. } | Error::TrainingAborted { .. } | Error::DegenerateBatch => EXIT_NUMERIC,
        Error::InvalidRoot(_) => EXIT_FAILED,
        _ => EXIT_USAGE,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn subset(ds: &Dataset<f32>, idx: &[usize]) -> Dataset<f32> {
    idx.iter().map(|&i| ds[i].clone()).collect()
}

fn ids(ds: &Dataset<f32>, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| ds[i].id.clone()).collect()
}

#[derive(Serialize)]
struct SummaryReport {
    spec: RunSpec,
    models: Vec<ModelSummary>,
}

fn cmd_summary(spec: RunSpec, stdout: &mut dyn Write) -> Result<i32> {
    let models = spec
        .architecture
        .architectures()
        .into_iter()
        .map(|a| build_model(a, &spec.model_config()).map(|g| summarize(&g)))
        .collect::<Result<Vec<_>>>()?;
    let report = SummaryReport { spec, models };
    if report.spec.out.is_some() {
        write_json(&report.spec.out_dir()?.join("summary.json"), &report)?;
    }
    writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(EXIT_OK)
}

fn cmd_gradcheck(spec: RunSpec, ops: Option<String>, fault: bool, stdout: &mut dyn Write) -> Result<i32> {
    let ops: Vec<CheckedOp> = match ops {
        None => CheckedOp::ALL.to_vec(),
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?,
    };
    let cfg = GradcheckConfig {
        seed: spec.train.seed,
        fault: fault.then_some(Fault::ConvKernelGrad),
        ..GradcheckConfig::default()
    };
    let reports = run_gradcheck(&ops, &cfg)?;
    write!(stdout, "{}", render_table(&reports))?;
    if spec.out.is_some() {
        #[derive(Serialize)]
        struct GradReport<'a> {
            spec: &'a RunSpec,
            ops: &'a [OpReport],
        }
        write_json(
            &spec.out_dir()?.join("gradcheck.json"),
            &GradReport {
                spec: &spec,
                ops: &reports,
            },
        )?;
    }
    Ok(if reports.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_FAILED })
}

/// Trains one architecture on `train_idx`, validating on `val_idx`, with the
/// per-epoch history streamed to `history` when given.
fn fit(
    spec: &RunSpec,
    arch: Architecture,
    ds: &Dataset<f32>,
    train_idx: &[usize],
    val_idx: &[usize],
    history: Option<&Path>,
) -> Result<(Network<f32>, RunReport)> {
    let mut net = spec.network(arch)?;
    let (tr, va) = (subset(ds, train_idx), subset(ds, val_idx));
    let mut csv = match history {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "{}", EpochRecord::CSV_HEADER)?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let label = arch.as_str();
    let outcome = train_with(&mut net, &tr, &va, &spec.train, |r| {
        eprintln!(
            "[{label}] epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_jaccard {}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            format_percent(r.val_jaccard)
        );
        if let Some(w) = csv.as_mut() {
            writeln!(w, "{}", r.csv_row())?;
            w.flush()?;
        }
        Ok(())
    })?;
    net.params = outcome.best_params;
    Ok((net, outcome.report))
}

#[derive(Serialize)]
struct TrainReport {
    spec: RunSpec,
    train_ids: Vec<String>,
    val_ids: Vec<String>,
    checkpoint: PathBuf,
    report: RunReport,
}

fn cmd_train(spec: RunSpec, stdout: &mut dyn Write) -> Result<i32> {
    let arch = spec.single_arch()?;
    let ds = spec.dataset()?;
    let split = kfold_split(ds.len(), spec.k, spec.train.seed)?;
    let (train_idx, val_idx) = split.train_val(0);
    let dir = spec.out_dir()?;
    let (net, report) = fit(&spec, arch, &ds, &train_idx, &val_idx, Some(&dir.join("history.csv")))?;
    let checkpoint = dir.join("best");
    save_checkpoint(&net.params, &checkpoint)?;
    writeln!(
        stdout,
        "best epoch {} val_jaccard {}",
        report.best_epoch,
        format_percent(report.best_val_jaccard)
    )?;
    let out = TrainReport {
        train_ids: ids(&ds, &train_idx),
        val_ids: ids(&ds, &val_idx),
        checkpoint,
        report,
        spec,
    };
    write_json(&dir.join("report.json"), &out)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EvalReport {
    spec: RunSpec,
    checkpoint: PathBuf,
    val_ids: Vec<String>,
    evaluation: Evaluation,
}

fn cmd_eval(spec: RunSpec, checkpoint: Option<PathBuf>, stdout: &mut dyn Write) -> Result<i32> {
    let arch = spec.single_arch()?;
    let dir = spec.out_dir()?;
    let checkpoint = checkpoint.unwrap_or_else(|| dir.join("best"));
    let ds = spec.dataset()?;
    let split = kfold_split(ds.len(), spec.k, spec.train.seed)?;
    let (_, val_idx) = split.train_val(0);
    let mut net = spec.network(arch)?;
    load_checkpoint(&mut net.params, &checkpoint)?;
    let evaluation = evaluate(&mut net, &subset(&ds, &val_idx), spec.train.batch_size)?;
    writeln!(
        stdout,
        "val_loss {:.6} val_jaccard {}",
        evaluation.loss,
        format_percent(evaluation.jaccard)
    )?;
    let out = EvalReport {
        checkpoint,
        val_ids: ids(&ds, &val_idx),
        evaluation,
        spec,
    };
    write_json(&dir.join("eval.json"), &out)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize)]
struct FoldResult {
    fold: usize,
    n_train: usize,
    n_val: usize,
    best_epoch: usize,
    best_val_jaccard: f64,
}

#[derive(Debug, Clone, Serialize)]
struct ArchSummary {
    architecture: Architecture,
    folds: Vec<FoldResult>,
    mean_jaccard: f64,
    std_jaccard: f64,
}

#[derive(Serialize)]
struct KfoldReport {
    spec: RunSpec,
    folds: Vec<Vec<String>>,
    results: Vec<ArchSummary>,
    /// MultiResUNet over U-Net, percent.
    relative_improvement: Option<f64>,
}

fn cmd_kfold(spec: RunSpec, stdout: &mut dyn Write) -> Result<i32> {
    let ds = spec.dataset()?;
    let split = kfold_split(ds.len(), spec.k, spec.train.seed)?;
    let dir = spec.out_dir()?;
    let mut assign = String::from("id,fold\n");
    let mut rows: Vec<(String, usize)> = split
        .folds
        .iter()
        .enumerate()
        .flat_map(|(f, idx)| idx.iter().map(move |&i| (i, f)))
        .map(|(i, f)| (ds[i].id.clone(), f))
        .collect();
    rows.sort();
    for (id, f) in rows {
        assign.push_str(&format!("{id},{f}\n"));
    }
    fs::write(dir.join("folds.csv"), assign)?;

    let mut results = Vec::new();
    for arch in spec.architecture.architectures() {
        let mut folds = Vec::new();
        for i in 0..split.k() {
            let (tr, va) = split.train_val(i);
            let (_, report) = fit(&spec, arch, &ds, &tr, &va, None)?;
            folds.push(FoldResult {
                fold: i,
                n_train: tr.len(),
                n_val: va.len(),
                best_epoch: report.best_epoch,
                best_val_jaccard: report.best_val_jaccard,
            });
        }
        let scores: Vec<f64> = folds.iter().map(|f| f.best_val_jaccard).collect();
        let (mean, std) = mean_and_std(&scores).expect("k >= 1");
        results.push(ArchSummary {
            architecture: arch,
            folds,
            mean_jaccard: mean,
            std_jaccard: std,
        });
    }

    let mut csv = String::from("arch,fold,n_train,n_val,best_epoch,best_val_jaccard_pct\n");
    for r in &results {
        for f in &r.folds {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.architecture.as_str(),
                f.fold,
                f.n_train,
                f.n_val,
                f.best_epoch,
                format_percent(f.best_val_jaccard)
            ));
        }
        let line = format!(
            "{},mean±std,,,,{} ± {}\n",
            r.architecture.as_str(),
            format_percent(r.mean_jaccard),
            format_percent(r.std_jaccard)
        );
        csv.push_str(&line);
        write!(stdout, "{line}")?;
    }
    fs::write(dir.join("kfold.csv"), csv)?;
    let relative = match &results[..] {
        [m, u] => Some(relative_improvement(m.mean_jaccard, u.mean_jaccard)),
        _ => None,
    };
    if let Some(r) = relative {
        writeln!(stdout, "relative improvement {r:.2}%")?;
    }
    let folds = split.folds.iter().map(|f| ids(&ds, f)).collect();
    write_json(
        &dir.join("kfold.json"),
        &KfoldReport {
            spec,
            folds,
            results,
            relative_improvement: relative,
        },
    )?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize)]
struct CompareRow {
    challenge: Challenge,
    architecture: Architecture,
    seeds: Vec<u64>,
    best_val_jaccard: Vec<f64>,
    mean_jaccard: f64,
}

#[derive(Debug, Clone, Serialize)]
struct CompareOutcome {
    challenge: Challenge,
    /// Architecture with the higher mean, or `tie`.
    leader: String,
    relative_improvement: f64,
}

#[derive(Serialize)]
struct CompareReport {
    spec: RunSpec,
    rows: Vec<CompareRow>,
    outcomes: Vec<CompareOutcome>,
}

fn cmd_compare(spec: RunSpec, seeds: &str, stdout: &mut dyn Write) -> Result<i32> {
    let seeds: Vec<u64> = seeds
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("invalid seed `{s}`"))))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("compare needs at least one seed".into()));
    }
    let n = spec
        .synth
        .as_ref()
        .map(|s| s.n)
        .ok_or_else(|| Error::Config("compare runs on synthetic data; pass --synth".into()))?;
    let dir = spec.out_dir()?;
    let archs = ArchChoice::Both.architectures();
    let mut rows = Vec::new();
    let mut csv = String::from("challenge,arch,seed,best_val_jaccard_pct\n");
    for &challenge in &spec.challenges {
        let mut scores = vec![Vec::new(); archs.len()];
        for &seed in &seeds {
            let mut run = spec.clone();
            run.train.seed = seed;
            let synth = SynthSpec::new(n, [spec.input_extents[0], spec.input_extents[1]], challenge, seed)
                .with_channels(spec.in_channels);
            run.synth = Some(synth);
            let ds = run.dataset()?;
            let (tr, va) = kfold_split(ds.len(), spec.k, seed)?.train_val(0);
            for (a, &arch) in archs.iter().enumerate() {
                let (_, report) = fit(&run, arch, &ds, &tr, &va, None)?;
                csv.push_str(&format!(
                    "{challenge},{},{seed},{}\n",
                    arch.as_str(),
                    format_percent(report.best_val_jaccard)
                ));
                scores[a].push(report.best_val_jaccard);
            }
        }
        for (a, &arch) in archs.iter().enumerate() {
            let (mean, _) = mean_and_std(&scores[a]).expect("seeds non-empty");
            rows.push(CompareRow {
                challenge,
                architecture: arch,
                seeds: seeds.clone(),
                best_val_jaccard: scores[a].clone(),
                mean_jaccard: mean,
            });
        }
    }
    let mut outcomes = Vec::new();
    for pair in rows.chunks(2) {
        let (m, u) = (&pair[0], &pair[1]);
        let leader = if m.mean_jaccard > u.mean_jaccard {
            m.architecture.as_str()
        } else if u.mean_jaccard > m.mean_jaccard {
            u.architecture.as_str()
        } else {
            "tie"
        };
        let rel = relative_improvement(m.mean_jaccard, u.mean_jaccard);
        writeln!(
            stdout,
            "{}: multiresunet {} unet {} leader {leader} ({rel:+.2}%)",
            m.challenge,
            format_percent(m.mean_jaccard),
            format_percent(u.mean_jaccard)
        )?;
        outcomes.push(CompareOutcome {
            challenge: m.challenge,
            leader: leader.to_string(),
            relative_improvement: rel,
        });
    }
    fs::write(dir.join("compare.csv"), csv)?;
    write_json(&dir.join("compare.json"), &CompareReport { spec, rows, outcomes })?;
    Ok(EXIT_OK)
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<i32> {
    let name = match &cli.command {
        Command::Summary => "summary",
        Command::Gradcheck { .. } => "gradcheck",
        Command::Train => "train",
        Command::Eval { .. } => "eval",
        Command::Kfold => "kfold",
        Command::Compare { .. } => "compare",
    };
    let spec = RunSpec::resolve(name, &cli.opts)?;
    match cli.command {
        Command::Summary => cmd_summary(spec, stdout),
        Command::Gradcheck { ops, inject_fault } => {
            if matches!(&ops, Some(list) if list.split(',').all(|s| s.trim().is_empty())) {
                return Err(Error::Config("--ops must name at least one op".into()));
            }
            cmd_gradcheck(spec, ops, inject_fault, stdout)
        }
        Command::Train => cmd_train(spec, stdout),
        Command::Eval { checkpoint } => cmd_eval(spec, checkpoint, stdout),
        Command::Kfold => cmd_kfold(spec, stdout),
        Command::Compare { seeds } => cmd_compare(spec, &seeds, stdout),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, A>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
