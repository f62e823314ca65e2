//! The `modest` command-line tool.
//!
//! Every command writes into its `--out` directory: machine-readable TSV or
//! binary files plus one `manifest.txt`. Exit codes: 0 success, 1 usage or
//! configuration error, 2 data error, 3 numerical abort.

pub mod hist;
pub mod manifest;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use log::{info, warn};
use rand::RngCore;

use crate::backbone::{BackboneError, ModelKind, SharedFeatures};
use crate::checkpoint::{self, CheckpointError};
use crate::config::{ConfigError, TrainConfig};
use crate::dataset::{
    load_interactions, random_split, DataError, InteractionDataset, LoadOptions, SplitRatios, SplitTag,
};
use crate::eval::{evaluate_topk, format_table, write_per_user, write_reports, EvalError, ExcludeMode};
use crate::features::{load_modality, save_binary, FeatureStore};
use crate::rng::{stream, substream};
use crate::shift::{self, ClassifierConfig, OodMode, ShiftError, SyntheticSpec};
use crate::trainer::{write_train_log, write_weights, FitResult, TrainError, Trainer};
use hist::Histogram;
use manifest::RunManifest;

/// Failure classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BackboneError> for CliError {
    fn from(e: BackboneError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::ZeroK => CliError::Usage(e.to_string()),
            EvalError::NoEligibleUsers(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<ShiftError> for CliError {
    fn from(e: ShiftError) -> Self {
        match e {
            ShiftError::BadSpec(_) | ShiftError::BadFraction(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numerical() {
            return CliError::Numerical(e.to_string());
        }
        match e {
            TrainError::Config(c) => c.into(),
            TrainError::Eval(ev) => ev.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "modest",
    version,
    about = "Modality-decorrelating stable learning for recommendation"
)]
pub struct Cli {
    /// Worker cap; all work is currently single-threaded.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic correlated-modality dataset.
    GenSynthetic(GenArgs),
    /// Random per-user train/valid/test split.
    Split(SplitArgs),
    /// Filter the test split by cross-modal match probability.
    OodSplit(OodArgs),
    /// Split two datasets at different ratios and merge them.
    Mix(MixArgs),
    /// Train a backbone with sample re-weighting.
    Train(TrainArgs),
    /// Top-K evaluation of a checkpoint.
    Eval(EvalArgs),
    /// One training run per lambda.
    SweepLambda(SweepArgs),
    /// Histogram of a sample_weights.tsv file.
    WeightsHist(HistArgs),
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Tagged interactions (`user\titem\ttag`); untagged lines count as train.
    #[arg(long)]
    pub interactions: PathBuf,
    /// Modality features as NAME=PATH (`.bin` binary or TSV); repeatable.
    #[arg(long = "features", value_name = "NAME=PATH")]
    pub features: Vec<String>,
    /// Item ids in binary feature row order, one per line.
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// Drop duplicate pairs with a warning instead of failing.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub dedup: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub users: usize,
    #[arg(long = "num-items", default_value_t = 1000)]
    pub num_items: usize,
    /// Feature dimension per modality.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub causal: usize,
    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
    pub rho_train: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub rho_test: f64,
    #[arg(long, default_value_t = 20)]
    pub interactions_per_user: usize,
    #[arg(long, default_value_t = 8)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 0.2)]
    pub shifted_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    pub causal_noise: f64,
    #[arg(long, default_value_t = 0.1)]
    pub spurious_noise: f64,
    #[arg(long, default_value_t = 4.0)]
    pub beta: f64,
    /// Keep shifted items out of training entirely.
    #[arg(long)]
    pub cold_shifted: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub interactions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub dedup: bool,
}

#[derive(Debug, Args)]
pub struct OodArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub fraction: f64,
    #[arg(long, default_value = "lowest")]
    pub mode: OodMode,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub proj_dim: usize,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
    pub ratios_a: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.1,0.8")]
    pub ratios_b: Vec<f64>,
    /// Features of the first dataset as NAME=PATH; repeatable.
    #[arg(long = "features-a", value_name = "NAME=PATH")]
    pub features_a: Vec<String>,
    #[arg(long = "features-b", value_name = "NAME=PATH")]
    pub features_b: Vec<String>,
    #[arg(long = "items-a")]
    pub items_a: Option<PathBuf>,
    #[arg(long = "items-b")]
    pub items_b: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Flags overriding config-file values.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub epochs_max: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub lr_theta: Option<String>,
    #[arg(long)]
    pub l2_reg: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub weight_penalty: Option<String>,
    #[arg(long)]
    pub w_max: Option<String>,
    #[arg(long)]
    pub inner_weight_steps: Option<String>,
    #[arg(long)]
    pub weight_lr: Option<String>,
    #[arg(long)]
    pub hsic_mode: Option<String>,
    #[arg(long)]
    pub mask_temperature: Option<String>,
    #[arg(long)]
    pub embed_dim: Option<String>,
    #[arg(long)]
    pub shared_dim: Option<String>,
    #[arg(long)]
    pub neg_exclude: Option<String>,
    /// Any config key as KEY=VALUE; repeatable, applied after the named flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    /// Defaults, then the file, then flags.
    pub fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut c = TrainConfig::default();
        if let Some(path) = &self.config {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            c.apply_ini(&text)?;
        }
        let named = [
            ("model", &self.model),
            ("lambda", &self.lambda),
            ("epochs_max", &self.epochs_max),
            ("batch_size", &self.batch_size),
            ("lr_theta", &self.lr_theta),
            ("l2_reg", &self.l2_reg),
            ("patience", &self.patience),
            ("seed", &self.seed),
            ("weight_penalty", &self.weight_penalty),
            ("w_max", &self.w_max),
            ("inner_weight_steps", &self.inner_weight_steps),
            ("weight_lr", &self.weight_lr),
            ("hsic.mode", &self.hsic_mode),
            ("mask.temperature", &self.mask_temperature),
            ("embed_dim", &self.embed_dim),
            ("shared_dim", &self.shared_dim),
            ("neg_exclude", &self.neg_exclude),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                c.set(k, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            c.set(k.trim(), v.trim())?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the per-epoch task mask to mask.tsv.
    #[arg(long)]
    pub dump_mask: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitTag,
    #[arg(long, value_delimiter = ',', default_value = "10,20")]
    pub k: Vec<usize>,
    #[arg(long, default_value = "train")]
    pub exclude: ExcludeMode,
    /// Also write per_user.tsv.
    #[arg(long)]
    pub per_user: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5")]
    pub lambdas: Vec<f64>,
    /// Split scored for each run after training.
    #[arg(long, default_value = "test")]
    pub eval_split: SplitTag,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub w_max: f64,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let rest: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, rest) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, args: Vec<String>) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        info!("--threads {n}: computation runs on one thread");
    }
    match cli.command {
        Command::GenSynthetic(a) => cmd_gen_synthetic(&a, args),
        Command::Split(a) => cmd_split(&a, args),
        Command::OodSplit(a) => cmd_ood_split(&a, args),
        Command::Mix(a) => cmd_mix(&a, args),
        Command::Train(a) => cmd_train(&a, args),
        Command::Eval(a) => cmd_eval(&a, args),
        Command::SweepLambda(a) => cmd_sweep_lambda(&a, args),
        Command::WeightsHist(a) => cmd_weights_hist(&a, args),
    }
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    let path = dir.join(name);
    let err = |e: std::io::Error| CliError::Data(format!("{}: {e}", path.display()));
    let mut out = BufWriter::new(File::create(&path).map_err(err)?);
    f(&mut out).and_then(|_| out.flush()).map_err(err)
}

fn ratios(v: &[f64]) -> Result<SplitRatios, CliError> {
    match v {
        [a, b, c] => SplitRatios::new(*a, *b, *c).map_err(|e| CliError::Usage(e.to_string())),
        _ => Err(CliError::Usage(format!("expected three ratios, got {}", v.len()))),
    }
}

fn parse_feature_arg(s: &str) -> Result<(String, PathBuf), CliError> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--features expects NAME=PATH, got `{s}`")))?;
    Ok((name.to_owned(), PathBuf::from(path)))
}

fn read_ids(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_owned())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Features for `ds` from NAME=PATH specs, recording inputs in `m`.
fn load_store(
    ds: &InteractionDataset,
    specs: &[String],
    items: Option<&Path>,
    m: &mut RunManifest,
) -> Result<FeatureStore<f64>, CliError> {
    let row_ids = match items {
        Some(p) => {
            m.input(p)?;
            Some(read_ids(p)?)
        }
        None => None,
    };
    let mut mods = Vec::with_capacity(specs.len());
    for s in specs {
        let (name, path) = parse_feature_arg(s)?;
        mods.push(load_modality(&name, &path, &ds.items, row_ids.as_deref())?);
        m.input(&path)?;
    }
    Ok(FeatureStore::new(ds.num_items(), mods)?)
}

fn load_data(data: &DataArgs, m: &mut RunManifest) -> Result<(InteractionDataset, FeatureStore<f64>), CliError> {
    let ds = load_interactions(&data.interactions, LoadOptions { dedup: data.dedup })?;
    m.input(&data.interactions)?;
    let store = load_store(&ds, &data.features, data.items.as_deref(), m)?;
    Ok((ds, store))
}

fn cmd_gen_synthetic(a: &GenArgs, args: Vec<String>) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        num_users: a.users,
        num_items: a.num_items,
        dims: a.dims.clone(),
        causal: a.causal,
        rho_train: a.rho_train,
        rho_test: a.rho_test,
        interactions_per_user: a.interactions_per_user,
        seed: a.seed,
        latent_dim: a.latent_dim,
        shifted_fraction: a.shifted_fraction,
        causal_noise: a.causal_noise,
        spurious_noise: a.spurious_noise,
        beta: a.beta,
        cold_shifted: a.cold_shifted,
    };
    let data = shift::gen_synthetic::<f64>(&spec)?;
    create_out(&a.out)?;
    let written = data.write(&spec, &a.out)?;
    let mut m = RunManifest::new("gen-synthetic", args);
    m.seed = Some(a.seed);
    m.config = Some(spec.to_toml());
    for p in written {
        m.output(
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    m.write(&a.out)?;
    println!(
        "{} users, {} items, {} interactions ({} train / {} valid / {} test); {} shifted items",
        data.dataset.num_users(),
        data.dataset.num_items(),
        data.dataset.len(),
        data.dataset.count(SplitTag::Train),
        data.dataset.count(SplitTag::Valid),
        data.dataset.count(SplitTag::Test),
        data.shifted_items().len()
    );
    Ok(())
}

fn cmd_split(a: &SplitArgs, args: Vec<String>) -> Result<(), CliError> {
    let r = ratios(&a.ratios)?;
    let mut m = RunManifest::new("split", args);
    let ds = load_interactions(&a.interactions, LoadOptions { dedup: a.dedup })?;
    m.input(&a.interactions)?;
    m.seed = Some(a.seed);
    let split = random_split(&ds, r, substream(a.seed, stream::DATASET).next_u64());
    create_out(&a.out)?;
    write_file(&a.out, "split.tsv", |o| split.write_tagged(o))?;
    m.output("split.tsv");
    m.write(&a.out)?;
    println!(
        "{} train / {} valid / {} test",
        split.count(SplitTag::Train),
        split.count(SplitTag::Valid),
        split.count(SplitTag::Test)
    );
    Ok(())
}

fn cmd_ood_split(a: &OodArgs, args: Vec<String>) -> Result<(), CliError> {
    let mut m = RunManifest::new("ood-split", args);
    m.seed = Some(a.seed);
    let (ds, store) = load_data(&a.data, &mut m)?;
    let cfg = ClassifierConfig {
        epochs: a.epochs,
        proj_dim: a.proj_dim,
        ..ClassifierConfig::default()
    };
    let (split, probs) = shift::build_ood_split(&ds, &store, a.fraction, a.mode, cfg, a.seed)?;
    create_out(&a.out)?;
    write_file(&a.out, "ood_split.tsv", |o| split.write_tagged(o))?;
    write_file(&a.out, "match_probs.tsv", |o| {
        for (id, p) in ds.items.ids().iter().zip(&probs) {
            writeln!(o, "{id}\t{p:.9}")?;
        }
        Ok(())
    })?;
    m.output("ood_split.tsv");
    m.output("match_probs.tsv");
    m.write(&a.out)?;
    println!(
        "kept {} of {} test interactions ({} {})",
        split.count(SplitTag::Test),
        ds.count(SplitTag::Test),
        a.mode,
        a.fraction
    );
    Ok(())
}

fn cmd_mix(a: &MixArgs, args: Vec<String>) -> Result<(), CliError> {
    let (ra, rb) = (ratios(&a.ratios_a)?, ratios(&a.ratios_b)?);
    let mut m = RunManifest::new("mix", args);
    m.seed = Some(a.seed);
    let da = load_interactions(&a.a, LoadOptions::default())?;
    let db = load_interactions(&a.b, LoadOptions::default())?;
    m.input(&a.a)?;
    m.input(&a.b)?;
    let mixed = shift::mix_datasets(
        &da,
        &db,
        (ra.train, ra.valid, ra.test),
        (rb.train, rb.valid, rb.test),
        substream(a.seed, stream::DATASET).next_u64(),
    )?;
    create_out(&a.out)?;
    write_file(&a.out, "mixed.tsv", |o| mixed.write_tagged(o))?;
    m.output("mixed.tsv");
    if !a.features_a.is_empty() || !a.features_b.is_empty() {
        let fa = load_store(&da, &a.features_a, a.items_a.as_deref(), &mut m)?;
        let fb = load_store(&db, &a.features_b, a.items_b.as_deref(), &mut m)?;
        let fm = shift::mix_features(&fa, &fb)?;
        for md in fm.modalities() {
            let name = format!("{}.bin", md.name);
            save_binary(&md.values, &a.out.join(&name))?;
            m.output(name);
        }
        write_file(&a.out, "items.tsv", |o| {
            for id in mixed.items.ids() {
                writeln!(o, "{id}")?;
            }
            Ok(())
        })?;
        m.output("items.tsv");
    }
    m.write(&a.out)?;
    println!(
        "{} users, {} items; {} train / {} valid / {} test",
        mixed.num_users(),
        mixed.num_items(),
        mixed.count(SplitTag::Train),
        mixed.count(SplitTag::Valid),
        mixed.count(SplitTag::Test)
    );
    Ok(())
}

fn check_features(config: &TrainConfig, store: &FeatureStore<f64>) -> Result<(), CliError> {
    if config.model == ModelKind::Vbpr && store.num_modalities() == 0 {
        return Err(CliError::Data(
            "model vbpr needs at least one --features NAME=PATH".into(),
        ));
    }
    Ok(())
}

fn run_fit(
    ds: &InteractionDataset,
    store: &FeatureStore<f64>,
    config: &TrainConfig,
) -> Result<FitResult<f64>, CliError> {
    let started = std::time::Instant::now();
    let fit = Trainer::new(ds, store, config.clone())?.fit()?;
    println!(
        "lambda {}: best epoch {} of {} (valid R@{} {:.4}) in {:.1}s",
        config.lambda,
        fit.best_epoch,
        fit.reports.len(),
        config.eval_k,
        fit.reports[fit.best_epoch - 1].valid.recall,
        started.elapsed().as_secs_f64()
    );
    Ok(fit)
}

fn cmd_train(a: &TrainArgs, args: Vec<String>) -> Result<(), CliError> {
    let config = a.config.resolve()?;
    let mut m = RunManifest::new("train", args);
    if let Some(p) = &a.config.config {
        m.input(p)?;
    }
    let (ds, store) = load_data(&a.data, &mut m)?;
    check_features(&config, &store)?;
    let fit = run_fit(&ds, &store, &config)?;
    create_out(&a.out)?;
    checkpoint::save(&fit.params, None, &a.out.join("checkpoint.mdck"))?;
    write_file(&a.out, "train_log.tsv", |o| write_train_log(&fit.reports, o))?;
    write_file(&a.out, "sample_weights.tsv", |o| write_weights(&fit.weights, &ds, o))?;
    write_file(&a.out, "config.ini", |o| o.write_all(config.to_ini().as_bytes()))?;
    for f in ["checkpoint.mdck", "train_log.tsv", "sample_weights.tsv", "config.ini"] {
        m.output(f);
    }
    if a.dump_mask {
        let names: Vec<String> = store.modalities().iter().map(|x| x.name.clone()).collect();
        write_file(&a.out, "mask.tsv", |o| {
            writeln!(o, "epoch\tmodality\tdim\talpha_bar")?;
            for (e, mask) in fit.masks.iter().enumerate() {
                mask.write_tsv(e + 1, &names, &mut *o)?;
            }
            Ok(())
        })?;
        m.output("mask.tsv");
    }
    m.seed = Some(config.seed);
    m.config = Some(config.to_ini());
    m.write(&a.out)?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs, args: Vec<String>) -> Result<(), CliError> {
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(EvalError::ZeroK.into());
    }
    let mut m = RunManifest::new("eval", args);
    let (ds, store) = load_data(&a.data, &mut m)?;
    let params = checkpoint::load::<f64>(&a.checkpoint)?;
    m.input(&a.checkpoint)?;
    if params.num_users() != ds.num_users() || params.num_items() != ds.num_items() {
        return Err(CliError::Data(format!(
            "checkpoint has {} users / {} items, data has {} / {}",
            params.num_users(),
            params.num_items(),
            ds.num_users(),
            ds.num_items()
        )));
    }
    params.check_store(&store)?;
    let shared = SharedFeatures::compute(&params, &store)?;
    let reports = evaluate_topk(&params, &shared, &ds, a.split, &a.k, a.exclude, a.per_user)?;
    create_out(&a.out)?;
    write_file(&a.out, "metrics.tsv", |o| write_reports(&reports, o))?;
    m.output("metrics.tsv");
    if a.per_user {
        write_file(&a.out, "per_user.tsv", |o| write_per_user(&reports, &ds, o))?;
        m.output("per_user.tsv");
    }
    m.write(&a.out)?;
    print!("{}", format_table(&reports));
    Ok(())
}

fn cmd_sweep_lambda(a: &SweepArgs, args: Vec<String>) -> Result<(), CliError> {
    if a.lambdas.is_empty() {
        return Err(CliError::Usage("--lambdas is empty".into()));
    }
    let base = a.config.resolve()?;
    let mut m = RunManifest::new("sweep-lambda", args);
    if let Some(p) = &a.config.config {
        m.input(p)?;
    }
    let (ds, store) = load_data(&a.data, &mut m)?;
    check_features(&base, &store)?;
    let mut rows = vec!["lambda\tstatus\tbest_epoch\tvalid_recall\trecall\tndcg\tprecision".to_owned()];
    for &lambda in &a.lambdas {
        let config = TrainConfig { lambda, ..base.clone() };
        let outcome = config.validate().map_err(CliError::from).and_then(|_| {
            let fit = run_fit(&ds, &store, &config)?;
            let shared = SharedFeatures::compute(&fit.params, &store)?;
            let r = evaluate_topk(
                &fit.params,
                &shared,
                &ds,
                a.eval_split,
                &[config.eval_k],
                config.eval_exclude,
                false,
            )?;
            Ok((fit, r.into_iter().next().expect("one K")))
        });
        rows.push(match outcome {
            Ok((fit, r)) => format!(
                "{lambda}\tok\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                fit.best_epoch,
                fit.reports[fit.best_epoch - 1].valid.recall,
                r.recall,
                r.ndcg,
                r.precision
            ),
            Err(e) => {
                warn!("lambda {lambda} failed: {}", e.message());
                format!(
                    "{lambda}\terror: {}\t-\t-\t-\t-\t-",
                    e.message().replace(['\t', '\n'], " ")
                )
            }
        });
    }
    create_out(&a.out)?;
    write_file(&a.out, "sweep.tsv", |o| {
        for r in &rows {
            writeln!(o, "{r}")?;
        }
        Ok(())
    })?;
    m.output("sweep.tsv");
    m.seed = Some(base.seed);
    m.config = Some(base.to_ini());
    m.write(&a.out)?;
    for r in &rows {
        println!("{r}");
    }
    Ok(())
}

/// Reads the weight column of an `item_id\tweight` file.
pub fn read_weights(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.split('\t')
                .nth(1)
                .and_then(|w| w.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    DataError::Parse {
                        line: n + 1,
                        msg: "expected `item_id\\tweight`".into(),
                    }
                    .into()
                })
        })
        .collect()
}

fn cmd_weights_hist(a: &HistArgs, args: Vec<String>) -> Result<(), CliError> {
    if a.bins == 0 || !(a.w_max > 0.0) {
        return Err(CliError::Usage("--bins must be >= 1 and --w-max > 0".into()));
    }
    let mut m = RunManifest::new("weights-hist", args);
    let weights = read_weights(&a.weights)?;
    m.input(&a.weights)?;
    let h = Histogram::new(&weights, 0.0, a.w_max, a.bins);
    create_out(&a.out)?;
    write_file(&a.out, "weights_hist.tsv", |o| o.write_all(h.to_tsv().as_bytes()))?;
    m.output("weights_hist.tsv");
    m.write(&a.out)?;
    print!("{}", h.to_text(50));
    Ok(())
}
