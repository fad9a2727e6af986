//! Command-line front end: `encode`, `train`, `eval`, `synth` and `cluster`.
//!
//! Every subcommand resolves its settings as flag > `--config` file > profile
//! preset > built-in default, echoes the resolved config to stdout as a
//! `# config: {...}` line and, when it writes an output directory, stores the
//! same object in `meta.json`. Passing that `meta.json` back as `--config`
//! reruns the command with identical settings.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{self, Dataset};
use crate::encoders::{EncoderSpec, RbfState, Variant};
use crate::error::{Error, Result};
use crate::eval::{self, CellGrid, EvalReport};
use crate::nnet::{Arch, Checkpoint};
use crate::training::{self, LossConfig, Optimizer, TrainConfig};

const STREAM_RBF_ANCHORS: u64 = 3;

#[derive(Debug, Parser)]
#[command(name = "sphere2vec", version, about = "Spherical location encoders and geo-prior training")]
pub struct Cli {
    /// JSON config file (or a previous run's meta.json)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode points and print or write one CSV row per point
    Encode(EncodeArgs),
    /// Train a geo-prior on a dataset CSV
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test CSV
    Eval(EvalArgs),
    /// Generate a synthetic vMF dataset
    Synth(SynthArgs),
    /// Cluster location embeddings over a lat-lon grid
    Cluster(ClusterArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Encode(_) => "encode",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Synth(_) => "synth",
            Command::Cluster(_) => "cluster",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EncoderArgs {
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub r_min: Option<f64>,
    #[arg(long)]
    pub r_max: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub encoder: EncoderArgs,
    /// Longitude in degrees
    #[arg(long, allow_negative_numbers = true)]
    pub lon: Option<f64>,
    /// Latitude in degrees
    #[arg(long, allow_negative_numbers = true)]
    pub lat: Option<f64>,
    /// Dataset CSV whose points are encoded
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training dataset CSV
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// birdsnap, birdsnap-dagger, nabirds-dagger, inat2017, inat2018 or synthetic
    #[arg(long)]
    pub profile: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub encoder: EncoderArgs,
    #[arg(long)]
    pub rbf_anchors: Option<usize>,
    #[arg(long)]
    pub rbf_sigma: Option<f64>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub negatives_per_positive: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// adam or sgd
    #[arg(long)]
    pub optimizer: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Test dataset CSV
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON object mapping sample_id to image-model class probabilities
    #[arg(long)]
    pub image_probs: Option<PathBuf>,
    /// Latitude band width in degrees
    #[arg(long)]
    pub bands: Option<f64>,
    /// Cell size as LONxLAT degrees, e.g. 45x30
    #[arg(long)]
    pub cells: Option<String>,
    /// Also cluster embeddings into this many groups
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Grid step in degrees for clustering
    #[arg(long)]
    pub grid: Option<f64>,
    /// Earlier report.json to diff per-cell MRR against
    #[arg(long)]
    pub baseline: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// antipodal or polar
    #[arg(long)]
    pub preset: Option<String>,
    /// VmfMixtureSpec JSON; overrides the preset
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    #[arg(long)]
    pub points_per_class: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ClusterArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub grid: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeConfig {
    pub variant: Variant,
    pub scales: Option<usize>,
    pub r_min: f64,
    pub r_max: f64,
    pub rbf: Option<RbfState>,
    pub lon: Option<f64>,
    pub lat: Option<f64>,
    pub csv: Option<PathBuf>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            variant: Variant::SphereC,
            scales: None,
            r_min: 1e-3,
            r_max: 1.0,
            rbf: None,
            lon: None,
            lat: None,
            csv: None,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub data: Option<PathBuf>,
    pub profile: Option<String>,
    pub variant: Variant,
    pub scales: Option<usize>,
    pub r_min: f64,
    pub r_max: f64,
    pub rbf_anchors: usize,
    pub rbf_sigma: f64,
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: Option<usize>,
    pub beta: Option<f64>,
    pub negatives_per_positive: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            data: None,
            profile: None,
            variant: Variant::SphereC,
            scales: None,
            r_min: 1e-3,
            r_max: 1.0,
            rbf_anchors: 200,
            rbf_sigma: 1.0,
            hidden_layers: 1,
            hidden_dim: 1024,
            embed_dim: None,
            beta: None,
            negatives_per_positive: 1,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: t.optimizer,
            seed: t.seed,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCmdConfig {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub image_probs: Option<PathBuf>,
    pub bands: f64,
    pub cells: String,
    pub clusters: Option<usize>,
    pub grid: f64,
    pub baseline: Option<PathBuf>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for EvalCmdConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            data: None,
            image_probs: None,
            bands: 10.0,
            cells: "45x30".into(),
            clusters: None,
            grid: 30.0,
            baseline: None,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCmdConfig {
    pub preset: String,
    pub mixture: Option<PathBuf>,
    pub points_per_class: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for SynthCmdConfig {
    fn default() -> Self {
        Self {
            preset: "antipodal".into(),
            mixture: None,
            points_per_class: None,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterCmdConfig {
    pub checkpoint: Option<PathBuf>,
    pub clusters: usize,
    pub grid: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for ClusterCmdConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            clusters: 5,
            grid: 30.0,
            seed: 0,
            out: None,
        }
    }
}

/// Presets of learning rate, minimum scale and hidden width per dataset.
pub fn profile(name: &str) -> Result<Map<String, Value>> {
    let (lr, r_min, k) = match name {
        "birdsnap" => (1e-3, 1e-6, 512),
        "birdsnap-dagger" => (1e-3, 1e-4, 1024),
        "nabirds-dagger" => (1e-3, 1e-4, 1024),
        "inat2017" => (1e-4, 1e-2, 1024),
        "inat2018" => (5e-4, 1e-3, 1024),
        "synthetic" => (1e-3, 1e-2, 256),
        other => {
            return Err(Error::InvalidConfig(format!("unknown profile {other:?}")));
        }
    };
    let mut m = Map::new();
    m.insert("learning_rate".into(), lr.into());
    m.insert("r_min".into(), r_min.into());
    m.insert("hidden_dim".into(), k.into());
    Ok(m)
}

/// Scales used when none is configured: 8 for sphereDFS, 32 otherwise.
pub fn default_scales(variant: Variant) -> usize {
    match variant {
        Variant::SphereDfs => 8,
        Variant::Wrap | Variant::Rbf => 1,
        _ => 32,
    }
}

#[derive(Serialize, Deserialize)]
struct Meta<C> {
    command: String,
    version: String,
    config: C,
}

fn object(value: Value, what: &str) -> Result<Map<String, Value>> {
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(Error::InvalidConfig(format!("{what} must be a JSON object"))),
    }
}

fn overlay(base: &mut Map<String, Value>, top: Map<String, Value>) {
    for (k, v) in top {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_config_file(path: &Path, command: &str) -> Result<Map<String, Value>> {
    let mut m = object(serde_json::from_str(&read_text(path)?)?, "config file")?;
    // accept a previous run's meta.json as a config
    if let (Some(Value::String(cmd)), Some(Value::Object(_))) = (m.get("command"), m.get("config")) {
        if cmd != command {
            return Err(Error::InvalidConfig(format!(
                "config was written by `{cmd}`, not `{command}`"
            )));
        }
        return object(m.remove("config").unwrap_or_default(), "config")
            .map_err(|e| Error::InvalidConfig(e.to_string()));
    }
    Ok(m)
}

struct Globals {
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

fn resolve<C: DeserializeOwned>(
    command: &str,
    globals: &Globals,
    flags: impl Serialize,
    apply_profile: bool,
) -> Result<C> {
    let mut flags = object(serde_json::to_value(flags)?, "flags")?;
    if let Some(seed) = globals.seed {
        flags.insert("seed".into(), seed.into());
    }
    if let Some(out) = &globals.out {
        flags.insert("out".into(), serde_json::to_value(out)?);
    }
    let file = match &globals.config {
        Some(p) => load_config_file(p, command)?,
        None => Map::new(),
    };

    let mut merged = Map::new();
    if apply_profile {
        let name = [&flags, &file]
            .into_iter()
            .find_map(|m| m.get("profile").filter(|v| !v.is_null()));
        if let Some(Value::String(name)) = name {
            overlay(&mut merged, profile(name)?);
        }
    }
    overlay(&mut merged, file);
    overlay(&mut merged, flags);
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| Error::InvalidConfig(format!("{command}: {e}")))
}

fn echo<'c, C: Serialize>(stdout: &mut dyn Write, command: &str, config: &'c C) -> Result<Meta<&'c C>> {
    let meta = Meta {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
    };
    let line = serde_json::to_string(&meta)?;
    writeln!(stdout, "# config: {line}").map_err(|e| Error::io("<stdout>", e))?;
    Ok(meta)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

fn write_meta<C: Serialize>(dir: &Path, meta: &Meta<&C>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    write_file(dir, "meta.json", &text)
}

fn require<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("missing required setting `{name}`")))
}

fn say(stdout: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(stdout, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn build_spec(
    variant: Variant,
    scales: usize,
    r_min: f64,
    r_max: f64,
    rbf: Option<RbfState>,
) -> Result<EncoderSpec> {
    if variant == Variant::Rbf {
        let state = rbf.ok_or_else(|| {
            Error::InvalidSpec("rbf needs anchors and sigma (an `rbf` object in the config)".into())
        })?;
        return Ok(EncoderSpec::rbf(state));
    }
    EncoderSpec::new(variant, scales, r_min)?.with_r_max(r_max)
}

fn csv_row(values: &[f64]) -> String {
    let mut row = values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",");
    row.push('\n');
    row
}

/// Parses arguments and runs one subcommand, writing human output to `stdout`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            return write!(stdout, "{e}").map_err(|err| Error::io("<stdout>", err));
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default();
            return Err(Error::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    let globals = Globals {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    let name = cli.command.name();
    match cli.command {
        Command::Encode(a) => cmd_encode(resolve(name, &globals, a, false)?, stdout),
        Command::Train(a) => cmd_train(resolve(name, &globals, a, true)?, stdout),
        Command::Eval(a) => cmd_eval(resolve(name, &globals, a, false)?, stdout),
        Command::Synth(a) => cmd_synth(resolve(name, &globals, a, false)?, stdout),
        Command::Cluster(a) => cmd_cluster(resolve(name, &globals, a, false)?, stdout),
    }
}

pub fn cmd_encode(mut cfg: EncodeConfig, stdout: &mut dyn Write) -> Result<()> {
    let scales = *cfg.scales.get_or_insert(default_scales(cfg.variant));
    let spec = build_spec(cfg.variant, scales, cfg.r_min, cfg.r_max, cfg.rbf.clone())?;
    let points = match (&cfg.csv, cfg.lon, cfg.lat) {
        (Some(path), None, None) => data::load_csv(path)?.points(),
        (None, Some(lon), Some(lat)) => vec![data::point_from_degrees(lon, lat)?],
        _ => {
            return Err(Error::InvalidConfig(
                "encode needs either --lon and --lat, or --csv".into(),
            ))
        }
    };
    let meta = echo(stdout, "encode", &cfg)?;
    let mut text = String::new();
    for p in &points {
        text.push_str(&csv_row(spec.encode(p).values()));
    }
    match &cfg.out {
        Some(dir) => {
            write_file(dir, "encodings.csv", &text)?;
            write_meta(dir, &meta)
        }
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

pub fn cmd_train(mut cfg: TrainCmdConfig, stdout: &mut dyn Write) -> Result<()> {
    let dataset = data::load_csv(require(&cfg.data, "data")?)?;
    let out = require(&cfg.out, "out")?.clone();
    let scales = *cfg.scales.get_or_insert(default_scales(cfg.variant));
    let d = *cfg.embed_dim.get_or_insert(cfg.hidden_dim);
    let beta = *cfg.beta.get_or_insert(dataset.num_classes as f64);

    let rbf = if cfg.variant == Variant::Rbf {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(STREAM_RBF_ANCHORS);
        Some(RbfState::from_points(&dataset.points(), cfg.rbf_anchors, cfg.rbf_sigma, &mut rng)?)
    } else {
        None
    };
    let spec = build_spec(cfg.variant, scales, cfg.r_min, cfg.r_max, rbf)?;
    let arch = Arch {
        h: cfg.hidden_layers,
        k: cfg.hidden_dim,
        d,
        c: dataset.num_classes,
    };
    let loss_cfg = LossConfig {
        beta,
        negatives_per_positive: cfg.negatives_per_positive,
    };
    let train_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        optimizer: cfg.optimizer,
        ..TrainConfig::default()
    };
    let meta = echo(stdout, "train", &cfg)?;

    let checkpoint = training::train(
        &dataset.records,
        dataset.num_classes,
        &spec,
        arch,
        &loss_cfg,
        &train_cfg,
    )?;
    let mut loss_csv = String::from("epoch,loss\n");
    for (epoch, loss) in checkpoint.loss_history.iter().enumerate() {
        loss_csv.push_str(&format!("{epoch},{loss}\n"));
    }
    let mut json = checkpoint.to_json()?;
    json.push('\n');
    write_file(&out, "checkpoint.json", &json)?;
    write_file(&out, "loss.csv", &loss_csv)?;
    write_meta(&out, &meta)?;
    if let (Some(first), Some(last)) = (checkpoint.loss_history.first(), checkpoint.loss_history.last()) {
        say(stdout, format_args!("loss {first} -> {last} over {} epochs", cfg.epochs))?;
    }
    Ok(())
}

/// `report.json` contents: the evaluation report plus how it was scored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub mode: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

fn parse_cells(s: &str) -> Result<CellGrid> {
    let bad = || Error::BadGrid(format!("cells must look like LONxLAT, got {s:?}"));
    let (lon, lat) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok(CellGrid {
        lon_step_deg: lon.trim().parse().map_err(|_| bad())?,
        lat_step_deg: lat.trim().parse().map_err(|_| bad())?,
    })
}

fn load_model(path: &Path) -> Result<crate::nnet::LocationModel> {
    Checkpoint::from_json(&read_text(path)?)?.to_model()
}

pub fn cmd_eval(cfg: EvalCmdConfig, stdout: &mut dyn Write) -> Result<()> {
    let model = load_model(require(&cfg.checkpoint, "checkpoint")?)?;
    let test: Dataset = data::load_csv(require(&cfg.data, "data")?)?;
    let out = require(&cfg.out, "out")?.clone();
    let grid = parse_cells(&cfg.cells)?;
    if test.num_classes != model.num_classes() {
        return Err(Error::InvalidConfig(format!(
            "test set declares {} classes, checkpoint has {}",
            test.num_classes,
            model.num_classes()
        )));
    }
    let meta = echo(stdout, "eval", &cfg)?;

    let points = test.points();
    let labels = test.labels();
    let priors = eval::geo_priors(&model, &points);
    let (mode, rankings) = match &cfg.image_probs {
        None => ("location", eval::rankings_from_scores(priors.view())),
        Some(path) => {
            let probs = eval::load_image_probs(path)?;
            let rankings = test
                .records
                .iter()
                .zip(priors.rows())
                .map(|(rec, prior)| {
                    let image = probs.get(&rec.sample_id).ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "no image probabilities for sample {:?}",
                            rec.sample_id
                        ))
                    })?;
                    eval::combine_with_image(&prior.to_vec(), image)
                })
                .collect::<Result<Vec<_>>>()?;
            ("combined", rankings)
        }
    };
    let report = eval::evaluate(&points, &rankings, &labels, cfg.bands, grid)?;
    let file = ReportFile {
        mode: mode.to_string(),
        report,
    };

    if let Some(path) = &cfg.baseline {
        let baseline: ReportFile = serde_json::from_str(&read_text(path)?)?;
        let delta = eval::cell_delta_mrr(&file.report, &baseline.report)?;
        write_file(&out, "cell_delta.csv", &eval::cell_delta_csv(&delta))?;
    }
    if let Some(k) = cfg.clusters {
        let cells = eval::cluster_embeddings(&model, cfg.grid, k)?;
        write_file(&out, "clusters.csv", &eval::clusters_csv(&cells))?;
    }
    let mut json = serde_json::to_string_pretty(&file)?;
    json.push('\n');
    write_file(&out, "report.json", &json)?;
    write_file(&out, "bands.csv", &eval::bands_csv(&file.report.band_rows))?;
    write_file(&out, "cells.csv", &eval::cells_csv(&file.report.cell_rows))?;
    write_meta(&out, &meta)?;
    say(
        stdout,
        format_args!(
            "mrr {} top1 {} n {}",
            file.report.overall_mrr, file.report.top1, file.report.n_samples
        ),
    )
}

pub fn cmd_synth(cfg: SynthCmdConfig, stdout: &mut dyn Write) -> Result<()> {
    let out = require(&cfg.out, "out")?.clone();
    let mut mixture = match &cfg.mixture {
        Some(path) => serde_json::from_str(&read_text(path)?)?,
        None => data::synthetic_preset(&cfg.preset, cfg.points_per_class)?,
    };
    if let Some(n) = cfg.points_per_class {
        mixture.points_per_class = n;
    }
    let meta = echo(stdout, "synth", &cfg)?;
    let (train, test) = data::synth_vmf_dataset(&mixture, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    data::save_csv(&train, out.join("train.csv"))?;
    data::save_csv(&test, out.join("test.csv"))?;
    let mut json = serde_json::to_string_pretty(&mixture)?;
    json.push('\n');
    write_file(&out, "mixture.json", &json)?;
    write_meta(&out, &meta)?;
    say(
        stdout,
        format_args!("train {} test {} classes {}", train.len(), test.len(), train.num_classes),
    )
}

pub fn cmd_cluster(cfg: ClusterCmdConfig, stdout: &mut dyn Write) -> Result<()> {
    let model = load_model(require(&cfg.checkpoint, "checkpoint")?)?;
    let out = require(&cfg.out, "out")?.clone();
    let meta = echo(stdout, "cluster", &cfg)?;
    let cells = eval::cluster_embeddings(&model, cfg.grid, cfg.clusters)?;
    write_file(&out, "clusters.csv", &eval::clusters_csv(&cells))?;
    write_meta(&out, &meta)?;
    say(stdout, format_args!("cells {} clusters {}", cells.len(), cfg.clusters))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> Result<String> {
        let mut out = Vec::new();
        run(std::iter::once("sphere2vec").chain(args.iter().copied()), &mut out)?;
        Ok(String::from_utf8(out).unwrap())
    }

    fn data_lines(s: &str) -> Vec<&str> {
        s.lines().filter(|l| !l.starts_with('#')).collect()
    }

    #[test]
    fn encode_origin_sphere_c() {
        let s = run_capture(&["encode", "--variant", "sphereC", "--scales", "1", "--lon", "0", "--lat", "0"]).unwrap();
        assert_eq!(data_lines(&s), vec!["0,1,0"]);
        assert!(s.starts_with("# config: {\"command\":\"encode\""));
    }

    #[test]
    fn encode_dfs_width() {
        let s = run_capture(&["encode", "--variant", "sphereDFS", "--scales", "8", "--lon", "-12.5", "--lat", "33"]).unwrap();
        assert_eq!(data_lines(&s)[0].split(',').count(), 288);
    }

    #[test]
    fn profile_presets_apply_below_flags() {
        let globals = Globals { config: None, seed: None, out: None };
        let flags: Map<String, Value> =
            serde_json::from_str(r#"{"profile":"inat2017","learning_rate":0.5}"#).unwrap();
        let cfg: TrainCmdConfig = resolve("train", &globals, flags, true).unwrap();
        assert_eq!(cfg.learning_rate, 0.5);
        assert_eq!(cfg.r_min, 1e-2);
        assert_eq!(cfg.hidden_dim, 1024);
        let flags: Map<String, Value> = serde_json::from_str(r#"{"profile":"birdsnap"}"#).unwrap();
        let cfg: TrainCmdConfig = resolve("train", &globals, flags, true).unwrap();
        assert_eq!((cfg.learning_rate, cfg.r_min, cfg.hidden_dim), (1e-3, 1e-6, 512));
        assert!(profile("imagenet").is_err());
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"epochs": 7, "batch_size": 64}"#).unwrap();
        let globals = Globals { config: Some(path), seed: Some(9), out: None };
        let flags: Map<String, Value> = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        let cfg: TrainCmdConfig = resolve("train", &globals, flags, true).unwrap();
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.seed), (3, 64, 9));
        assert_eq!(cfg.learning_rate, 1e-3);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"epoch": 7}"#).unwrap();
        let globals = Globals { config: Some(path), seed: None, out: None };
        let r: Result<TrainCmdConfig> = resolve("train", &globals, Map::new(), true);
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn usage_errors_are_single_line() {
        let e = run_capture(&["encode", "--bogus"]).unwrap_err();
        assert_eq!(e.code(), "USAGE");
        assert!(!e.to_string().contains('\n'));
    }

    #[test]
    fn parse_cells_forms() {
        assert_eq!(parse_cells("45x30").unwrap(), CellGrid::default());
        assert!(parse_cells("45").is_err());
        assert!(parse_cells("ax30").is_err());
    }
}
