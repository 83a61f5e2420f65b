use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ncl_core::data::{fit_scaler, load_processed, load_raw, preprocess, save_processed, save_raw, synth_generate, SynthConfig};
use ncl_core::encoder::{Checkpoint, HeadKind};
use ncl_core::evaluate::{evaluate_run, format_mean_std, mean_std, EvalProtocol, Report};
use ncl_core::neighborhood::{NeighborhoodKind, Window};
use ncl_core::plot::{line_chart_svg, Point, Series};
use ncl_core::run::{hash_dir, RunManifest};
use ncl_core::trainer::{pretrain, train_seq2seq, train_supervised, write_step_metrics, Method, Preset, TrainConfig};
use ncl_core::{NclError, Result};

/// Relative dataset paths are resolved against this directory when set.
const DATA_ROOT_ENV: &str = "NCL_DATA_ROOT";

#[derive(Parser)]
#[command(name = "ncl", version, about = "Neighborhood contrastive learning experiments on clinical time series")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct Global {
    /// Seed overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a raw synthetic cohort.
    Synth {
        #[arg(long)]
        patients: Option<usize>,
    },
    /// Fit scaling statistics on the training split and write a processed dataset.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
    },
    /// Train a representation (or an end-to-end / auto-encoder baseline).
    Pretrain(PretrainArgs),
    /// Probe a trained encoder and write report.json and report.csv.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        tasks: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        label_fractions: Option<Vec<f64>>,
    },
    /// Pretrain and evaluate every cell of a grid, one process per step.
    Sweep {
        #[arg(long)]
        data: PathBuf,
    },
    /// Aggregate evaluation reports into tables and alpha curves.
    Report {
        /// Evaluation directories, or run directories containing `eval/`.
        dirs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Window half-width in hours, or `inf`.
    #[arg(long)]
    w: Option<Window>,
    #[arg(long)]
    neighborhood: Option<String>,
    #[arg(long)]
    freeze_projector: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    queue_size: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lr_peak: Option<f64>,
}

fn config_error(msg: impl Into<String>) -> NclError {
    NclError::Config(msg.into())
}

fn read_toml<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| NclError::io(p, e))?;
            toml::from_str(&text).map_err(|e| config_error(format!("{}: {}", p.display(), e.message())))
        }
    }
}

fn data_path(p: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if p.is_relative() => Path::new(&root).join(p),
        _ => p.to_path_buf(),
    }
}

fn out_dir(global: &Global, default: Option<PathBuf>) -> Result<PathBuf> {
    let dir = global
        .out
        .clone()
        .or(default)
        .ok_or_else(|| config_error("--out is required"))?;
    fs::create_dir_all(&dir).map_err(|e| NclError::io(&dir, e))?;
    Ok(dir)
}

fn write(dir: &Path, rel: &str, text: &str, manifest: &mut RunManifest) -> Result<()> {
    let path = dir.join(rel);
    fs::write(&path, text).map_err(|e| NclError::io(&path, e))?;
    manifest.add_artifact(dir, rel)
}

fn cmd_synth(global: &Global, patients: Option<usize>) -> Result<()> {
    let mut cfg: SynthConfig = read_toml(global.config.as_deref())?;
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(n) = patients {
        cfg.n_patients = n;
    }
    let out = out_dir(global, None)?;
    let raw = synth_generate(&cfg)?;
    save_raw(&raw, &out)?;
    let mut m = RunManifest::new("synth", cfg.seed, &cfg, None)?;
    m.add_artifact(&out, ncl_core::data::MANIFEST_FILE)?;
    m.finish(&out)?;
    println!("{}", out.display());
    Ok(())
}

fn cmd_preprocess(global: &Global, input: &Path) -> Result<()> {
    let input = data_path(input);
    let raw = load_raw(&input)?;
    let stats = fit_scaler(&raw)?;
    let (ds, report) = preprocess(&raw, &stats)?;
    let out = out_dir(global, None)?;
    save_processed(&ds, &out)?;
    let mut m = RunManifest::new("preprocess", global.seed.unwrap_or(0), &(), Some(hash_dir(&input)?))?;
    m.add_artifact(&out, ncl_core::data::MANIFEST_FILE)?;
    if !report.constant_channels.is_empty() {
        eprintln!("constant training channels: {}", report.constant_channels.join(", "));
    }
    m.finish(&out)?;
    println!("{}", out.display());
    Ok(())
}

/// Applies flags over the file config and pins every derived default so the
/// manifest records the effective values.
fn effective_train_config(global: &Global, a: &PretrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match global.config.as_deref() {
        None => TrainConfig::default(),
        Some(p) => TrainConfig::from_toml(&fs::read_to_string(p).map_err(|e| NclError::io(p, e))?)?,
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.method {
        cfg.method = m;
    }
    if let Some(p) = &a.preset {
        cfg.preset = match p.as_str() {
            "mimic" => Preset::Mimic,
            "physionet" => Preset::Physionet,
            other => return Err(config_error(format!("unknown preset {other:?}"))),
        };
    }
    if let Some(n) = &a.neighborhood {
        cfg.neighborhood = Some(match n.as_str() {
            "window" => NeighborhoodKind::Window,
            "label" => NeighborhoodKind::Label,
            "window_label" => NeighborhoodKind::WindowLabel,
            other => return Err(config_error(format!("unknown neighborhood {other:?}"))),
        });
    }
    cfg.alpha = a.alpha.or(cfg.alpha);
    cfg.w = a.w.or(cfg.w);
    cfg.steps = a.steps.unwrap_or(cfg.steps);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.queue_size = a.queue_size.unwrap_or(cfg.queue_size);
    cfg.rho = a.rho.or(cfg.rho);
    cfg.tau = a.tau.unwrap_or(cfg.tau);
    cfg.lr_peak = a.lr_peak.unwrap_or(cfg.lr_peak);
    if a.freeze_projector {
        cfg.freeze_projector = Some(true);
    }
    cfg.validate()?;
    cfg.warmup_steps = Some(cfg.warmup_steps());
    cfg.rho = Some(cfg.rho());
    if cfg.method.is_contrastive() {
        let spec = cfg.loss_spec()?;
        cfg.alpha = Some(spec.alpha);
        cfg.w = Some(spec.neighborhood.w);
        cfg.neighborhood = Some(spec.neighborhood.kind);
        cfg.freeze_projector = Some(cfg.freeze_projector());
    }
    Ok(cfg)
}

fn cmd_pretrain(global: &Global, a: &PretrainArgs) -> Result<()> {
    let cfg = effective_train_config(global, a)?;
    let data = data_path(&a.data);
    let ds = load_processed(&data)?;
    let out = out_dir(global, None)?;
    let mut m = RunManifest::new("pretrain", cfg.seed, &cfg, Some(hash_dir(&data)?))?;
    write(&out, "config.toml", &cfg.to_toml()?, &mut m)?;
    let checkpoint = match cfg.method {
        Method::E2e => train_supervised(&ds, &cfg)?.checkpoint,
        Method::Ae | Method::AeForecast => train_seq2seq(&ds, &cfg, cfg.method == Method::AeForecast)?.checkpoint,
        _ => {
            let outcome = pretrain(&ds, &cfg)?;
            if outcome.warmup_repeated {
                eprintln!("warning: queue warm-up repeated training samples");
            }
            write_step_metrics(&out.join("metrics.csv"), &outcome.metrics)?;
            m.add_artifact(&out, "metrics.csv")?;
            outcome.checkpoint
        }
    };
    write(&out, "checkpoint.json", &checkpoint.to_json()?, &mut m)?;
    m.finish(&out)?;
    println!("{}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalSnapshot<'a> {
    protocol: &'a EvalProtocol,
    pretrain: Option<serde_json::Value>,
}

fn cmd_evaluate(
    global: &Global,
    run: &Path,
    data: &Path,
    tasks: Option<Vec<String>>,
    fractions: Option<Vec<f64>>,
) -> Result<()> {
    let mut protocol: EvalProtocol = read_toml(global.config.as_deref())?;
    if let Some(s) = global.seed {
        protocol.seeds = vec![s];
    }
    if let Some(t) = tasks {
        protocol.tasks = t;
    }
    if let Some(f) = fractions {
        protocol.label_fractions = f;
    }
    protocol.validate()?;
    let ck = Checkpoint::load(&run.join("checkpoint.json"))?;
    let pretrain = RunManifest::load(run).ok().map(|m| m.config);
    let data = data_path(data);
    let ds = load_processed(&data)?;
    let out = out_dir(global, Some(run.join("eval")))?;
    let snapshot = EvalSnapshot {
        protocol: &protocol,
        pretrain,
    };
    let inputs = format!("{}{}", hash_dir(&data)?, ncl_core::run::hash_file(&run.join("checkpoint.json"))?);
    let mut m = RunManifest::new("evaluate", protocol.sample_seed, &snapshot, Some(ncl_core::run::sha256_hex(inputs.as_bytes())))?;
    let report = evaluate_run(&ck, &ds, &protocol)?;
    write(&out, "report.json", &report.to_json()?, &mut m)?;
    write(&out, "report.csv", &report.to_csv(), &mut m)?;
    m.finish(&out)?;
    for e in &report.entries {
        println!("{} {} {:?} {} {}: {}", report.method, e.task, e.head, e.label_fraction, e.metric, e.summary);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepConfig {
    methods: Vec<Method>,
    /// Empty keeps each method's default.
    alphas: Vec<f64>,
    windows: Vec<Window>,
    seeds: Vec<u64>,
    train: TrainConfig,
    protocol: EvalProtocol,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::NclW],
            alphas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            windows: Vec::new(),
            seeds: vec![0],
            train: TrainConfig::default(),
            protocol: EvalProtocol::default(),
        }
    }
}

fn run_child(args: &[&std::ffi::OsStr]) -> Result<()> {
    let exe = std::env::current_exe().map_err(|e| NclError::io("current executable", e))?;
    let status = Command::new(&exe)
        .args(args)
        .status()
        .map_err(|e| NclError::io(&exe, e))?;
    match status.code() {
        Some(0) => Ok(()),
        Some(2) => Err(config_error(format!("sweep cell failed: {args:?}"))),
        Some(4) => Err(NclError::Numeric(format!("sweep cell diverged: {args:?}"))),
        _ => Err(NclError::Data(format!("sweep cell failed: {args:?}"))),
    }
}

fn cmd_sweep(global: &Global, data: &Path) -> Result<()> {
    let grid: SweepConfig = read_toml(global.config.as_deref())?;
    let out = out_dir(global, None)?;
    let alphas: Vec<Option<f64>> = if grid.alphas.is_empty() {
        vec![None]
    } else {
        grid.alphas.iter().copied().map(Some).collect()
    };
    let windows: Vec<Option<Window>> = if grid.windows.is_empty() {
        vec![None]
    } else {
        grid.windows.iter().copied().map(Some).collect()
    };
    let seeds = match global.seed {
        Some(s) => vec![s],
        None => grid.seeds.clone(),
    };
    let mut m = RunManifest::new("sweep", seeds.first().copied().unwrap_or(0), &grid, None)?;
    let mut cells = Vec::new();
    for &method in &grid.methods {
        for &alpha in &alphas {
            for &w in &windows {
                for &seed in &seeds {
                    let mut cfg = grid.train.clone();
                    cfg.method = method;
                    cfg.seed = seed;
                    cfg.alpha = alpha.or(cfg.alpha);
                    cfg.w = w.or(cfg.w);
                    cfg.validate()?;
                    let name = format!(
                        "{method}_a{}_w{}_s{seed}",
                        alpha.map_or("default".into(), |a| a.to_string()),
                        w.map_or("default".into(), |w| w.to_string())
                    );
                    let cell = out.join(&name);
                    fs::create_dir_all(&cell).map_err(|e| NclError::io(&cell, e))?;
                    let train_path = cell.join("train.toml");
                    let protocol_path = cell.join("protocol.toml");
                    fs::write(&train_path, cfg.to_toml()?).map_err(|e| NclError::io(&train_path, e))?;
                    let protocol = toml::to_string(&grid.protocol).map_err(|e| config_error(e.to_string()))?;
                    fs::write(&protocol_path, protocol).map_err(|e| NclError::io(&protocol_path, e))?;
                    let run_dir = cell.join("run");
                    let eval_dir = cell.join("eval");
                    run_child(&[
                        "pretrain".as_ref(),
                        "--config".as_ref(),
                        train_path.as_os_str(),
                        "--data".as_ref(),
                        data.as_os_str(),
                        "--out".as_ref(),
                        run_dir.as_os_str(),
                    ])?;
                    run_child(&[
                        "evaluate".as_ref(),
                        "--config".as_ref(),
                        protocol_path.as_os_str(),
                        "--run".as_ref(),
                        run_dir.as_os_str(),
                        "--data".as_ref(),
                        data.as_os_str(),
                        "--out".as_ref(),
                        eval_dir.as_os_str(),
                    ])?;
                    println!("{name}");
                    cells.push(name);
                }
            }
        }
    }
    let list = serde_json::to_string_pretty(&cells)?;
    write(&out, "cells.json", &list, &mut m)?;
    m.finish(&out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    method: String,
    w: String,
    task: String,
    head: String,
    fraction: String,
    metric: String,
}

fn head_name(h: HeadKind) -> &'static str {
    match h {
        HeadKind::Linear => "linear",
        HeadKind::Mlp => "mlp",
    }
}

fn cmd_report(global: &Global, dirs: &[PathBuf]) -> Result<()> {
    if dirs.is_empty() {
        return Err(config_error("report needs at least one evaluation directory"));
    }
    // (group, alpha as text) -> pooled values
    let mut pooled: BTreeMap<(GroupKey, String), Vec<f64>> = BTreeMap::new();
    let mut inputs = Vec::new();
    for d in dirs {
        let dir = if d.join("report.json").exists() { d.clone() } else { d.join("eval") };
        let path = dir.join("report.json");
        let text = fs::read_to_string(&path).map_err(|e| NclError::io(&path, e))?;
        let report: Report = serde_json::from_str(&text)?;
        inputs.push(ncl_core::run::sha256_hex(text.as_bytes()));
        let pretrain = RunManifest::load(&dir).ok().and_then(|m| m.config.get("pretrain").cloned());
        let field = |k: &str| {
            pretrain
                .as_ref()
                .and_then(|p| p.get(k))
                .map(|v| v.to_string().trim_matches('"').to_string())
                .unwrap_or_default()
        };
        let (alpha, w) = (field("alpha"), field("w"));
        for e in report.entries {
            let key = GroupKey {
                method: report.method.clone(),
                w: w.clone(),
                task: e.task.clone(),
                head: head_name(e.head).into(),
                fraction: e.label_fraction.to_string(),
                metric: e.metric.clone(),
            };
            pooled.entry((key, alpha.clone())).or_default().extend(e.values);
        }
    }
    let out = out_dir(global, None)?;
    let mut m = RunManifest::new(
        "report",
        0,
        &dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>(),
        Some(ncl_core::run::sha256_hex(inputs.join("").as_bytes())),
    )?;
    let mut csv = String::from("method,alpha,w,task,head,label_fraction,metric,n,mean,std,summary\n");
    let mut curves: BTreeMap<(String, String, String, String), Vec<Series>> = BTreeMap::new();
    for ((k, alpha), values) in &pooled {
        let (mean, std) = mean_std(values);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            k.method,
            alpha,
            k.w,
            k.task,
            k.head,
            k.fraction,
            k.metric,
            values.len(),
            mean,
            std,
            format_mean_std(mean, std)
        ));
        let Ok(a) = alpha.parse::<f64>() else { continue };
        let series = curves
            .entry((k.task.clone(), k.metric.clone(), k.head.clone(), k.fraction.clone()))
            .or_default();
        let label = format!("{} w={}", k.method, k.w);
        let point = Point { x: a, y: mean, err: std };
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push(point),
            None => series.push(Series {
                label,
                points: vec![point],
            }),
        }
    }
    write(&out, "summary.csv", &csv, &mut m)?;
    for ((task, metric, head, fraction), series) in &curves {
        let name = format!("alpha_{task}_{metric}_{head}_{fraction}.svg");
        let title = format!("{task} ({head} probe, {fraction} of labels)");
        let svg = line_chart_svg(&title, "alpha", &metric.to_uppercase(), series);
        write(&out, &name, &svg, &mut m)?;
    }
    m.finish(&out)?;
    print!("{csv}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Cmd::Synth { patients } => cmd_synth(g, patients),
        Cmd::Preprocess { input } => cmd_preprocess(g, &input),
        Cmd::Pretrain(a) => cmd_pretrain(g, &a),
        Cmd::Evaluate {
            run,
            data,
            tasks,
            label_fractions,
        } => cmd_evaluate(g, &run, &data, tasks, label_fractions),
        Cmd::Sweep { data } => cmd_sweep(g, &data),
        Cmd::Report { dirs } => cmd_report(g, &dirs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let line = serde_json::json!({ "error": e.kind(), "exit": code, "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(code as u8)
        }
    }
}
