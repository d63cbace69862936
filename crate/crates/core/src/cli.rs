//! The `gatenet` command line and run configuration.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{load_split, load_test, verify_data, DataSplit, NormStats, Taxonomy};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_gate_exports, GateSnapshot, MetricsReport};
use crate::nn::MlpConfig;
use crate::optim::{finite_diff_check, GradCheckSetup, RmspropConfig};
use crate::persist::{
    assemble_bank, load_base, load_gates, save_base, save_gates, BaseCheckpoint, GateCheckpoint,
};
use crate::train::{train_base, train_gates, LossCurve, TrainSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub hidden_sizes: Vec<usize>,
    pub dropout: f32,
    pub lr: f32,
    pub batch_size: usize,
    pub epochs_base: usize,
    pub epochs_gates: usize,
    pub val_fraction: f64,
    pub val_interval_updates: usize,
    pub rmsprop_rho: f32,
    pub rmsprop_eps: f32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data/cifar-10-batches-bin"),
            out_dir: PathBuf::from("runs"),
            seed: 0,
            hidden_sizes: vec![256, 128],
            dropout: 0.5,
            lr: 1e-2,
            batch_size: 32,
            epochs_base: 30,
            epochs_gates: 15,
            val_fraction: 0.1,
            val_interval_updates: 200,
            rmsprop_rho: 0.99,
            rmsprop_eps: 1e-8,
        }
    }
}

impl RunConfig {
    pub fn mlp(&self) -> MlpConfig {
        MlpConfig {
            hidden_sizes: self.hidden_sizes.clone(),
            dropout_rate: self.dropout,
            ..MlpConfig::default()
        }
    }

    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            epochs_base: self.epochs_base,
            epochs_gates: self.epochs_gates,
            batch_size: self.batch_size,
            val_interval_updates: self.val_interval_updates,
            rmsprop: RmspropConfig {
                lr: self.lr,
                rho: self.rmsprop_rho,
                eps: self.rmsprop_eps,
            },
            seed: self.seed,
        }
    }

    /// Train/val split and normalization statistics for this seed.
    pub fn load_split(&self) -> Result<(DataSplit, NormStats)> {
        let mut rng = self.schedule().root_rng().child("split");
        load_split(&self.data_dir, self.val_fraction, &mut rng)
    }
}

/// Parses a JSON config; absent keys take defaults and unknown keys are errors.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[derive(Debug, Parser)]
#[command(
    name = "gatenet",
    version,
    about = "Task-cued neuron gating on CIFAR-10"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check that every CIFAR-10 binary file is present with the right size.
    VerifyData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Train the ungated base network.
    TrainBase {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Train one category's gate biases with the base frozen.
    TrainGates {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        category: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Evaluate on the test set and write a report directory.
    Eval {
        #[arg(long)]
        base: PathBuf,
        #[arg(long, num_args = 1..)]
        gates: Vec<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on a toy network.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rewrite every CSV and JSON export of an existing report directory.
    ExportFigures {
        #[arg(long)]
        report: PathBuf,
    },
}

/// Checkpoints and data behind a report, so the report can be regenerated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSource {
    pub base: PathBuf,
    pub gates: Vec<PathBuf>,
    pub data_dir: PathBuf,
}

pub const REPORT_SOURCE: &str = "report_source.json";

fn config_with(config: Option<&Path>, data_dir: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = data_dir {
        cfg.data_dir = d;
    }
    Ok(cfg)
}

/// Sidecar loss curve path: `runs/base.gnc` → `runs/base.loss_curve.csv`.
pub fn curve_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("loss_curve.csv")
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
        }
        _ => Ok(()),
    }
}

fn print_progress(phase: &str) -> impl FnMut(usize, f64, f64) + '_ {
    move |step, train, val| eprintln!("{phase} step {step}: train {train:.4} val {val:.4}")
}

pub fn cmd_train_base(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<BaseCheckpoint> {
    let (split, stats) = cfg.load_split()?;
    let mut log = print_progress("base");
    let progress: Option<&mut dyn FnMut(usize, f64, f64)> =
        if quiet { None } else { Some(&mut log) };
    let trained = train_base(&split, &cfg.mlp(), &cfg.schedule(), progress)?;
    let ckpt = BaseCheckpoint {
        params: trained.params,
        taxonomy: Taxonomy::cifar10(),
        norm_stats: stats,
    };
    create_parent(out)?;
    save_base(out, &ckpt)?;
    trained.curve.save_csv(&curve_path(out))?;
    Ok(ckpt)
}

pub fn cmd_train_gates(
    cfg: &RunConfig,
    base_path: &Path,
    category: &str,
    out: &Path,
    quiet: bool,
) -> Result<GateCheckpoint> {
    let base = load_base(base_path)?;
    base.taxonomy.category_index(category)?;
    let (split, stats) = cfg.load_split()?;
    if stats != base.norm_stats {
        return Err(Error::Incompatible(format!(
            "normalization of {} differs from this config's training split",
            base_path.display()
        )));
    }
    let mut mlp = cfg.mlp();
    mlp.hidden_sizes = base.params.hidden_sizes();
    let mut log = print_progress(category);
    let progress: Option<&mut dyn FnMut(usize, f64, f64)> =
        if quiet { None } else { Some(&mut log) };
    let trained = train_gates(
        &base.params,
        &mlp,
        category,
        &split,
        &base.taxonomy,
        &cfg.schedule(),
        progress,
    )?;
    let ckpt = GateCheckpoint::new(&base, category, trained.biases)?;
    create_parent(out)?;
    save_gates(out, &ckpt)?;
    trained.curve.save_csv(&curve_path(out))?;
    Ok(ckpt)
}

/// Evaluates the base model and, when gate files are given, the gated model.
/// Writes `metrics.json` for the last model evaluated, per-model metrics and
/// confusion CSVs, the merged loss curve, and gate CSVs when gated.
pub fn write_report(source: &ReportSource, report: &Path) -> Result<Vec<MetricsReport>> {
    let base = load_base(&source.base)?;
    let gates = source
        .gates
        .iter()
        .map(|p| load_gates(p))
        .collect::<Result<Vec<_>>>()?;
    let bank = if gates.is_empty() {
        None
    } else {
        let bank = assemble_bank(&base, &gates)?;
        if let Some(missing) = base
            .taxonomy
            .categories()
            .iter()
            .find(|c| !bank.tasks().contains(c))
        {
            return Err(Error::MissingGates(missing.clone()));
        }
        Some(bank)
    };
    let test = load_test(&source.data_dir, &base.norm_stats)?;
    std::fs::create_dir_all(report).map_err(|e| Error::file(report, e))?;

    let mut reports = vec![evaluate(&base.params, None, &test, &base.taxonomy)?];
    if let Some(bank) = &bank {
        reports.push(evaluate(&base.params, Some(bank), &test, &base.taxonomy)?);
        write_gate_exports(&GateSnapshot::from_bank(bank), report)?;
    }
    for r in &reports {
        let tag = r.model.as_str();
        r.write_json(&report.join(format!("metrics_{tag}.json")))?;
        r.write_confusion(
            &report.join(format!("confusion_{tag}.csv")),
            base.taxonomy.class_names(),
        )?;
    }
    reports
        .last()
        .expect("base report")
        .write_json(&report.join("metrics.json"))?;

    let mut curve = LossCurve::default();
    for ckpt in std::iter::once(&source.base).chain(&source.gates) {
        let p = curve_path(ckpt);
        if p.exists() {
            curve.extend(LossCurve::load_csv(&p)?);
        }
    }
    if !curve.records.is_empty() {
        curve.save_csv(&report.join("loss_curve.csv"))?;
    }
    let path = report.join(REPORT_SOURCE);
    let json = serde_json::to_string_pretty(source)? + "\n";
    std::fs::write(&path, json).map_err(|e| Error::file(&path, e))?;
    Ok(reports)
}

/// Trains a base model and gates for every category, then writes a gated
/// report. Checkpoints go to `dir`, the report to `dir/report`.
pub fn run_pipeline(cfg: &RunConfig, dir: &Path, quiet: bool) -> Result<Vec<MetricsReport>> {
    let base_path = dir.join("base.gnc");
    cmd_train_base(cfg, &base_path, quiet)?;
    let mut gates = Vec::new();
    for cat in Taxonomy::cifar10().categories() {
        let p = dir.join(format!("gates_{cat}.gnc"));
        cmd_train_gates(cfg, &base_path, cat, &p, quiet)?;
        gates.push(p);
    }
    let source = ReportSource {
        base: base_path,
        gates,
        data_dir: cfg.data_dir.clone(),
    };
    write_report(&source, &dir.join("report"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::VerifyData { config, data_dir } => {
            let cfg = config_with(config.as_deref(), data_dir)?;
            verify_data(&cfg.data_dir)?;
            println!("{}: ok", cfg.data_dir.display());
        }
        Command::TrainBase {
            config,
            out,
            data_dir,
        } => {
            let cfg = config_with(config.as_deref(), data_dir)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.join("base.gnc"));
            cmd_train_base(&cfg, &out, false)?;
            println!("wrote {}", out.display());
        }
        Command::TrainGates {
            base,
            category,
            out,
            config,
            data_dir,
        } => {
            let cfg = config_with(config.as_deref(), data_dir)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.join(format!("gates_{category}.gnc")));
            cmd_train_gates(&cfg, &base, &category, &out, false)?;
            println!("wrote {}", out.display());
        }
        Command::Eval {
            base,
            gates,
            report,
            config,
            data_dir,
        } => {
            let cfg = config_with(config.as_deref(), data_dir)?;
            let source = ReportSource {
                base,
                gates,
                data_dir: cfg.data_dir,
            };
            for r in write_report(&source, &report)? {
                println!(
                    "{}: loss {:.4} accuracy {:.4} isolation {:.4} (n={})",
                    r.model.as_str(),
                    r.test_loss,
                    r.test_accuracy,
                    r.categorical_isolation,
                    r.n_test
                );
            }
        }
        Command::Gradcheck { seed } => {
            let report = finite_diff_check(&GradCheckSetup::toy(seed))?;
            println!("{report}");
            if !report.passed() {
                return Err(Error::Argument(format!(
                    "gradient check failed, max relative error {:.3e}",
                    report.max_rel_error()
                )));
            }
        }
        Command::ExportFigures { report } => {
            let path = report.join(REPORT_SOURCE);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
            let source: ReportSource = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            write_report(&source, &report)?;
            println!("rewrote {}", report.display());
        }
    }
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        assert_eq!(parse_config("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_match_stated_settings() {
        let c = RunConfig::default();
        assert_eq!(c.hidden_sizes, [256, 128]);
        assert_eq!((c.dropout, c.lr, c.batch_size), (0.5, 0.01, 32));
        assert_eq!(c.val_fraction, 0.1);
        assert_eq!(c.mlp().layer_sizes(), [1024, 256, 128, 10]);
    }

    #[test]
    fn partial_config_overrides_one_key() {
        let c = parse_config(r#"{"lr": 0.01, "seed": 7}"#).unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.seed, 7);
        assert_eq!(c.epochs_base, 30);
    }

    #[test]
    fn unknown_key_is_named() {
        match parse_config(r#"{"learning_rate": 0.01}"#) {
            Err(Error::Config(msg)) => assert!(msg.contains("learning_rate"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_config(r#"{"lr": "fast"}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn curve_sidecar_name() {
        assert_eq!(
            curve_path(Path::new("runs/base.gnc")),
            PathBuf::from("runs/base.loss_curve.csv")
        );
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(dispatch(["gatenet", "frobnicate"]), 2);
        assert_eq!(dispatch(["gatenet", "eval", "--bogus"]), 2);
    }
}
