//! Command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::accounting::{comm_accounting, render, AccountingConfig};
use crate::checkpoint::load_checkpoint;
use crate::config::{ExperimentConfig, Mode};
use crate::federation::{
    build_experiment, evaluate_client, load_raw, run_training_in, task_partitions,
};

#[derive(Debug, Parser)]
#[command(
    name = "fedgpl",
    version,
    about = "Federated graph prompt learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train and write rounds.csv, tau.csv, report.json and checkpoint.bin.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "fedgpl-out")]
        out: PathBuf,
    },
    /// Write the per-task client partition manifests.
    Partition {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "fedgpl-partition")]
        out: PathBuf,
    },
    /// Print parameter and communication accounting.
    Account {
        #[arg(long, default_value = "table7")]
        preset: String,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Recompute test metrics from a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run once per value of one config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `key=v1,v2,...`
        #[arg(long)]
        sweep: String,
        #[arg(long, default_value = "fedgpl-sweep")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Sets a key; a learning-rate override also moves a tied encoder rate.
fn apply(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    let tied = cfg.encoder_lr == cfg.lr;
    cfg.set(key, value)?;
    if key == "lr" && tied {
        cfg.encoder_lr = cfg.lr;
    }
    Ok(())
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            apply(&mut cfg, k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(r) = self.rounds {
            cfg.rounds = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let report = run_training_in(cfg, out)?;
    Ok(format!(
        "mode={} seed={} rounds={} acc={:.4} f1={:.4} out={}\n",
        report.mode,
        report.seed,
        report.rounds_run,
        report.final_acc,
        report.final_f1,
        out.display()
    ))
}

fn partition(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let raw = load_raw(cfg)?;
    fs::create_dir_all(out)?;
    let mut summary = String::new();
    for (level, samples, part) in task_partitions(cfg, &raw)? {
        let path = out.join(format!("partition_{level}.tsv"));
        let mut buf = Vec::new();
        part.write_manifest(&mut buf)?;
        fs::write(&path, buf)?;
        let sizes: Vec<String> = part
            .assignments
            .iter()
            .map(|a| a.len().to_string())
            .collect();
        writeln!(
            summary,
            "{level}: {} samples -> [{}] {}",
            samples.len(),
            sizes.join(", "),
            path.display()
        )?;
    }
    Ok(summary)
}

fn eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<String> {
    let ck = load_checkpoint(checkpoint)?;
    let mut exp = build_experiment(cfg)?;
    if ck.clients.len() != exp.clients.len() {
        bail!(
            "checkpoint has {} clients, config describes {}",
            ck.clients.len(),
            exp.clients.len()
        );
    }
    exp.server.encoder = ck.encoder;
    let privacy = cfg.privacy();
    let mut out = String::from("client,task,acc,f1\n");
    let (mut acc_sum, mut f1_sum, mut n) = (0.0, 0.0, 0);
    for (c, p) in exp.clients.iter_mut().zip(&ck.clients) {
        c.load_params(p)?;
        let (_, acc, f1) = evaluate_client(
            c,
            &exp.server.encoder,
            &c.test,
            exp.n_classes,
            &privacy,
            ck.round,
        )?;
        writeln!(out, "{},{},{acc:.6},{f1:.6}", c.id, c.level)?;
        if acc.is_finite() {
            acc_sum += acc;
            f1_sum += f1;
            n += 1;
        }
    }
    writeln!(
        out,
        "mean,,{:.6},{:.6}",
        acc_sum / n as f64,
        f1_sum / n as f64
    )?;
    Ok(out)
}

fn sweep(base: &ExperimentConfig, spec: &str, out: &Path) -> Result<String> {
    let (key, values) = spec
        .split_once('=')
        .with_context(|| format!("--sweep expects key=v1,v2,..., got {spec:?}"))?;
    let mut table = String::from("key,value,acc,f1\n");
    for v in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
        let mut cfg = base.clone();
        apply(&mut cfg, key, v)?;
        cfg.validate()?;
        let report = run_training_in(&cfg, &out.join(format!("{key}={v}")))?;
        writeln!(
            table,
            "{key},{v},{:.6},{:.6}",
            report.final_acc, report.final_f1
        )?;
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("sweep.csv"), &table)?;
    Ok(table)
}

fn dispatch(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Run { common, out } => run(&common.load()?, &out),
        Command::Partition { common, out } => partition(&common.load()?, &out),
        Command::Account { preset, json } => {
            if preset != "table7" {
                bail!("unknown preset {preset:?} (available: table7)");
            }
            let report = comm_accounting(&AccountingConfig::table7());
            Ok(if json {
                serde_json::to_string_pretty(&report)? + "\n"
            } else {
                render(&report)
            })
        }
        Command::Eval { common, checkpoint } => eval(&common.load()?, &checkpoint),
        Command::Sweep {
            common,
            sweep: s,
            out,
        } => sweep(&common.load()?, &s, &out),
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
