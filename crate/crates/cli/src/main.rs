mod config;
mod report;
mod scenarios;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use config::{parse_seed, ConfigError, ExperimentConfig, Overrides};
use report::{write_all, Outcome, ReportRecord};
use scenarios::run_scenario;

const WORKERS_ENV: &str = "CALDERON_LAB_WORKERS";

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "calderon-lab", version, about = "Config-driven experiments on optimal Calderon-space norms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override grid.points
    #[arg(long, global = true)]
    grid_points: Option<usize>,
    /// Override grid.tmin
    #[arg(long, global = true)]
    tmin: Option<f64>,
    /// Override the seed (decimal or 0x-hex)
    #[arg(long, global = true, value_parser = seed_arg)]
    seed: Option<u64>,
    /// Output directory (overrides output.dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; CALDERON_LAB_WORKERS takes precedence
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one config file
    Run { config: PathBuf },
    /// Run every *.cfg file in a directory and write summary.csv
    Sweep { dir: PathBuf },
    /// Run the built-in smoke checks
    Selftest,
}

fn seed_arg(s: &str) -> Result<u64, String> {
    parse_seed(s).ok_or_else(|| format!("not an unsigned integer: {s}"))
}

fn workers(flag: Option<usize>) -> Result<Option<usize>, ConfigError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(Some(w)),
            _ => Err(ConfigError::Invalid {
                field: WORKERS_ENV.into(),
                reason: format!("expected a positive integer, got {v}"),
            }),
        },
        Err(_) => match flag {
            Some(0) => Err(ConfigError::Invalid {
                field: "--workers".into(),
                reason: "must be positive".into(),
            }),
            other => Ok(other),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match workers(cli.workers) {
        Ok(Some(w)) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build_global()
                .expect("global pool is configured once");
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let ov = Overrides {
        grid_points: cli.grid_points,
        t_min: cli.tmin,
        seed: cli.seed,
        out_dir: cli.out.clone(),
    };
    match cli.command {
        Command::Run { config } => cmd_run(&config, &ov),
        Command::Sweep { dir } => cmd_sweep(&dir, &ov),
        Command::Selftest => cmd_selftest(),
    }
}

/// Run one config and write its artifacts; the record plus whether all
/// assertions passed.
fn execute(cfg: &ExperimentConfig, dir: &Path) -> (ReportRecord, bool) {
    let start = Instant::now();
    let result = run_scenario(cfg);
    let wall = start.elapsed().as_secs_f64();
    let (record, outcome) = match result {
        Ok(outcome) => (ReportRecord::new(cfg.scenario.name(), cfg.echo(), &outcome, wall), outcome),
        Err(e) => (
            ReportRecord::failed(cfg.scenario.name(), cfg.echo(), e.to_string(), wall),
            Outcome::default(),
        ),
    };
    if let Err(e) = write_all(dir, &record, &outcome) {
        let mut r = record;
        r.status = "error";
        r.error = Some(format!("writing artifacts: {e}"));
        return (r, false);
    }
    let ok = record.status == "pass";
    (record, ok)
}

fn cmd_run(path: &Path, ov: &Overrides) -> ExitCode {
    let cfg = match ExperimentConfig::load(path, ov) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let (record, ok) = execute(&cfg, &cfg.out_dir);
    println!("{}: {}", record.scenario, record.status);
    for a in record.assertions.iter().filter(|a| !a.pass) {
        println!("  failed {}: {}", a.name, a.detail);
    }
    if let Some(e) = &record.error {
        eprintln!("{e}");
    }
    println!("report: {}", cfg.out_dir.join("report.json").display());
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}

const SUMMARY_COLUMNS: &[&str] = &[
    "embeds",
    "psi_q_at_T",
    "t1",
    "condition",
    "d1",
    "d2",
    "hardy_b0",
    "ratio_min",
    "ratio_max",
    "c1",
    "factor",
];

struct Row {
    name: String,
    scenario: String,
    status: String,
    values: Vec<String>,
    message: String,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn summary_csv(rows: &[Row]) -> String {
    let mut out = String::from("config,scenario,status");
    for c in SUMMARY_COLUMNS {
        out.push(',');
        out.push_str(c);
    }
    out.push_str(",message\n");
    for r in rows {
        let mut fields = vec![r.name.clone(), r.scenario.clone(), r.status.clone()];
        fields.extend(r.values.iter().cloned());
        fields.push(r.message.clone());
        let line: Vec<String> = fields.iter().map(|f| csv_field(f)).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    out
}

/// The *.cfg files of `dir`, sorted by name.
fn sweep_inputs(dir: &Path) -> Result<Vec<PathBuf>, ConfigError> {
    let entries = std::fs::read_dir(dir).map_err(|e| ConfigError::Io {
        path: dir.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(ConfigError::Invalid {
            field: "sweep".into(),
            reason: format!("no *.cfg files in {}", dir.display()),
        });
    }
    Ok(paths)
}

fn cmd_sweep(dir: &Path, ov: &Overrides) -> ExitCode {
    let paths = match sweep_inputs(dir) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let base = ov.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let item_ov = Overrides {
        out_dir: None,
        ..ov.clone()
    };
    let rows: Vec<Row> = paths
        .par_iter()
        .map(|path| {
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            match ExperimentConfig::load(path, &item_ov) {
                Err(e) => Row {
                    name,
                    scenario: String::new(),
                    status: "config_error".into(),
                    values: vec![String::new(); SUMMARY_COLUMNS.len()],
                    message: e.to_string(),
                },
                Ok(mut cfg) => {
                    cfg.out_dir = base.join(&name);
                    let (record, _) = execute(&cfg, &cfg.out_dir);
                    Row {
                        name,
                        scenario: record.scenario.clone(),
                        status: record.status.to_string(),
                        values: SUMMARY_COLUMNS.iter().map(|c| record.scalar_text(c)).collect(),
                        message: record.error.clone().unwrap_or_default(),
                    }
                }
            }
        })
        .collect();
    if let Err(e) = std::fs::create_dir_all(&base).and_then(|_| std::fs::write(base.join("summary.csv"), summary_csv(&rows))) {
        eprintln!("writing summary: {e}");
        return ExitCode::from(EXIT_FAIL);
    }
    for r in &rows {
        println!("{}: {}", r.name, r.status);
    }
    println!("summary: {}", base.join("summary.csv").display());
    if rows.iter().all(|r| r.status == "pass") {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}

const SELFTEST: &[(&str, &str)] = &[
    (
        "embedding q=2 alpha=0.75",
        "scenario = embedding_check\nkernel.alpha = 0.75\nexpect.embeds = true\n",
    ),
    (
        "embedding q=1 alpha=0.75",
        "scenario = embedding_check\nspace.q = 1\nkernel.alpha = 0.75\nexpect.embeds = false\n",
    ),
    (
        "condition A at alpha=0.6",
        "scenario = optimal_norm\nkernel.alpha = 0.6\ngrid.points = 256\nexpect.condition = A\n",
    ),
    (
        "condition B at alpha=1.2",
        "scenario = optimal_norm\nkernel.alpha = 1.2\ngrid.points = 256\nexpect.condition = B\n",
    ),
    (
        "envelope alpha=0.75",
        "scenario = envelope\nkernel.alpha = 0.75\ngrid.points = 256\ntgrid.points = 16\n",
    ),
];

fn cmd_selftest() -> ExitCode {
    let mut all = true;
    for (name, text) in SELFTEST {
        let verdict = ExperimentConfig::from_text(text, &Overrides::default())
            .map_err(|e| e.to_string())
            .and_then(|cfg| run_scenario(&cfg).map_err(|e| e.to_string()));
        match verdict {
            Ok(o) if o.passed() => println!("{name}: pass"),
            Ok(o) => {
                all = false;
                let failed: Vec<&str> = o.assertions.iter().filter(|a| !a.pass).map(|a| a.name.as_str()).collect();
                println!("{name}: FAIL ({})", failed.join(", "));
            }
            Err(e) => {
                all = false;
                println!("{name}: ERROR {e}");
            }
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}
