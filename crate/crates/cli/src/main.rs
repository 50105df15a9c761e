use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cre_cli::commands::{self, merge_groups, parse_group, OptimizeInputs};
use cre_cli::{CliError, CliResult, Config};

#[derive(Parser)]
#[command(name = "cre", version, about = "Motif-aware regulatory sequence design")]
struct Cli {
    /// TOML config file (default: $CRE_CONFIG, else built-in defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set optimize.rounds=10`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    OracleGuided,
    OfflineMbo,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-motif landscape, dataset and partition.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the policy on the configured partition.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the boosted-tree surrogate on motif counts.
    FitSurrogate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train on the offline subset (random half, below P95).
        #[arg(long)]
        offline: bool,
    },
    /// Infer motif roles from Shapley values of the surrogate.
    InferRoles {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        offline: bool,
    },
    /// Fine-tune the policy, or run the greedy baseline.
    Optimize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        roles: Option<PathBuf>,
        /// Surrogate model, required in offline-mbo mode.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        greedy: bool,
    },
    /// Metrics of a scored proposal set.
    Evaluate {
        #[arg(long)]
        fasta: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value = "fitness")]
        column: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate run logs into a CSV summary and SVG charts.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Role tables to compare, as LABEL=PATH.
        #[arg(long = "roles", value_name = "LABEL=PATH")]
        roles: Vec<String>,
        /// Run logs as [LABEL=]PATH[,PATH...]; repeated labels are pooled.
        logs: Vec<String>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut overrides = cli.overrides;
    match &cli.command {
        Command::InferRoles { alpha: Some(a), .. } => overrides.push(format!("roles.alpha={a}")),
        Command::Optimize { mode: Some(m), .. } => overrides.push(format!(
            "optimize.mode={}",
            match m {
                ModeArg::OracleGuided => "\"oracle_guided\"",
                ModeArg::OfflineMbo => "\"offline_mbo\"",
            }
        )),
        _ => {}
    }
    let config = Config::load(cli.config.as_deref(), &overrides)?;
    let manifest = match cli.command {
        Command::GenData { out } => commands::gen_data(&config, &out)?,
        Command::Pretrain { data, out } => commands::cmd_pretrain(&config, &data, &out)?,
        Command::FitSurrogate { data, out, offline } => commands::cmd_fit_surrogate(&config, &data, &out, offline)?,
        Command::InferRoles {
            model, data, out, offline, ..
        } => commands::cmd_infer_roles(&config, &model, &data, &out, offline)?,
        Command::Optimize {
            data,
            out,
            checkpoint,
            roles,
            model,
            greedy,
            ..
        } => commands::cmd_optimize(
            &config,
            &OptimizeInputs {
                checkpoint: checkpoint.as_deref(),
                roles: roles.as_deref(),
                data: &data,
                model: model.as_deref(),
                greedy,
            },
            &out,
        )?,
        Command::Evaluate {
            fasta,
            scores,
            column,
            out,
        } => commands::cmd_evaluate(&config, &fasta, &scores, &column, &out)?,
        Command::Report { out, roles, logs } => {
            let groups = merge_groups(logs.iter().map(|l| parse_group(l)).collect());
            let roles = roles
                .iter()
                .map(|r| {
                    r.split_once('=')
                        .map(|(l, p)| (l.to_string(), PathBuf::from(p)))
                        .ok_or_else(|| CliError::Usage(format!("--roles {r:?} is not LABEL=PATH")))
                })
                .collect::<CliResult<Vec<_>>>()?;
            commands::cmd_report(&config, &groups, &roles, &out)?
        }
    };
    for (name, file) in &manifest.outputs {
        println!("{name}: {}", file.path);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
