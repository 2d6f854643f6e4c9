use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use amortize::baselines::baseline_names;
use amortize::harness::{
    cmd_baseline, cmd_eval, cmd_misspec, cmd_plotdata, cmd_tabular, cmd_train, parse_source, preset, preset_names,
    ExperimentConfig, ResultLine,
};
use amortize::{Error, Result};

#[derive(Parser)]
#[command(name = "amortize", version, about = "Train and evaluate amortized posterior estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment preset.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Divide every iteration budget by N.
    #[arg(long, default_value_t = 1)]
    scale_divisor: usize,
    /// Output directory (defaults to the config's output_dir).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an estimator and write checkpoint and loss trace.
    Train(Common),
    /// Evaluate a checkpoint on the fixed test datasets.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate a per-dataset baseline on the same test datasets.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// One of: prior, analytic, map, langevin.
        #[arg(long)]
        kind: String,
    },
    /// Train on one data source and evaluate on several.
    Misspec {
        #[command(flatten)]
        common: Common,
        /// model, lr, nlr_tanh, nlr_relu, gp_rbf or csv:PATH.
        #[arg(long)]
        train_source: Option<String>,
        #[arg(long, value_delimiter = ',')]
        eval_sources: Vec<String>,
    },
    /// Zero-shot and finetuned evaluation on CSV tables.
    Tabular {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "csv", required = true)]
        csv_paths: Vec<PathBuf>,
    },
    /// Collect results.jsonl files into a tidy CSV.
    Plotdata {
        /// results.jsonl files or run directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// List presets and registered baselines.
    List,
}

fn resolve(c: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(Error::config("--config", "pass --config PATH or --preset NAME")),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let cfg = cfg.scaled(c.scale_divisor)?;
    let out = c.output.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn print_lines(lines: &[ResultLine]) {
    for l in lines {
        let fold = l.fold.map(|f| format!(" fold {f}")).unwrap_or_default();
        println!(
            "{:<12} {:<18} {:<16}{} {:<14} {:>12.6} ± {:.6}",
            l.command, l.method, l.dataset, fold, l.report.metric, l.report.mean, l.report.se
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let (cfg, out) = resolve(&common)?;
            let o = cmd_train(&cfg, &out)?;
            if let Some(last) = o.trace.last() {
                println!("iter {} loss {:.6}", last.iter, last.loss);
            }
            println!("checkpoint {} ({})", o.checkpoint.display(), o.checkpoint_hash);
        }
        Command::Eval { common, checkpoint } => {
            let (cfg, out) = resolve(&common)?;
            print_lines(&cmd_eval(&cfg, &checkpoint, &out)?.lines);
        }
        Command::Baseline { common, kind } => {
            let (cfg, out) = resolve(&common)?;
            let o = cmd_baseline(&kind, &cfg, &out)?;
            print_lines(&o.lines);
            for s in o.skipped {
                println!("skipped {s}: not available for `{kind}`");
            }
        }
        Command::Misspec { common, train_source, eval_sources } => {
            let (mut cfg, out) = resolve(&common)?;
            if let Some(s) = train_source {
                cfg.misspec.train_source = parse_source(&s, &cfg.model)?;
            }
            if !eval_sources.is_empty() {
                cfg.misspec.eval_sources =
                    eval_sources.iter().map(|s| parse_source(s, &cfg.model)).collect::<Result<_>>()?;
            }
            cfg.validate()?;
            let o = cmd_misspec(&cfg, &out)?;
            for (r, row) in o.rows.iter().enumerate() {
                for (c, col) in o.cols.iter().enumerate() {
                    for rep in &o.cells[r][c] {
                        println!("{row:<24} {col:<16} {:<14} {:>12.6} ± {:.6}", rep.metric, rep.mean, rep.se);
                    }
                }
            }
        }
        Command::Tabular { common, checkpoint, csv_paths } => {
            let (cfg, out) = resolve(&common)?;
            let o = cmd_tabular(&cfg, &checkpoint, &csv_paths, &out)?;
            for (path, reason) in &o.rejected {
                eprintln!("rejected {path}: {reason}");
            }
            print_lines(&o.lines);
        }
        Command::Plotdata { inputs, output } => {
            let n = cmd_plotdata(&inputs, &output)?;
            println!("{n} rows written to {}", output.display());
        }
        Command::List => {
            println!("presets: {}", preset_names().join(", "));
            println!("baselines: {}", baseline_names().join(", "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                e if e.is_divergence() => ExitCode::from(3),
                Error::Io(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
