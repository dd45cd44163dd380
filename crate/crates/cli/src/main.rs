use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};

use fidam_cli::{exit_code, Pipeline, PipelineConfig};

#[derive(Parser)]
#[command(name = "fidam", version, about = "Grey-box benchmark for feature interaction attribution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated method names.
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated baseline names.
    #[arg(long)]
    baselines: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the corpus and its corrupted counterpart.
    Generate(Common),
    /// Train the classifier to perfection.
    Train(Common),
    /// Write interaction matrices for evaluation items.
    Attribute {
        #[command(flatten)]
        common: Common,
        /// Comma-separated indices into the evaluation items (default: all).
        #[arg(long)]
        items: Option<String>,
    },
    /// Score every configured method × baseline cell.
    Evaluate(Common),
    /// generate, train and evaluate in one go.
    Grid(Common),
    /// Print the last report as a markdown table.
    Report(Common),
}

fn pipeline(c: &Common) -> anyhow::Result<Pipeline> {
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output.dir = o.clone();
    }
    if let Some(m) = &c.methods {
        cfg.set_methods(m)?;
    }
    if let Some(b) = &c.baselines {
        cfg.set_baselines(b)?;
    }
    if let Some(j) = c.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().context("configuring worker pool")?;
    }
    Pipeline::new(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let corpus = pipeline(&c)?.generate()?;
            println!("{} items", corpus.len());
        }
        Command::Train(c) => {
            let ck = pipeline(&c)?.train()?;
            println!(
                "converged after {} epoch(s): train {:.4}, test {:.4}",
                ck.training.epochs, ck.training.train_accuracy, ck.training.test_accuracy
            );
        }
        Command::Attribute { common, items } => {
            let selector = items
                .map(|s| {
                    s.split(',')
                        .map(|t| t.trim().parse::<usize>().map_err(|e| fidam_cli::ConfigError(format!("--items: {e}"))))
                        .collect::<Result<Vec<_>, _>>()
                })
                .transpose()?;
            let n = pipeline(&common)?.attribute(selector.as_deref())?;
            println!("{n} matrices written");
        }
        Command::Evaluate(c) => print!("{}", pipeline(&c)?.evaluate()?.to_markdown()),
        Command::Grid(c) => print!("{}", pipeline(&c)?.grid()?.to_markdown()),
        Command::Report(c) => {
            let p = pipeline(&c)?;
            let r = p.load_report()?;
            p.write_report(&r)?;
            print!("{}", r.to_markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
