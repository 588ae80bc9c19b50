use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use cake_forge::analytics::{DEFAULT_TOP_CAPTIONS, DEFAULT_TOP_GENERATED};
use cake_forge::pipeline::{self, PipelineError};
use cake_forge::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "cake-forge", version, about = "Forge causal why-QA datasets from captions")]
struct Cli {
    /// TOML (or .json) pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Abort on the first per-caption provider failure.
    #[arg(long, global = true)]
    strict: bool,
    /// Upper bound on concurrent provider requests.
    #[arg(long, global = true)]
    max_in_flight: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Query the completion provider for every caption.
    Generate {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a responses file into a multiple-choice CSV.
    Build {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the linear probe on a dataset CSV.
    Train {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the accuracy of a scorer (zero scorer when omitted).
    Eval {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        scorer: Option<PathBuf>,
    },
    /// Seeded split of a caption corpus.
    Split {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        first_size: Option<usize>,
        #[arg(long)]
        out_a: PathBuf,
        #[arg(long)]
        out_b: PathBuf,
    },
    /// Export caption/response pairs for student fine-tuning.
    DistillExport {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Length distribution and frequent-word reports.
    Analyze {
        /// Responses JSONL or dataset CSV.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP_GENERATED)]
        k_gen: usize,
        #[arg(long, default_value_t = DEFAULT_TOP_CAPTIONS)]
        k_cap: usize,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.max_in_flight {
        cfg.max_in_flight = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

async fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Generate { captions, out } => {
            let o = pipeline::cmd_generate(&cfg, captions, out, cli.strict).await?;
            println!(
                "captions={} responses={} filtered={} failed={} out={}",
                o.responses.len() + o.failures.len(),
                o.candidates(),
                o.filtered(),
                o.failures.len(),
                show(out)
            );
        }
        Command::Build { responses, out } => {
            let a = pipeline::cmd_build(&cfg, responses, out).await?;
            println!(
                "records={} pools={} out={}",
                a.records.len(),
                a.pools.num_pools(),
                show(out)
            );
        }
        Command::Train { csv, out } => {
            let (_, log) = pipeline::cmd_train(&cfg, csv, out).await?;
            if let Some(last) = log.last() {
                println!(
                    "epochs={} loss={:.4} train_accuracy={:.4} out={}",
                    last.epoch,
                    last.mean_loss,
                    last.accuracy,
                    show(out)
                );
            }
        }
        Command::Eval { csv, scorer } => {
            let acc = pipeline::cmd_eval(&cfg, csv, scorer.as_deref()).await?;
            println!("{}", pipeline::format_accuracy(acc));
        }
        Command::Split {
            captions,
            first_size,
            out_a,
            out_b,
        } => {
            let n = first_size.unwrap_or(cfg.split_first_size);
            let (a, b) = pipeline::cmd_split(&cfg, captions, n, out_a, out_b)?;
            println!("first={a} second={b}");
        }
        Command::DistillExport { responses, out } => {
            let n = pipeline::cmd_distill_export(&cfg, responses, out)?;
            println!("pairs={n} out={}", show(out));
        }
        Command::Analyze {
            input,
            captions,
            out_dir,
            k_gen,
            k_cap,
        } => {
            let r = pipeline::cmd_analyze(input, captions.as_deref(), out_dir, *k_gen, *k_cap)?;
            print!("cdf_final={:.4}", r.cdf.final_fraction());
            if let Some(o) = &r.overlap {
                let words: Vec<&str> = o.overlap.iter().map(String::as_str).collect();
                print!(" overlap={:.4} words={}", o.overlap_fraction, words.join(","));
            }
            println!();
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
