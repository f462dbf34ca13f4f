use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use kaf_core::pipeline::{self, RunConfig, CONFIG_ENV};
use kaf_core::sequencer::TaskKind;
use kaf_core::{Error, Result};

#[derive(Parser)]
#[command(name = "kaf", version, about = "Audio-language data pipeline and streaming simulators")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    merge_threshold: Option<f64>,
    #[arg(long, global = true)]
    split_threshold: Option<f64>,
    #[arg(long, global = true)]
    chunk_len_s: Option<f64>,
    #[arg(long, global = true)]
    max_gap_s: Option<f64>,
    #[arg(long, global = true)]
    max_accum_s: Option<f64>,
    #[arg(long, global = true)]
    comma_min_s: Option<f64>,
    #[arg(long, global = true)]
    period_min_s: Option<f64>,
    #[arg(long, global = true)]
    chunk_tokens: Option<usize>,
    #[arg(long, global = true)]
    lookahead: Option<usize>,
    /// Draw chunk sizes at random.
    #[arg(long, global = true)]
    dynamic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Merge speaker clusters, split impure segments and merge segments.
    Refine {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Embedding fixture table.
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Language ID, punctuated transcripts and enhancement choice.
    Annotate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Language fixture table.
        #[arg(long)]
        languages: PathBuf,
    },
    /// Write pre-training sequences to a KAFSEQ1 container and JSON side file.
    BuildPretrain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Only emit this task kind (e.g. asr, text_only).
        #[arg(long)]
        task: Option<String>,
        /// Include per-kind counts and loss-position histograms.
        #[arg(long)]
        stats: bool,
    },
    /// Stream a token file through the mock detokenizer.
    SimulateStream {
        #[arg(long)]
        tokens: PathBuf,
    },
    /// Run a scripted conversation against mock services.
    ServeSim {
        #[arg(long)]
        script: PathBuf,
        /// Write the round ledger here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Persist session histories into this directory.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Summarize a manifest, sequence container or stored session.
    Stats { path: PathBuf },
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref())?;
    let o = &cli.overrides;
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.workers {
        cfg.workers = v;
    }
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut cfg.refine.merge_threshold, o.merge_threshold);
    set(&mut cfg.refine.split_threshold, o.split_threshold);
    set(&mut cfg.refine.chunk_len_s, o.chunk_len_s);
    set(&mut cfg.refine.max_gap_s, o.max_gap_s);
    set(&mut cfg.refine.max_accum_s, o.max_accum_s);
    set(&mut cfg.annotate.comma_min_s, o.comma_min_s);
    set(&mut cfg.annotate.period_min_s, o.period_min_s);
    if let Some(v) = o.chunk_tokens {
        cfg.stream.chunk_tokens = v;
    }
    if let Some(v) = o.lookahead {
        cfg.stream.lookahead = v;
    }
    cfg.stream.dynamic |= o.dynamic;
    cfg.validate()?;
    Ok(cfg)
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    let written = serde_json::to_writer_pretty(&mut out, value)
        .map_err(std::io::Error::from)
        .and_then(|_| out.write_all(b"\n"));
    match written {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli)?;
    match &cli.command {
        Command::Refine { input, output, embeddings } => print(&pipeline::cmd_refine(input, output, embeddings, &cfg)?),
        Command::Annotate { input, output, languages } => print(&pipeline::cmd_annotate(input, output, languages, &cfg)?),
        Command::BuildPretrain { input, output, task, stats } => {
            let task = task
                .as_deref()
                .map(|t| TaskKind::from_name(t).ok_or_else(|| Error::config(format!("unknown task kind {t:?}"))))
                .transpose()?;
            print(&pipeline::cmd_build_pretrain(input, output, task, *stats, &cfg)?)
        }
        Command::SimulateStream { tokens } => print(&pipeline::cmd_simulate_stream(tokens, &cfg)?),
        Command::ServeSim { script, out, store } => {
            let ledger = pipeline::cmd_serve_sim(script, store.as_deref(), &cfg)?;
            match out {
                Some(path) => Ok(std::fs::write(path, serde_json::to_vec_pretty(&ledger)?)?),
                None => print(&ledger),
            }
        }
        Command::Stats { path } => print(&pipeline::cmd_stats(path)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kaf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
