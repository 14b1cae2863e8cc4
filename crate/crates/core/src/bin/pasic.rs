use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pasic::harness::{
    emit_outputs, emit_plots, generate_corpus, load_corpus, load_for_sweep, parse_list, read_csv, run_sweep, train_pipeline, CsvAppender, ExperimentConfig, SchemeName, RESULTS_FILE,
};
use pasic::trainer::{save_checkpoint, write_training_log};
use pasic::Result;

#[derive(Parser)]
#[command(name = "pasic", version, about = "Semantic interference cancellation testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the three training phases and write the checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate every configured cell and write results.csv plus plots.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Comma-separated schemes, e.g. `deeppasic,tin`.
        #[arg(long)]
        scheme: Option<String>,
        /// Comma-separated interference gains.
        #[arg(long)]
        h: Option<String>,
    },
    /// Redraw plots from an existing results.csv.
    Plot {
        /// Directory holding results.csv; plots are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic image corpus.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2200)]
        count: usize,
        #[arg(long, default_value_t = 80)]
        width: u32,
        #[arg(long, default_value_t = 72)]
        height: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let corpus = load_corpus(&cfg)?;
    eprintln!("training on {} images, validating on {}", corpus.train.batch(), corpus.val.batch());
    let state = train_pipeline(&cfg, &corpus)?;
    save_checkpoint(&state, &cfg.checkpoint)?;
    write_training_log(&state, &cfg.checkpoint.with_extension("log"))?;
    eprintln!("checkpoint written to {}", cfg.checkpoint.display());
    Ok(())
}

fn eval(common: &Common, scheme: Option<&str>, h: Option<&str>) -> Result<()> {
    let mut cfg = load(common)?;
    if let Some(list) = scheme {
        cfg.schemes = parse_list::<SchemeName>(list)?;
    }
    if let Some(list) = h {
        cfg.h_values = parse_list::<f64>(list)?;
    }
    cfg.validate()?;
    let state = load_for_sweep(&cfg)?;
    let corpus = load_corpus(&cfg)?;
    let csv = cfg.output_dir.join(RESULTS_FILE);
    let mut appender = CsvAppender::create(&csv)?;
    let records = run_sweep(&cfg, state.as_ref(), &corpus.val, &mut |r| {
        eprintln!("{} h={} seed={} psnr={:.3} dB", r.scheme, r.h, r.seed, r.psnr_db);
        appender.append(r)
    })?;
    drop(appender);
    let out = emit_outputs(&records, &cfg.output_dir)?;
    eprintln!("{} records written to {}", records.len(), out.csv.display());
    Ok(())
}

fn plot(dir: &Path) -> Result<()> {
    let records = read_csv(&dir.join(RESULTS_FILE))?;
    for p in emit_plots(&records, dir)? {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { common } => train(common),
        Command::Eval { common, scheme, h } => eval(common, scheme.as_deref(), h.as_deref()),
        Command::Plot { out } => plot(out),
        Command::GenCorpus { out, count, width, height, seed } => generate_corpus(out, *count, *width, *height, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:?}\n{e}");
            ExitCode::FAILURE
        }
    }
}
