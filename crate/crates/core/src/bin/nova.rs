use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nova_rec::embed::FusionKind;
use nova_rec::model::AttentionKind;
use nova_rec::tools::commands::{self, DataPaths, Precision};
use nova_rec::tools::{DumpOptions, EmbeddingCost, RunConfig};

#[derive(Parser)]
#[command(name = "nova", version, about = "Side-information-aware sequential recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Data {
    /// Interactions TSV
    #[arg(long)]
    data: PathBuf,
    /// Items TSV
    #[arg(long)]
    items: Option<PathBuf>,
    /// Side-information schema
    #[arg(long)]
    schema: Option<PathBuf>,
}

impl Data {
    fn paths(&self) -> DataPaths {
        DataPaths {
            data: self.data.clone(),
            items: self.items.clone(),
            schema: self.schema.clone(),
        }
    }
}

#[derive(Args)]
struct Run {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    data: Data,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fusion: Option<FusionKind>,
    #[arg(long)]
    attention: Option<AttentionKind>,
    #[arg(long, default_value = "f64")]
    precision: Precision,
}

impl Run {
    fn config(&self) -> nova_rec::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(f) = self.fusion {
            cfg.model.fusion = f;
        }
        if let Some(a) = self.attention {
            cfg.model.attention = a;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convert MovieLens-1M ratings.dat / movies.dat into TSV + schema
    PrepareData {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        movies: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and keep the best validation checkpoint
    Train(Run),
    /// Test-split metrics of a checkpoint
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "f64")]
        precision: Precision,
    },
    /// Side-information ablation (None / Item / Behavior / All)
    Ablate(Run),
    /// Export attention matrices as CSV and PGM
    DumpAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 6)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Analytic FLOPs and parameter counts
    Profile {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        fusion: Option<FusionKind>,
        #[arg(long)]
        attention: Option<AttentionKind>,
        /// Charge embedding lookups as one-hot products
        #[arg(long)]
        one_hot: bool,
    },
    /// Train invasive and NOVA from the same seed and diff them
    Compare(Run),
}

fn run(cli: Cli) -> nova_rec::Result<()> {
    match cli.command {
        Command::PrepareData { ratings, movies, out } => commands::prepare_data(&ratings, &movies, &out),
        Command::Train(r) => {
            let s = commands::train_run(&r.config()?, &r.data.paths(), &r.out, r.precision)?;
            println!("{}", s.test.to_json_line());
            println!("best epoch {}\n{}", s.best_epoch, s.test);
            Ok(())
        }
        Command::Evaluate { checkpoint, data, out, precision } => {
            let m = commands::evaluate_checkpoint(&checkpoint, &data.paths(), out.as_deref(), precision)?;
            println!("{}", m.to_json_line());
            println!("{m}");
            Ok(())
        }
        Command::Ablate(r) => {
            print!("{}", commands::ablate_run(&r.config()?, &r.data.paths(), &r.out)?);
            Ok(())
        }
        Command::DumpAttention { checkpoint, data, out, layer, samples, seed } => {
            let opts = DumpOptions { samples, layer, seed };
            let n = commands::dump_attention_run(&checkpoint, &data.paths(), &opts, &out)?;
            println!("wrote {n} matrices to {}", out.join("attention").display());
            Ok(())
        }
        Command::Profile { config, data, out, fusion, attention, one_hot } => {
            let mut cfg = RunConfig::load(&config)?.model;
            if let Some(f) = fusion {
                cfg.fusion = f;
            }
            if let Some(a) = attention {
                cfg.attention = a;
            }
            let cost = if one_hot { EmbeddingCost::OneHot } else { EmbeddingCost::Lookup };
            let p = commands::profile_run(&cfg, &data.paths(), &out, cost)?;
            println!("{}", serde_json::to_string_pretty(&p)?);
            Ok(())
        }
        Command::Compare(r) => {
            let rows = commands::compare_run(&r.config()?, &r.data.paths(), &r.out, r.precision)?;
            print!("{}", commands::compare_table(&rows));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
