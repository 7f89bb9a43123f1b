use std::path::PathBuf;

use clap::{Parser, Subcommand};
use paramspec::finetune::VariantKind;
use paramspec::harness::{
    cmd_finetune, cmd_gen_data, cmd_train, cmd_hallucination, cmd_pss, cmd_report, finetune_csv, ExperimentConfig, RunRecord,
};

/// Measure how specialized the MLP value vectors of a toy transformer are.
///
/// Defaults: 10 questions per concept, 5 irrelevant concepts (50 questions),
/// mask ratios 10%..50%, and the first round(5L/32) layers (at least one,
/// five from 32 layers up) never masked.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenData,
    /// Pretrain the model, saving the configured checkpoints.
    Train {
        /// Continue from this checkpoint and its .state file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Teach the withheld facts with each fine-tuning variant and seed.
    Finetune {
        /// Variants to run (ft-fv, ft-pv, ft-cv, ft-rv); all by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<VariantKind>,
    },
    /// Mask-ratio sweep and specialization scores.
    Pss {
        /// Model to analyse instead of model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sweep every saved checkpoint.
        #[arg(long)]
        all_checkpoints: bool,
        /// Mask ratios, comma separated.
        #[arg(long, value_delimiter = ',')]
        ratios: Vec<f64>,
    },
    /// Semantic entropy and local intrinsic dimension per question.
    Hallucination {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Correlation and trend tables from results logs.
    Report {
        /// results.jsonl files; the config's own log when omitted.
        logs: Vec<PathBuf>,
    },
}

fn print(rec: &RunRecord) {
    println!("{}", serde_json::to_string(rec).expect("record serializes"));
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let mut c = ExperimentConfig::default();
            c.apply_env();
            c
        }
    };
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    match cli.command {
        Command::GenData => print(&cmd_gen_data(&cfg)?),
        Command::Train { resume } => print(&cmd_train(&cfg, resume.as_deref())?),
        Command::Finetune { variants } => {
            if !variants.is_empty() {
                cfg.finetune.variants = variants;
            }
            let (outcomes, _) = cmd_finetune(&cfg)?;
            print!("{}", finetune_csv(&outcomes));
        }
        Command::Pss {
            checkpoint,
            all_checkpoints,
            ratios,
        } => {
            cfg.surgery.checkpoint = checkpoint.or(cfg.surgery.checkpoint);
            cfg.surgery.all_checkpoints |= all_checkpoints;
            if !ratios.is_empty() {
                cfg.surgery.ratios = ratios;
            }
            cfg.validate()?;
            for rec in cmd_pss(&cfg)? {
                print(&rec);
            }
        }
        Command::Hallucination { checkpoint } => {
            cfg.hallucination.checkpoint = checkpoint.or(cfg.hallucination.checkpoint);
            print(&cmd_hallucination(&cfg)?);
        }
        Command::Report { logs } => {
            let logs = if logs.is_empty() { vec![cfg.results_log()] } else { logs };
            print!("{}", cmd_report(&logs)?.render());
        }
    }
    Ok(())
}
