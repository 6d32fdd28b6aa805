use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use plume_core::pipeline::{self, RunConfig, RunPaths};
use plume_core::Error;

#[derive(Parser, Debug)]
#[command(name = "plume", version, about = "CO2 plume inference with conditional normalizing flows")]
struct Cli {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the run seed; section seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate training pairs into <out>/dataset (resumes if present).
    GenData,
    /// Train the flow on the dataset split.
    Train,
    /// Sample posteriors for the test split or one sample.
    Infer {
        /// Evaluate a single sample id instead of the test split.
        #[arg(long)]
        id: Option<usize>,
    },
    /// Write PNG panels and a summary table for the last inference.
    Report,
    /// Check a configuration and exit.
    ValidateConfig {
        /// Print the effective configuration.
        #[arg(long)]
        print: bool,
    },
}

fn load_config(cli: &Cli) -> plume_core::Result<RunConfig> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: &Cli, cfg: RunConfig) -> plume_core::Result<()> {
    let paths = RunPaths::new(&cli.out);
    match &cli.command {
        Command::ValidateConfig { print } => {
            if *print {
                print!("{}", cfg.to_toml());
            }
            eprintln!("config ok");
        }
        Command::GenData => {
            let total = cfg.dataset.n_total;
            let ds = pipeline::generate_dataset(&cfg, &paths.dataset(), |r| match &r.error {
                None => eprintln!("sample {}/{total} leak={} triggered={}", r.id + 1, r.leak, r.leak_triggered),
                Some(e) => eprintln!("sample {}/{total} failed: {e}", r.id + 1),
            })?;
            let failed = ds.manifest.records.iter().filter(|r| !r.is_ok()).count();
            println!("{} records in {} ({failed} failed)", ds.manifest.records.len(), paths.dataset().display());
        }
        Command::Train => {
            let out = pipeline::train_run(&cfg, &paths)?;
            for r in &out.history {
                let t = r.train_loss.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                eprintln!("epoch {:3}  train {t:>10}  val {:.4}", r.epoch, r.val_loss);
            }
            println!("best epoch {} -> {}", out.best_epoch, paths.checkpoint().display());
        }
        Command::Infer { id } => {
            let ids = id.map(|i| vec![i]);
            let (rows, tau) = pipeline::infer_run(&cfg, &paths, ids.as_deref())?;
            let s = pipeline::summarize(&rows, tau);
            println!(
                "{} samples  ssim {:.4}  rmse {:.4}  corr {:.3}  fp {}  fn {}  tau {:.4}",
                s.samples, s.mean_ssim, s.mean_rmse, s.mean_uncertainty_error_corr, s.false_positives, s.false_negatives, tau
            );
        }
        Command::Report => {
            let (pngs, s) = pipeline::report_run(&paths)?;
            println!("{} panels, mean ssim {:.4} -> {}", pngs.len(), s.mean_ssim, paths.report().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
