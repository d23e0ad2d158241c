use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lrocsim::runner::{
    build_report, generate_dataset, load_config, run_observers, run_training, ExperimentPlan,
};
use lrocsim::Result;

#[derive(Parser)]
#[command(name = "lrocsim", version, about = "Detection-localization observer studies")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Master seed, overriding the plan file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (default: runs/<system>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Verb {
    /// Simulate the training store and the validation/test sets.
    Generate { config: PathBuf },
    /// Train the CNN observer on the generated data.
    Train {
        config: PathBuf,
        /// Continue from the last checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run the configured observers on the test set.
    Evaluate { config: PathBuf },
    /// Merge run reports and rank systems per observer.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn plan_and_dir(cli: &Cli, config: &PathBuf) -> Result<(ExperimentPlan, PathBuf)> {
    let mut plan = load_config(config)?;
    if let Some(seed) = cli.seed {
        plan.set_seed(seed);
    }
    let dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&plan.system));
    Ok((plan, dir))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.verb {
        Verb::Generate { config } => {
            let (plan, dir) = plan_and_dir(cli, config)?;
            let m = generate_dataset(&plan, &dir, cli.force)?;
            println!(
                "wrote {} training backgrounds, {} validation and {} test images to {}",
                m.require("train_backgrounds.count")?,
                m.require("val.count")?,
                m.require("test.count")?,
                dir.display()
            );
        }
        Verb::Train { config, resume } => {
            let (plan, dir) = plan_and_dir(cli, config)?;
            let s = run_training(&plan, &dir, cli.force, *resume)?;
            for (d, loss) in &s.depths {
                println!("depth {d}: best validation cross-entropy {loss:.5}");
            }
            println!(
                "selected {} conv layers after {} mini-batches; checkpoint in {}",
                s.conv_layers,
                s.steps,
                dir.display()
            );
        }
        Verb::Evaluate { config } => {
            let (plan, dir) = plan_and_dir(cli, config)?;
            for row in run_observers(&plan, &dir, cli.force)? {
                let auc = row
                    .auc
                    .map(|a| format!("{:.4} ± {:.4}", a.value, a.std_error))
                    .unwrap_or_default();
                println!(
                    "{:<12} {:<14} ALROC {:.4} ± {:.4}  AUC {auc}",
                    row.observer, row.system, row.alroc.value, row.alroc.std_error
                );
            }
        }
        Verb::Report { runs } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs/report"));
            for (obs, r) in build_report(runs, &out, cli.force)? {
                println!("{obs}: ALROC {}", r.by_alroc.join(" > "));
                println!("{obs}: AUC   {}", r.by_auc.join(" > "));
                if r.disagree {
                    println!("{obs}: rankings disagree");
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
