//! `ltce` — benchmark harness for long-term treatment effect estimators
//! under monotone outcome dropout.

mod config;
mod plot;
mod runner;
mod table;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use config::{ExperimentConfig, SweepAxis};
use ltce_core::dataset::CsvSchema;
use ltce_core::dgp;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ltce", version, about = "Long-term treatment effect benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one synthetic dataset: panel CSV, ground-truth CSV, and a
    /// manifest recording the generator config and coefficient draw.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override config keys, e.g. `--set n=500`.
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Run the sweep-by-trial experiment grid.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Write per-trial nuisance values as CSV.
        #[arg(long)]
        dump_nuisance: bool,
        /// Write trained balance-network parameters as JSON.
        #[arg(long)]
        dump_model: bool,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Rebuild the mean/std result tables from a results directory.
    Table {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a sweep plot (one polyline per method) as SVG.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        axis: String,
        #[arg(long, default_value = "eps-cate")]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate {
            config,
            out,
            overrides,
        } => simulate(&config, &out, &overrides),
        Command::Run {
            config,
            out,
            jobs,
            dump_nuisance,
            dump_model,
            overrides,
        } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let opts = runner::RunOptions {
                jobs,
                dump_nuisance,
                dump_model,
            };
            let outcome = runner::run_experiment(&cfg, &out, &opts)?;
            eprintln!(
                "wrote {} records to {}",
                outcome.records.len(),
                out.join("records.jsonl").display()
            );
            Ok(())
        }
        Command::Table { input, out } => {
            table::emit_table(&input, &out)?;
            eprintln!("wrote {} and {}", out.display(), table::std_path(&out).display());
            Ok(())
        }
        Command::Plot {
            input,
            axis,
            metric,
            out,
        } => {
            let _ = axis.parse::<SweepAxis>()?;
            let records = runner::read_records(&input)?;
            let kind = plot::MetricKind::parse(&metric)?;
            plot::emit_plot(&records, &axis, kind, &out)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn simulate(config: &PathBuf, out: &PathBuf, overrides: &[String]) -> Result<()> {
    let cfg = ExperimentConfig::load(config, overrides)?;
    let axis = cfg.sweep_axis()?;
    let dgp_cfg = cfg.dgp_config(axis, cfg.gamma, cfg.master_seed)?;
    let sim = dgp::simulate(&dgp_cfg).context("generating dataset")?;
    std::fs::create_dir_all(out)?;

    let schema = CsvSchema::standard(sim.dataset.p(), sim.dataset.stages());
    sim.dataset
        .write_csv(&out.join("dataset.csv"), &schema)
        .context("writing dataset.csv")?;

    let mut truth = String::from("y0,y1,tau_x\n");
    for i in 0..sim.dataset.n() {
        truth.push_str(&format!(
            "{},{},{}\n",
            sim.truth.y_pot()[[i, 0]],
            sim.truth.y_pot()[[i, 1]],
            sim.truth.tau_x()[i]
        ));
    }
    std::fs::write(out.join("truth.csv"), truth)?;

    let manifest = serde_json::json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "dgp": dgp_cfg,
        "draw": sim.draw,
        "tau": sim.truth.tau(),
        "notes": runner::generator_notes(),
    });
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    eprintln!("wrote dataset.csv, truth.csv, manifest.json to {}", out.display());
    Ok(())
}
