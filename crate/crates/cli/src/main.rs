//! `socsim`: run scenario files from the command line.
//!
//! Exit status is 0 on success, 1 for configuration problems and 2 when the simulator trips
//! one of its own consistency checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use soc_sim::experiment::{self, RunResult};
use soc_sim::policy::PolicyKind;
use soc_sim::scenario::{Overrides, Scenario, ScenarioFile, SweepParam};
use soc_sim::Error;

#[derive(Parser)]
#[command(
    name = "socsim",
    version,
    about = "Admission-control simulator for multi-tier web clusters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its time series and summary.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated seconds.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the same traffic under several policies and print a comparison table.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<PolicyKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// One run per value of a parameter (arrival_rate, T_AC, l_lambda, k_sigma, seed).
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    if err.is_config() {
        ExitCode::from(1)
    } else {
        ExitCode::from(2)
    }
}

fn report_warnings(result: &RunResult) {
    for (t, msg) in result.recorder.warnings() {
        eprintln!("warning [{}] t={t}: {msg}", result.policy);
    }
}

fn print_summary(dir: &Path, result: &RunResult) {
    let s = &result.summary;
    println!("{} -> {}", result.policy, dir.display());
    for t in &s.tiers {
        println!(
            "  {:<10} rt95 {:>10} mean {:>10}",
            t.name,
            t.rt95.map_or("-".into(), |v| format!("{v:.4}")),
            t.mean_rt.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    println!(
        "  sla violations {:.4}  mean p {:.4}  rejected {:.4}  abandoned {:.4}",
        s.sla_violation_fraction, s.mean_p, s.rejection_rate, s.abandonment_rate
    );
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run {
            scenario,
            policy,
            seed,
            horizon,
            out,
        } => {
            let overrides = Overrides {
                policy,
                seed,
                horizon,
                ..Default::default()
            };
            let scenario = Scenario::load(&scenario, &overrides)?;
            let result = experiment::run(&scenario)?;
            experiment::write_run(&out, &result)?;
            report_warnings(&result);
            print_summary(&out, &result);
        }
        Command::Compare {
            scenario,
            policies,
            seed,
            horizon,
            out,
        } => {
            let overrides = Overrides {
                seed,
                horizon,
                ..Default::default()
            };
            let scenario = Scenario::load(&scenario, &overrides)?;
            let results = experiment::compare(&scenario, &policies)?;
            for (i, result) in results.iter().enumerate() {
                let repeated = policies[..i].contains(&result.policy);
                let dir = if repeated {
                    out.join(format!("{}-{i}", result.policy))
                } else {
                    out.join(result.policy.name())
                };
                experiment::write_run(&dir, result)?;
                report_warnings(result);
            }
            let table = experiment::comparison_table(&results);
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("comparison.txt"), &table)?;
            print!("{table}");
        }
        Command::Sweep {
            scenario,
            param,
            values,
            policy,
            horizon,
            out,
        } => {
            let param: SweepParam = param.parse()?;
            let mut file = ScenarioFile::load(&scenario)?;
            file.apply(&Overrides {
                policy,
                horizon,
                ..Default::default()
            })?;
            let rows = experiment::sweep(&file, param, &values)?;
            for (value, result) in &rows {
                experiment::write_run(&out.join(format!("{}={value}", param.name())), result)?;
                report_warnings(result);
            }
            let table = experiment::sweep_table(param, &rows);
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("sweep.csv"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
