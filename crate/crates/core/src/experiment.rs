//! Single runs, policy comparisons and parameter sweeps, plus their output files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{self, RunReport, Simulation};
use crate::error::{Error, Result};
use crate::metrics::{self, Recorder, Summary};
use crate::policy::PolicyKind;
use crate::scenario::{Scenario, ScenarioFile, SweepParam};
use crate::stats::RunningStats;

/// Everything one run produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub policy: PolicyKind,
    pub benchmark: Vec<f64>,
    pub report: RunReport,
    pub recorder: Recorder,
    pub summary: Summary,
    pub effective: ScenarioFile,
}

/// Runs `scenario` once with its configured policy.
pub fn run(scenario: &Scenario) -> Result<RunResult> {
    let benchmark = engine::benchmark(&scenario.model, scenario.options.seed);
    let policy = scenario.policy.make(&scenario.model.sla, &benchmark);
    let mut recorder = Recorder::new(
        scenario.tier_names(),
        scenario.model.sla.clone(),
        scenario.options.warmup,
        policy.snapshot(),
    );
    let sim = Simulation::new(scenario.model.clone(), scenario.options, policy)?;
    let report = sim.run(&mut recorder)?;
    let summary = recorder.summary(report.end_time);
    Ok(RunResult {
        policy: scenario.policy.kind,
        benchmark,
        report,
        recorder,
        summary,
        effective: scenario.effective.clone(),
    })
}

/// Same scenario, same random streams, one run per policy.
pub fn compare(scenario: &Scenario, policies: &[PolicyKind]) -> Result<Vec<RunResult>> {
    if policies.len() < 2 {
        return Err(Error::config("compare needs at least two policies"));
    }
    policies
        .par_iter()
        .map(|kind| {
            let mut file = scenario.effective.clone();
            file.policy.kind = *kind;
            run(&file.build()?)
        })
        .collect()
}

/// One independent run per value of `param`.
pub fn sweep(file: &ScenarioFile, param: SweepParam, values: &[f64]) -> Result<Vec<(f64, RunResult)>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let scenarios = values
        .iter()
        .map(|v| {
            let mut f = file.clone();
            f.set(param, *v)?;
            Ok((*v, f.build()?))
        })
        .collect::<Result<Vec<_>>>()?;
    scenarios
        .par_iter()
        .map(|(v, s)| run(s).map(|r| (*v, r)))
        .collect()
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    policy: &'a str,
    events: u64,
    trace_digest: String,
    benchmark_rt95: BTreeMap<&'a str, f64>,
    summary: &'a Summary,
    effective: &'a ScenarioFile,
}

/// Writes `series.csv`, `compliance.csv`, `decisions.csv`, `summary.toml` and, for controllers
/// that learn curves, `curves.csv` into `dir`.
pub fn write_run(dir: &Path, result: &RunResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tiers = result.recorder.tier_names();
    let mut out = BufWriter::new(File::create(dir.join("series.csv"))?);
    metrics::write_series_csv(&mut out, tiers, result.recorder.series())?;
    out.flush()?;
    let mut out = BufWriter::new(File::create(dir.join("compliance.csv"))?);
    metrics::write_compliance_csv(&mut out, tiers, result.recorder.compliance())?;
    out.flush()?;
    let mut out = BufWriter::new(File::create(dir.join("decisions.csv"))?);
    metrics::write_decisions_csv(&mut out, result.recorder.decisions())?;
    out.flush()?;
    if let Some(curves) = &result.report.curves {
        let mut out = BufWriter::new(File::create(dir.join("curves.csv"))?);
        writeln!(out, "tier,lambda,rt")?;
        for (name, knots) in tiers.iter().zip(curves) {
            for k in knots {
                writeln!(out, "{name},{},{}", k.lambda, k.rt)?;
            }
        }
        out.flush()?;
    }
    let file = SummaryFile {
        policy: result.policy.name(),
        events: result.report.events,
        trace_digest: format!("{:016x}", result.report.trace_digest),
        benchmark_rt95: tiers
            .iter()
            .map(String::as_str)
            .zip(result.benchmark.iter().copied())
            .collect(),
        summary: &result.summary,
        effective: &result.effective,
    };
    let text = toml::to_string(&file).map_err(|e| Error::Consistency {
        time: result.report.end_time.secs(),
        message: format!("cannot serialize summary: {e}"),
    })?;
    fs::write(dir.join("summary.toml"), text)?;
    if !result.recorder.warnings().is_empty() {
        let mut out = BufWriter::new(File::create(dir.join("warnings.txt"))?);
        for (t, msg) in result.recorder.warnings() {
            writeln!(out, "{t}\t{msg}")?;
        }
        out.flush()?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Side-by-side table of summaries, one line per run.
pub fn comparison_table(results: &[RunResult]) -> String {
    let mut s = String::new();
    let Some(first) = results.first() else {
        return s;
    };
    let tiers = first.recorder.tier_names();
    write!(s, "{:<10}", "policy").unwrap();
    for name in tiers {
        write!(s, " {:>12} {:>10}", format!("rt95_{name}"), format!("cv_{name}")).unwrap();
    }
    writeln!(
        s,
        " {:>10} {:>8} {:>10} {:>10} {:>10}",
        "sla_viol", "mean_p", "lambda_adm", "rejected", "abandoned"
    )
    .unwrap();
    for r in results {
        write!(s, "{:<10}", r.policy.name()).unwrap();
        for t in &r.summary.tiers {
            write!(s, " {:>12} {:>10}", opt(t.rt95), opt(t.rt95_cv)).unwrap();
        }
        let m = &r.summary;
        writeln!(
            s,
            " {:>10.4} {:>8.4} {:>10.4} {:>10.4} {:>10.4}",
            m.sla_violation_fraction, m.mean_p, m.lambda_adm, m.rejection_rate, m.abandonment_rate
        )
        .unwrap();
    }
    s
}

fn sweep_metrics(summary: &Summary) -> Vec<(String, f64)> {
    let mut m = vec![
        ("lambda_in".to_string(), summary.lambda_in),
        ("lambda_adm".to_string(), summary.lambda_adm),
        ("mean_p".to_string(), summary.mean_p),
        ("sla_viol".to_string(), summary.sla_violation_fraction),
        ("rejected".to_string(), summary.rejection_rate),
        ("abandoned".to_string(), summary.abandonment_rate),
    ];
    for t in &summary.tiers {
        m.push((format!("rt95_{}", t.name), t.rt95.unwrap_or(f64::NAN)));
        m.push((format!("cv_{}", t.name), t.rt95_cv.unwrap_or(f64::NAN)));
    }
    m
}

/// CSV with one row per swept value; seed sweeps get `mean` and `std` rows appended.
pub fn sweep_table(param: SweepParam, rows: &[(f64, RunResult)]) -> String {
    let mut s = String::new();
    let Some((_, first)) = rows.first() else {
        return s;
    };
    let names: Vec<String> = sweep_metrics(&first.summary)
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    writeln!(s, "{},{}", param.name(), names.join(",")).unwrap();
    let mut acc = vec![RunningStats::new(); names.len()];
    for (v, r) in rows {
        let values: Vec<f64> = sweep_metrics(&r.summary).into_iter().map(|(_, x)| x).collect();
        for (a, x) in acc.iter_mut().zip(&values) {
            a.push(*x);
        }
        let cells: Vec<String> = values.iter().map(|x| x.to_string()).collect();
        writeln!(s, "{v},{}", cells.join(",")).unwrap();
    }
    if param == SweepParam::Seed {
        let means: Vec<String> = acc.iter().map(|a| a.mean().to_string()).collect();
        let sds: Vec<String> = acc.iter().map(|a| a.std_dev().to_string()).collect();
        writeln!(s, "mean,{}", means.join(",")).unwrap();
        writeln!(s, "std,{}", sds.join(",")).unwrap();
    }
    s
}
