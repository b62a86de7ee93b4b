use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gridcfc::cascade::{read_records, write_records, Simulator};
use gridcfc::config::ExperimentConfig;
use gridcfc::exec::Workers;
use gridcfc::grid::{case_hash, GridCase};
use gridcfc::interaction::{accumulate_batch, write_checkpoint, write_edge_list, write_gexf};
use gridcfc::ranking::{rank_interactions, read_order, write_ranking_csv};
use gridcfc::structural::{self, write_scores_csv, Metric};
use gridcfc::validation::{cross_validate, render_bars, risk_report, self_validate, write_sweep_csv, write_sweep_long, SweepSettings};
use gridcfc::Error;
use serde::Serialize;

use crate::manifest::{Invocation, RunManifest};

/// A result that was produced but did not meet its numerical tolerance.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct NumericalFailure(pub String);

pub struct Outcome {
    pub case_hash: String,
    pub outputs: Vec<PathBuf>,
    pub failure: Option<NumericalFailure>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn prepare(cfg: &ExperimentConfig, case: &Path) -> Result<GridCase> {
    cfg.prepare_case(case).with_context(|| format!("loading case {}", case.display()))
}

pub fn execute(inv: &Invocation, cfg: &ExperimentConfig, out: &Path, workers: Workers) -> Result<Outcome> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match inv {
        Invocation::Simulate { case } => simulate(cfg, case, out, workers),
        Invocation::Rank { case, batch } => rank(cfg, case, batch, out, workers),
        Invocation::Structural { case, metrics } => structural(cfg, case, metrics, out, workers),
        Invocation::Validate {
            case,
            mode,
            rankings,
            names,
        } => validate(cfg, case, mode, rankings, names, out, workers),
    }
}

#[derive(Serialize)]
struct SimulationReport {
    summary: gridcfc::cascade::BatchSummary,
    total_load: f64,
    risk: gridcfc::validation::RiskReport,
}

fn simulate(cfg: &ExperimentConfig, case_path: &Path, out: &Path, workers: Workers) -> Result<Outcome> {
    let case = prepare(cfg, case_path)?;
    let l_t = case.total_load();
    let sim = Simulator::new(case, cfg.simulation.clone())?;
    let batch = sim.run_batch(workers);
    let records = out.join("records.jsonl");
    write_records(create(&records)?, &batch.records)?;
    let risk = risk_report(&batch.records, l_t)?;
    println!(
        "{} chains: CFR {:.3} MW +- {:.3} (95%), {} cut at the stage cap",
        risk.n_samples, risk.cfr, risk.ci95, batch.summary.cap_exceeded
    );
    let report = out.join("report.json");
    write_json(
        &report,
        &SimulationReport {
            summary: batch.summary,
            total_load: l_t,
            risk,
        },
    )?;
    Ok(Outcome {
        case_hash: sim.case_hash().to_string(),
        outputs: vec![records, report],
        failure: None,
    })
}

#[derive(Serialize)]
struct HitsTrace {
    iterations: usize,
    converged: bool,
    residuals: Vec<f64>,
    n_samples: usize,
}

fn rank(cfg: &ExperimentConfig, case_path: &Path, batch: &Path, out: &Path, workers: Workers) -> Result<Outcome> {
    let case = prepare(cfg, case_path)?;
    let hash = case_hash(&case);
    let f = File::open(batch).with_context(|| format!("opening batch {}", batch.display()))?;
    let records = read_records(BufReader::new(f)).with_context(|| format!("reading batch {}", batch.display()))?;
    if let Some(r) = records.iter().find(|r| r.case_hash != hash) {
        return Err(Error::CaseMismatch {
            expected: hash,
            found: r.case_hash.clone(),
        })
        .with_context(|| format!("sample {} of {} was simulated on another case or config", r.sample, batch.display()));
    }
    let m = accumulate_batch(&records, case.n_branches(), cfg.severity, case.total_load(), workers)?;
    let r = rank_interactions(&m, cfg.ranking.fill, &cfg.ranking.hits())?;

    let ranking = out.join("ranking.csv");
    write_ranking_csv(&r, &case, create(&ranking)?)?;
    let edges = out.join("interactions.csv");
    write_edge_list(&m, 0.0, create(&edges)?)?;
    let gexf = out.join("interactions.gexf");
    write_gexf(&m, &case, Some(&r.k), 0.0, create(&gexf)?)?;
    let sums = out.join("interactions_checkpoint.csv");
    write_checkpoint(&m, create(&sums)?)?;
    let trace = out.join("hits.json");
    write_json(
        &trace,
        &HitsTrace {
            iterations: r.iterations,
            converged: r.converged,
            residuals: r.residuals.clone(),
            n_samples: m.n_samples(),
        },
    )?;
    let top: Vec<String> = r.order.iter().take(10).map(|b| b.to_string()).collect();
    println!("{} chains, HITS {} iterations; top branches {}", m.n_samples(), r.iterations, top.join(" "));
    let failure = (!r.converged).then(|| NumericalFailure(format!("weighted HITS did not converge in {} iterations", r.iterations)));
    Ok(Outcome {
        case_hash: hash,
        outputs: vec![ranking, edges, gexf, sums, trace],
        failure,
    })
}

pub fn parse_metrics(list: &[String]) -> Result<Vec<Metric>> {
    let mut out = Vec::new();
    for m in list {
        if m.eq_ignore_ascii_case("all") {
            out.extend(Metric::ALL);
        } else {
            out.push(m.parse::<Metric>()?);
        }
    }
    out.dedup();
    if out.is_empty() {
        bail!(Error::InvalidArgument("no metric given".into()));
    }
    Ok(out)
}

fn structural(cfg: &ExperimentConfig, case_path: &Path, metrics: &[String], out: &Path, workers: Workers) -> Result<Outcome> {
    let case = prepare(cfg, case_path)?;
    let mut outputs = Vec::new();
    for m in parse_metrics(metrics)? {
        let s = structural::scores(&case, m, &cfg.structural, workers)?;
        let path = out.join(format!("{}.csv", m.name().to_lowercase()));
        write_scores_csv(&s, &case, create(&path)?)?;
        let top: Vec<String> = s.order.iter().take(10).map(|b| b.to_string()).collect();
        println!("{}: top branches {}", m.name(), top.join(" "));
        outputs.push(path);
    }
    Ok(Outcome {
        case_hash: case_hash(&case),
        outputs,
        failure: None,
    })
}

/// Curve label of a ranking file: its stem, or `K` for a HITS ranking.
pub fn default_name(path: &Path) -> String {
    match path.file_stem().and_then(|s| s.to_str()) {
        Some("ranking") => "K".to_string(),
        Some(stem) => stem.to_uppercase(),
        None => path.display().to_string(),
    }
}

fn validate(
    cfg: &ExperimentConfig,
    case_path: &Path,
    mode: &str,
    rankings: &[PathBuf],
    names: &[String],
    out: &Path,
    workers: Workers,
) -> Result<Outcome> {
    if rankings.is_empty() {
        bail!(Error::InvalidArgument("at least one ranking file is needed".into()));
    }
    if !names.is_empty() && names.len() != rankings.len() {
        bail!(Error::InvalidArgument(format!("{} names for {} ranking files", names.len(), rankings.len())));
    }
    let case = prepare(cfg, case_path)?;
    let hash = case_hash(&case);
    let mut orders = Vec::new();
    for (i, path) in rankings.iter().enumerate() {
        if let Some(m) = RunManifest::beside(path)? {
            if m.case_hash != hash {
                return Err(Error::CaseMismatch {
                    expected: hash,
                    found: m.case_hash,
                })
                .with_context(|| format!("ranking {} was computed for another case or config", path.display()));
            }
        }
        let f = File::open(path).with_context(|| format!("opening ranking {}", path.display()))?;
        let order = read_order(f).with_context(|| format!("reading ranking {}", path.display()))?;
        let name = names.get(i).cloned().unwrap_or_else(|| default_name(path));
        orders.push((name, order));
    }
    let settings = SweepSettings {
        sizes: cfg.validation.sizes.clone(),
        delta_c: cfg.validation.delta_c,
        sim: cfg.simulation.clone(),
        workers,
        redispatch: cfg.validation.redispatch,
    };
    let report = match mode {
        "self" => {
            if orders.len() != 1 {
                bail!(Error::InvalidArgument("self validation takes exactly one ranking".into()));
            }
            self_validate(&case, &orders[0].1, &cfg.validation.groups(), &settings)?
        }
        "cross" => cross_validate(&case, &orders, &settings)?,
        other => bail!(Error::InvalidArgument(format!("unknown mode {other:?}, expected self or cross"))),
    };
    let wide = out.join("sweep.csv");
    write_sweep_csv(&report, create(&wide)?)?;
    let long = out.join("sweep_long.csv");
    write_sweep_long(&report, create(&long)?)?;
    let json = out.join("sweep.json");
    write_json(&json, &report)?;
    print!("{}", render_bars(&report, 40));
    Ok(Outcome {
        case_hash: hash,
        outputs: vec![wide, long, json],
        failure: None,
    })
}
