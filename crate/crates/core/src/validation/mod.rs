//! Branch capacity upgrades and the risk comparisons built on them.
//!
//! Every plan in a sweep is simulated with the same master seed, so sample
//! `i` of each plan starts from the same initiating contingency and reads
//! the same uniform draws (common random numbers). By default an upgraded
//! case keeps the operating point of the original case, so an upgrade only
//! relaxes limits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeRecord, SimulationConfig, Simulator};
use crate::error::{Error, Result};
use crate::exec::Workers;
use crate::grid::GridCase;
use crate::ranking::{rank, Group};

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Upper edges of the low and middle loss bands, as fractions of total load.
pub const BAND_EDGES: [f64; 2] = [0.1, 0.3];

/// Labels of the three loss bands.
pub const BAND_NAMES: [&str; 3] = ["lt10", "10to30", "gt30"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpgradePlan {
    /// 1-based branch ids.
    pub branches: Vec<usize>,
    /// Capacity added to both limits of each branch, MW.
    pub delta_c: f64,
}

impl UpgradePlan {
    pub fn validate(&self, case: &GridCase) -> Result<()> {
        if !(self.delta_c >= 0.0 && self.delta_c.is_finite()) {
            return Err(Error::InvalidArgument(format!("capacity increase must be nonnegative, got {}", self.delta_c)));
        }
        let mut seen = vec![false; case.n_branches()];
        for &id in &self.branches {
            case.branch(id)?;
            if std::mem::replace(&mut seen[id - 1], true) {
                return Err(Error::InvalidArgument(format!("branch {id} listed twice in upgrade plan")));
            }
        }
        Ok(())
    }
}

/// The case with both limits of every planned branch raised by `delta_c`.
pub fn apply_upgrade(case: &GridCase, plan: &UpgradePlan) -> Result<GridCase> {
    plan.validate(case)?;
    if plan.branches.is_empty() || plan.delta_c == 0.0 {
        return Ok(case.clone());
    }
    let mut branches = case.branches().to_vec();
    for &id in &plan.branches {
        let br = &mut branches[id - 1];
        br.f_lim1 += plan.delta_c;
        br.f_lim2 += plan.delta_c;
    }
    case.rebuild(branches, case.generators().to_vec(), case.loads().to_vec())
}

/// Load-loss statistics of one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub n_samples: usize,
    /// Mean load loss per chain, MW.
    pub cfr: f64,
    /// Half-width of the 95% normal-approximation interval on `cfr`, MW.
    pub ci95: f64,
    /// Contribution of each loss band to `cfr`, MW.
    pub band_risk: [f64; 3],
    /// Chains in each loss band.
    pub band_count: [usize; 3],
}

impl RiskReport {
    pub fn interval(&self) -> (f64, f64) {
        (self.cfr - self.ci95, self.cfr + self.ci95)
    }

    /// True when the two 95% intervals are disjoint.
    pub fn separated_from(&self, other: &RiskReport) -> bool {
        let (a, b) = (self.interval(), other.interval());
        a.1 < b.0 || b.1 < a.0
    }
}

/// Loss band of a chain losing `loss` out of `l_t`.
pub fn band(loss: f64, l_t: f64) -> usize {
    let f = loss / l_t;
    if f < BAND_EDGES[0] {
        0
    } else if f <= BAND_EDGES[1] {
        1
    } else {
        2
    }
}

/// Mean loss, its interval and the per-band split of a batch.
pub fn risk_report(records: &[CascadeRecord], l_t: f64) -> Result<RiskReport> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !(l_t > 0.0 && l_t.is_finite()) {
        return Err(Error::InvalidArgument(format!("total load must be positive, got {l_t}")));
    }
    let n = records.len() as f64;
    let mut sums = [0.0; 3];
    let mut counts = [0; 3];
    for r in records {
        let b = band(r.total_loss, l_t);
        sums[b] += r.total_loss;
        counts[b] += 1;
    }
    let cfr = sums.iter().sum::<f64>() / n;
    let var = if records.len() > 1 {
        records.iter().map(|r| (r.total_loss - cfr).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(RiskReport {
        n_samples: records.len(),
        cfr,
        ci95: Z95 * (var / n).sqrt(),
        band_risk: sums.map(|s| s / n),
        band_count: counts,
    })
}

/// One simulated plan of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Curve label: a rank group or a ranking method.
    pub plan: String,
    pub size: usize,
    pub branches: Vec<usize>,
    pub report: RiskReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub delta_c: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn get(&self, plan: &str, size: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.plan == plan && r.size == size)
    }
}

/// Settings shared by every plan of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub sizes: Vec<usize>,
    pub delta_c: f64,
    pub sim: SimulationConfig,
    pub workers: Workers,
    /// Solve a fresh operating point for every upgraded case instead of
    /// keeping the original one.
    pub redispatch: bool,
}

impl SweepSettings {
    fn validate(&self) -> Result<()> {
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("upgrade sizes must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Simulate every `(label, size, branches)` plan with the shared seed.
/// Plans with the same branch set are simulated once.
pub fn sweep(case: &GridCase, plans: Vec<(String, usize, Vec<usize>)>, settings: &SweepSettings) -> Result<SweepReport> {
    let l_t = case.total_load();
    let base = Simulator::new(case.clone(), settings.sim.clone())?;
    let mut done: BTreeMap<Vec<usize>, RiskReport> = BTreeMap::new();
    let mut rows = Vec::with_capacity(plans.len());
    for (plan, size, branches) in plans {
        let mut key = branches.clone();
        key.sort_unstable();
        let report = match done.get(&key) {
            Some(r) => r.clone(),
            None => {
                let up = apply_upgrade(case, &UpgradePlan { branches: branches.clone(), delta_c: settings.delta_c })?;
                let sim = if settings.redispatch {
                    Simulator::new(up, settings.sim.clone())?
                } else {
                    base.with_limits_of(up)?
                };
                let batch = sim.run_batch(settings.workers);
                let r = risk_report(&batch.records, l_t)?;
                log::info!("{plan} size {size}: cfr {:.3} +- {:.3} MW", r.cfr, r.ci95);
                done.insert(key, r.clone());
                r
            }
        };
        rows.push(SweepRow {
            plan,
            size,
            branches,
            report,
        });
    }
    Ok(SweepReport {
        delta_c: settings.delta_c,
        rows,
    })
}

/// Upgrade the top, middle and bottom windows of one ranking at every size.
pub fn self_validate(case: &GridCase, order: &[usize], groups: &[Group], settings: &SweepSettings) -> Result<SweepReport> {
    settings.validate()?;
    check_order(case, order)?;
    let mut plans = Vec::new();
    for &g in groups {
        for &size in &settings.sizes {
            plans.push((g.name().to_string(), size, rank(order, g, size)?));
        }
    }
    sweep(case, plans, settings)
}

/// Upgrade the top window of each named ranking at every size.
pub fn cross_validate(case: &GridCase, rankings: &[(String, Vec<usize>)], settings: &SweepSettings) -> Result<SweepReport> {
    settings.validate()?;
    let mut plans = Vec::new();
    for (name, order) in rankings {
        check_order(case, order)?;
        for &size in &settings.sizes {
            plans.push((name.clone(), size, rank(order, Group::Top, size)?));
        }
    }
    sweep(case, plans, settings)
}

fn check_order(case: &GridCase, order: &[usize]) -> Result<()> {
    let mut seen = vec![false; case.n_branches()];
    for &id in order {
        case.branch(id)?;
        if std::mem::replace(&mut seen[id - 1], true) {
            return Err(Error::InvalidArgument(format!("branch {id} ranked twice")));
        }
    }
    if order.len() != case.n_branches() {
        return Err(Error::InvalidArgument(format!(
            "ranking lists {} of {} branches",
            order.len(),
            case.n_branches()
        )));
    }
    Ok(())
}

/// Wide table `plan,size,cfr,ci95,risk_lt10,risk_10to30,risk_gt30,n_samples,branches`.
pub fn write_sweep_csv<W: Write>(report: &SweepReport, out: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record([
        "plan",
        "size",
        "cfr",
        "ci95",
        "risk_lt10",
        "risk_10to30",
        "risk_gt30",
        "n_samples",
        "branches",
    ])?;
    for row in &report.rows {
        let r = &row.report;
        let ids: Vec<String> = row.branches.iter().map(|b| b.to_string()).collect();
        csv.write_record([
            row.plan.clone(),
            row.size.to_string(),
            r.cfr.to_string(),
            r.ci95.to_string(),
            r.band_risk[0].to_string(),
            r.band_risk[1].to_string(),
            r.band_risk[2].to_string(),
            r.n_samples.to_string(),
            ids.join(" "),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Long table `plan,size,band,risk`, one row per loss band and a `total`
/// row per plan.
pub fn write_sweep_long<W: Write>(report: &SweepReport, out: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(["plan", "size", "band", "risk"])?;
    for row in &report.rows {
        let bands = BAND_NAMES.iter().zip(row.report.band_risk);
        for (name, risk) in bands.chain([(&"total", row.report.cfr)]) {
            csv.write_record([row.plan.clone(), row.size.to_string(), name.to_string(), risk.to_string()])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Horizontal bars of CFR per plan and size, scaled to the largest value.
pub fn render_bars(report: &SweepReport, width: usize) -> String {
    let max = report.rows.iter().map(|r| r.report.cfr).fold(0.0, f64::max);
    let label = report.rows.iter().map(|r| r.plan.len()).max().unwrap_or(0);
    let mut s = String::new();
    for row in &report.rows {
        let n = if max > 0.0 { (row.report.cfr / max * width as f64).round() as usize } else { 0 };
        let _ = writeln!(
            s,
            "{:<label$} {:>3} |{:<width$}| {:.2} +- {:.2} MW",
            row.plan,
            row.size,
            "#".repeat(n),
            row.report.cfr,
            row.report.ci95,
        );
    }
    s
}

#[cfg(test)]
mod tests;
