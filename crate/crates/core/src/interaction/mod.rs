//! Directed branch-interaction graph estimated from sampled cascading
//! failure chains.

mod export;

use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeRecord, OutageEvent};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Workers};

pub use export::{read_checkpoint, write_checkpoint, write_edge_list, write_gexf};

/// Records folded into one partial sum before partial sums are combined.
/// Fixed, so the summation order never depends on the worker count.
const CHUNK: usize = 512;

/// Coefficients of the exponential severity utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeverityParams {
    pub k1: f64,
    pub k2: f64,
}

impl Default for SeverityParams {
    fn default() -> Self {
        SeverityParams { k1: 6.0, k2: 3.0 }
    }
}

impl SeverityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k2 >= 0.0 && self.k1.is_finite() && self.k2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "k1 and k2 must be finite and nonnegative, got {} and {}",
                self.k1, self.k2
            )));
        }
        Ok(())
    }

    /// Largest value a single pair can contribute.
    pub fn max_severity(&self) -> f64 {
        self.k1 * self.k2.exp()
    }
}

/// Whether `lj` failed as a consequence of `li`: one stage later, in the
/// island of `li` or one split off from it.
pub fn cause_effect(record: &CascadeRecord, li: &OutageEvent, lj: &OutageEvent) -> bool {
    lj.stage == li.stage + 1 && record.descends_from(lj.island, li.island)
}

/// Branches failing in the same stage and island as `e`, itself included.
pub fn co_failing(record: &CascadeRecord, e: &OutageEvent) -> usize {
    record
        .events
        .iter()
        .filter(|x| x.stage == e.stage && x.island == e.island)
        .count()
}

/// Load shed from the stage of `e` onward in its island and every island
/// split off from it, MW.
pub fn downstream_loss(record: &CascadeRecord, e: &OutageEvent) -> f64 {
    record
        .losses
        .iter()
        .filter(|l| l.stage >= e.stage && record.descends_from(l.island, e.island))
        .fold(0.0, |a, l| a + l.mw)
}

/// Severity of the interaction `li -> lj` within one chain.
pub fn severity(record: &CascadeRecord, li: &OutageEvent, lj: &OutageEvent, params: &SeverityParams, l_t: f64) -> f64 {
    if !cause_effect(record, li, lj) {
        return 0.0;
    }
    let n = (co_failing(record, li) * co_failing(record, lj)) as f64;
    params.k1 * (params.k2 * downstream_loss(record, lj) / l_t).exp() / n
}

/// Every nonzero `(cause, effect, severity)` of one chain, by branch
/// position.
pub fn record_interactions(record: &CascadeRecord, params: &SeverityParams, l_t: f64) -> Vec<(usize, usize, f64)> {
    let ev = &record.events;
    let group = |e: &OutageEvent| ev.iter().filter(|x| x.stage == e.stage && x.island == e.island).count();
    let sizes: Vec<usize> = ev.iter().map(group).collect();
    let loss: Vec<f64> = ev.iter().map(|e| downstream_loss(record, e)).collect();
    let mut out = Vec::new();
    for (a, li) in ev.iter().enumerate() {
        for (b, lj) in ev.iter().enumerate() {
            if li.branch == lj.branch || !cause_effect(record, li, lj) {
                continue;
            }
            let m = params.k1 * (params.k2 * loss[b] / l_t).exp() / (sizes[a] * sizes[b]) as f64;
            out.push((li.branch - 1, lj.branch - 1, m));
        }
    }
    out
}

/// Monte Carlo estimate of the branch-interaction weights.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    n_branch: usize,
    n_samples: usize,
    params: SeverityParams,
    l_t: f64,
    case_hash: Option<String>,
    /// Row-major severity sums over all samples.
    sums: Vec<f64>,
}

impl InteractionMatrix {
    pub fn new(n_branch: usize, params: SeverityParams, l_t: f64) -> Result<Self> {
        params.validate()?;
        if !(l_t > 0.0 && l_t.is_finite()) {
            return Err(Error::InvalidArgument(format!("total load must be positive, got {l_t}")));
        }
        Ok(InteractionMatrix {
            n_branch,
            n_samples: 0,
            params,
            l_t,
            case_hash: None,
            sums: vec![0.0; n_branch * n_branch],
        })
    }

    /// Refuse records of any other case from now on.
    pub fn expect_case(mut self, hash: impl Into<String>) -> Self {
        self.case_hash = Some(hash.into());
        self
    }

    pub fn n_branch(&self) -> usize {
        self.n_branch
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn params(&self) -> SeverityParams {
        self.params
    }

    pub fn total_load(&self) -> f64 {
        self.l_t
    }

    pub fn case_hash(&self) -> Option<&str> {
        self.case_hash.as_deref()
    }

    /// Weight of `i -> j` by branch position.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if self.n_samples == 0 {
            return 0.0;
        }
        self.sums[i * self.n_branch + j] / self.n_samples as f64
    }

    /// Dense row-major weights.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.n_samples.max(1) as f64;
        self.sums.iter().map(|s| s / n).collect()
    }

    /// Fold one chain into the estimate.
    pub fn add(&mut self, record: &CascadeRecord) -> Result<()> {
        self.check_hash(&record.case_hash)?;
        for (i, j, m) in record_interactions(record, &self.params, self.l_t) {
            if i >= self.n_branch || j >= self.n_branch {
                return Err(Error::UnknownBranch(i.max(j) + 1));
            }
            self.sums[i * self.n_branch + j] += m;
        }
        self.n_samples += 1;
        Ok(())
    }

    /// Combine with an estimate over disjoint samples of the same case.
    pub fn merge(&mut self, other: &InteractionMatrix) -> Result<()> {
        if self.n_branch != other.n_branch || self.params != other.params || self.l_t != other.l_t {
            return Err(Error::InvalidArgument("merging matrices with different shape or parameters".into()));
        }
        if let Some(h) = &other.case_hash {
            self.check_hash(h)?;
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.n_samples += other.n_samples;
        Ok(())
    }

    fn check_hash(&mut self, hash: &str) -> Result<()> {
        match &self.case_hash {
            Some(h) if h != hash => Err(Error::CaseMismatch {
                expected: h.clone(),
                found: hash.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                self.case_hash = Some(hash.to_string());
                Ok(())
            }
        }
    }

    pub(crate) fn from_parts(
        n_branch: usize,
        n_samples: usize,
        params: SeverityParams,
        l_t: f64,
        case_hash: Option<String>,
        sums: Vec<f64>,
    ) -> Result<Self> {
        let mut m = InteractionMatrix::new(n_branch, params, l_t)?;
        if sums.len() != n_branch * n_branch {
            return Err(Error::Format("matrix size does not match branch count".into()));
        }
        m.n_samples = n_samples;
        m.case_hash = case_hash;
        m.sums = sums;
        Ok(m)
    }

    pub(crate) fn sums(&self) -> &[f64] {
        &self.sums
    }
}

/// Single-pass estimate over a stream of chains.
pub fn accumulate<'a>(
    records: impl IntoIterator<Item = &'a CascadeRecord>,
    n_branch: usize,
    params: SeverityParams,
    l_t: f64,
) -> Result<InteractionMatrix> {
    let mut m = InteractionMatrix::new(n_branch, params, l_t)?;
    for r in records {
        m.add(r)?;
    }
    if m.n_samples == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(m)
}

/// Estimate over an in-memory batch, folding fixed-size chunks on the
/// worker pool. The result does not depend on `workers`.
pub fn accumulate_batch(
    records: &[CascadeRecord],
    n_branch: usize,
    params: SeverityParams,
    l_t: f64,
    workers: Workers,
) -> Result<InteractionMatrix> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let chunks: Vec<&[CascadeRecord]> = records.chunks(CHUNK).collect();
    let parts = map_indexed(chunks.len(), workers, |c| accumulate(chunks[c], n_branch, params, l_t));
    let mut total = InteractionMatrix::new(n_branch, params, l_t)?;
    for p in parts {
        total.merge(&p?)?;
    }
    Ok(total)
}
