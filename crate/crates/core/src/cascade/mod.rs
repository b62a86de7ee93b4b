//! Stochastic cascading-failure simulation: initial contingencies,
//! probabilistic overload tripping, hidden failures, island-wise
//! propagation and emergent dispatch.

mod io;
mod sim;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acpf::{PfOptions, SystemState};
use crate::dispatch::DispatchOptions;
use crate::error::{Error, Result};
use crate::grid::{GridCase, IslandId, Topology};

pub use io::{read_records, write_records, RecordReader};
pub use sim::{run_batch, run_cascade, Batch, BatchSummary, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutageCause {
    Initial,
    Overload,
    Hidden,
    /// Tripped with certainty: flow above the emergency limit.
    Emergency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutageEvent {
    /// 1-based branch id.
    pub branch: usize,
    pub stage: u32,
    /// Island the branch belonged to when it failed.
    pub island: IslandId,
    pub cause: OutageCause,
}

/// Load shed in one island during one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IslandLoss {
    pub island: IslandId,
    pub stage: u32,
    pub mw: f64,
}

/// One sampled cascading failure chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeRecord {
    pub sample: u64,
    /// Master seed of the batch; the sample stream derives from it and `sample`.
    pub seed: u64,
    pub case_hash: String,
    /// Ordered by stage, then island, then branch.
    pub events: Vec<OutageEvent>,
    /// Islands simulated at each stage. Entry 0 lists the islands hit by the
    /// initial outages.
    pub islands: Vec<Vec<IslandId>>,
    /// Parent of every island created during the chain; roots are `None`.
    pub parents: Vec<Option<IslandId>>,
    /// Non-zero losses by island and stage.
    pub losses: Vec<IslandLoss>,
    pub total_loss: f64,
    pub cap_exceeded: bool,
}

impl CascadeRecord {
    /// Number of recorded stages, the initial one included.
    pub fn n_stages(&self) -> usize {
        self.islands.len()
    }

    pub fn events_at(&self, stage: u32) -> impl Iterator<Item = &OutageEvent> {
        self.events.iter().filter(move |e| e.stage == stage)
    }

    /// True when `island` equals `ancestor` or descends from it.
    pub fn descends_from(&self, island: IslandId, ancestor: IslandId) -> bool {
        let mut cur = Some(island);
        while let Some(i) = cur {
            if i == ancestor {
                return true;
            }
            cur = self.parents.get(i as usize).copied().flatten();
        }
        false
    }
}

/// How the initiating contingency of each chain is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialPolicy {
    /// One unordered branch pair, uniform over all pairs.
    #[default]
    UniformN2,
    /// Every branch fails independently with its own probability; empty
    /// draws are rejected. Without explicit values each branch uses its
    /// hidden-failure probability.
    Independent {
        #[serde(default)]
        probs: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub initial: InitialPolicy,
    /// Chains still active after this many dependent stages are cut and flagged.
    pub max_stages: u32,
    /// Keep a dispatched island active while hidden-failure exposure lasts,
    /// dispatching again at each later quiet stage. Off: dispatch ends the
    /// island's chain.
    pub continue_after_dispatch: bool,
    /// Keep simulating an island that lost branches without splitting.
    /// Off: only the parts of a split island carry the chain on.
    pub continue_unsplit: bool,
    pub pf: PfOptions,
    pub dispatch: DispatchOptions,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_samples: 100_000,
            seed: 1,
            initial: InitialPolicy::UniformN2,
            max_stages: 50,
            continue_after_dispatch: false,
            continue_unsplit: false,
            pf: PfOptions::default(),
            dispatch: DispatchOptions::default(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self, case: &GridCase) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        if self.max_stages == 0 {
            return Err(Error::Config("max_stages must be at least 1".into()));
        }
        match &self.initial {
            InitialPolicy::UniformN2 if case.n_branches() < 2 => {
                Err(Error::Config("uniform N-2 needs at least two branches".into()))
            }
            InitialPolicy::Independent { probs } => {
                let p = initial_probs(case, probs.as_deref())?;
                if p.iter().all(|&x| x == 0.0) {
                    return Err(Error::Config("every initial outage probability is zero".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn initial_probs(case: &GridCase, probs: Option<&[f64]>) -> Result<Vec<f64>> {
    let p: Vec<f64> = match probs {
        Some(p) if p.len() != case.n_branches() => {
            return Err(Error::Config(format!(
                "{} initial outage probabilities for {} branches",
                p.len(),
                case.n_branches()
            )))
        }
        Some(p) => p.to_vec(),
        None => case.branches().iter().map(|b| b.hidden_failure_prob).collect(),
    };
    if let Some(x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Config(format!("initial outage probability {x} outside [0, 1]")));
    }
    Ok(p)
}

/// Tripping probability of a branch carrying `f` against its long-term and
/// emergency limits.
pub fn branch_failure_prob(f: f64, f_lim1: f64, f_lim2: f64) -> Result<f64> {
    if !(f_lim1 > 0.0 && f_lim2 >= f_lim1) {
        return Err(Error::InvalidArgument(format!(
            "limits must satisfy 0 < f_lim1 <= f_lim2, got {f_lim1} / {f_lim2}"
        )));
    }
    Ok(failure_prob(f, f_lim1, f_lim2))
}

pub(crate) fn failure_prob(f: f64, f_lim1: f64, f_lim2: f64) -> f64 {
    if f <= f_lim1 {
        0.0
    } else if f > f_lim2 || f_lim1 == f_lim2 {
        1.0
    } else {
        (f - f_lim1) / (f_lim2 - f_lim1)
    }
}

/// Initial outages as sorted 1-based branch ids.
pub fn sample_initial_outages<R: Rng + ?Sized>(case: &GridCase, policy: &InitialPolicy, rng: &mut R) -> Result<Vec<usize>> {
    let pos = initial_positions(case, policy, rng)?;
    Ok(pos.into_iter().map(|k| k + 1).collect())
}

pub(crate) fn initial_positions<R: Rng + ?Sized>(case: &GridCase, policy: &InitialPolicy, rng: &mut R) -> Result<Vec<usize>> {
    let n = case.n_branches();
    match policy {
        InitialPolicy::UniformN2 => {
            if n < 2 {
                return Err(Error::Config("uniform N-2 needs at least two branches".into()));
            }
            let mut pair = index::sample(rng, n, 2).into_vec();
            pair.sort_unstable();
            Ok(pair)
        }
        InitialPolicy::Independent { probs } => {
            let p = initial_probs(case, probs.as_deref())?;
            if p.iter().all(|&x| x == 0.0) {
                return Err(Error::Config("every initial outage probability is zero".into()));
            }
            loop {
                let set: Vec<usize> = (0..n).filter(|&k| rng.random::<f64>() < p[k]).collect();
                if !set.is_empty() {
                    return Ok(set);
                }
            }
        }
    }
}

/// Uniform variates for one stage: one overload and one hidden-failure draw
/// per branch position, taken whether or not the branch is at risk so the
/// stream stays aligned across compared cases.
#[derive(Debug, Clone)]
pub(crate) struct StageDraws {
    overload: Vec<f64>,
    hidden: Vec<f64>,
}

impl StageDraws {
    pub fn sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let overload = (0..n).map(|_| rng.random()).collect();
        let hidden = (0..n).map(|_| rng.random()).collect();
        StageDraws { overload, hidden }
    }
}

/// Branches exposed to hidden failures: in service and sharing a bus with a
/// branch whose failure stage is in `window`.
pub(crate) fn exposure(
    case: &GridCase,
    in_service: &[bool],
    fail_stage: &[Option<u32>],
    window: std::ops::RangeInclusive<u32>,
) -> Vec<bool> {
    let mut hot_bus = vec![false; case.n_buses()];
    for (k, s) in fail_stage.iter().enumerate() {
        if s.is_some_and(|s| window.contains(&s)) {
            let (f, t) = case.branch_ends(k);
            hot_bus[f] = true;
            hot_bus[t] = true;
        }
    }
    (0..case.n_branches())
        .map(|k| {
            let (f, t) = case.branch_ends(k);
            in_service[k] && (hot_bus[f] || hot_bus[t])
        })
        .collect()
}

pub(crate) fn select_outages(
    case: &GridCase,
    topo: &Topology,
    island: IslandId,
    state: &SystemState,
    exposed: &[bool],
    draws: &StageDraws,
    stage: u32,
) -> Vec<OutageEvent> {
    let mut out = Vec::new();
    let branches = topo.branches_of(case, island);
    let mut tripped = vec![false; case.n_branches()];
    for &k in &branches {
        let br = &case.branches()[k];
        let p = failure_prob(state.branch_flow[k], br.f_lim1, br.f_lim2);
        let cause = if p >= 1.0 {
            OutageCause::Emergency
        } else if p > 0.0 && draws.overload[k] < p {
            OutageCause::Overload
        } else {
            continue;
        };
        tripped[k] = true;
        out.push(OutageEvent {
            branch: k + 1,
            stage,
            island,
            cause,
        });
    }
    for &k in &branches {
        if exposed[k] && !tripped[k] && draws.hidden[k] < case.branches()[k].hidden_failure_prob {
            out.push(OutageEvent {
                branch: k + 1,
                stage,
                island,
                cause: OutageCause::Hidden,
            });
        }
    }
    out.sort_by_key(|e| e.branch);
    out
}

/// Dependent outages of one island at one stage.
///
/// Every in-service branch of the island trips with its overload
/// probability; afterwards every branch marked in `exposed` (1-based ids)
/// that is still standing trips with its hidden-failure probability.
pub fn sample_sequent_outages<R: Rng + ?Sized>(
    case: &GridCase,
    topo: &Topology,
    island: IslandId,
    state: &SystemState,
    exposed: &[usize],
    stage: u32,
    rng: &mut R,
) -> Vec<OutageEvent> {
    let mut mask = vec![false; case.n_branches()];
    for &id in exposed {
        if let Some(m) = id.checked_sub(1).and_then(|k| mask.get_mut(k)) {
            *m = topo.in_service[id - 1];
        }
    }
    let draws = StageDraws::sample(case.n_branches(), rng);
    select_outages(case, topo, island, state, &mask, &draws, stage)
}
