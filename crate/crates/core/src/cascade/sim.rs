use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{exposure, initial_positions, select_outages, CascadeRecord, IslandLoss, OutageCause, OutageEvent, SimulationConfig, StageDraws};
use crate::acpf::{solve_or_collapse, SystemState};
use crate::dispatch::emergent_dispatch;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Workers};
use crate::grid::{case_hash, compute_islands, GridCase, IslandId, Topology};

/// Words of the per-sample stream reserved for each stage.
const STAGE_WORDS: u32 = 24;

/// A case prepared for cascade sampling: the secure pre-contingency
/// operating point and the load it supplies.
#[derive(Debug, Clone)]
pub struct Simulator {
    case: GridCase,
    config: SimulationConfig,
    case_hash: String,
    topo: Topology,
    base: SystemState,
    supplied: f64,
}

impl Simulator {
    /// Solve the intact case from a flat start and dispatch every island
    /// into its limits.
    pub fn new(case: GridCase, config: SimulationConfig) -> Result<Self> {
        config.validate(&case)?;
        let topo = compute_islands(&case, &vec![true; case.n_branches()], None);
        let flat = crate::acpf::PfOptions {
            flat_start: true,
            ..config.pf
        };
        let mut state = SystemState::initial(&case);
        for &island in topo.islands() {
            state = solve_or_collapse(&case, &topo, island, &state, &flat);
            let d = emergent_dispatch(&case, &topo, island, &state, &config.pf, &config.dispatch);
            if !d.feasible {
                log::warn!("island {island} of the intact case cannot be made secure");
            }
            state = d.state;
        }
        let supplied = state.served_load(&case);
        log::info!(
            "operating point: {:.1} of {:.1} MW supplied, losses {:.1} MW",
            supplied,
            case.total_load(),
            state.p_loss
        );
        Ok(Simulator {
            case_hash: case_hash(&case),
            case,
            config,
            topo,
            base: state,
            supplied,
        })
    }

    /// Simulator of `case` started from this simulator's operating point.
    /// `case` may differ from the current case in branch limits only.
    pub fn with_limits_of(&self, case: GridCase) -> Result<Self> {
        let same_limits_aside = case.buses() == self.case.buses()
            && case.generators() == self.case.generators()
            && case.loads() == self.case.loads()
            && case.n_branches() == self.case.n_branches()
            && case.branches().iter().zip(self.case.branches()).all(|(a, b)| {
                let mut a = a.clone();
                a.f_lim1 = b.f_lim1;
                a.f_lim2 = b.f_lim2;
                &a == b
            });
        if !same_limits_aside {
            return Err(Error::InvalidArgument("case differs in more than branch limits".into()));
        }
        self.config.validate(&case)?;
        Ok(Simulator {
            case_hash: case_hash(&case),
            case,
            config: self.config.clone(),
            topo: self.topo.clone(),
            base: self.base.clone(),
            supplied: self.supplied,
        })
    }

    pub fn case(&self) -> &GridCase {
        &self.case
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn case_hash(&self) -> &str {
        &self.case_hash
    }

    pub fn operating_point(&self) -> &SystemState {
        &self.base
    }

    /// Load supplied at the operating point, MW.
    pub fn supplied_load(&self) -> f64 {
        self.supplied
    }

    /// Random stream of one sample, derived from the master seed.
    pub fn stream(&self, sample: u64) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        h.update(sample.to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// Simulate one cascading failure chain.
    pub fn run(&self, sample: u64) -> CascadeRecord {
        let case = &self.case;
        let cfg = &self.config;
        let nb = case.n_branches();
        let mut rng = self.stream(sample);
        let initial = initial_positions(case, &cfg.initial, &mut rng).expect("validated policy");

        let mut in_service = vec![true; nb];
        let mut fail_stage: Vec<Option<u32>> = vec![None; nb];
        let mut events = Vec::new();
        let mut first: Vec<IslandId> = Vec::new();
        for &k in &initial {
            let island = self.topo.island_of_bus[case.branch_ends(k).0];
            events.push(OutageEvent {
                branch: k + 1,
                stage: 0,
                island,
                cause: OutageCause::Initial,
            });
            in_service[k] = false;
            fail_stage[k] = Some(0);
            first.push(island);
        }
        first.sort_unstable();
        first.dedup();
        events.sort_by_key(|e| (e.island, e.branch));

        let mut topo = compute_islands(case, &in_service, Some(&self.topo));
        let mut active = descendants(&topo, &first);
        let mut islands = vec![first];
        let mut state = self.base.clone();
        let mut losses = Vec::new();
        let mut cap_exceeded = false;
        let mut stage = 1u32;
        while !active.is_empty() {
            if stage > cfg.max_stages {
                cap_exceeded = true;
                break;
            }
            rng.set_word_pos(u128::from(stage) << STAGE_WORDS);
            let draws = StageDraws::sample(nb, &mut rng);
            let exposed = exposure(case, &in_service, &fail_stage, stage.saturating_sub(2)..=stage - 1);
            let mut next = Vec::new();
            let mut split = Vec::new();
            for &island in &active {
                let (_, loads) = SystemState::island_members(case, &topo, island);
                let before = state.served(case, loads.iter().copied());
                state = solve_or_collapse(case, &topo, island, &state, &cfg.pf);
                let found = select_outages(case, &topo, island, &state, &exposed, &draws, stage);
                if found.is_empty() {
                    let d = emergent_dispatch(case, &topo, island, &state, &cfg.pf, &cfg.dispatch);
                    state = d.state;
                    if cfg.continue_after_dispatch && d.feasible && still_exposed(case, &topo, island, &in_service, &fail_stage, stage) {
                        next.push(island);
                    }
                } else {
                    split.push(island);
                    events.extend(found);
                }
                let lost = before - state.served(case, loads.iter().copied());
                if lost > 0.0 {
                    losses.push(IslandLoss { island, stage, mw: lost });
                }
            }
            islands.push(active.clone());
            if !split.is_empty() {
                for e in events.iter().filter(|e| e.stage == stage) {
                    in_service[e.branch - 1] = false;
                    fail_stage[e.branch - 1] = Some(stage);
                }
                topo = compute_islands(case, &in_service, Some(&topo));
                let keep: Vec<IslandId> = if cfg.continue_unsplit {
                    split
                } else {
                    split.into_iter().filter(|&i| !topo.islands().contains(&i)).collect()
                };
                next.extend(descendants(&topo, &keep));
            }
            next.sort_unstable();
            next.dedup();
            active = next;
            stage += 1;
        }

        let total_loss = losses.iter().fold(0.0, |a, l| a + l.mw);
        CascadeRecord {
            sample,
            seed: cfg.seed,
            case_hash: self.case_hash.clone(),
            events,
            islands,
            parents: topo.parents().to_vec(),
            losses,
            total_loss,
            cap_exceeded,
        }
    }

    /// Records for samples `0..n_samples`, in sample order.
    pub fn run_batch(&self, workers: Workers) -> Batch {
        self.run_range(0, self.config.n_samples as u64, workers)
    }

    /// Records for samples `start..end`, in sample order.
    pub fn run_range(&self, start: u64, end: u64, workers: Workers) -> Batch {
        let n = end.saturating_sub(start) as usize;
        let records = map_indexed(n, workers, |i| self.run(start + i as u64));
        let summary = BatchSummary::of(&records, self.supplied);
        Batch { records, summary }
    }
}

/// Current islands equal to or descending from any of `roots`.
fn descendants(topo: &Topology, roots: &[IslandId]) -> Vec<IslandId> {
    topo.islands()
        .iter()
        .copied()
        .filter(|&i| roots.iter().any(|&r| topo.descends_from(i, r)))
        .collect()
}

/// Whether an island still holds branches exposed at the next stage.
fn still_exposed(case: &GridCase, topo: &Topology, island: IslandId, in_service: &[bool], fail_stage: &[Option<u32>], stage: u32) -> bool {
    let exposed = exposure(case, in_service, fail_stage, stage.saturating_sub(1)..=stage);
    topo.branches_of(case, island).into_iter().any(|k| exposed[k])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n_samples: usize,
    /// Mean load loss per chain, MW.
    pub cfr: f64,
    pub cap_exceeded: usize,
    /// Load supplied at the operating point, MW.
    pub supplied_load: f64,
}

impl BatchSummary {
    pub fn of(records: &[CascadeRecord], supplied_load: f64) -> Self {
        let n = records.len();
        let total: f64 = records.iter().map(|r| r.total_loss).sum();
        BatchSummary {
            n_samples: n,
            cfr: if n == 0 { 0.0 } else { total / n as f64 },
            cap_exceeded: records.iter().filter(|r| r.cap_exceeded).count(),
            supplied_load,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub records: Vec<CascadeRecord>,
    pub summary: BatchSummary,
}

/// One chain on a freshly prepared case.
pub fn run_cascade(case: &GridCase, config: &SimulationConfig, sample: u64) -> Result<CascadeRecord> {
    Ok(Simulator::new(case.clone(), config.clone())?.run(sample))
}

/// `config.n_samples` chains on a freshly prepared case.
pub fn run_batch(case: &GridCase, config: &SimulationConfig, workers: Workers) -> Result<Batch> {
    Ok(Simulator::new(case.clone(), config.clone())?.run_batch(workers))
}
