use crate::grid::{GridCase, IslandId, Topology};

use super::network::IslandNet;
use super::{dead_island, solve_power_flow, Dispatch, PfOptions, SystemState};

const BALANCE_EPS: f64 = 1e-9;
/// Largest share of demand treated as network losses already carried by
/// the prior generation.
const LOSS_ALLOWANCE: f64 = 0.05;

/// Set-points that balance an island's generation against its served load
/// before the AC solve. Entries outside the island are copied from `prior`.
pub fn rebalance_island(case: &GridCase, topo: &Topology, island: IslandId, prior: &SystemState) -> Dispatch {
    let mut out = Dispatch::from_state(prior);
    let (gens, loads) = SystemState::island_members(case, topo, island);
    let mut on: Vec<usize> = gens.into_iter().filter(|&g| prior.gen_on[g]).collect();
    let demand = prior.served(case, loads.iter().copied());
    let gen = |g: usize| &case.generators[g];

    // too much must-run output: trip units, smallest minimum first
    let mut by_pmin: Vec<usize> = on.iter().copied().filter(|&g| gen(g).p_min > 0.0).collect();
    by_pmin.sort_by(|&a, &b| gen(a).p_min.total_cmp(&gen(b).p_min).then(a.cmp(&b)));
    let mut floor: f64 = on.iter().map(|&g| gen(g).p_min).sum();
    for g in by_pmin {
        if floor <= demand + BALANCE_EPS {
            break;
        }
        floor -= gen(g).p_min;
        on.retain(|&x| x != g);
        out.gen_on[g] = false;
        out.p_gen[g] = 0.0;
    }

    if on.is_empty() {
        for &d in &loads {
            out.shed_fraction[d] = 1.0;
        }
        return out;
    }

    let cap: f64 = on.iter().map(|&g| gen(g).p_max).sum();
    if cap < demand - BALANCE_EPS {
        let keep = cap / demand;
        for &d in &loads {
            out.shed_fraction[d] = 1.0 - (1.0 - prior.shed_fraction[d]) * keep;
        }
        for &g in &on {
            out.p_gen[g] = gen(g).p_max;
        }
        return out;
    }

    for &g in &on {
        out.p_gen[g] = prior.p_gen[g].clamp(gen(g).p_min, gen(g).p_max);
    }
    // generation above demand in the prior state covers the island's losses
    let surplus = on.iter().map(|&g| prior.p_gen[g]).sum::<f64>() - demand;
    let target = (demand + surplus.clamp(0.0, LOSS_ALLOWANCE * demand)).min(cap);
    let delta = target - on.iter().map(|&g| out.p_gen[g]).sum::<f64>();
    if delta.abs() <= BALANCE_EPS {
        return out;
    }
    let room: Vec<f64> = on
        .iter()
        .map(|&g| {
            if delta > 0.0 {
                gen(g).p_max - out.p_gen[g]
            } else {
                out.p_gen[g] - gen(g).p_min
            }
        })
        .collect();
    let total: f64 = room.iter().sum();
    if total > 0.0 {
        let frac = (delta.abs() / total).min(1.0);
        for (&g, r) in on.iter().zip(&room) {
            out.p_gen[g] += delta.signum() * r * frac;
        }
    }
    out
}

/// The island with every load shed and every generator off.
pub fn blackout_island(case: &GridCase, topo: &Topology, island: IslandId, start: &SystemState) -> SystemState {
    let net = IslandNet::build(case, topo, island, &start.gen_on);
    dead_island(case, &net, island, &Dispatch::from_state(start), start)
}

/// Shed the island's loads uniformly in 5% steps, rebalancing and re-solving
/// each time, until the power flow converges.
pub fn collapse_fallback(
    case: &GridCase,
    topo: &Topology,
    island: IslandId,
    targets: &Dispatch,
    start: &SystemState,
    opts: &PfOptions,
) -> SystemState {
    let (_, loads) = SystemState::island_members(case, topo, island);
    for step in 1..=20u32 {
        let keep = 1.0 - 0.05 * step as f64;
        let mut prior = start.clone();
        prior.p_gen.clone_from(&targets.p_gen);
        prior.gen_on.clone_from(&targets.gen_on);
        for &d in &loads {
            prior.shed_fraction[d] = 1.0 - (1.0 - targets.shed_fraction[d]) * keep;
        }
        if step == 20 {
            for &d in &loads {
                prior.shed_fraction[d] = 1.0;
            }
        }
        let t = rebalance_island(case, topo, island, &prior);
        if let Ok(s) = solve_power_flow(case, topo, island, &t, start, opts) {
            log::debug!("island {island} converged after shedding {:.0}%", 100.0 * (1.0 - keep));
            return s;
        }
    }
    blackout_island(case, topo, island, start)
}

/// Rebalance, solve, and fall back to collapse shedding on divergence.
pub fn solve_or_collapse(
    case: &GridCase,
    topo: &Topology,
    island: IslandId,
    prior: &SystemState,
    opts: &PfOptions,
) -> SystemState {
    let targets = rebalance_island(case, topo, island, prior);
    match solve_power_flow(case, topo, island, &targets, prior, opts) {
        Ok(s) => s,
        Err(e) => {
            log::debug!("island {island}: {e}; shedding");
            collapse_fallback(case, topo, island, &targets, prior, opts)
        }
    }
}
