//! Emergent dispatch: the optimal load-shedding program that pulls an island
//! back inside its flow and voltage limits, solved by successive linear
//! programming around the AC operating point.

mod sensitivity;

use faer::prelude::*;
use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem, Variable};
use serde::{Deserialize, Serialize};

use crate::acpf::network::IslandNet;
use crate::acpf::{self, Dispatch, PfOptions, Solved, SystemState};
use crate::grid::{GridCase, IslandId, Topology};
use sensitivity::{flow_gradient, Gradient};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispatchOptions {
    pub max_outer: usize,
    /// Fraction of each LP generator move actually applied.
    pub damping: f64,
    /// Flow overshoot tolerated when checking security, MW.
    pub flow_tol_mw: f64,
    /// Voltage overshoot tolerated when checking security, p.u.
    pub v_tol: f64,
    /// Flows above this fraction of `f_lim1` enter the LP.
    pub monitor_ratio: f64,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        DispatchOptions {
            max_outer: 20,
            damping: 0.7,
            flow_tol_mw: 1e-3,
            v_tol: 1e-6,
            monitor_ratio: 0.9,
        }
    }
}

/// Constraint violations of one island at a state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Violations {
    /// Branch positions with `f_l > f_lim1`.
    pub overloaded: Vec<usize>,
    /// Bus positions outside `[v_min, v_max]`.
    pub voltage: Vec<usize>,
}

impl Violations {
    pub fn is_empty(&self) -> bool {
        self.overloaded.is_empty() && self.voltage.is_empty()
    }
}

pub fn violations(case: &GridCase, topo: &Topology, island: IslandId, state: &SystemState, opts: &DispatchOptions) -> Violations {
    let mut out = Violations::default();
    for k in topo.branches_of(case, island) {
        if state.branch_flow[k] > case.branches[k].f_lim1 + opts.flow_tol_mw {
            out.overloaded.push(k);
        }
    }
    for b in topo.buses_of(island) {
        let v = state.v_mag[b];
        let bus = &case.buses[b];
        if v > 0.0 && (v < bus.v_min - opts.v_tol || v > bus.v_max + opts.v_tol) {
            out.voltage.push(b);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    /// Retained fraction per load.
    pub k_d: Vec<f64>,
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub v_mag: Vec<f64>,
    /// Served island load, MW.
    pub objective: f64,
    pub feasible: bool,
    pub iterations: usize,
    /// The re-solved AC state at the returned dispatch.
    pub state: SystemState,
}

impl DispatchSolution {
    fn from_state(case: &GridCase, topo: &Topology, island: IslandId, state: SystemState, feasible: bool, iterations: usize) -> Self {
        let (_, loads) = SystemState::island_members(case, topo, island);
        DispatchSolution {
            k_d: state.shed_fraction.iter().map(|s| 1.0 - s).collect(),
            p_gen: state.p_gen.clone(),
            q_gen: state.q_gen.clone(),
            v_mag: state.v_mag.clone(),
            objective: state.served(case, loads),
            feasible,
            iterations,
            state,
        }
    }
}

/// Shed the least load that restores every flow and voltage limit of the
/// island, redispatching generators within their bounds.
pub fn emergent_dispatch(
    case: &GridCase,
    topo: &Topology,
    island: IslandId,
    state: &SystemState,
    pf: &PfOptions,
    opts: &DispatchOptions,
) -> DispatchSolution {
    if violations(case, topo, island, state, opts).is_empty() {
        return DispatchSolution::from_state(case, topo, island, state.clone(), true, 0);
    }
    let (_, loads) = SystemState::island_members(case, topo, island);
    let cap: Vec<f64> = state.shed_fraction.iter().map(|s| 1.0 - s).collect();

    let mut current = acpf::solve_island(case, topo, island, &Dispatch::from_state(state), state, pf).ok();
    // branches that were ever overloaded stay in the LP
    let mut watch = vec![false; case.n_branches()];
    let mut trust = 1.0;
    let mut worst = f64::INFINITY;
    for it in 1..=opts.max_outer {
        let Some((cur, solved)) = current.take() else {
            break;
        };
        let excess = excess(case, topo, island, &cur, opts, &mut watch);
        if excess >= worst {
            trust *= 0.5;
        }
        worst = worst.min(excess);
        let Some(targets) = slp_step(case, &cur, &solved, &loads, &cap, &watch, trust, pf, opts) else {
            break;
        };
        let next = match acpf::solve_island(case, topo, island, &targets, &cur, pf) {
            Ok(x) => x,
            Err(_) => {
                let s = acpf::collapse_fallback(case, topo, island, &targets, &cur, pf);
                match acpf::solve_island(case, topo, island, &Dispatch::from_state(&s), &s, pf) {
                    Ok(x) => x,
                    Err(_) => break,
                }
            }
        };
        if violations(case, topo, island, &next.0, opts).is_empty() {
            return DispatchSolution::from_state(case, topo, island, next.0, true, it);
        }
        current = Some(next);
    }

    // last resort: drop every load of the island
    let mut prior = state.clone();
    for &d in &loads {
        prior.shed_fraction[d] = 1.0;
    }
    let s = acpf::solve_or_collapse(case, topo, island, &prior, pf);
    if violations(case, topo, island, &s, opts).is_empty() {
        return DispatchSolution::from_state(case, topo, island, s, true, opts.max_outer);
    }
    let dark = acpf::blackout_island(case, topo, island, state);
    DispatchSolution::from_state(case, topo, island, dark, false, opts.max_outer)
}

/// Largest relative limit violation of the island; marks overloaded
/// branches in `watch`.
fn excess(case: &GridCase, topo: &Topology, island: IslandId, state: &SystemState, opts: &DispatchOptions, watch: &mut [bool]) -> f64 {
    let v = violations(case, topo, island, state, opts);
    let mut worst: f64 = 0.0;
    for &k in &v.overloaded {
        watch[k] = true;
        worst = worst.max(state.branch_flow[k] / case.branches[k].f_lim1 - 1.0);
    }
    for &b in &v.voltage {
        let bus = &case.buses[b];
        let vm = state.v_mag[b];
        worst = worst.max(10.0 * (bus.v_min - vm).max(vm - bus.v_max));
    }
    worst
}

const FLOW_PENALTY: f64 = 1e4;
/// Objective cost per MW of generator movement, against 1 per MW shed.
const MOVE_COST: f64 = 1e-3;
const VOLTAGE_PENALTY: f64 = 1e7;
const FLOW_MARGIN_MW: f64 = 0.5;
const V_MARGIN: f64 = 1e-4;

/// Sum duplicate variables into one sorted expression.
fn merged(mut terms: Vec<(Variable, f64)>) -> LinearExpr {
    terms.sort_by_key(|t| t.0.idx());
    let mut e = LinearExpr::empty();
    let mut i = 0;
    while i < terms.len() {
        let (var, mut c) = terms[i];
        i += 1;
        while i < terms.len() && terms[i].0 == var {
            c += terms[i].1;
            i += 1;
        }
        if c != 0.0 {
            e.add(var, c);
        }
    }
    e
}

/// One linearized shedding/redispatch step; `None` when the LP fails.
/// Generator and load moves are bounded by `trust` times their nominal
/// step.
#[allow(clippy::too_many_arguments)]
fn slp_step(
    case: &GridCase,
    cur: &SystemState,
    solved: &Solved,
    loads: &[usize],
    cap: &[f64],
    watch: &[bool],
    trust: f64,
    pf: &PfOptions,
    opts: &DispatchOptions,
) -> Option<Dispatch> {
    let net = &solved.net;
    let setup = &solved.setup;
    let base = case.base_mva();
    let lu = solved.jacobian_lu().ok()?;

    // monitored quantities: gradients with respect to (theta, V, lambda)
    let mut grads: Vec<Gradient> = Vec::new();
    let lambda_row = Gradient::unit(setup.lambda_col());
    grads.push(lambda_row);
    struct Limit {
        value: f64,
        lo: f64,
        hi: f64,
        penalty: f64,
    }
    let mut limits = vec![Limit {
        value: 0.0,
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
        penalty: 0.0,
    }];
    let vc = IslandNet::phasors(&solved.v, &solved.th);
    for (idx, &k) in net.branches.iter().enumerate() {
        let lim = case.branches[k].f_lim1;
        let f = cur.branch_flow[k];
        if watch[k] || f > opts.monitor_ratio * lim {
            grads.push(flow_gradient(net, setup, idx, &vc, base, pf.flow));
            limits.push(Limit {
                value: f,
                lo: f64::NEG_INFINITY,
                hi: lim - FLOW_MARGIN_MW,
                penalty: FLOW_PENALTY,
            });
        }
    }
    for (i, &b) in net.buses.iter().enumerate() {
        let Some(c) = setup.v_col(i) else { continue };
        let bus = &case.buses[b];
        let v = solved.v[i];
        if v < bus.v_min + 0.02 || v > bus.v_max - 0.02 {
            grads.push(Gradient::unit(c));
            limits.push(Limit {
                value: v,
                lo: bus.v_min + V_MARGIN,
                hi: bus.v_max - V_MARGIN,
                penalty: VOLTAGE_PENALTY,
            });
        }
    }

    // adjoint solves: mu_m = J^-T grad_m
    let dim = setup.dim();
    let mut mu = Mat::<f64>::zeros(dim, grads.len());
    for (m, g) in grads.iter().enumerate() {
        for &(c, v) in &g.entries {
            mu[(c, m)] += v;
        }
    }
    lu.solve_transpose_in_place(mu.as_mut());

    let mut lp = Problem::new(OptimizationDirection::Maximize);
    // load controls
    let mut load_vars = Vec::new();
    for &d in loads {
        let l = &case.loads[d];
        let k = 1.0 - cur.shed_fraction[d];
        if cap[d] <= 0.0 || (l.p == 0.0 && l.q == 0.0) {
            continue;
        }
        // later loads cost marginally more, so ties shed lower ids first
        let c = l.p.max(1e-6) * (1.0 + 1e-9 * (d as f64 + 1.0));
        let var = lp.add_var(c, (-k.min(0.5 * trust), (cap[d] - k).clamp(0.0, 0.5 * trust)));
        let i = net.local[case.load_bus(d)];
        load_vars.push((d, i, var));
    }
    // generator set-point controls
    let gen_local: Vec<usize> = net.gens.iter().map(|&g| net.local[case.gen_bus(g)]).collect();
    let mut gen_vars = Vec::new();
    for (gi, &g) in net.gens.iter().enumerate() {
        let gen = &case.generators[g];
        let p = cur.p_gen[g];
        let trust = trust * (0.2 * gen.p_max).max(20.0);
        let lo = (gen.p_min - p).max(-trust).min(0.0);
        let hi = (gen.p_max - p).min(trust).max(0.0);
        let up = lp.add_var(-MOVE_COST, (0.0, hi));
        let down = lp.add_var(-MOVE_COST, (0.0, -lo));
        gen_vars.push((gi, up, down));
    }
    // d(quantity)/d(control) for monitored quantity m
    let sens_load = |m: usize, d: usize, i: usize| {
        let l = &case.loads[d];
        let mut s = -mu[(i, m)] * l.p / base;
        if let Some(r) = setup.q_row(i) {
            s -= mu[(r, m)] * l.q / base;
        }
        s
    };
    let sens_gen = |m: usize, gi: usize| mu[(gen_local[gi], m)] / base;
    let expr_for = |m: usize, scale: f64| {
        let mut e: Vec<(Variable, f64)> = Vec::with_capacity(load_vars.len() + gen_vars.len() + 1);
        e.extend(load_vars.iter().map(|&(d, i, var)| (var, scale * sens_load(m, d, i))));
        for &(gi, up, down) in &gen_vars {
            let c = scale * sens_gen(m, gi);
            e.push((up, c));
            e.push((down, -c));
        }
        e
    };

    // generator outputs including their slack share stay in bounds
    for (gi, &g) in net.gens.iter().enumerate() {
        let share = solved.share[gi];
        if share == 0.0 {
            continue;
        }
        let gen = &case.generators[g];
        let p = cur.p_gen[g];
        let mut e = expr_for(0, share * base);
        e.push((gen_vars[gi].1, 1.0));
        e.push((gen_vars[gi].2, -1.0));
        let e = merged(e);
        lp.add_constraint(e.clone(), ComparisonOp::Le, gen.p_max - p);
        lp.add_constraint(e, ComparisonOp::Ge, gen.p_min - p);
    }
    for (m, lim) in limits.iter().enumerate().skip(1) {
        let slack = lp.add_var(-lim.penalty, (0.0, f64::INFINITY));
        if lim.hi.is_finite() {
            let mut e = expr_for(m, 1.0);
            e.push((slack, -1.0));
            lp.add_constraint(merged(e), ComparisonOp::Le, lim.hi - lim.value);
        }
        if lim.lo.is_finite() {
            let mut e = expr_for(m, 1.0);
            e.push((slack, 1.0));
            lp.add_constraint(merged(e), ComparisonOp::Ge, lim.lo - lim.value);
        }
    }
    let sol = match lp.solve() {
        Ok(x) => x.into_solution().ok()?,
        Err(e) => {
            log::debug!("dispatch LP failed: {e}");
            return None;
        }
    };

    let mut t = Dispatch::from_state(cur);
    for &(d, _, var) in &load_vars {
        let k = (1.0 - cur.shed_fraction[d] + sol.var_value(var)).clamp(0.0, cap[d]);
        t.shed_fraction[d] = 1.0 - k;
    }
    for &(gi, up, down) in &gen_vars {
        let g = net.gens[gi];
        let gen = &case.generators[g];
        let step = sol.var_value(up) - sol.var_value(down);
        t.p_gen[g] = (cur.p_gen[g] + opts.damping * step).clamp(gen.p_min, gen.p_max);
    }
    Some(t)
}
