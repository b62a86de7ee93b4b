//! AC power flow with distributed loss sharing, pre-solve rebalancing and
//! the voltage-collapse shedding fallback.

pub(crate) mod network;
pub(crate) mod newton;
mod rebalance;

use serde::{Deserialize, Serialize};

use crate::grid::{BusKind, GridCase, IslandId, Topology};
use network::IslandNet;
use newton::Setup;

pub use rebalance::{blackout_island, collapse_fallback, rebalance_island, solve_or_collapse};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum PfError {
    #[error("power flow diverged after {iterations} iterations (mismatch {mismatch:.3e} p.u.)")]
    Diverged { iterations: usize, mismatch: f64 },
    #[error("singular power-flow Jacobian")]
    Singular,
}

/// How the active-power mismatch of an island is absorbed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlackMode {
    /// Every generator takes `r_g` of the island's slack.
    #[default]
    Distributed,
    /// The case's reference bus alone balances the island; no clipping and
    /// no reactive limits on that bus.
    Single,
}

/// Quantity compared against branch limits, taken at the more loaded end.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowMeasure {
    /// Active power magnitude, MW.
    #[default]
    Active,
    /// Apparent power, MVA.
    Apparent,
}

impl FlowMeasure {
    /// Flow of a branch from the complex powers entering it at both ends.
    pub fn of(self, sf: num_complex::Complex64, st: num_complex::Complex64) -> f64 {
        match self {
            FlowMeasure::Active => sf.re.abs().max(st.re.abs()),
            FlowMeasure::Apparent => sf.norm().max(st.norm()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PfOptions {
    /// Max-norm mismatch tolerance, p.u.
    pub tol: f64,
    pub max_iter: usize,
    pub slack: SlackMode,
    pub enforce_q_limits: bool,
    /// Ignore the voltages of the start state.
    pub flat_start: bool,
    pub flow: FlowMeasure,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tol: 1e-8,
            max_iter: 30,
            slack: SlackMode::Distributed,
            enforce_q_limits: true,
            flat_start: false,
            flow: FlowMeasure::Active,
        }
    }
}

/// Generator set-points and load shedding fed to a power-flow solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    /// MW per generator.
    pub p_gen: Vec<f64>,
    pub gen_on: Vec<bool>,
    /// `1 - k_d` per load.
    pub shed_fraction: Vec<f64>,
}

impl Dispatch {
    pub fn from_state(state: &SystemState) -> Self {
        Dispatch {
            p_gen: state.p_gen.clone(),
            gen_on: state.gen_on.clone(),
            shed_fraction: state.shed_fraction.clone(),
        }
    }
}

/// Electrical snapshot of the whole system. A solve updates the entries of
/// one island and carries every other entry over from its start state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    /// Island most recently solved.
    pub island: IslandId,
    /// Per bus, p.u.; zero on de-energized buses.
    pub v_mag: Vec<f64>,
    /// Per bus, radians.
    pub v_ang: Vec<f64>,
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub gen_on: Vec<bool>,
    pub shed_fraction: Vec<f64>,
    /// Per branch, MVA at the more loaded end.
    pub branch_flow: Vec<f64>,
    /// Losses of the solved island, MW.
    pub p_loss: f64,
    pub converged: bool,
    /// Newton iterations of the final solve.
    pub iterations: usize,
    pub mismatch: f64,
}

impl SystemState {
    /// Flat start at the case's scheduled dispatch with no shedding.
    pub fn initial(case: &GridCase) -> Self {
        SystemState {
            island: 0,
            v_mag: vec![1.0; case.n_buses()],
            v_ang: vec![0.0; case.n_buses()],
            p_gen: case.generators.iter().map(|g| g.p).collect(),
            q_gen: case.generators.iter().map(|g| g.q).collect(),
            gen_on: vec![true; case.generators.len()],
            shed_fraction: vec![0.0; case.loads.len()],
            branch_flow: vec![0.0; case.n_branches()],
            p_loss: 0.0,
            converged: false,
            iterations: 0,
            mismatch: 0.0,
        }
    }

    /// Served active load, MW, over the given loads.
    pub fn served(&self, case: &GridCase, loads: impl IntoIterator<Item = usize>) -> f64 {
        loads
            .into_iter()
            .map(|d| (1.0 - self.shed_fraction[d]) * case.loads[d].p)
            .sum()
    }

    /// Total served active load, MW.
    pub fn served_load(&self, case: &GridCase) -> f64 {
        self.served(case, 0..case.loads.len())
    }

    /// Generator and load positions located in an island.
    pub fn island_members(case: &GridCase, topo: &Topology, island: IslandId) -> (Vec<usize>, Vec<usize>) {
        let gens = (0..case.generators.len())
            .filter(|&g| topo.island_of_bus[case.gen_bus(g)] == island)
            .collect();
        let loads = (0..case.loads.len())
            .filter(|&d| topo.island_of_bus[case.load_bus(d)] == island)
            .collect();
        (gens, loads)
    }
}

/// Converged island solution kept for sensitivity analysis.
pub(crate) struct Solved {
    pub net: IslandNet,
    pub setup: Setup,
    pub v: Vec<f64>,
    pub th: Vec<f64>,
    /// Slack weight per entry of `net.gens`, summing to one over participants.
    pub share: Vec<f64>,
}

impl Solved {
    /// LU factors of the power-flow Jacobian at the solution.
    pub fn jacobian_lu(&self) -> Result<faer::sparse::linalg::solvers::Lu<usize, f64>, PfError> {
        let inj = newton::injections(&self.net, &self.v, &self.th);
        let mut jac = newton::Jacobian::new(&self.net, &self.setup)?;
        jac.factor(&self.net, &self.setup, &inj, &self.v)
    }
}

pub(crate) fn solve_island(
    case: &GridCase,
    topo: &Topology,
    island: IslandId,
    targets: &Dispatch,
    start: &SystemState,
    opts: &PfOptions,
) -> Result<(SystemState, Solved), PfError> {
    let net = IslandNet::build(case, topo, island, &targets.gen_on);
    solve_on(case, net, island, targets, start, opts)
}

/// Solve the AC power flow of one island at the given dispatch.
pub fn solve_power_flow(
    case: &GridCase,
    topo: &Topology,
    island: IslandId,
    targets: &Dispatch,
    start: &SystemState,
    opts: &PfOptions,
) -> Result<SystemState, PfError> {
    let net = IslandNet::build(case, topo, island, &targets.gen_on);
    solve_on(case, net, island, targets, start, opts).map(|(s, _)| s)
}

fn copy_island_targets(case: &GridCase, net: &IslandNet, targets: &Dispatch, state: &mut SystemState) {
    for g in 0..case.generators.len() {
        if net.local[case.gen_bus(g)] != usize::MAX {
            state.gen_on[g] = targets.gen_on[g];
            state.p_gen[g] = if targets.gen_on[g] { targets.p_gen[g] } else { 0.0 };
            if !targets.gen_on[g] {
                state.q_gen[g] = 0.0;
            }
        }
    }
    for &d in &net.loads {
        state.shed_fraction[d] = targets.shed_fraction[d];
    }
}

pub(crate) fn dead_island(case: &GridCase, net: &IslandNet, island: IslandId, targets: &Dispatch, start: &SystemState) -> SystemState {
    let mut s = start.clone();
    s.island = island;
    copy_island_targets(case, net, targets, &mut s);
    for &b in &net.buses {
        s.v_mag[b] = 0.0;
        s.v_ang[b] = 0.0;
    }
    for g in 0..case.generators.len() {
        if net.local[case.gen_bus(g)] != usize::MAX {
            s.gen_on[g] = false;
            s.p_gen[g] = 0.0;
            s.q_gen[g] = 0.0;
        }
    }
    for &d in &net.loads {
        s.shed_fraction[d] = 1.0;
    }
    for &k in &net.branches {
        s.branch_flow[k] = 0.0;
    }
    s.p_loss = 0.0;
    s.converged = true;
    s.iterations = 0;
    s.mismatch = 0.0;
    s
}

pub(crate) fn solve_on(
    case: &GridCase,
    net: IslandNet,
    island: IslandId,
    targets: &Dispatch,
    start: &SystemState,
    opts: &PfOptions,
) -> Result<(SystemState, Solved), PfError> {
    if net.gens.is_empty() {
        let s = dead_island(case, &net, island, targets, start);
        let setup = Setup::new(vec![false; net.n()], 0, vec![0.0; net.n()], vec![0.0; net.n()], vec![0.0; net.n()]);
        let n = net.n();
        return Ok((
            s,
            Solved {
                net,
                setup,
                v: vec![0.0; n],
                th: vec![0.0; n],
                share: Vec::new(),
            },
        ));
    }
    let base = case.base_mva();
    let n = net.n();
    let gens = &net.gens;
    let gen_local: Vec<usize> = gens.iter().map(|&g| net.local[case.gen_bus(g)]).collect();

    let (mut p_load, mut q_load) = (vec![0.0; n], vec![0.0; n]);
    for &d in &net.loads {
        let l = &case.loads[d];
        let k = 1.0 - targets.shed_fraction[d];
        let i = net.local[case.load_bus(d)];
        p_load[i] += k * l.p;
        q_load[i] += k * l.q;
    }
    let (mut q_hi, mut q_lo) = (vec![0.0; n], vec![0.0; n]);
    let mut vg = vec![f64::NAN; n];
    let mut pv = vec![false; n];
    for (gi, &g) in gens.iter().enumerate() {
        let i = gen_local[gi];
        let gen = &case.generators[g];
        q_hi[i] += gen.q_max;
        q_lo[i] += gen.q_min;
        if !pv[i] {
            vg[i] = gen.vg;
        }
        pv[i] = true;
    }

    let largest = (0..gens.len())
        .max_by(|&a, &b| {
            let (pa, pb) = (case.generators[gens[a]].p_max, case.generators[gens[b]].p_max);
            pa.partial_cmp(&pb).unwrap().then(gens[b].cmp(&gens[a]))
        })
        .unwrap();
    let ref_bus = match opts.slack {
        SlackMode::Single => net
            .buses
            .iter()
            .position(|&b| case.buses[b].kind == BusKind::Ref && pv[net.local[b]])
            .unwrap_or(gen_local[largest]),
        SlackMode::Distributed => gen_local[largest],
    };

    let mut p_target: Vec<f64> = gens.iter().map(|&g| targets.p_gen[g]).collect();
    let fleet: f64 = case.generators.iter().map(|g| g.p_max.max(0.0)).sum();
    let weight = |g: usize| {
        let gen = &case.generators[g];
        gen.slack_coeff.unwrap_or(gen.p_max.max(0.0) / fleet.max(f64::MIN_POSITIVE))
    };
    let mut participates: Vec<bool> = match opts.slack {
        SlackMode::Single => gen_local.iter().map(|&i| i == ref_bus).collect(),
        SlackMode::Distributed => {
            let w: Vec<f64> = gens.iter().map(|&g| weight(g)).collect();
            if w.iter().any(|&x| x > 0.0) {
                w.iter().map(|&x| x > 0.0).collect()
            } else {
                vec![true; gens.len()]
            }
        }
    };

    let (mut v, mut th) = (vec![1.0; n], vec![0.0; n]);
    for (i, &b) in net.buses.iter().enumerate() {
        if !opts.flat_start && start.v_mag[b] > 0.0 {
            v[i] = start.v_mag[b];
            th[i] = start.v_ang[b];
        }
        if pv[i] {
            v[i] = vg[i];
        }
    }
    let mut q_fixed = vec![0.0; n];
    let mut q_limited = vec![false; n];
    let mut lambda = 0.0;

    let mut rounds = 0;
    let (setup, share, result) = loop {
        rounds += 1;
        let share = slack_share(case, gens, &participates, opts.slack, &weight);
        let mut r = vec![0.0; n];
        for (gi, &s) in share.iter().enumerate() {
            r[gen_local[gi]] += s;
        }
        if r.iter().all(|&x| x == 0.0) {
            return Err(PfError::Singular);
        }
        let mut p_spec: Vec<f64> = p_load.iter().map(|&p| -p / base).collect();
        for (gi, &p) in p_target.iter().enumerate() {
            p_spec[gen_local[gi]] += p / base;
        }
        let q_spec: Vec<f64> = (0..n).map(|i| (q_fixed[i] - q_load[i]) / base).collect();
        let setup = Setup::new(pv.clone(), ref_bus, r, p_spec, q_spec);
        let res = newton::solve(&net, &setup, &mut v, &mut th, &mut lambda, opts.tol, opts.max_iter)?;
        if rounds > 2 * gens.len() + 4 {
            break (setup, share, res);
        }

        let mut changed = false;
        if opts.enforce_q_limits {
            let inj = newton::injections(&net, &v, &th);
            for i in 0..n {
                if !pv[i] || (opts.slack == SlackMode::Single && i == ref_bus) {
                    continue;
                }
                let qg = inj.q[i] * base + q_load[i];
                if qg > q_hi[i] {
                    q_fixed[i] = q_hi[i];
                } else if qg < q_lo[i] {
                    q_fixed[i] = q_lo[i];
                } else {
                    continue;
                }
                pv[i] = false;
                q_limited[i] = true;
                changed = true;
            }
        }
        if !changed && opts.slack == SlackMode::Distributed {
            for (gi, &g) in gens.iter().enumerate() {
                if !participates[gi] {
                    continue;
                }
                let gen = &case.generators[g];
                let p = p_target[gi] + share[gi] * lambda * base;
                if p > gen.p_max + 1e-9 {
                    p_target[gi] = gen.p_max;
                } else if p < gen.p_min - 1e-9 {
                    p_target[gi] = gen.p_min;
                } else {
                    continue;
                }
                participates[gi] = false;
                changed = true;
            }
        }
        if !changed {
            break (setup, share, res);
        }
    };

    let mut state = start.clone();
    state.island = island;
    copy_island_targets(case, &net, targets, &mut state);
    let inj = newton::injections(&net, &v, &th);
    for (i, &b) in net.buses.iter().enumerate() {
        state.v_mag[b] = v[i];
        state.v_ang[b] = th[i];
    }
    let mut bus_q: Vec<f64> = (0..n).map(|i| inj.q[i] * base + q_load[i]).collect();
    for (gi, &g) in gens.iter().enumerate() {
        state.p_gen[g] = p_target[gi] + share[gi] * lambda * base;
    }
    // reactive output split by capability range within each bus
    let mut range = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (gi, &g) in gens.iter().enumerate() {
        let gen = &case.generators[g];
        range[gen_local[gi]] += gen.q_max - gen.q_min;
        count[gen_local[gi]] += 1;
    }
    for (gi, &g) in gens.iter().enumerate() {
        let i = gen_local[gi];
        let gen = &case.generators[g];
        state.q_gen[g] = if q_limited[i] {
            if q_fixed[i] == q_hi[i] {
                gen.q_max
            } else {
                gen.q_min
            }
        } else if range[i] > 0.0 {
            gen.q_min + (bus_q[i] - q_lo[i]) * (gen.q_max - gen.q_min) / range[i]
        } else {
            bus_q[i] / count[i] as f64
        };
    }
    bus_q.clear();
    let vc = IslandNet::phasors(&v, &th);
    for (idx, &k) in net.branches.iter().enumerate() {
        let (sf, st) = net.branch_power(idx, &vc);
        state.branch_flow[k] = opts.flow.of(sf, st) * base;
    }
    state.p_loss = inj.p.iter().sum::<f64>() * base;
    state.converged = true;
    state.iterations = result.iterations;
    state.mismatch = result.mismatch;
    Ok((
        state,
        Solved {
            net,
            setup,
            v,
            th,
            share,
        },
    ))
}

fn slack_share(
    case: &GridCase,
    gens: &[usize],
    participates: &[bool],
    mode: SlackMode,
    weight: &impl Fn(usize) -> f64,
) -> Vec<f64> {
    let w: Vec<f64> = gens
        .iter()
        .zip(participates)
        .map(|(&g, &on)| match (on, mode) {
            (false, _) => 0.0,
            (true, SlackMode::Single) => case.generators[g].p_max.max(1e-9),
            (true, SlackMode::Distributed) => weight(g),
        })
        .collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter().map(|x| x / total).collect()
    } else {
        let k = participates.iter().filter(|&&p| p).count();
        participates.iter().map(|&p| if p { 1.0 / k.max(1) as f64 } else { 0.0 }).collect()
    }
}
