//! Random small cases and independent reference implementations shared by
//! the oracle tests and the acceptance target.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use gridcfc::acpf::{solve_power_flow, Dispatch, PfOptions, SlackMode, SystemState};
use gridcfc::grid::{compute_islands, load_case, CaseFormat};
use serde::Deserialize;

use gridcfc::grid::{Branch, Bus, BusKind, GridCase, Generator, Load};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bus(id: u32) -> Bus {
    Bus {
        id,
        kind: if id == 1 { BusKind::Ref } else { BusKind::Pq },
        gs: 0.0,
        bs: 0.0,
        base_kv: 138.0,
        vm: 1.0,
        va: 0.0,
        v_min: 0.9,
        v_max: 1.1,
    }
}

pub fn branch(id: usize, from: u32, to: u32, x: f64, lim: f64) -> Branch {
    Branch {
        id,
        from_bus: from,
        to_bus: to,
        r: 0.0,
        x,
        b_shunt: 0.0,
        tap: 1.0,
        shift: 0.0,
        f_lim1: lim,
        f_lim2: lim * 1.5,
        hidden_failure_prob: 0.01,
    }
}

pub fn generator(id: usize, bus: u32, p: f64, p_max: f64) -> Generator {
    Generator {
        id,
        bus,
        p,
        q: 0.0,
        p_min: 0.0,
        p_max,
        q_min: -999.0,
        q_max: 999.0,
        vg: 1.0,
        slack_coeff: None,
    }
}

/// Connected case of at most `max_bus` buses: a random spanning tree plus
/// extra branches (parallel ones allowed), random reactances and limits,
/// distinct generator capacities and random loads.
pub fn random_case(seed: u64, max_bus: u32) -> GridCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_bus);
    let mut ends = Vec::new();
    for b in 2..=n {
        ends.push((rng.random_range(1..b), b));
    }
    let extra = rng.random_range(0..=n as usize);
    for _ in 0..extra {
        let f = rng.random_range(1..=n);
        let t = rng.random_range(1..=n);
        if f != t {
            ends.push((f, t));
        }
    }
    let branches = ends
        .iter()
        .enumerate()
        .map(|(k, &(f, t))| {
            let mut br = branch(k + 1, f, t, rng.random_range(0.02..0.4), rng.random_range(50.0..300.0));
            if rng.random_bool(0.2) {
                br.tap = rng.random_range(0.95..1.05);
            }
            br
        })
        .collect();
    let mut gens = Vec::new();
    let mut loads = Vec::new();
    for b in 1..=n {
        if b == 1 || rng.random_bool(0.3) {
            let id = gens.len() + 1;
            gens.push(generator(id, b, 0.0, 100.0 + 37.0 * id as f64 + rng.random_range(0.0..1.0)));
        }
        if rng.random_bool(0.6) {
            loads.push(Load {
                id: loads.len() + 1,
                bus: b,
                p: rng.random_range(1.0..120.0),
                q: 0.0,
            });
        }
    }
    GridCase::new("random", 100.0, (1..=n).map(bus).collect(), branches, gens, loads).unwrap()
}

fn positions(case: &GridCase) -> Vec<(usize, usize)> {
    case.branches()
        .iter()
        .map(|b| (case.bus_index(b.from_bus).unwrap(), case.bus_index(b.to_bus).unwrap()))
        .collect()
}

/// Hop betweenness by listing every shortest path of every unordered pair
/// explicitly. Terms are summed per source, then across sources.
pub fn betweenness_by_enumeration(case: &GridCase) -> Vec<f64> {
    let n = case.n_buses();
    let ends = positions(case);
    let mut total = vec![0.0; ends.len()];
    for s in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &(a, b) in &ends {
                for (p, q) in [(a, b), (b, a)] {
                    if p == v && dist[q] == usize::MAX {
                        dist[q] = dist[v] + 1;
                        queue.push_back(q);
                    }
                }
            }
        }
        let mut row = vec![0.0; ends.len()];
        for t in s + 1..n {
            if dist[t] == usize::MAX {
                continue;
            }
            let mut paths: Vec<Vec<usize>> = Vec::new();
            let mut stack = vec![(s, Vec::new())];
            while let Some((v, used)) = stack.pop() {
                if used.len() == dist[t] {
                    if v == t {
                        paths.push(used);
                    }
                    continue;
                }
                for (k, &(a, b)) in ends.iter().enumerate() {
                    for (p, q) in [(a, b), (b, a)] {
                        if p == v && dist[q] == dist[v] + 1 {
                            let mut next = used.clone();
                            next.push(k);
                            stack.push((q, next));
                        }
                    }
                }
            }
            let sigma = paths.len() as u128;
            for (k, r) in row.iter_mut().enumerate() {
                let through = paths.iter().filter(|p| p.contains(&k)).count() as u128;
                if through > 0 {
                    *r += through as f64 / sigma as f64;
                }
            }
        }
        for (a, x) in total.iter_mut().zip(row) {
            *a += x;
        }
    }
    total
}

/// Shift factors of a connected case by dense matrix inversion, slack at
/// the bus of the largest generator.
pub fn shift_factors_dense(case: &GridCase) -> DMatrix<f64> {
    let n = case.n_buses();
    let ends = positions(case);
    let slack = case
        .generators()
        .iter()
        .max_by(|a, b| a.p_max.total_cmp(&b.p_max))
        .map(|g| case.bus_index(g.bus).unwrap())
        .unwrap();
    let b: Vec<f64> = case.branches().iter().map(|br| 1.0 / (br.x * br.tap)).collect();
    let mut full = DMatrix::<f64>::zeros(n, n);
    for (k, &(f, t)) in ends.iter().enumerate() {
        full[(f, f)] += b[k];
        full[(t, t)] += b[k];
        full[(f, t)] -= b[k];
        full[(t, f)] -= b[k];
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let red = full.select_rows(&keep).select_columns(&keep);
    let inv = red.try_inverse().expect("reduced susceptance matrix is singular");
    let mut x = DMatrix::<f64>::zeros(n, n);
    for (a, &i) in keep.iter().enumerate() {
        for (c, &j) in keep.iter().enumerate() {
            x[(i, j)] = inv[(a, c)];
        }
    }
    let mut sf = DMatrix::<f64>::zeros(ends.len(), n);
    for (k, &(f, t)) in ends.iter().enumerate() {
        for i in 0..n {
            sf[(k, i)] = b[k] * (x[(f, i)] - x[(t, i)]);
        }
    }
    sf
}

fn gen_load_weights(case: &GridCase) -> (Vec<f64>, Vec<f64>) {
    let n = case.n_buses();
    let mut w_gen = vec![0.0; n];
    for g in case.generators() {
        w_gen[case.bus_index(g.bus).unwrap()] += g.p_max;
    }
    let mut w_load = vec![0.0; n];
    for d in case.loads() {
        w_load[case.bus_index(d.bus).unwrap()] += d.p;
    }
    (w_gen, w_load)
}

/// Electrical betweenness over every generator-load pair, from dense shift
/// factors.
pub fn electrical_betweenness_dense(case: &GridCase) -> Vec<f64> {
    let sf = shift_factors_dense(case);
    let gens: std::collections::BTreeSet<usize> =
        case.generators().iter().map(|g| case.bus_index(g.bus).unwrap()).collect();
    let (w_gen, w_load) = gen_load_weights(case);
    let mut b2 = vec![0.0; case.n_branches()];
    for &i in &gens {
        for j in 0..case.n_buses() {
            if j == i || w_load[j] <= 0.0 {
                continue;
            }
            for (l, s) in b2.iter_mut().enumerate() {
                *s += (w_gen[i] * w_load[j]).sqrt() * (sf[(l, i)] - sf[(l, j)]).abs();
            }
        }
    }
    b2
}

/// Extended betweenness by a plain loop over generator-load pairs.
pub fn extended_betweenness_dense(case: &GridCase) -> Vec<f64> {
    let sf = shift_factors_dense(case);
    let gens: std::collections::BTreeSet<usize> =
        case.generators().iter().map(|g| case.bus_index(g.bus).unwrap()).collect();
    let (_, w_load) = gen_load_weights(case);
    let nl = case.n_branches();
    let (mut tp, mut tn) = (vec![0.0; nl], vec![0.0; nl]);
    for &i in &gens {
        for j in 0..case.n_buses() {
            if j == i || w_load[j] <= 0.0 {
                continue;
            }
            let mut cap = f64::INFINITY;
            for l in 0..nl {
                let d = (sf[(l, i)] - sf[(l, j)]).abs();
                if d >= 1e-9 {
                    cap = cap.min(case.branches()[l].f_lim1 / d);
                }
            }
            if cap.is_infinite() {
                continue;
            }
            for l in 0..nl {
                let d = sf[(l, i)] - sf[(l, j)];
                if d > 0.0 {
                    tp[l] += d * cap;
                } else {
                    tn[l] += -d * cap;
                }
            }
        }
    }
    tp.iter().zip(&tn).map(|(p, n)| p.max(*n)).collect()
}

/// Largest elementwise difference relative to `max(1, |reference|)`.
pub fn max_rel_diff(a: &[f64], reference: &[f64]) -> f64 {
    a.iter()
        .zip(reference)
        .map(|(x, r)| (x - r).abs() / r.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/cases")
}

#[derive(Deserialize)]
struct PfReference {
    reference_bus: u32,
    bus: Vec<u32>,
    vm: Vec<f64>,
    va_rad: Vec<f64>,
    slack_pg_mw: f64,
}

/// Flat-start base-case solve against a frozen solution of an independent
/// Newton-Raphson solver (see `scripts/reference_pf.py`).
#[derive(Debug)]
pub struct PfComparison {
    pub iterations: usize,
    pub elapsed: Duration,
    pub max_dv: f64,
    pub max_dtheta: f64,
    pub slack_diff_mw: f64,
}

pub fn pf_reference(case_file: &str, fixture: &str) -> PfComparison {
    let case = load_case(&data_dir().join(case_file), CaseFormat::Matpower).unwrap();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(fixture);
    let reference: PfReference = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let topo = compute_islands(&case, &vec![true; case.n_branches()], None);
    assert_eq!(topo.islands().len(), 1);
    let start = SystemState::initial(&case);
    let opts = PfOptions {
        slack: SlackMode::Single,
        flat_start: true,
        ..PfOptions::default()
    };
    let t = Instant::now();
    let s = solve_power_flow(&case, &topo, 0, &Dispatch::from_state(&start), &start, &opts).unwrap();
    let elapsed = t.elapsed();

    let r = case.bus_index(reference.reference_bus).unwrap();
    let (mut dv, mut da) = (0.0f64, 0.0f64);
    for (k, &id) in reference.bus.iter().enumerate() {
        let b = case.bus_index(id).unwrap();
        dv = dv.max((s.v_mag[b] - reference.vm[k]).abs());
        da = da.max(((s.v_ang[b] - s.v_ang[r]) - reference.va_rad[k]).abs());
    }
    let slack: f64 = case
        .generators()
        .iter()
        .enumerate()
        .filter(|(_, g)| g.bus == reference.reference_bus)
        .map(|(i, _)| s.p_gen[i])
        .sum();
    PfComparison {
        iterations: s.iterations,
        elapsed,
        max_dv: dv,
        max_dtheta: da,
        slack_diff_mw: (slack - reference.slack_pg_mw).abs(),
    }
}
