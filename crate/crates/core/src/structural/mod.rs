//! Structural branch vulnerability scores: hop-count betweenness,
//! electrical betweenness and extended betweenness over DC shift factors.

use std::collections::VecDeque;
use std::io::Write;

use faer::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Workers};
use crate::grid::{compute_islands, GridCase};
use crate::ranking::descending_order;

/// Sensitivities below this are treated as no transfer at all.
pub const MIN_SENSITIVITY: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    B1,
    B2,
    B3,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::B1, Metric::B2, Metric::B3];

    pub fn name(self) -> &'static str {
        match self {
            Metric::B1 => "B1",
            Metric::B2 => "B2",
            Metric::B3 => "B3",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "B1" => Ok(Metric::B1),
            "B2" => Ok(Metric::B2),
            "B3" => Ok(Metric::B3),
            _ => Err(Error::InvalidArgument(format!("unknown metric {s:?}, expected B1, B2 or B3"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralScores {
    pub metric: Metric,
    /// One nonnegative score per branch, by position.
    pub scores: Vec<f64>,
    /// 1-based branch ids by decreasing score, ties by ascending id.
    pub order: Vec<usize>,
}

impl StructuralScores {
    fn new(metric: Metric, scores: Vec<f64>) -> Self {
        let order = descending_order(&scores);
        StructuralScores { metric, scores, order }
    }
}

/// Generator weight used by the electrical betweenness.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenWeight {
    /// Installed capacity `p_max`.
    #[default]
    Capacity,
    /// Scheduled output `p`.
    Output,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructuralOptions {
    pub gen_weight: GenWeight,
    /// Slack bus label for a connected case. `None` picks the bus of the
    /// largest generator in each island.
    pub slack: Option<u32>,
}

/// Compute one metric.
pub fn scores(case: &GridCase, metric: Metric, opts: &StructuralOptions, workers: Workers) -> Result<StructuralScores> {
    match metric {
        Metric::B1 => Ok(betweenness(case, workers)),
        Metric::B2 => electrical_betweenness(case, opts, workers),
        Metric::B3 => extended_betweenness(case, opts, workers),
    }
}

/// Bus adjacency as `(neighbour, branch)` lists, parallel branches kept.
fn adjacency(case: &GridCase) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); case.n_buses()];
    for k in 0..case.n_branches() {
        let (f, t) = case.branch_ends(k);
        adj[f].push((t, k));
        adj[t].push((f, k));
    }
    adj
}

/// Hop distances and shortest-path counts from `s`; unreachable buses get
/// distance `usize::MAX` and count 0.
fn bfs_counts(adj: &[Vec<(usize, usize)>], s: usize) -> (Vec<usize>, Vec<u128>) {
    let n = adj.len();
    let mut dist = vec![usize::MAX; n];
    let mut sigma = vec![0u128; n];
    dist[s] = 0;
    sigma[s] = 1;
    let mut queue = VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        for &(w, _) in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                sigma[w] += sigma[v];
            }
        }
    }
    (dist, sigma)
}

/// Hop-count betweenness: for every unordered bus pair, the share of its
/// shortest paths running through each branch, summed over pairs.
///
/// A branch `u-v` lies on `sigma_s(u) * sigma_t(v)` shortest `s-t` paths when
/// `d(s,u) + 1 + d(v,t) = d(s,t)`, and symmetrically with `u` and `v`
/// swapped, so exact integer counts come straight from one search per bus.
/// Pairs in different components contribute nothing.
pub fn betweenness(case: &GridCase, workers: Workers) -> StructuralScores {
    let adj = adjacency(case);
    let n = case.n_buses();
    if compute_islands(case, &vec![true; case.n_branches()], None).islands().len() > 1 {
        log::warn!("case {} is not connected; pairs in different components are skipped", case.name());
    }
    let searches = map_indexed(n, workers, |s| bfs_counts(&adj, s));
    let ends: Vec<(usize, usize)> = (0..case.n_branches()).map(|k| case.branch_ends(k)).collect();
    let rows = map_indexed(n, workers, |s| {
        let (ds, ss) = &searches[s];
        let mut row = vec![0.0; ends.len()];
        for t in s + 1..n {
            let (dt, st) = &searches[t];
            if ds[t] == usize::MAX {
                continue;
            }
            let total = ss[t] as f64;
            for (k, &(u, v)) in ends.iter().enumerate() {
                let mut through = 0u128;
                for (a, b) in [(u, v), (v, u)] {
                    if ds[a] != usize::MAX && dt[b] != usize::MAX && ds[a] + 1 + dt[b] == ds[t] {
                        through += ss[a] * st[b];
                    }
                }
                if through > 0 {
                    row[k] += through as f64 / total;
                }
            }
        }
        row
    });
    let mut b1 = vec![0.0; ends.len()];
    for row in rows {
        for (a, x) in b1.iter_mut().zip(row) {
            *a += x;
        }
    }
    StructuralScores::new(Metric::B1, b1)
}

/// DC injection shift factors: entry `(l, i)` is the per-unit flow on branch
/// `l`, from end to to end, for a unit injection at bus `i` withdrawn at the
/// slack bus of its island.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftFactors {
    n_branch: usize,
    n_bus: usize,
    /// Row-major, `n_branch x n_bus`.
    data: Vec<f64>,
    /// Island index per bus position.
    island: Vec<usize>,
    /// Slack bus position per island.
    slacks: Vec<usize>,
}

impl ShiftFactors {
    pub fn get(&self, l: usize, i: usize) -> f64 {
        self.data[l * self.n_bus + i]
    }

    pub fn n_branch(&self) -> usize {
        self.n_branch
    }

    pub fn n_bus(&self) -> usize {
        self.n_bus
    }

    /// Slack bus positions, one per island.
    pub fn slacks(&self) -> &[usize] {
        &self.slacks
    }

    pub fn same_island(&self, i: usize, j: usize) -> bool {
        self.island[i] == self.island[j]
    }

    /// Flow on `l` for a unit transfer from bus `i` to bus `j`.
    pub fn transfer(&self, l: usize, i: usize, j: usize) -> f64 {
        self.get(l, i) - self.get(l, j)
    }
}

/// Series susceptance used by the DC model, p.u.
pub fn dc_susceptance(case: &GridCase, k: usize) -> f64 {
    let br = &case.branches()[k];
    1.0 / (br.x * br.tap)
}

fn default_slack(case: &GridCase, buses: &[usize]) -> usize {
    let mut best: Option<(f64, usize)> = None;
    for g in 0..case.generators().len() {
        let b = case.gen_bus(g);
        let p = case.generators()[g].p_max;
        let better = match best {
            None => true,
            Some((bp, bb)) => p > bp || (p == bp && b < bb),
        };
        if better && buses.contains(&b) {
            best = Some((p, b));
        }
    }
    best.map_or(buses[0], |(_, b)| b)
}

/// Shift factors of every island, each against its own slack.
pub fn shift_factors(case: &GridCase, slack: Option<u32>) -> Result<ShiftFactors> {
    let (nb, nl) = (case.n_buses(), case.n_branches());
    let topo = compute_islands(case, &vec![true; nl], None);
    let islands = topo.islands().to_vec();
    if slack.is_some() && islands.len() > 1 {
        return Err(Error::InvalidArgument("an explicit slack bus needs a connected case".into()));
    }
    let mut island = vec![0; nb];
    let mut slacks = Vec::with_capacity(islands.len());
    let mut data = vec![0.0; nl * nb];
    for (pos, &id) in islands.iter().enumerate() {
        let buses = topo.buses_of(id);
        for &b in &buses {
            island[b] = pos;
        }
        let s = match slack {
            Some(label) => case
                .bus_index(label)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown slack bus {label}")))?,
            None => default_slack(case, &buses),
        };
        slacks.push(s);
        // reduced susceptance matrix over the island's non-slack buses
        let free: Vec<usize> = buses.iter().copied().filter(|&b| b != s).collect();
        let mut col = vec![usize::MAX; nb];
        for (c, &b) in free.iter().enumerate() {
            col[b] = c;
        }
        let branches = topo.branches_of(case, id);
        let m = free.len();
        if m == 0 {
            continue;
        }
        let mut bred = Mat::<f64>::zeros(m, m);
        for &k in &branches {
            let (f, t) = case.branch_ends(k);
            let b = dc_susceptance(case, k);
            for (p, q) in [(f, t), (t, f)] {
                if col[p] != usize::MAX {
                    bred[(col[p], col[p])] += b;
                    if col[q] != usize::MAX {
                        bred[(col[p], col[q])] -= b;
                    }
                }
            }
        }
        let x = bred.partial_piv_lu().solve(Mat::<f64>::identity(m, m));
        if (0..m).any(|c| (0..m).any(|r| !x[(r, c)].is_finite())) {
            return Err(Error::SingularSusceptance(case.buses()[s].id));
        }
        let theta = |bus: usize, inj: usize| if col[bus] == usize::MAX { 0.0 } else { x[(col[bus], inj)] };
        for &k in &branches {
            let (f, t) = case.branch_ends(k);
            let b = dc_susceptance(case, k);
            for &i in &free {
                data[k * nb + i] = b * (theta(f, col[i]) - theta(t, col[i]));
            }
        }
    }
    Ok(ShiftFactors {
        n_branch: nl,
        n_bus: nb,
        data,
        island,
        slacks,
    })
}

/// Per-bus generator weights and demands, MW.
fn bus_weights(case: &GridCase, gen_weight: GenWeight) -> (Vec<f64>, Vec<f64>) {
    let mut w_gen = vec![0.0; case.n_buses()];
    for (g, gen) in case.generators().iter().enumerate() {
        w_gen[case.gen_bus(g)] += match gen_weight {
            GenWeight::Capacity => gen.p_max,
            GenWeight::Output => gen.p,
        };
    }
    let mut w_load = vec![0.0; case.n_buses()];
    for (d, load) in case.loads().iter().enumerate() {
        w_load[case.load_bus(d)] += load.p;
    }
    (w_gen, w_load)
}

/// Generator-to-load bus pairs in the same island, `i != j`.
fn gen_load_pairs(case: &GridCase, sf: &ShiftFactors) -> Vec<(usize, usize)> {
    let nb = case.n_buses();
    let is_gen = {
        let mut v = vec![false; nb];
        (0..case.generators().len()).for_each(|g| v[case.gen_bus(g)] = true);
        v
    };
    let is_load = {
        let mut v = vec![false; nb];
        (0..case.loads().len()).filter(|&d| case.loads()[d].p > 0.0).for_each(|d| v[case.load_bus(d)] = true);
        v
    };
    let mut pairs = Vec::new();
    for i in (0..nb).filter(|&i| is_gen[i]) {
        for j in (0..nb).filter(|&j| is_load[j] && j != i && sf.same_island(i, j)) {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Per-pair contributions folded into per-branch totals in pair order.
fn fold_pairs<F>(pairs: &[(usize, usize)], n_branch: usize, workers: Workers, f: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> Vec<f64> + Sync + Send,
{
    let parts = map_indexed(pairs.len(), workers, |p| f(pairs[p].0, pairs[p].1));
    let mut total = vec![0.0; n_branch];
    for part in parts {
        for (a, x) in total.iter_mut().zip(part) {
            *a += x;
        }
    }
    total
}

/// Electrical betweenness: the transfer sensitivity of each branch summed
/// over generator-load bus pairs, weighted by the geometric mean of the
/// generator weight and the demand.
pub fn electrical_betweenness(case: &GridCase, opts: &StructuralOptions, workers: Workers) -> Result<StructuralScores> {
    let sf = shift_factors(case, opts.slack)?;
    let (w_gen, w_load) = bus_weights(case, opts.gen_weight);
    let pairs = gen_load_pairs(case, &sf);
    let nl = case.n_branches();
    let b2 = fold_pairs(&pairs, nl, workers, |i, j| {
        let w = (w_gen[i] * w_load[j]).sqrt();
        (0..nl).map(|l| w * sf.transfer(l, i, j).abs()).collect()
    });
    Ok(StructuralScores::new(Metric::B2, b2))
}

/// Largest transfer from `i` to `j` before the first branch reaches its
/// long-term limit, MW. `None` when no branch is sensitive to the transfer.
pub fn transfer_capacity(case: &GridCase, sf: &ShiftFactors, i: usize, j: usize) -> Option<f64> {
    (0..case.n_branches())
        .filter_map(|l| {
            let d = sf.transfer(l, i, j).abs();
            (d >= MIN_SENSITIVITY).then(|| case.branches()[l].f_lim1 / d)
        })
        .reduce(f64::min)
}

/// Extended betweenness: each generator-load pair pushes its transfer
/// capacity through the network; a branch scores the larger of the total
/// power it carries in either direction.
pub fn extended_betweenness(case: &GridCase, opts: &StructuralOptions, workers: Workers) -> Result<StructuralScores> {
    let sf = shift_factors(case, opts.slack)?;
    let pairs = gen_load_pairs(case, &sf);
    let nl = case.n_branches();
    let parts = map_indexed(pairs.len(), workers, |p| {
        let (i, j) = pairs[p];
        let mut pos = vec![0.0; nl];
        let mut neg = vec![0.0; nl];
        if let Some(cap) = transfer_capacity(case, &sf, i, j) {
            for l in 0..nl {
                let d = sf.transfer(l, i, j);
                pos[l] = d.max(0.0) * cap;
                neg[l] = d.min(0.0).abs() * cap;
            }
        }
        (pos, neg)
    });
    let mut t_p = vec![0.0; nl];
    let mut t_n = vec![0.0; nl];
    for (pos, neg) in parts {
        for l in 0..nl {
            t_p[l] += pos[l];
            t_n[l] += neg[l];
        }
    }
    let b3 = t_p.iter().zip(&t_n).map(|(p, n)| p.max(*n)).collect();
    Ok(StructuralScores::new(Metric::B3, b3))
}

/// Scores table `rank,branch,from,to,score`.
pub fn write_scores_csv<W: Write>(s: &StructuralScores, case: &GridCase, out: W) -> Result<()> {
    if s.scores.len() != case.n_branches() {
        return Err(Error::InvalidArgument("scores and case differ in branch count".into()));
    }
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(["rank", "branch", "from", "to", "score"])?;
    for (r, &id) in s.order.iter().enumerate() {
        let br = case.branch(id)?;
        csv.write_record([
            (r + 1).to_string(),
            id.to_string(),
            br.from_bus.to_string(),
            br.to_bus.to_string(),
            s.scores[id - 1].to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}
