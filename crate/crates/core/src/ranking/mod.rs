//! Weighted HITS scoring of the branch-interaction graph and the composite
//! importance index.

use std::collections::VecDeque;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridCase;
use crate::interaction::InteractionMatrix;

/// Square row-major weight matrix; entry `(i, j)` weighs edge `i -> j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::InvalidArgument(format!("{} entries for a {n}x{n} matrix", data.len())));
        }
        if let Some(x) = data.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::InvalidArgument(format!("weights must be finite and nonnegative, found {x}")));
        }
        Ok(WeightMatrix { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, c: f64) -> Self {
        WeightMatrix {
            n: self.n,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    /// Largest off-diagonal entry.
    pub fn max_off_diagonal(&self) -> f64 {
        let n = self.n;
        (0..n * n).filter(|k| k / n != k % n).map(|k| self.data[k]).fold(0.0, f64::max)
    }

    /// Every node reaches every other node along positive edges.
    pub fn is_strongly_connected(&self) -> bool {
        let n = self.n;
        if n == 0 {
            return true;
        }
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([0]);
            seen[0] = true;
            while let Some(u) = queue.pop_front() {
                for v in 0..n {
                    let w = if forward { self.get(u, v) } else { self.get(v, u) };
                    if w > 0.0 && !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }
}

impl From<&InteractionMatrix> for WeightMatrix {
    fn from(w: &InteractionMatrix) -> Self {
        WeightMatrix {
            n: w.n_branch(),
            data: w.weights(),
        }
    }
}

/// Default fill value for absent edges: a millionth of the largest weight,
/// or `1e-6` for an empty graph.
pub fn default_fill(w: &WeightMatrix) -> f64 {
    let max = w.max_off_diagonal();
    if max > 0.0 {
        1e-6 * max
    } else {
        1e-6
    }
}

/// Replace every off-diagonal zero with `eps_w`, leaving the diagonal zero.
pub fn regularize(w: &WeightMatrix, eps_w: f64) -> Result<WeightMatrix> {
    if !(eps_w > 0.0 && eps_w.is_finite()) {
        return Err(Error::InvalidArgument(format!("fill value must be positive, got {eps_w}")));
    }
    let n = w.n;
    let data = (0..n * n)
        .map(|k| match (k / n == k % n, w.data[k]) {
            (true, _) => 0.0,
            (false, x) if x == 0.0 => eps_w,
            (false, x) => x,
        })
        .collect();
    Ok(WeightMatrix { n, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HitsOptions {
    /// Stop once the sum of the max-norm changes of both vectors is below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for HitsOptions {
    fn default() -> Self {
        HitsOptions { tol: 1e-5, max_iter: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub auth: Vec<f64>,
    pub hub: Vec<f64>,
    /// Importance index, the mean of authority and hub.
    pub k: Vec<f64>,
    pub iterations: usize,
    /// False when `max_iter` was reached first.
    pub converged: bool,
    /// Change measure after each iteration.
    pub residuals: Vec<f64>,
    /// 1-based branch ids by decreasing importance.
    pub order: Vec<usize>,
}

/// 1-based ids sorted by decreasing score, ties by ascending id.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (1..=scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b - 1].total_cmp(&scores[a - 1]).then(a.cmp(&b)));
    ids
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn max_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Authority and hub scores by the weighted HITS iteration.
///
/// Authority collects hub mass spread over each source's out-weights; hub
/// collects the fresh authority spread over each target's in-weights. Both
/// start at one and are scaled to unit Euclidean length every iteration.
pub fn weighted_hits(w: &WeightMatrix, opts: &HitsOptions) -> Result<RankingResult> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let n = w.n;
    let out_sum: Vec<f64> = (0..n).map(|j| (0..n).map(|p| w.get(j, p)).sum()).collect();
    let in_sum: Vec<f64> = (0..n).map(|j| (0..n).map(|p| w.get(p, j)).sum()).collect();
    // share of hub j passed to i, and of auth j passed back to i
    let mut to_auth = vec![0.0; n * n];
    let mut to_hub = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if out_sum[j] > 0.0 {
                to_auth[i * n + j] = w.get(j, i) / out_sum[j];
            }
            if in_sum[j] > 0.0 {
                to_hub[i * n + j] = w.get(i, j) / in_sum[j];
            }
        }
    }

    let mut auth = vec![1.0; n];
    let mut hub = vec![1.0; n];
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut a: Vec<f64> = (0..n).map(|i| (0..n).map(|j| to_auth[i * n + j] * hub[j]).sum()).collect();
        let mut h: Vec<f64> = (0..n).map(|i| (0..n).map(|j| to_hub[i * n + j] * a[j]).sum()).collect();
        normalize(&mut a);
        normalize(&mut h);
        let change = max_change(&a, &auth) + max_change(&h, &hub);
        residuals.push(change);
        auth = a;
        hub = h;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("weighted HITS stopped after {iterations} iterations without converging");
    }
    let k: Vec<f64> = auth.iter().zip(&hub).map(|(a, h)| (a + h) / 2.0).collect();
    let order = descending_order(&k);
    Ok(RankingResult {
        auth,
        hub,
        k,
        iterations,
        converged,
        residuals,
        order,
    })
}

/// Rank the branches of an interaction estimate: absent edges get `fill`
/// (default [`default_fill`]) before the weighted HITS iteration.
pub fn rank_interactions(m: &InteractionMatrix, fill: Option<f64>, opts: &HitsOptions) -> Result<RankingResult> {
    let w = WeightMatrix::from(m);
    let eps = fill.unwrap_or_else(|| default_fill(&w));
    weighted_hits(&regularize(&w, eps)?, opts)
}

/// A slice of a ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    /// Ranks `1..=size`.
    Top,
    /// Ranks `start..start + size`, 1-based.
    Middle { start: usize },
    /// The last `size` ranks.
    Bottom,
}

impl Group {
    pub const MIDDLE: Group = Group::Middle { start: 15 };

    pub fn name(&self) -> &'static str {
        match self {
            Group::Top => "top",
            Group::Middle { .. } => "middle",
            Group::Bottom => "bottom",
        }
    }
}

/// Branch ids of a group within `order`.
pub fn rank(order: &[usize], group: Group, size: usize) -> Result<Vec<usize>> {
    let len = order.len();
    let start = match group {
        Group::Top => 0,
        Group::Middle { start } => start.saturating_sub(1),
        Group::Bottom => len.saturating_sub(size),
    };
    let end = start + size;
    if end > len || matches!(group, Group::Middle { start: 0 }) {
        return Err(Error::WindowOutOfRange { start: start + 1, end, len });
    }
    Ok(order[start..end].to_vec())
}

/// Ranking table `rank,branch,from,to,auth,hub,K`.
pub fn write_ranking_csv<W: Write>(result: &RankingResult, case: &GridCase, out: W) -> Result<()> {
    if result.k.len() != case.n_branches() {
        return Err(Error::InvalidArgument("ranking and case differ in branch count".into()));
    }
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(["rank", "branch", "from", "to", "auth", "hub", "K"])?;
    for (r, &id) in result.order.iter().enumerate() {
        let br = case.branch(id)?;
        csv.write_record([
            (r + 1).to_string(),
            id.to_string(),
            br.from_bus.to_string(),
            br.to_bus.to_string(),
            result.auth[id - 1].to_string(),
            result.hub[id - 1].to_string(),
            result.k[id - 1].to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Branch order of any ranking table with `rank` and `branch` columns.
pub fn read_order<R: Read>(input: R) -> Result<Vec<usize>> {
    let mut csv = csv::Reader::from_reader(input);
    let head = csv.headers()?.clone();
    let col = |name: &str| {
        head.iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("ranking table has no {name:?} column")))
    };
    let (rc, bc) = (col("rank")?, col("branch")?);
    let mut rows = Vec::new();
    for row in csv.records() {
        let row = row?;
        let num = |c: usize| -> Result<usize> {
            row.get(c)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad ranking row {:?}", row.iter().collect::<Vec<_>>())))
        };
        rows.push((num(rc)?, num(bc)?));
    }
    rows.sort_unstable();
    Ok(rows.into_iter().map(|(_, b)| b).collect())
}
