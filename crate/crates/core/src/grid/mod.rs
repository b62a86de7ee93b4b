//! Static network description: buses, branches, generators and loads.
//!
//! Bus ids are the external labels used by the source case (e.g. 1..118 or
//! 101..325). Branch, generator and load ids are dense 1-based positions, so
//! branch 37 of the IEEE 118-bus case is `case.branches[36]`.

mod matpower;
mod native;
mod scale;
mod topology;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use matpower::{parse_matpower, ImportOptions};
pub use native::{case_hash, load_case, load_case_with, save_case, CaseFormat};
pub use scale::{scale_case, UniformLimits};
pub use topology::{compute_islands, IslandId, Topology};

/// Default lower voltage bound applied when a case does not carry one.
pub const DEFAULT_V_MIN: f64 = 0.9;
/// Default upper voltage bound applied when a case does not carry one.
pub const DEFAULT_V_MAX: f64 = 1.1;
/// Emergency rating used when a case provides a single rating.
pub const DEFAULT_EMERGENCY_RATIO: f64 = 1.5;
/// Hidden-failure probability assigned to every branch unless overridden.
pub const DEFAULT_HIDDEN_FAILURE_PROB: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Pq,
    Pv,
    Ref,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    /// Shunt conductance, MW consumed at 1.0 p.u. voltage.
    #[serde(default)]
    pub gs: f64,
    /// Shunt susceptance, MVAr injected at 1.0 p.u. voltage.
    #[serde(default)]
    pub bs: f64,
    #[serde(default)]
    pub base_kv: f64,
    #[serde(default = "one")]
    pub vm: f64,
    /// Initial angle, degrees.
    #[serde(default)]
    pub va: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub from_bus: u32,
    pub to_bus: u32,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance, p.u.
    #[serde(default)]
    pub b_shunt: f64,
    /// Off-nominal turns ratio at the from end; 1.0 for lines.
    #[serde(default = "one")]
    pub tap: f64,
    /// Phase shift, degrees.
    #[serde(default)]
    pub shift: f64,
    /// Long-term thermal limit, MW.
    pub f_lim1: f64,
    /// Short-term emergency limit, MW.
    pub f_lim2: f64,
    pub hidden_failure_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: usize,
    pub bus: u32,
    /// Scheduled active output, MW.
    pub p: f64,
    #[serde(default)]
    pub q: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Voltage set-point, p.u.
    #[serde(default = "one")]
    pub vg: f64,
    /// Loss-sharing coefficient. `None` means proportional to `p_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack_coeff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: usize,
    pub bus: u32,
    pub p: f64,
    pub q: f64,
}

/// A validated network case. Construct through [`GridCase::new`] or
/// deserialization; both check every invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CaseData", into = "CaseData")]
pub struct GridCase {
    pub(crate) name: String,
    pub(crate) base_mva: f64,
    pub(crate) buses: Vec<Bus>,
    pub(crate) branches: Vec<Branch>,
    pub(crate) generators: Vec<Generator>,
    pub(crate) loads: Vec<Load>,
    bus_pos: HashMap<u32, usize>,
}

/// Serialized form of [`GridCase`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseData {
    #[serde(default)]
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<CaseData> for GridCase {
    type Error = Error;

    fn try_from(d: CaseData) -> Result<Self> {
        GridCase::new(d.name, d.base_mva, d.buses, d.branches, d.generators, d.loads)
    }
}

impl From<GridCase> for CaseData {
    fn from(c: GridCase) -> Self {
        CaseData {
            name: c.name,
            base_mva: c.base_mva,
            buses: c.buses,
            branches: c.branches,
            generators: c.generators,
            loads: c.loads,
        }
    }
}

impl GridCase {
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
        loads: Vec<Load>,
    ) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::NoBranches);
        }
        let mut problems = Vec::new();
        if !(base_mva > 0.0) {
            problems.push(format!("base_mva must be positive, got {base_mva}"));
        }
        let mut bus_pos = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if bus_pos.insert(b.id, i).is_some() {
                problems.push(format!("bus {}: duplicate id", b.id));
            }
            if !(b.v_min > 0.0 && b.v_min < b.v_max) {
                problems.push(format!(
                    "bus {}: voltage bounds must satisfy 0 < v_min < v_max, got {}..{}",
                    b.id, b.v_min, b.v_max
                ));
            }
        }
        for (i, br) in branches.iter().enumerate() {
            let tag = format!("branch {}", br.id);
            if br.id != i + 1 {
                problems.push(format!("{tag}: ids must be dense 1..N, found at position {}", i + 1));
            }
            for end in [br.from_bus, br.to_bus] {
                if !bus_pos.contains_key(&end) {
                    problems.push(format!("{tag}: unknown bus {end}"));
                }
            }
            if br.from_bus == br.to_bus {
                problems.push(format!("{tag}: self loop on bus {}", br.from_bus));
            }
            if br.x == 0.0 {
                problems.push(format!("{tag}: zero reactance"));
            }
            if !(br.f_lim1 > 0.0 && br.f_lim2 >= br.f_lim1) {
                problems.push(format!(
                    "{tag}: limits must satisfy f_lim2 >= f_lim1 > 0, got {} / {}",
                    br.f_lim1, br.f_lim2
                ));
            }
            if !(0.0..=1.0).contains(&br.hidden_failure_prob) {
                problems.push(format!(
                    "{tag}: hidden failure probability {} outside [0, 1]",
                    br.hidden_failure_prob
                ));
            }
            if !(br.tap > 0.0) {
                problems.push(format!("{tag}: tap ratio must be positive"));
            }
        }
        for (i, g) in generators.iter().enumerate() {
            let tag = format!("generator {}", g.id);
            if g.id != i + 1 {
                problems.push(format!("{tag}: ids must be dense 1..N"));
            }
            if !bus_pos.contains_key(&g.bus) {
                problems.push(format!("{tag}: unknown bus {}", g.bus));
            }
            if g.p_min > g.p_max {
                problems.push(format!("{tag}: p_min {} > p_max {}", g.p_min, g.p_max));
            }
            if g.q_min > g.q_max {
                problems.push(format!("{tag}: q_min {} > q_max {}", g.q_min, g.q_max));
            }
            if let Some(r) = g.slack_coeff {
                if !(0.0..=1.0).contains(&r) {
                    problems.push(format!("{tag}: slack coefficient {r} outside [0, 1]"));
                }
            }
        }
        for (i, l) in loads.iter().enumerate() {
            let tag = format!("load {}", l.id);
            if l.id != i + 1 {
                problems.push(format!("{tag}: ids must be dense 1..N"));
            }
            if !bus_pos.contains_key(&l.bus) {
                problems.push(format!("{tag}: unknown bus {}", l.bus));
            }
            if l.p < 0.0 {
                problems.push(format!("{tag}: negative active demand {}", l.p));
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidCase(problems));
        }
        Ok(GridCase {
            name: name.into(),
            base_mva,
            buses,
            branches,
            generators,
            loads,
            bus_pos,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn loads(&self) -> &[Load] {
        &self.loads
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    /// Branch by 1-based id.
    pub fn branch(&self, id: usize) -> Result<&Branch> {
        id.checked_sub(1)
            .and_then(|i| self.branches.get(i))
            .ok_or(Error::UnknownBranch(id))
    }

    /// Position of a bus label in [`GridCase::buses`].
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.bus_pos.get(&id).copied()
    }

    /// Dense (from, to) bus positions of a branch given by position.
    pub(crate) fn branch_ends(&self, k: usize) -> (usize, usize) {
        let br = &self.branches[k];
        (self.bus_pos[&br.from_bus], self.bus_pos[&br.to_bus])
    }

    pub(crate) fn gen_bus(&self, g: usize) -> usize {
        self.bus_pos[&self.generators[g].bus]
    }

    pub(crate) fn load_bus(&self, d: usize) -> usize {
        self.bus_pos[&self.loads[d].bus]
    }

    /// Total active demand, MW.
    pub fn total_load(&self) -> f64 {
        self.loads.iter().map(|l| l.p).sum()
    }

    /// A branch is a transformer when it has an off-nominal ratio, a phase
    /// shift, or joins buses of different nominal voltage.
    pub fn is_transformer(&self, id: usize) -> bool {
        let Ok(br) = self.branch(id) else {
            return false;
        };
        let kv = |b: u32| self.buses[self.bus_pos[&b]].base_kv;
        (br.tap - 1.0).abs() > 1e-12
            || br.shift != 0.0
            || (kv(br.from_bus) - kv(br.to_bus)).abs() > 1e-9
    }

    /// Rebuild with modified parts, re-checking invariants.
    pub(crate) fn rebuild(
        &self,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
        loads: Vec<Load>,
    ) -> Result<Self> {
        GridCase::new(
            self.name.clone(),
            self.base_mva,
            self.buses.clone(),
            branches,
            generators,
            loads,
        )
    }
}
