use serde::{Deserialize, Serialize};

use crate::grid::GridCase;

pub type IslandId = u32;

/// Connected components of the in-service network plus the island lineage
/// forest accumulated over successive splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub in_service: Vec<bool>,
    /// Island of every bus, indexed by bus position.
    pub island_of_bus: Vec<IslandId>,
    /// `parents[id]` for every island ever created; roots have `None`.
    parents: Vec<Option<IslandId>>,
    /// Islands of the current partition, ascending.
    current: Vec<IslandId>,
}

impl Topology {
    /// Islands of the current partition.
    pub fn islands(&self) -> &[IslandId] {
        &self.current
    }

    /// Number of islands ever created, i.e. the size of the lineage forest.
    pub fn lineage_len(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, island: IslandId) -> Option<IslandId> {
        self.parents.get(island as usize).copied().flatten()
    }

    pub fn parents(&self) -> &[Option<IslandId>] {
        &self.parents
    }

    /// True when `island` equals `ancestor` or descends from it.
    pub fn descends_from(&self, island: IslandId, ancestor: IslandId) -> bool {
        let mut cur = Some(island);
        while let Some(i) = cur {
            if i == ancestor {
                return true;
            }
            cur = self.parent(i);
        }
        false
    }

    /// Bus positions of an island of the current partition.
    pub fn buses_of(&self, island: IslandId) -> Vec<usize> {
        self.island_of_bus
            .iter()
            .enumerate()
            .filter_map(|(b, &i)| (i == island).then_some(b))
            .collect()
    }

    /// In-service branch positions inside an island.
    pub fn branches_of(&self, case: &GridCase, island: IslandId) -> Vec<usize> {
        (0..case.n_branches())
            .filter(|&k| self.in_service[k] && self.island_of_bus[case.branch_ends(k).0] == island)
            .collect()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Partition the buses into connected components over in-service branches.
///
/// Without a parent topology islands are numbered 0.. in order of their
/// lowest bus position. With one, a component whose bus set equals a parent
/// island keeps that id; every other component gets a fresh id recorded as a
/// child of the unique parent island containing it.
pub fn compute_islands(case: &GridCase, in_service: &[bool], parent: Option<&Topology>) -> Topology {
    assert_eq!(
        in_service.len(),
        case.n_branches(),
        "branch mask length must equal the number of branches"
    );
    let n = case.n_buses();
    let mut uf: Vec<usize> = (0..n).collect();
    for (k, &on) in in_service.iter().enumerate() {
        if on {
            let (f, t) = case.branch_ends(k);
            let (a, b) = (find(&mut uf, f), find(&mut uf, t));
            if a != b {
                uf[a.max(b)] = a.min(b);
            }
        }
    }
    // component key: root, which is the lowest bus position of the component
    let roots: Vec<usize> = (0..n).map(|b| find(&mut uf, b)).collect();
    let mut comp_size = vec![0usize; n];
    for &r in &roots {
        comp_size[r] += 1;
    }

    let mut island_of_root = vec![IslandId::MAX; n];
    let (mut parents, mut current) = (Vec::new(), Vec::new());
    match parent {
        None => {
            for b in 0..n {
                let r = roots[b];
                if island_of_root[r] == IslandId::MAX {
                    island_of_root[r] = parents.len() as IslandId;
                    parents.push(None);
                    current.push(island_of_root[r]);
                }
            }
        }
        Some(prev) => {
            parents = prev.parents.clone();
            let mut prev_size = vec![0usize; prev.parents.len()];
            for &i in &prev.island_of_bus {
                prev_size[i as usize] += 1;
            }
            for b in 0..n {
                let r = roots[b];
                if island_of_root[r] != IslandId::MAX {
                    continue;
                }
                let old = prev.island_of_bus[b];
                let id = if prev_size[old as usize] == comp_size[r] {
                    old
                } else {
                    parents.push(Some(old));
                    (parents.len() - 1) as IslandId
                };
                island_of_root[r] = id;
                current.push(id);
            }
            current.sort_unstable();
        }
    }
    let island_of_bus = roots.iter().map(|&r| island_of_root[r]).collect();
    Topology {
        in_service: in_service.to_vec(),
        island_of_bus,
        parents,
        current,
    }
}
