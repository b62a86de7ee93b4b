use num_complex::Complex64;

use crate::grid::{GridCase, IslandId, Topology};

/// Pi-model coefficients of one branch: `[yff, yft, ytf, ytt]`.
pub(crate) type BranchY = [Complex64; 4];

/// Admittance data of one island in local bus numbering.
#[derive(Debug, Clone)]
pub(crate) struct IslandNet {
    /// Global bus positions, ascending.
    pub buses: Vec<usize>,
    /// Global bus position to local index; `usize::MAX` outside the island.
    pub local: Vec<usize>,
    /// Global positions of the in-service branches inside the island.
    pub branches: Vec<usize>,
    pub br_ends: Vec<(usize, usize)>,
    pub br_y: Vec<BranchY>,
    /// Y-bus in compressed rows, diagonal included.
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
    /// In-service generators and all loads located in the island.
    pub gens: Vec<usize>,
    pub loads: Vec<usize>,
}

pub(crate) fn branch_y(case: &GridCase, k: usize) -> BranchY {
    let br = &case.branches[k];
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
    let half_b = Complex64::new(0.0, br.b_shunt / 2.0);
    let t = Complex64::from_polar(br.tap, br.shift.to_radians());
    let ytt = ys + half_b;
    [ytt / t.norm_sqr(), -ys / t.conj(), -ys / t, ytt]
}

impl IslandNet {
    pub fn build(case: &GridCase, topo: &Topology, island: IslandId, gen_on: &[bool]) -> Self {
        let buses = topo.buses_of(island);
        let mut local = vec![usize::MAX; case.n_buses()];
        for (i, &b) in buses.iter().enumerate() {
            local[b] = i;
        }
        let n = buses.len();
        let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
        let base = case.base_mva();
        for (i, &b) in buses.iter().enumerate() {
            let bus = &case.buses[b];
            rows[i].push((i, Complex64::new(bus.gs, bus.bs) / base));
        }
        let mut branches = Vec::new();
        let mut br_ends = Vec::new();
        let mut br_y = Vec::new();
        for k in 0..case.n_branches() {
            if !topo.in_service[k] {
                continue;
            }
            let (f, t) = case.branch_ends(k);
            if local[f] == usize::MAX {
                continue;
            }
            let (lf, lt) = (local[f], local[t]);
            let y = branch_y(case, k);
            rows[lf].push((lf, y[0]));
            rows[lf].push((lt, y[1]));
            rows[lt].push((lf, y[2]));
            rows[lt].push((lt, y[3]));
            branches.push(k);
            br_ends.push((lf, lt));
            br_y.push(y);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let (mut col, mut g, mut bv) = (Vec::new(), Vec::new(), Vec::new());
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_by_key(|e| e.0);
            let mut last = usize::MAX;
            for &(j, y) in row.iter() {
                if j == last {
                    *g.last_mut().unwrap() += y.re;
                    *bv.last_mut().unwrap() += y.im;
                } else {
                    col.push(j);
                    g.push(y.re);
                    bv.push(y.im);
                    last = j;
                }
            }
            row_ptr.push(col.len());
        }
        let gens = (0..case.generators.len())
            .filter(|&gi| gen_on[gi] && local[case.gen_bus(gi)] != usize::MAX)
            .collect();
        let loads = (0..case.loads.len())
            .filter(|&d| local[case.load_bus(d)] != usize::MAX)
            .collect();
        IslandNet {
            buses,
            local,
            branches,
            br_ends,
            br_y,
            row_ptr,
            col,
            g,
            b: bv,
            gens,
            loads,
        }
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    /// Complex bus voltages from polar local vectors.
    pub fn phasors(v: &[f64], th: &[f64]) -> Vec<Complex64> {
        v.iter().zip(th).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
    }

    /// Complex power entering the branch at each end, p.u.
    pub fn branch_power(&self, idx: usize, vc: &[Complex64]) -> (Complex64, Complex64) {
        let (f, t) = self.br_ends[idx];
        let y = &self.br_y[idx];
        let i_f = y[0] * vc[f] + y[1] * vc[t];
        let i_t = y[2] * vc[f] + y[3] * vc[t];
        (vc[f] * i_f.conj(), vc[t] * i_t.conj())
    }
}
