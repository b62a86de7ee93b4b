//! Polar Newton-Raphson with a scalar distributed-slack unknown.
//!
//! Unknowns are the angles of every bus but the angle reference, the
//! magnitudes of buses without voltage control, and `lambda`, the total
//! slack injection in p.u. Bus `i` absorbs `r[i] * lambda`.

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Pair, SparseColMat, SymbolicSparseColMat};
use faer::sparse::Argsort;

use super::network::IslandNet;
use super::PfError;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub(crate) struct Setup {
    pub pv: Vec<bool>,
    pub ref_bus: usize,
    /// Slack share per local bus; sums to one.
    pub r: Vec<f64>,
    pub p_spec: Vec<f64>,
    pub q_spec: Vec<f64>,
    th_col: Vec<usize>,
    v_col: Vec<usize>,
    q_row: Vec<usize>,
    dim: usize,
}

impl Setup {
    pub fn new(pv: Vec<bool>, ref_bus: usize, r: Vec<f64>, p_spec: Vec<f64>, q_spec: Vec<f64>) -> Self {
        let n = pv.len();
        let mut s = Setup {
            pv,
            ref_bus,
            r,
            p_spec,
            q_spec,
            th_col: vec![NONE; n],
            v_col: vec![NONE; n],
            q_row: vec![NONE; n],
            dim: 0,
        };
        s.reindex();
        s
    }

    pub fn reindex(&mut self) {
        let n = self.pv.len();
        let mut c = 0;
        for i in 0..n {
            self.th_col[i] = if i == self.ref_bus { NONE } else { c };
            if i != self.ref_bus {
                c += 1;
            }
        }
        let mut q = n;
        for i in 0..n {
            if self.pv[i] {
                self.v_col[i] = NONE;
                self.q_row[i] = NONE;
            } else {
                self.v_col[i] = c;
                self.q_row[i] = q;
                c += 1;
                q += 1;
            }
        }
        debug_assert_eq!(c + 1, q);
        self.dim = q;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda_col(&self) -> usize {
        self.dim - 1
    }

    pub fn th_col(&self, i: usize) -> Option<usize> {
        (self.th_col[i] != NONE).then_some(self.th_col[i])
    }

    pub fn v_col(&self, i: usize) -> Option<usize> {
        (self.v_col[i] != NONE).then_some(self.v_col[i])
    }

    pub fn q_row(&self, i: usize) -> Option<usize> {
        (self.q_row[i] != NONE).then_some(self.q_row[i])
    }
}

/// Bus injections and per-entry products at a voltage point.
pub(crate) struct Injections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// `V_i V_j (G cos + B sin)` per Y-bus entry.
    a: Vec<f64>,
    /// `V_i V_j (G sin - B cos)` per Y-bus entry.
    s: Vec<f64>,
}

pub(crate) fn injections(net: &IslandNet, v: &[f64], th: &[f64]) -> Injections {
    let n = net.n();
    let nnz = net.col.len();
    let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
    let (mut a, mut s) = (vec![0.0; nnz], vec![0.0; nnz]);
    for i in 0..n {
        for e in net.row_ptr[i]..net.row_ptr[i + 1] {
            let j = net.col[e];
            let (sn, cs) = (th[i] - th[j]).sin_cos();
            let vv = v[i] * v[j];
            a[e] = vv * (net.g[e] * cs + net.b[e] * sn);
            s[e] = vv * (net.g[e] * sn - net.b[e] * cs);
            p[i] += a[e];
            q[i] += s[e];
        }
    }
    Injections { p, q, a, s }
}

/// Sparse Jacobian with a fixed pattern; values are refreshed per iterate.
pub(crate) struct Jacobian {
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    lu_sym: SymbolicLu<usize>,
    vals: Vec<f64>,
}

impl Jacobian {
    pub fn new(net: &IslandNet, setup: &Setup) -> Result<Self, PfError> {
        let mut idx = Vec::with_capacity(4 * net.col.len() + net.n());
        Self::visit(net, setup, None, |r, c, _| idx.push(Pair::new(r, c)));
        let dim = setup.dim();
        let (symbolic, argsort) =
            SymbolicSparseColMat::try_new_from_indices(dim, dim, &idx).map_err(|_| PfError::Singular)?;
        let lu_sym = SymbolicLu::try_new(symbolic.as_ref()).map_err(|_| PfError::Singular)?;
        Ok(Jacobian {
            symbolic,
            argsort,
            lu_sym,
            vals: Vec::with_capacity(idx.len()),
        })
    }

    /// Visit every structural entry as `(row, col, value)`. The pattern does
    /// not depend on `inj`; with `None` the values are zero.
    fn visit(net: &IslandNet, setup: &Setup, inj: Option<(&Injections, &[f64])>, mut f: impl FnMut(usize, usize, f64)) {
        for i in 0..net.n() {
            let qi = setup.q_row(i);
            for e in net.row_ptr[i]..net.row_ptr[i + 1] {
                let j = net.col[e];
                let (dp_dth, dp_dv, dq_dth, dq_dv) = match inj {
                    None => (0.0, 0.0, 0.0, 0.0),
                    Some((x, v)) if i == j => {
                        let (g, b) = (net.g[e], net.b[e]);
                        let vi = v[i];
                        (
                            -x.q[i] - b * vi * vi,
                            x.p[i] / vi + g * vi,
                            x.p[i] - g * vi * vi,
                            x.q[i] / vi - b * vi,
                        )
                    }
                    Some((x, v)) => (x.s[e], x.a[e] / v[j], -x.a[e], x.s[e] / v[j]),
                };
                if let Some(c) = setup.th_col(j) {
                    f(i, c, dp_dth);
                    if let Some(r) = qi {
                        f(r, c, dq_dth);
                    }
                }
                if let Some(c) = setup.v_col(j) {
                    f(i, c, dp_dv);
                    if let Some(r) = qi {
                        f(r, c, dq_dv);
                    }
                }
            }
            if setup.r[i] != 0.0 {
                f(i, setup.lambda_col(), -setup.r[i]);
            }
        }
    }

    pub fn factor(&mut self, net: &IslandNet, setup: &Setup, inj: &Injections, v: &[f64]) -> Result<Lu<usize, f64>, PfError> {
        self.vals.clear();
        let vals = &mut self.vals;
        Self::visit(net, setup, Some((inj, v)), |_, _, x| vals.push(x));
        let m = SparseColMat::new_from_argsort(self.symbolic.clone(), &self.argsort, &self.vals)
            .map_err(|_| PfError::Singular)?;
        Lu::try_new_with_symbolic(self.lu_sym.clone(), m.as_ref()).map_err(|_| PfError::Singular)
    }
}

/// Mismatch vector `F(x)` in Jacobian row order.
pub(crate) fn mismatch(setup: &Setup, inj: &Injections, lambda: f64, out: &mut Vec<f64>) -> f64 {
    let n = setup.pv.len();
    out.clear();
    out.resize(setup.dim(), 0.0);
    let mut worst = 0.0f64;
    for i in 0..n {
        let fp = inj.p[i] - setup.p_spec[i] - lambda * setup.r[i];
        out[i] = fp;
        worst = worst.max(fp.abs());
        if let Some(r) = setup.q_row(i) {
            let fq = inj.q[i] - setup.q_spec[i];
            out[r] = fq;
            worst = worst.max(fq.abs());
        }
    }
    if worst.is_nan() {
        f64::INFINITY
    } else {
        worst
    }
}

pub(crate) struct NewtonResult {
    pub iterations: usize,
    pub mismatch: f64,
}

/// Iterate to `tol` (max-norm, p.u.) within `max_iter` Newton steps.
pub(crate) fn solve(
    net: &IslandNet,
    setup: &Setup,
    v: &mut [f64],
    th: &mut [f64],
    lambda: &mut f64,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonResult, PfError> {
    let mut jac = Jacobian::new(net, setup)?;
    let mut f = Vec::with_capacity(setup.dim());
    let mut it = 0;
    loop {
        let inj = injections(net, v, th);
        let worst = mismatch(setup, &inj, *lambda, &mut f);
        log::trace!("newton iter {it} buses {} max mismatch {worst:.3e}", net.n());
        if worst < tol {
            return Ok(NewtonResult {
                iterations: it,
                mismatch: worst,
            });
        }
        if it >= max_iter || !worst.is_finite() || worst > 1e8 {
            return Err(PfError::Diverged {
                iterations: it,
                mismatch: worst,
            });
        }
        let lu = jac.factor(net, setup, &inj, v)?;
        let mut dx = Mat::<f64>::from_fn(setup.dim(), 1, |r, _| -f[r]);
        lu.solve_in_place(dx.as_mut());
        for i in 0..net.n() {
            if let Some(c) = setup.th_col(i) {
                th[i] += dx[(c, 0)];
            }
            if let Some(c) = setup.v_col(i) {
                v[i] += dx[(c, 0)];
            }
        }
        *lambda += dx[(setup.lambda_col(), 0)];
        if !lambda.is_finite() || v.iter().any(|&x| !(x > 1e-3) || !x.is_finite()) || th.iter().any(|x| !x.is_finite()) {
            return Err(PfError::Diverged {
                iterations: it + 1,
                mismatch: f64::INFINITY,
            });
        }
        it += 1;
    }
}
