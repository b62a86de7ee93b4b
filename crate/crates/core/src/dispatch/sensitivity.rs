use num_complex::Complex64;

use crate::acpf::network::IslandNet;
use crate::acpf::newton::Setup;
use crate::acpf::FlowMeasure;

/// Sparse gradient of a monitored quantity over the Newton unknowns.
#[derive(Debug, Clone, PartialEq)]
pub(super) struct Gradient {
    pub entries: Vec<(usize, f64)>,
}

impl Gradient {
    pub fn unit(col: usize) -> Self {
        Gradient {
            entries: vec![(col, 1.0)],
        }
    }
}

/// Gradient of the branch flow, in MW or MVA, at the more loaded end.
pub(super) fn flow_gradient(
    net: &IslandNet,
    setup: &Setup,
    idx: usize,
    vc: &[Complex64],
    base: f64,
    measure: FlowMeasure,
) -> Gradient {
    let (f, t) = net.br_ends[idx];
    let y = &net.br_y[idx];
    let (sf, st) = net.branch_power(idx, vc);
    let (vf, vt) = (vc[f].norm(), vc[t].norm());
    let j = Complex64::new(0.0, 1.0);
    // dS/d(v_f, v_t, th_f, th_t) at the chosen end
    let size = |s: Complex64| match measure {
        FlowMeasure::Active => s.re.abs(),
        FlowMeasure::Apparent => s.norm(),
    };
    let (s, d) = if size(sf) >= size(st) {
        let w = vc[f] * vc[t].conj();
        let c = y[1].conj();
        (sf, [2.0 * vf * y[0].conj() + w / vf * c, w / vt * c, j * w * c, -j * w * c])
    } else {
        let w = vc[t] * vc[f].conj();
        let c = y[2].conj();
        (st, [w / vf * c, 2.0 * vt * y[3].conj() + w / vt * c, -j * w * c, j * w * c])
    };
    let mag = size(s);
    let mut entries = Vec::with_capacity(4);
    if mag > 0.0 {
        let dmag = |ds: Complex64| match measure {
            FlowMeasure::Active => ds.re * s.re.signum() * base,
            FlowMeasure::Apparent => (s.conj() * ds).re / mag * base,
        };
        if let Some(c) = setup.v_col(f) {
            entries.push((c, dmag(d[0])));
        }
        if let Some(c) = setup.v_col(t) {
            entries.push((c, dmag(d[1])));
        }
        if let Some(c) = setup.th_col(f) {
            entries.push((c, dmag(d[2])));
        }
        if let Some(c) = setup.th_col(t) {
            entries.push((c, dmag(d[3])));
        }
    }
    Gradient { entries }
}
