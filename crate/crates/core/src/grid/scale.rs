use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridCase;

/// Uniform long-term limits by branch class, MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformLimits {
    pub line_mw: f64,
    pub xfmr_mw: f64,
}

/// Scale demand and thermal limits.
///
/// Every load's `p` and `q` are multiplied by `load_factor`. Limits are
/// either multiplied by `limit_factor` or, when `uniform` is given, replaced
/// by the per-class value. In both cases the ratio `f_lim2 / f_lim1` of each
/// branch is preserved.
pub fn scale_case(
    case: &GridCase,
    load_factor: f64,
    limit_factor: f64,
    uniform: Option<UniformLimits>,
) -> Result<GridCase> {
    if !(load_factor > 0.0 && limit_factor > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scale factors must be positive, got load {load_factor}, limit {limit_factor}"
        )));
    }
    if let Some(u) = uniform {
        if !(u.line_mw > 0.0 && u.xfmr_mw > 0.0) {
            return Err(Error::InvalidArgument("uniform limits must be positive".into()));
        }
    }
    let loads = case
        .loads
        .iter()
        .map(|l| {
            let mut l = l.clone();
            l.p *= load_factor;
            l.q *= load_factor;
            l
        })
        .collect();
    let branches = case
        .branches
        .iter()
        .map(|b| {
            let mut b = b.clone();
            let ratio = b.f_lim2 / b.f_lim1;
            b.f_lim1 = match uniform {
                Some(u) if case.is_transformer(b.id) => u.xfmr_mw,
                Some(u) => u.line_mw,
                None => b.f_lim1 * limit_factor,
            };
            b.f_lim2 = b.f_lim1 * ratio;
            b
        })
        .collect();
    case.rebuild(branches, case.generators.clone(), loads)
}
