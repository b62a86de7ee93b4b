//! Reader for MATPOWER-style text cases (`mpc.bus = [...]` matrices).

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{
    Branch, Bus, BusKind, Generator, GridCase, Load, DEFAULT_EMERGENCY_RATIO,
    DEFAULT_HIDDEN_FAILURE_PROB,
};

/// Knobs applied while converting a MATPOWER case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportOptions {
    /// Long-term limit used where `rateA` is zero (unlimited), MW.
    pub unlimited_rating_mw: f64,
    /// `f_lim2 = ratio * f_lim1` when only one rating is present.
    pub emergency_ratio: f64,
    pub hidden_failure_prob: f64,
    /// Voltage bounds that override the case's own, when set.
    pub voltage_bounds: Option<(f64, f64)>,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self {
            unlimited_rating_mw: 9900.0,
            emergency_ratio: DEFAULT_EMERGENCY_RATIO,
            hidden_failure_prob: DEFAULT_HIDDEN_FAILURE_PROB,
            voltage_bounds: Some((super::DEFAULT_V_MIN, super::DEFAULT_V_MAX)),
        }
    }
}

struct Matrix {
    rows: Vec<(usize, Vec<f64>)>,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn find_scalar(text: &str, path: &Path, key: &str) -> Result<Option<f64>> {
    for (n, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if let Some(rest) = line.strip_prefix(key) {
            let rest = rest.trim_start();
            if let Some(v) = rest.strip_prefix('=') {
                let v = v.trim().trim_end_matches(';').trim();
                return v
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| parse_err(path, n + 1, format!("{key}: cannot parse {v:?}")));
            }
        }
    }
    Ok(None)
}

fn find_matrix(text: &str, path: &Path, key: &str, min_cols: usize) -> Result<Option<Matrix>> {
    let mut lines = text.lines().enumerate();
    let start = loop {
        let Some((n, raw)) = lines.next() else {
            return Ok(None);
        };
        let line = strip_comment(raw).trim();
        if let Some(rest) = line.strip_prefix(key) {
            let rest = rest.trim_start();
            if let Some(rest) = rest.strip_prefix('=') {
                let rest = rest.trim_start();
                if let Some(rest) = rest.strip_prefix('[') {
                    break (n, rest.to_string());
                }
                return Err(parse_err(path, n + 1, format!("{key}: expected '['")));
            }
        }
    };
    let mut rows = Vec::new();
    let mut pending = vec![(start.0, start.1)];
    let mut closed = false;
    while !closed {
        let (n, chunk) = match pending.pop() {
            Some(p) => p,
            None => match lines.next() {
                Some((n, raw)) => (n, strip_comment(raw).to_string()),
                None => return Err(parse_err(path, start.0 + 1, format!("{key}: unterminated matrix"))),
            },
        };
        let mut body = chunk.as_str();
        if let Some(i) = body.find(']') {
            body = &body[..i];
            closed = true;
        }
        for row in body.split(';') {
            let fields: Vec<&str> = row.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
            if fields.is_empty() {
                continue;
            }
            let mut vals = Vec::with_capacity(fields.len());
            for f in fields {
                let v = match f {
                    "Inf" | "inf" => f64::INFINITY,
                    "-Inf" | "-inf" => f64::NEG_INFINITY,
                    _ => f
                        .parse::<f64>()
                        .map_err(|_| parse_err(path, n + 1, format!("{key}: cannot parse field {f:?}")))?,
                };
                vals.push(v);
            }
            if vals.len() < min_cols {
                return Err(parse_err(
                    path,
                    n + 1,
                    format!("{key}: expected at least {min_cols} columns, found {}", vals.len()),
                ));
            }
            rows.push((n + 1, vals));
        }
    }
    Ok(Some(Matrix { rows }))
}

/// Parse MATPOWER case text. `path` is used only for diagnostics.
pub fn parse_matpower(text: &str, path: &Path, opts: &ImportOptions) -> Result<GridCase> {
    let name = text
        .lines()
        .map(|l| strip_comment(l).trim())
        .find_map(|l| l.strip_prefix("function").and_then(|r| r.split('=').nth(1)).map(|s| s.trim().to_string()))
        .unwrap_or_default();
    let base_mva = find_scalar(text, path, "mpc.baseMVA")?
        .ok_or_else(|| parse_err(path, 0, "missing mpc.baseMVA"))?;
    let bus_m = find_matrix(text, path, "mpc.bus", 13)?.ok_or_else(|| parse_err(path, 0, "missing mpc.bus"))?;
    let gen_m = find_matrix(text, path, "mpc.gen", 10)?.ok_or_else(|| parse_err(path, 0, "missing mpc.gen"))?;
    let br_m = find_matrix(text, path, "mpc.branch", 11)?
        .ok_or_else(|| parse_err(path, 0, "missing mpc.branch"))?;

    let mut buses = Vec::with_capacity(bus_m.rows.len());
    let mut loads = Vec::new();
    for (line, r) in &bus_m.rows {
        let id = r[0];
        if id < 0.0 || id.fract() != 0.0 {
            return Err(parse_err(path, *line, format!("bus id {id} is not a non-negative integer")));
        }
        let kind = match r[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Ref,
            4 => continue,
            t => return Err(parse_err(path, *line, format!("unknown bus type {t}"))),
        };
        let (v_min, v_max) = opts.voltage_bounds.unwrap_or((r[12], r[11]));
        buses.push(Bus {
            id: id as u32,
            kind,
            gs: r[4],
            bs: r[5],
            base_kv: r[9],
            vm: r[7],
            va: r[8],
            v_min,
            v_max,
        });
        if r[2] != 0.0 || r[3] != 0.0 {
            loads.push(Load {
                id: loads.len() + 1,
                bus: id as u32,
                p: r[2],
                q: r[3],
            });
        }
    }

    let mut generators = Vec::with_capacity(gen_m.rows.len());
    for (_, r) in &gen_m.rows {
        if r[7] <= 0.0 {
            continue;
        }
        generators.push(Generator {
            id: generators.len() + 1,
            bus: r[0] as u32,
            p: r[1],
            q: r[2],
            q_max: r[3],
            q_min: r[4],
            vg: r[5],
            p_max: r[8],
            p_min: r[9],
            slack_coeff: None,
        });
    }

    let mut branches = Vec::with_capacity(br_m.rows.len());
    for (_, r) in &br_m.rows {
        if r[10] <= 0.0 {
            continue;
        }
        let rate_a = if r[5] > 0.0 { r[5] } else { opts.unlimited_rating_mw };
        let tap = if r[8] == 0.0 { 1.0 } else { r[8] };
        branches.push(Branch {
            id: branches.len() + 1,
            from_bus: r[0] as u32,
            to_bus: r[1] as u32,
            r: r[2],
            x: r[3],
            b_shunt: r[4],
            tap,
            shift: r[9],
            f_lim1: rate_a,
            f_lim2: rate_a * opts.emergency_ratio,
            hidden_failure_prob: opts.hidden_failure_prob,
        });
    }

    GridCase::new(name, base_mva, buses, branches, generators, loads)
}
