use std::io::{Read, Write};

use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, Event};
use quick_xml::Writer;

use super::{InteractionMatrix, SeverityParams};
use crate::error::{Error, Result};
use crate::grid::GridCase;

/// Directed edges `from,to,weight` (1-based branch ids) with weight above
/// `threshold`.
pub fn write_edge_list<W: Write>(w: &InteractionMatrix, threshold: f64, out: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(["from", "to", "weight"])?;
    let n = w.n_branch();
    for i in 0..n {
        for j in 0..n {
            let x = w.weight(i, j);
            if x > threshold {
                csv.write_record([(i + 1).to_string(), (j + 1).to_string(), x.to_string()])?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

fn xml_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("xml: {e}"))
}

/// GEXF document with one node per branch, labelled `id(from-to)`, and the
/// edges above `threshold`. `k` adds a per-node importance attribute.
pub fn write_gexf<W: Write>(w: &InteractionMatrix, case: &GridCase, k: Option<&[f64]>, threshold: f64, out: W) -> Result<()> {
    if case.n_branches() != w.n_branch() {
        return Err(Error::InvalidArgument("case and matrix differ in branch count".into()));
    }
    if k.is_some_and(|k| k.len() != w.n_branch()) {
        return Err(Error::InvalidArgument("importance vector length differs from branch count".into()));
    }
    let mut x = Writer::new_with_indent(out, b' ', 2);
    x.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None))).map_err(xml_err)?;
    x.write_event(Event::Start(
        BytesStart::new("gexf").with_attributes([("xmlns", "http://gexf.net/1.3"), ("version", "1.3")]),
    ))
    .map_err(xml_err)?;
    x.write_event(Event::Start(BytesStart::new("graph").with_attributes([("defaultedgetype", "directed")])))
        .map_err(xml_err)?;
    if k.is_some() {
        x.write_event(Event::Start(BytesStart::new("attributes").with_attributes([("class", "node")])))
            .map_err(xml_err)?;
        x.write_event(Event::Empty(
            BytesStart::new("attribute").with_attributes([("id", "k"), ("title", "K"), ("type", "double")]),
        ))
        .map_err(xml_err)?;
        x.write_event(Event::End(BytesEnd::new("attributes"))).map_err(xml_err)?;
    }

    x.write_event(Event::Start(BytesStart::new("nodes"))).map_err(xml_err)?;
    for (i, br) in case.branches().iter().enumerate() {
        let id = (i + 1).to_string();
        let label = format!("{}({}-{})", i + 1, br.from_bus, br.to_bus);
        let node = BytesStart::new("node").with_attributes([("id", id.as_str()), ("label", label.as_str())]);
        match k {
            Some(k) => {
                x.write_event(Event::Start(node)).map_err(xml_err)?;
                x.write_event(Event::Start(BytesStart::new("attvalues"))).map_err(xml_err)?;
                let v = k[i].to_string();
                x.write_event(Event::Empty(
                    BytesStart::new("attvalue").with_attributes([("for", "k"), ("value", v.as_str())]),
                ))
                .map_err(xml_err)?;
                x.write_event(Event::End(BytesEnd::new("attvalues"))).map_err(xml_err)?;
                x.write_event(Event::End(BytesEnd::new("node"))).map_err(xml_err)?;
            }
            None => x.write_event(Event::Empty(node)).map_err(xml_err)?,
        }
    }
    x.write_event(Event::End(BytesEnd::new("nodes"))).map_err(xml_err)?;

    x.write_event(Event::Start(BytesStart::new("edges"))).map_err(xml_err)?;
    let n = w.n_branch();
    let mut e = 0usize;
    for i in 0..n {
        for j in 0..n {
            let wt = w.weight(i, j);
            if wt <= threshold {
                continue;
            }
            let (id, s, t, v) = (e.to_string(), (i + 1).to_string(), (j + 1).to_string(), wt.to_string());
            x.write_event(Event::Empty(BytesStart::new("edge").with_attributes([
                ("id", id.as_str()),
                ("source", s.as_str()),
                ("target", t.as_str()),
                ("weight", v.as_str()),
            ])))
            .map_err(xml_err)?;
            e += 1;
        }
    }
    x.write_event(Event::End(BytesEnd::new("edges"))).map_err(xml_err)?;
    x.write_event(Event::End(BytesEnd::new("graph"))).map_err(xml_err)?;
    x.write_event(Event::End(BytesEnd::new("gexf"))).map_err(xml_err)?;
    let mut out = x.into_inner();
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

const CHECKPOINT_HEADER: [&str; 6] = ["n_branch", "n_samples", "k1", "k2", "l_t", "case_hash"];

/// Matrix checkpoint: a header row and its values, then the nonzero
/// severity sums as `from,to,sum` rows (1-based). Reloading restores the
/// exact estimate, so further samples can be merged in.
pub fn write_checkpoint<W: Write>(w: &InteractionMatrix, out: W) -> Result<()> {
    let mut csv = csv::WriterBuilder::new().flexible(true).from_writer(out);
    csv.write_record(CHECKPOINT_HEADER)?;
    let p = w.params();
    csv.write_record([
        w.n_branch().to_string(),
        w.n_samples().to_string(),
        p.k1.to_string(),
        p.k2.to_string(),
        w.total_load().to_string(),
        w.case_hash().unwrap_or("").to_string(),
    ])?;
    csv.write_record(["from", "to", "sum"])?;
    let n = w.n_branch();
    for (idx, &s) in w.sums().iter().enumerate() {
        if s != 0.0 {
            csv.write_record([(idx / n + 1).to_string(), (idx % n + 1).to_string(), s.to_string()])?;
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<InteractionMatrix> {
    let mut csv = csv::ReaderBuilder::new().flexible(true).has_headers(false).from_reader(input);
    let mut rows = csv.records();
    let mut next = |what: &str| -> Result<csv::StringRecord> {
        rows.next()
            .ok_or_else(|| Error::Format(format!("checkpoint truncated before {what}")))?
            .map_err(Into::into)
    };
    let head = next("header")?;
    if head.iter().ne(CHECKPOINT_HEADER) {
        return Err(Error::Format("not an interaction checkpoint".into()));
    }
    let meta = next("metadata")?;
    let num = |i: usize| -> Result<f64> {
        meta.get(i)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad checkpoint field {}", CHECKPOINT_HEADER[i])))
    };
    let n_branch = num(0)? as usize;
    let n_samples = num(1)? as usize;
    let params = SeverityParams { k1: num(2)?, k2: num(3)? };
    let l_t = num(4)?;
    let hash = meta.get(5).filter(|s| !s.is_empty()).map(str::to_string);
    next("entry header")?;
    let mut sums = vec![0.0; n_branch * n_branch];
    for row in rows {
        let row = row?;
        let field = |i: usize| row.get(i).ok_or_else(|| Error::Format("short checkpoint row".into()));
        let parse_id = |s: &str| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(id) if (1..=n_branch).contains(&id) => Ok(id - 1),
                _ => Err(Error::Format(format!("bad branch id {s:?} in checkpoint"))),
            }
        };
        let (i, j) = (parse_id(field(0)?)?, parse_id(field(1)?)?);
        let s: f64 = field(2)?.parse().map_err(|_| Error::Format("bad checkpoint sum".into()))?;
        sums[i * n_branch + j] = s;
    }
    InteractionMatrix::from_parts(n_branch, n_samples, params, l_t, hash, sums)
}
