use std::io::{BufRead, Write};

use super::CascadeRecord;
use crate::error::Result;

/// Write one JSON record per line.
pub fn write_records<'a, W: Write>(mut out: W, records: impl IntoIterator<Item = &'a CascadeRecord>) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Streaming reader over line-delimited records; blank lines are skipped.
pub struct RecordReader<R> {
    lines: std::io::Lines<R>,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(input: R) -> Self {
        RecordReader { lines: input.lines() }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<CascadeRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            if !line.trim().is_empty() {
                return Some(serde_json::from_str(&line).map_err(Into::into));
            }
        }
    }
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<CascadeRecord>> {
    RecordReader::new(input).collect()
}
