//! JSON-lines artifacts. The first line of every file is a header object.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graphgen::{Family, WeightedGraph};
use crate::scalar::Scalar;
use crate::trace::Trace;

/// Provenance line written at the top of every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algo: Option<String>,
    pub count: usize,
}

impl Header {
    pub fn new(kind: &str, config_hash: &str, seed: u64) -> Self {
        Header { kind: kind.to_string(), config_hash: config_hash.to_string(), seed, family: None, n: None, algo: None, count: 0 }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: Header,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Writes `header` (with `count` set) followed by one record per line.
pub fn write_jsonl(path: &Path, header: &Header, records: &[Value]) -> Result<()> {
    let mut header = header.clone();
    header.count = records.len();
    let mut out = serde_json::to_string(&HeaderLine { header }).expect("header serialises");
    out.push('\n');
    for r in records {
        out += &serde_json::to_string(r).expect("values serialise");
        out.push('\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| io_err(path, e))
}

/// Parses a JSON-lines artifact. Errors name the 1-based line.
pub fn parse_jsonl(text: &str) -> Result<(Header, Vec<Value>)> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
    let header = serde_json::from_str::<HeaderLine>(first)
        .map_err(|e| Error::Parse { line: 1, msg: format!("bad header: {e}") })?
        .header;
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?);
    }
    if records.len() != header.count {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("header announces {} records, found {}", header.count, records.len()),
        });
    }
    Ok((header, records))
}

pub fn read_jsonl(path: &Path) -> Result<(Header, Vec<Value>)> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_jsonl(&text).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse { line, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

fn record_err(i: usize, e: Error) -> Error {
    match e {
        Error::Parse { .. } => e,
        other => Error::Parse { line: i + 2, msg: other.to_string() },
    }
}

pub fn save_graphs(path: &Path, header: &Header, graphs: &[WeightedGraph]) -> Result<()> {
    let records: Vec<Value> = graphs.iter().map(|g| serde_json::to_value(g).expect("graphs serialise")).collect();
    write_jsonl(path, header, &records)
}

pub fn load_graphs(path: &Path) -> Result<(Header, Vec<WeightedGraph>)> {
    let (header, records) = read_jsonl(path)?;
    let graphs = records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let g: WeightedGraph = serde_json::from_value(r).map_err(|e| Error::Parse { line: i + 2, msg: e.to_string() })?;
            g.validate().map_err(|e| record_err(i, e))?;
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, graphs))
}

pub fn save_traces<S: Scalar>(path: &Path, header: &Header, traces: &[Trace<S>]) -> Result<()> {
    let records: Vec<Value> = traces.iter().map(Trace::to_json).collect();
    write_jsonl(path, header, &records)
}

pub fn load_traces<S: Scalar>(path: &Path) -> Result<(Header, Vec<Trace<S>>)> {
    let (header, records) = read_jsonl(path)?;
    let traces = records
        .iter()
        .enumerate()
        .map(|(i, r)| Trace::from_json(r).map_err(|e| record_err(i, e)))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, traces))
}
