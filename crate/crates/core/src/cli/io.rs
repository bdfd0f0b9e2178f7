//! CSV tables and state files.
//!
//! A state file is one `# {json}` header line describing the grid followed by
//! CSV rows `field,sector,node,re,im`. Bulk rows (`u`, `w`) index a line node
//! of the sector with wavenumber `sector`; membrane rows (`v`, `z`) index the
//! membrane dof. Numbers use the shortest round-trip decimal form.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::discrete::DiscreteOperator;
use crate::error::{Error, Result};
use crate::model::GeometryKind;
use crate::state::State;

const FORMAT: &str = "acoustic-lab-state";

/// Shortest decimal form that reads back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Grid description stored in a state file header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateHeader {
    pub format: String,
    pub geometry: GeometryKind,
    pub n_y: usize,
    /// Wavenumbers of the stored sectors, in storage order.
    pub sectors: Vec<i64>,
    pub n_bd: usize,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl StateHeader {
    pub fn for_operator(op: &DiscreteOperator, meta: serde_json::Value) -> Self {
        StateHeader {
            format: FORMAT.into(),
            geometry: op.geom.kind,
            n_y: op.n,
            sectors: wavenumbers(op),
            n_bd: op.n_bd(),
            meta,
        }
    }
}

fn wavenumbers(op: &DiscreteOperator) -> Vec<i64> {
    op.sectors.iter().map(|&s| op.geom.sectors[s]).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Writes a numeric table with a fixed header.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.iter().map(|x| num(*x))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a table whose cells are already formatted.
pub fn write_text_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes pretty JSON followed by a newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(f)?;
    Ok(())
}

/// Writes `state` on the grid of `op`.
pub fn write_state(path: &Path, op: &DiscreteOperator, state: &State, meta: serde_json::Value) -> Result<()> {
    let header = StateHeader::for_operator(op, meta);
    let mut f = File::create(path)?;
    writeln!(f, "# {}", serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?)?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["field", "sector", "node", "re", "im"]).map_err(csv_err)?;
    let ks = wavenumbers(op);
    for (name, data) in [("u", &state.u), ("w", &state.w)] {
        for (i, x) in data.iter().enumerate() {
            let (ls, node) = (i / op.n, i % op.n);
            w.write_record([name.to_string(), ks[ls].to_string(), node.to_string(), num(x.re), num(x.im)])
                .map_err(csv_err)?;
        }
    }
    for (name, data) in [("v", &state.v), ("z", &state.z)] {
        for (j, x) in data.iter().enumerate() {
            let k = ks[op.trace[j].0];
            w.write_record([name.to_string(), k.to_string(), j.to_string(), num(x.re), num(x.im)])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the header line of a state file.
pub fn read_header(path: &Path) -> Result<StateHeader> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| Error::Format(format!("{}: missing '# ' header line", path.display())))?;
    let header: StateHeader =
        serde_json::from_str(json.trim()).map_err(|e| Error::Format(format!("{}: header: {e}", path.display())))?;
    if header.format != FORMAT {
        return Err(Error::Format(format!("{}: unknown format {:?}", path.display(), header.format)));
    }
    Ok(header)
}

/// Reads a state file written on the grid of `op`.
pub fn read_state(path: &Path, op: &DiscreteOperator) -> Result<(State, StateHeader)> {
    let header = read_header(path)?;
    let ks = wavenumbers(op);
    if header.geometry != op.geom.kind || header.n_y != op.n || header.sectors != ks || header.n_bd != op.n_bd() {
        return Err(Error::Grid(format!("{}: grid differs from the configured operator", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(File::open(path)?));
    let mut s = op.zero_state();
    let mut seen = vec![false; 2 * op.n_bulk() + 2 * op.n_bd()];
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 5 {
            return Err(Error::Format(format!("{}: row with {} cells", path.display(), rec.len())));
        }
        let cell = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| Error::Format(format!("{}: {:?}: {e}", path.display(), &rec[i])))
        };
        let k: i64 = rec[1].parse().map_err(|_| Error::Format(format!("bad sector {:?}", &rec[1])))?;
        let node: usize = rec[2].parse().map_err(|_| Error::Format(format!("bad node {:?}", &rec[2])))?;
        let x = Complex64::new(cell(3)?, cell(4)?);
        let (slot, offset, target) = match &rec[0] {
            "u" | "w" => {
                let ls = ks.iter().position(|&q| q == k).ok_or_else(|| Error::Grid(format!("sector {k}")))?;
                if node >= op.n {
                    return Err(Error::Grid(format!("node {node} out of range")));
                }
                let i = ls * op.n + node;
                if &rec[0] == "u" {
                    (i, 0, &mut s.u)
                } else {
                    (i, op.n_bulk(), &mut s.w)
                }
            }
            "v" | "z" => {
                if node >= op.n_bd() {
                    return Err(Error::Grid(format!("membrane dof {node} out of range")));
                }
                if &rec[0] == "v" {
                    (node, 2 * op.n_bulk(), &mut s.v)
                } else {
                    (node, 2 * op.n_bulk() + op.n_bd(), &mut s.z)
                }
            }
            other => return Err(Error::Format(format!("unknown field {other:?}"))),
        };
        target[slot] = x;
        seen[offset + slot] = true;
    }
    if let Some(missing) = seen.iter().position(|b| !b) {
        return Err(Error::Format(format!("{}: entry {missing} missing", path.display())));
    }
    Ok((s, header))
}
