//! Binary field snapshots: a single-line JSON header followed by the values as
//! little-endian f64 in row-major order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NlgsError, Result};
use crate::grid::{Field, Grid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub dim: usize,
    pub extents: Vec<f64>,
    pub counts: Vec<usize>,
    pub time: f64,
    pub name: String,
}

pub fn write_snapshot(w: &mut impl Write, field: &Field, time: f64, name: &str) -> Result<()> {
    let g = field.grid();
    let header = SnapshotHeader {
        dim: g.dim(),
        extents: g.extents().to_vec(),
        counts: g.counts().to_vec(),
        time,
        name: name.to_string(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(8 * field.values().len());
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_snapshot(r: impl Read) -> Result<(Field, SnapshotHeader)> {
    let mut reader = BufReader::new(r);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(NlgsError::Snapshot("missing header newline".into()));
    }
    let header: SnapshotHeader = serde_json::from_str(line.trim_end())?;
    let grid = Grid::new(header.dim, &header.extents, &header.counts)?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * grid.len() {
        return Err(NlgsError::Snapshot(format!(
            "expected {} payload bytes, found {}",
            8 * grid.len(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((Field::from_values(&grid, values)?, header))
}

pub fn save_snapshot(path: &Path, field: &Field, time: f64, name: &str) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_snapshot(&mut f, field, time, name)?;
    f.flush()?;
    Ok(())
}

pub fn load_snapshot(path: &Path) -> Result<(Field, SnapshotHeader)> {
    read_snapshot(fs::File::open(path)?)
}
