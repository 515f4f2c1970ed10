//! Plain CSV dumps for channels, shift schedules and angular beliefs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nflink_core::acquisition::ShiftSchedule;
use nflink_core::geo_mp::{AngularBelief, AngularGrid};
use nflink_core::{CMatrix, C64};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct ChannelEntry {
    row: usize,
    col: usize,
    re: f64,
    im: f64,
}

/// Writes `h` as `row,col,re,im` rows in column-major order.
pub fn write_channel(path: &Path, h: &CMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for col in 0..h.ncols() {
        for row in 0..h.nrows() {
            let c = h[(row, col)];
            w.serialize(ChannelEntry { row, col, re: c.re, im: c.im })?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_channel(path: &Path) -> Result<CMatrix> {
    let mut r = csv::Reader::from_path(path)?;
    let entries: Vec<ChannelEntry> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    let rows = entries.iter().map(|e| e.row + 1).max().unwrap_or(0);
    let cols = entries.iter().map(|e| e.col + 1).max().unwrap_or(0);
    let mut h = CMatrix::zeros(rows, cols);
    for e in entries {
        h[(e.row, e.col)] = C64::new(e.re, e.im);
    }
    Ok(h)
}

/// Writes `slot,subarray,r,c` rows.
pub fn write_schedule(path: &Path, schedule: &ShiftSchedule) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut body = String::from("slot,subarray,r,c\n");
    for (slot, rs) in schedule.r.iter().enumerate() {
        for (k, r) in rs.iter().enumerate() {
            body.push_str(&format!("{slot},{k},{r},{}\n", schedule.c[slot]));
        }
    }
    out.write_all(body.as_bytes()).and_then(|_| out.flush()).map_err(|e| CliError::io(path, e))
}

/// Named beliefs over one grid as `subarray,angle_deg,<name>...` rows.
pub fn write_beliefs(path: &Path, grid: &AngularGrid, columns: &[(&str, &[AngularBelief])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["subarray".to_string(), "angle_deg".to_string()];
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    w.write_record(&header)?;
    let n_sub = columns.first().map_or(0, |(_, b)| b.len());
    for k in 0..n_sub {
        for (i, angle) in grid.angles.iter().enumerate() {
            let mut rec = vec![k.to_string(), angle.to_degrees().to_string()];
            rec.extend(columns.iter().map(|(_, b)| b[k].weights[i].to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
