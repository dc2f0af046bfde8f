//! Sample containers.
//!
//! Batches are stored either as CSV (`.csv`: header `x0,x1,...`, one row per
//! sample, shortest round-trip decimal floats) or as a binary container
//! (any other extension), little-endian:
//!
//! ```text
//! magic    8 bytes  "SKIPSMP\0"
//! version  u32      = 1
//! rows     u64
//! dim      u32
//! values   rows × dim f64, row-major
//! ```

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::{Batch, Error, Result};

pub const SAMPLES_MAGIC: &[u8; 8] = b"SKIPSMP\0";
pub const SAMPLES_VERSION: u32 = 1;

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn write_samples(path: &Path, batch: &Batch) -> Result<()> {
    if is_csv(path) {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record((0..batch.ncols()).map(|j| format!("x{j}")))?;
        for row in batch.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        return Ok(());
    }
    let mut out = Vec::with_capacity(24 + 8 * batch.len());
    out.extend_from_slice(SAMPLES_MAGIC);
    out.extend_from_slice(&SAMPLES_VERSION.to_le_bytes());
    out.extend_from_slice(&(batch.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(batch.ncols() as u32).to_le_bytes());
    for v in batch.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<Batch> {
    let bad = |reason: String| Error::Format { path: path.to_owned(), reason };
    if is_csv(path) {
        let mut r = csv::Reader::from_path(path)?;
        let dim = r.headers()?.len();
        let mut values = Vec::new();
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec?;
            for field in rec.iter() {
                values.push(field.trim().parse::<f64>().map_err(|e| bad(format!("row {rows}: {e}")))?);
            }
            rows += 1;
        }
        return Array2::from_shape_vec((rows, dim), values).map_err(|e| bad(e.to_string()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[..8] != SAMPLES_MAGIC {
        return Err(bad("missing sample-container header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != SAMPLES_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
    let body = &bytes[24..];
    if rows.checked_mul(dim).and_then(|n| n.checked_mul(8)) != Some(body.len()) {
        return Err(bad("payload length does not match header".into()));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Array2::from_shape_vec((rows, dim), values).map_err(|e| bad(e.to_string()))
}

/// Loss trace as CSV with header `step,loss`.
pub fn write_loss_trace(path: &Path, losses: &[f64]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "step,loss")?;
        for (i, l) in losses.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, l)?;
        }
        w.flush()
    };
    go().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::RandomSource;

    #[test]
    fn both_containers_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let b = RandomSource::new(1).normal_batch(17, 3) * 1e-3;
        for name in ["s.csv", "s.bin"] {
            let p = dir.path().join(name);
            write_samples(&p, &b).unwrap();
            assert_eq!(read_samples(&p).unwrap(), b);
        }
    }

    #[test]
    fn truncated_binary_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        write_samples(&p, &Batch::zeros((4, 2))).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_samples(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn loss_trace_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        write_loss_trace(&p, &[1.0, 0.5, 0.25]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "step,loss\n1,1\n2,0.5\n3,0.25\n");
    }
}
