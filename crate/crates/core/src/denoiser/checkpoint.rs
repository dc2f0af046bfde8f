//! Binary checkpoint container for [`MlpDenoiser`].
//!
//! All integers are `u32` and all reals `f64`, little-endian:
//!
//! ```text
//! magic      8 bytes   "SKIPMLP\0"
//! version    u32       = 1
//! data_dim   u32
//! time_dim   u32
//! steps      u32       diffusion steps T the model was trained for
//! n_layers   u32
//! shapes     n_layers × (in u32, out u32)
//! params     per layer: weight (out × in, row-major) then bias (out)
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::Dense;
use super::MlpDenoiser;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SKIPMLP\0";
pub const CHECKPOINT_VERSION: u32 = 1;

impl MlpDenoiser {
    pub fn to_bytes(&self) -> Vec<u8> {
        use super::Denoiser;
        let mut out = Vec::with_capacity(32 + 8 * self.parameter_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [CHECKPOINT_VERSION, self.dim() as u32, self.time_dim() as u32, self.steps() as u32, self.layers.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.layers {
            out.extend_from_slice(&(l.weight.ncols() as u32).to_le_bytes());
            out.extend_from_slice(&(l.weight.nrows() as u32).to_le_bytes());
        }
        for p in self.flat_parameters() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let dim = r.u32()? as usize;
        let time_dim = r.u32()? as usize;
        let steps = r.u32()? as usize;
        let n_layers = r.u32()? as usize;
        if n_layers == 0 || n_layers > 1024 {
            return Err(format!("implausible layer count {n_layers}"));
        }
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            shapes.push((r.u32()? as usize, r.u32()? as usize));
        }
        let mut widths = vec![dim];
        for (i, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            let expect_in = widths[i] + if i == 0 { time_dim } else { 0 };
            if fan_in != expect_in {
                return Err(format!("layer {i} fan-in {fan_in}, expected {expect_in}"));
            }
            widths.push(fan_out);
        }
        let mut layers = Vec::with_capacity(n_layers);
        for &(fan_in, fan_out) in &shapes {
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| r.f64()).collect::<std::result::Result<_, _>>()?;
            let b: Vec<f64> = (0..fan_out).map(|_| r.f64()).collect::<std::result::Result<_, _>>()?;
            layers.push(Dense {
                weight: Array2::from_shape_vec((fan_out, fan_in), w).map_err(|e| e.to_string())?,
                bias: Array1::from(b),
            });
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        MlpDenoiser::from_layers(widths, time_dim, steps, layers).map_err(|e| e.to_string())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_checkpoint(model: &MlpDenoiser, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<MlpDenoiser> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    MlpDenoiser::from_bytes(&bytes).map_err(|reason| Error::Format { path: path.to_owned(), reason })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::RandomSource;

    #[test]
    fn roundtrip_and_rejects_corruption() {
        let m = MlpDenoiser::new(&[2, 5, 3, 2], 6, 40, &mut RandomSource::new(9)).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(MlpDenoiser::from_bytes(&bytes).unwrap(), m);
        assert!(MlpDenoiser::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(MlpDenoiser::from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 2;
        assert!(MlpDenoiser::from_bytes(&bad).unwrap_err().contains("version"));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_checkpoint(Path::new("/nonexistent/model.ckpt")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
