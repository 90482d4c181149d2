//! Parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//! magic `DCONCKPT`, version `u32`, input width `u64`, hidden layer count
//! `u32`, each hidden width `u64`, feature width `u64`, class count `u64`,
//! value count `u64`, then every parameter as `f64` in declaration order
//! (encoder layers weight then bias, then the head).

use std::path::Path;

use dualcon_core::model::{ModelDims, ModelParams};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DCONCKPT";
pub const VERSION: u32 = 1;

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let d = &params.dims;
    let mut out = Vec::with_capacity(64 + 8 * params.num_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(d.input as u64).to_le_bytes());
    out.extend_from_slice(&(d.hidden.len() as u32).to_le_bytes());
    for &h in &d.hidden {
        out.extend_from_slice(&(h as u64).to_le_bytes());
    }
    out.extend_from_slice(&(d.feature as u64).to_le_bytes());
    out.extend_from_slice(&(d.classes as u64).to_le_bytes());
    out.extend_from_slice(&(params.num_values() as u64).to_le_bytes());
    for v in params.to_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                file: self.file.to_string(),
                msg: format!("truncated while reading {what} at byte offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| self.bad(format!("{what} {v} does not fit in memory")))
    }

    fn bad(&self, msg: String) -> Error {
        Error::Format {
            file: self.file.to_string(),
            msg,
        }
    }
}

pub fn decode(bytes: &[u8], file: &str) -> Result<ModelParams> {
    let mut r = Reader {
        bytes,
        pos: 0,
        file,
    };
    if r.take(8, "magic")? != MAGIC {
        return Err(r.bad("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.bad(format!("unsupported checkpoint version {version}")));
    }
    let input = r.usize("input width")?;
    let layers = r.u32("hidden layer count")? as usize;
    let hidden = (0..layers)
        .map(|_| r.usize("hidden width"))
        .collect::<Result<Vec<_>>>()?;
    let feature = r.usize("feature width")?;
    let classes = r.usize("class count")?;
    let dims = ModelDims::new(input, hidden, feature, classes).map_err(|e| r.bad(e.to_string()))?;
    let count = r.usize("value count")?;
    let expected = ModelParams::zeros(&dims)?.num_values();
    if count != expected || r.bytes.len() - r.pos != 8 * count {
        return Err(r.bad(format!(
            "expected {expected} values ({} bytes) after the header, found count {count} and {} bytes",
            8 * expected,
            r.bytes.len() - r.pos
        )));
    }
    let values: Vec<f64> = r
        .take(8 * count, "values")?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = ModelParams::from_flat(&dims, &values)?;
    params.validate().map_err(|e| r.bad(e.to_string()))?;
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dualcon_core::model::init_params;
    use dualcon_core::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        for hidden in [vec![], vec![7], vec![5, 3]] {
            let dims = ModelDims::new(6, hidden, 4, 3).unwrap();
            let p = init_params(&mut Rng::new(2), &dims).unwrap();
            let bytes = encode(&p);
            assert_eq!(decode(&bytes, "t").unwrap(), p);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let dims = ModelDims::new(3, vec![2], 2, 2).unwrap();
        let bytes = encode(&init_params(&mut Rng::new(1), &dims).unwrap());
        assert!(decode(&bytes[..bytes.len() - 1], "t").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad, "t").unwrap_err().to_string().contains("magic"));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(decode(&bad, "t")
            .unwrap_err()
            .to_string()
            .contains("version"));
        let mut long = bytes;
        long.push(0);
        assert!(decode(&long, "t").is_err());
    }
}
