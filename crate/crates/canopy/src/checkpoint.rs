//! Binary named-tensor checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"CNP1"
//! u64    tensor count
//! per tensor:
//!   u64          name length in bytes
//!   [u8]         UTF-8 name
//!   u64, u64     rows, cols
//!   [f64]        rows*cols values, row-major
//! ```
//!
//! Values round-trip bit-exactly; names and order match the parameter
//! registry that produced the file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::params::ParamSet;

const MAGIC: &[u8; 4] = b"CNP1";

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&(params.len() as u64).to_le_bytes()).map_err(io_err)?;
    for (_, name, tensor) in params.iter() {
        w.write_all(&(name.len() as u64).to_le_bytes()).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_all(&(tensor.nrows() as u64).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(tensor.ncols() as u64).to_le_bytes()).map_err(io_err)?;
        for v in tensor.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load(path: &Path) -> Result<Vec<(String, Array2<f64>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| Error::io(path, e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {magic:?}",
            path.display()
        )));
    }

    let count = read_u64(&mut r, path)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u64(&mut r, path)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io_err)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let rows = read_u64(&mut r, path)? as usize;
        let cols = read_u64(&mut r, path)? as usize;
        let mut data = vec![0f64; rows * cols];
        let mut buf = [0u8; 8];
        for slot in &mut data {
            r.read_exact(&mut buf).map_err(io_err)?;
            *slot = f64::from_le_bytes(buf);
        }
        let tensor = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        tensors.push((name, tensor));
    }
    Ok(tensors)
}

/// Overwrite `params` values with the tensors stored at `path`. Every
/// registered tensor must be present with an identical shape.
pub fn restore(params: &mut ParamSet, path: &Path) -> Result<()> {
    let stored = load(path)?;
    let mut found = 0usize;
    for (name, tensor) in stored {
        let Some(id) = params.lookup(&name) else {
            return Err(Error::Checkpoint(format!(
                "{}: unknown tensor {name:?}",
                path.display()
            )));
        };
        let current = params.get(id);
        if current.dim() != tensor.dim() {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {name:?} has shape {:?}, expected {:?}",
                path.display(),
                tensor.dim(),
                current.dim()
            )));
        }
        *params.get_mut(id) = tensor;
        found += 1;
    }
    if found != params.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {found} tensors restored, registry has {}",
            path.display(),
            params.len()
        )));
    }
    Ok(())
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ps = ParamSet::new();
        let a = ps.register("layer.a", array![[1.0, f64::MIN_POSITIVE], [-0.0, 1e300]]);
        let b = ps.register("layer.b", array![[0.1 + 0.2]]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&ps, &path).unwrap();

        let mut restored = ParamSet::new();
        let ra = restored.register("layer.a", Array2::zeros((2, 2)));
        let rb = restored.register("layer.b", Array2::zeros((1, 1)));
        restore(&mut restored, &path).unwrap();

        assert_eq!(
            ps.get(a).iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            restored.get(ra).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(ps.get(b)[[0, 0]].to_bits(), restored.get(rb)[[0, 0]].to_bits());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut ps = ParamSet::new();
        ps.register("w", Array2::zeros((2, 3)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&ps, &path).unwrap();

        let mut other = ParamSet::new();
        other.register("w", Array2::zeros((3, 2)));
        assert!(restore(&mut other, &path).is_err());
    }

    #[test]
    fn missing_tensor_is_rejected() {
        let mut ps = ParamSet::new();
        ps.register("w", Array2::zeros((1, 1)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&ps, &path).unwrap();

        let mut other = ParamSet::new();
        other.register("w", Array2::zeros((1, 1)));
        other.register("extra", Array2::zeros((1, 1)));
        assert!(restore(&mut other, &path).is_err());
    }
}
