//! Flat binary container of named tensors, plus a text manifest.
//!
//! Layout: magic `VCKP`, format version, entry count, then per entry
//! name length/bytes, dtype tag, rank, extents, raw little-endian data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::element::{Dtype, Element};
use crate::error::TensorError;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"VCKP";
const VERSION: u32 = 1;

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Element> {
    pub entries: Vec<(String, Tensor<T>)>,
}

impl<T: Element> Checkpoint<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Self {
        Checkpoint { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), TensorError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            let nb = name.as_bytes();
            w.write_all(&(nb.len() as u16).to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&[T::DTYPE as u8])?;
            w.write_all(&(t.shape().len() as u8).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.numel() * T::DTYPE.size_bytes());
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, TensorError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::Format(format!(
                "{}: not a checkpoint file",
                path.display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(TensorError::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| TensorError::Format("non-utf8 tensor name".into()))?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let dtype = Dtype::from_tag(tag[0])
                .ok_or_else(|| TensorError::Format(format!("unknown dtype tag {}", tag[0])))?;
            if dtype != T::DTYPE {
                return Err(TensorError::Format(format!(
                    "tensor '{name}' stored as {dtype:?}, expected {:?}",
                    T::DTYPE
                )));
            }
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                shape.push(read_u64(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut buf = vec![0u8; numel * dtype.size_bytes()];
            r.read_exact(&mut buf)?;
            let data: Vec<T> = buf
                .chunks_exact(dtype.size_bytes())
                .map(T::read_le)
                .collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint { entries })
    }
}

/// Write the companion `key = value` text manifest.
pub fn write_manifest(path: &Path, fields: &[(&str, String)]) -> Result<(), TensorError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in fields {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a manifest back into key/value pairs.
pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>, TensorError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    Ok(out)
}

fn read_u16(r: &mut impl Read) -> Result<u16, TensorError> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32(r: &mut impl Read) -> Result<u32, TensorError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, TensorError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_names_shapes_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = Checkpoint::new(vec![
            (
                "block1.attn.wq".into(),
                Tensor::new(vec![2, 3], vec![0.1f32, -0.2, 0.3, 1.5e-7, -9.9, 0.0]).unwrap(),
            ),
            ("bias".into(), Tensor::from_vec(vec![4.25f32])),
        ]);
        ckpt.write_file(&path).unwrap();
        let back = Checkpoint::<f32>::read_file(&path).unwrap();
        assert_eq!(ckpt, back);
    }

    #[test]
    fn dtype_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        Checkpoint::new(vec![("w".into(), Tensor::from_vec(vec![1.0f32]))])
            .write_file(&path)
            .unwrap();
        let err = Checkpoint::<f64>::read_file(&path).unwrap_err();
        assert!(err.to_string().contains("F32"), "{err}");
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.manifest");
        write_manifest(
            &path,
            &[("config_hash", "abc123".into()), ("seed", "7".into())],
        )
        .unwrap();
        let fields = read_manifest(&path).unwrap();
        assert_eq!(fields[0], ("config_hash".to_string(), "abc123".to_string()));
        assert_eq!(fields[1], ("seed".to_string(), "7".to_string()));
    }
}
