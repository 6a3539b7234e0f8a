//! Binary triplet dataset files: a header tying the data to a catalog
//! and capacities, then one fixed-size record per sample.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::CoreError;
use crate::triplet::{IcuSample, Triplet};

const MAGIC: &[u8; 4] = b"VCDS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub catalog_hash: String,
    pub capacity: u32,
    pub target_capacity: u32,
    pub n_samples: u64,
}

pub fn write_dataset(
    path: &Path,
    samples: &[IcuSample],
    catalog_hash: &str,
    capacity: usize,
    target_capacity: usize,
) -> Result<(), CoreError> {
    let io = |e: std::io::Error| CoreError::io(path.display().to_string(), e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    let hash = catalog_hash.as_bytes();
    w.write_all(&(hash.len() as u16).to_le_bytes()).map_err(io)?;
    w.write_all(hash).map_err(io)?;
    w.write_all(&(capacity as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(target_capacity as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(samples.len() as u64).to_le_bytes()).map_err(io)?;
    for s in samples {
        if s.conditional.len() != capacity || s.target.len() != target_capacity {
            return Err(CoreError::Dataset(format!(
                "stay {}: array sizes {}/{} do not match capacities {capacity}/{target_capacity}",
                s.stay_id,
                s.conditional.len(),
                s.target.len()
            )));
        }
        write_str(&mut w, &s.subject_id).map_err(io)?;
        write_str(&mut w, &s.stay_id).map_err(io)?;
        for t in s.conditional.iter().chain(&s.target) {
            w.write_all(&t.feature_id.to_le_bytes()).map_err(io)?;
            w.write_all(&t.time.to_le_bytes()).map_err(io)?;
            w.write_all(&t.value.to_le_bytes()).map_err(io)?;
            w.write_all(&[u8::from(t.mask)]).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<IcuSample>), CoreError> {
    let io = |e: std::io::Error| CoreError::io(path.display().to_string(), e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(CoreError::Dataset(format!(
            "{}: not a triplet dataset file",
            path.display()
        )));
    }
    let version = read_u32(&mut r).map_err(io)?;
    if version != VERSION {
        return Err(CoreError::Dataset(format!("unsupported dataset version {version}")));
    }
    let hash_len = read_u16(&mut r).map_err(io)? as usize;
    let mut hash_buf = vec![0u8; hash_len];
    r.read_exact(&mut hash_buf).map_err(io)?;
    let catalog_hash = String::from_utf8(hash_buf)
        .map_err(|_| CoreError::Dataset("non-utf8 catalog hash".into()))?;
    let capacity = read_u32(&mut r).map_err(io)?;
    let target_capacity = read_u32(&mut r).map_err(io)?;
    let n_samples = read_u64(&mut r).map_err(io)?;

    let mut samples = Vec::with_capacity(n_samples as usize);
    for _ in 0..n_samples {
        let subject_id = read_str(&mut r).map_err(io)?;
        let stay_id = read_str(&mut r).map_err(io)?;
        let mut read_triplets = |n: u32| -> Result<Vec<Triplet>, std::io::Error> {
            let mut out = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let feature_id = read_u32(&mut r)?;
                let time = read_f32(&mut r)?;
                let value = read_f32(&mut r)?;
                let mut mask = [0u8; 1];
                r.read_exact(&mut mask)?;
                out.push(Triplet {
                    feature_id,
                    time,
                    value,
                    mask: mask[0] != 0,
                });
            }
            Ok(out)
        };
        let conditional = read_triplets(capacity).map_err(io)?;
        let target = read_triplets(target_capacity).map_err(io)?;
        samples.push(IcuSample {
            subject_id,
            stay_id,
            conditional,
            target,
        });
    }
    Ok((
        DatasetHeader {
            catalog_hash,
            capacity,
            target_capacity,
            n_samples,
        },
        samples,
    ))
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u16).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> std::io::Result<String> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

fn read_u16(r: &mut impl Read) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> std::io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}
