//! "NETP1" checkpoints: magic, u32 length + JSON architecture, u32 tensor
//! count, then per tensor: u32 name length, name, u32 rank, u32 dims, f32
//! values. All integers and floats little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::nets::{Architecture, NetworkParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const NETP_MAGIC: &[u8; 5] = b"NETP1";

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_checkpoint<W: Write>(mut out: W, params: &NetworkParams) -> Result<()> {
    out.write_all(NETP_MAGIC)?;
    let arch = serde_json::to_vec(params.arch())?;
    put_u32(&mut out, arch.len())?;
    out.write_all(&arch)?;
    put_u32(&mut out, params.tensors().len())?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        put_u32(&mut out, name.len())?;
        out.write_all(name.as_bytes())?;
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        let bytes: Vec<u8> = t.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        out.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<NetworkParams> {
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic)?;
    if &magic != NETP_MAGIC {
        return Err(Error::Format("missing NETP1 magic".into()));
    }
    let n = get_u32(&mut input)?;
    let mut arch = vec![0u8; n];
    input.read_exact(&mut arch)?;
    let arch: Architecture = serde_json::from_slice(&arch)?;
    let count = get_u32(&mut input)?;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let len = get_u32(&mut input)?;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = get_u32(&mut input)?;
        let shape = (0..rank).map(|_| get_u32(&mut input)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut buf = vec![0u8; numel * 4];
        input.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        named.push((name, Tensor::new(shape, data)?));
    }
    NetworkParams::from_tensors(arch, named)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &NetworkParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NetworkParams> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
