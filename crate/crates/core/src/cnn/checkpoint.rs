//! Binary checkpoint of a network's trainable tensors.
//!
//! Layout (all integers u32 little-endian):
//!
//! ```text
//! "LPNN" | version | word_bits | layer_count
//! per parameterized layer, weight then bias:
//!     rank | dims[rank] | f32 LE values
//! ```
//!
//! The architecture itself is not stored; loading fills a network built with
//! the same layer sequence.

use std::io::{self, Read, Write};

use super::layers::Tensor;
use super::network::Network;
use super::real::Real;
use super::CnnError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LPNN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save_checkpoint<T: Real, W: Write>(writer: &mut W, network: &Network<T>, word_bits: u32) -> Result<(), CnnError> {
    writer.write_all(CHECKPOINT_MAGIC)?;
    writer.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    writer.write_all(&word_bits.to_le_bytes())?;
    let layer_count = network.layers().iter().filter(|l| l.params.is_some()).count();
    put_u32(writer, layer_count)?;
    for tensor in network.tensors() {
        put_u32(writer, tensor.dims().len())?;
        for &d in tensor.dims() {
            put_u32(writer, d)?;
        }
        let mut buf = Vec::with_capacity(tensor.len() * 4);
        for v in tensor.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        writer.write_all(&buf)?;
    }
    Ok(())
}

/// Overwrites `network`'s parameters; returns the stored word length.
pub fn load_checkpoint<T: Real, R: Read>(reader: &mut R, network: &mut Network<T>) -> Result<u32, CnnError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CnnError::BadCheckpoint("bad magic".into()));
    }
    let version = get_u32(reader)?;
    if version != CHECKPOINT_VERSION {
        return Err(CnnError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let word_bits = get_u32(reader)?;
    let layer_count = get_u32(reader)? as usize;
    let expected = network.layers().iter().filter(|l| l.params.is_some()).count();
    if layer_count != expected {
        return Err(CnnError::BadCheckpoint(format!(
            "checkpoint has {layer_count} parameterized layers, network has {expected}"
        )));
    }
    let mut loaded = Vec::with_capacity(2 * layer_count);
    for target in network.tensors() {
        let rank = get_u32(reader)? as usize;
        let dims = (0..rank).map(|_| get_u32(reader).map(|d| d as usize)).collect::<io::Result<Vec<_>>>()?;
        if dims != target.dims() {
            return Err(CnnError::BadCheckpoint(format!(
                "tensor dims {dims:?} do not match {:?}",
                target.dims()
            )));
        }
        let mut raw = vec![0u8; target.len() * 4];
        reader.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| T::from_f32(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        loaded.push(Tensor::from_vec(&dims, data).expect("dims checked"));
    }
    for (dst, src) in network.tensors_mut().zip(loaded) {
        *dst = src;
    }
    Ok(word_bits)
}
