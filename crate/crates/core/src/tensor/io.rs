//! `MRT1` binary tensor files.
//!
//! Layout: magic `MRT1`, u8 dtype code (0 = f32, 1 = f64), u8 rank,
//! `rank` little-endian u32 extents, then little-endian element data.

use super::{DType, Tensor};
use crate::error::{Error, Result};
use std::io::{Read, Write};

pub const MRT1_MAGIC: &[u8; 4] = b"MRT1";

pub fn write_mrt1<W: Write>(tensor: &Tensor, mut out: W) -> Result<usize> {
    let rank = u8::try_from(tensor.rank()).map_err(|_| Error::shape("MRT1 supports rank <= 255"))?;
    let mut buf = Vec::with_capacity(6 + 4 * tensor.rank() + 8 * tensor.len());
    buf.extend_from_slice(MRT1_MAGIC);
    buf.push(tensor.dtype().code());
    buf.push(rank);
    for &d in tensor.shape() {
        let d = u32::try_from(d).map_err(|_| Error::shape("MRT1 extents must fit in u32"))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    match tensor.dtype() {
        DType::F32 => tensor.data().iter().for_each(|&x| buf.extend_from_slice(&(x as f32).to_le_bytes())),
        DType::F64 => tensor.data().iter().for_each(|&x| buf.extend_from_slice(&x.to_le_bytes())),
    }
    out.write_all(&buf)?;
    Ok(buf.len())
}

pub fn read_mrt1<R: Read>(mut input: R) -> Result<Tensor> {
    let mut header = [0u8; 6];
    input.read_exact(&mut header)?;
    if &header[..4] != MRT1_MAGIC {
        return Err(Error::data("not an MRT1 tensor (bad magic)"));
    }
    let dtype = DType::from_code(header[4])
        .ok_or_else(|| Error::data(format!("unknown MRT1 dtype code {}", header[4])))?;
    let rank = header[5] as usize;
    let mut dims = vec![0u8; 4 * rank];
    input.read_exact(&mut dims)?;
    let shape: Vec<usize> = dims
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n: usize = shape.iter().product();
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut raw = vec![0u8; n * width];
    input.read_exact(&mut raw)?;
    let data = match dtype {
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        DType::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    Ok(Tensor::new(shape, data)?.with_dtype(dtype))
}
