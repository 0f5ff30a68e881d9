//! The `NGCT` tensor container: magic, version u32, dtype u8, rank u8,
//! extents as u32 each, then the row-major payload. All integers are
//! little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor, TensorData};

pub const TENSOR_MAGIC: [u8; 4] = *b"NGCT";
pub const TENSOR_VERSION: u32 = 1;
/// Directory name holding ground truth that only evaluation may read.
pub const SEALED_DIR: &str = "sealed";

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    if t.shape().len() > u8::MAX as usize {
        return Err(Error::invalid("tensor rank exceeds 255"));
    }
    let mut out = Vec::with_capacity(10 + 4 * t.shape().len() + 4 * t.len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(t.dtype().code());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::invalid(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match t.data() {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::Label(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

fn parse_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len());
    match end {
        Some(end) => {
            let s = &bytes[*pos..end];
            *pos = end;
            Ok(s)
        }
        None => Err(parse_err(*pos, format!("truncated: need {n} bytes, {} left", bytes.len() - *pos))),
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    if take(bytes, &mut pos, 4).ok() != Some(TENSOR_MAGIC.as_slice()) {
        return Err(parse_err(0, "bad magic, expected NGCT"));
    }
    let version = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(parse_err(4, format!("unsupported tensor version {version}")));
    }
    let dtype = DType::from_code(take(bytes, &mut pos, 1)?[0]).ok_or_else(|| parse_err(8, "unknown dtype"))?;
    let rank = take(bytes, &mut pos, 1)?[0] as usize;
    if rank == 0 {
        return Err(parse_err(9, "rank 0 tensors are not allowed"));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut volume = 1usize;
    for _ in 0..rank {
        let at = pos;
        let d = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as usize;
        if d == 0 {
            return Err(parse_err(at, "zero extent"));
        }
        volume = volume.checked_mul(d).ok_or_else(|| parse_err(at, "extent product overflows"))?;
        shape.push(d);
    }
    let width = match dtype {
        DType::F32 => 4,
        DType::Label => 2,
    };
    let at = pos;
    let len = volume.checked_mul(width).ok_or_else(|| parse_err(at, "payload size overflows"))?;
    let payload = take(bytes, &mut pos, len)?;
    if pos != bytes.len() {
        return Err(parse_err(pos, "trailing bytes after payload"));
    }
    match dtype {
        DType::F32 => Tensor::from_f32(
            shape,
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        DType::Label => Tensor::from_labels(
            shape,
            payload.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
    }
}

/// True when any component of `path` is the sealed directory.
pub fn is_sealed_path(path: &Path) -> bool {
    path.components().any(|c| c.as_os_str() == SEALED_DIR)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(t)?).map_err(|e| Error::io(path, e))
}

/// Reads a tensor for training or inference. Sealed ground truth is refused.
pub fn read_tensor(path: &Path) -> Result<Tensor> {
    if is_sealed_path(path) {
        return Err(Error::SealedAccess(path.to_path_buf()));
    }
    read_tensor_unchecked(path)
}

/// Reads sealed ground truth. Only evaluation tooling should call this.
pub fn read_sealed_tensor(path: &Path) -> Result<Tensor> {
    read_tensor_unchecked(path)
}

fn read_tensor_unchecked(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}
