//! Model checkpoint format (little-endian):
//!
//! ```text
//! "NGCM" | version u32 | input_dim u32 | hidden_count u32 | hidden u32 * count
//!        | output_dim u32 | activation u8 | head u8 | seed u64
//!        | step_count u64 | params f32 * param_count(spec)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::model::{Activation, DenseModel, Head, ModelSpec};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NGCM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(model: &DenseModel) -> Vec<u8> {
    let spec = model.spec();
    let mut out = Vec::with_capacity(40 + 4 * model.parameters().len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(spec.hidden.len() as u32).to_le_bytes());
    for &h in &spec.hidden {
        out.extend_from_slice(&(h as u32).to_le_bytes());
    }
    out.extend_from_slice(&(spec.output_dim as u32).to_le_bytes());
    out.push(spec.activation.code());
    out.push(spec.head.code());
    out.extend_from_slice(&spec.seed.to_le_bytes());
    out.extend_from_slice(&model.steps().to_le_bytes());
    for p in model.parameters() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                reason: format!("truncated: need {n} more bytes"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fail(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Parse {
            offset: offset as u64,
            reason: reason.into(),
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DenseModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(r.fail(0, "bad magic, expected NGCM"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(4, format!("unsupported checkpoint version {version}")));
    }
    let input_dim = r.u32()? as usize;
    let at = r.pos;
    let hidden_count = r.u32()? as usize;
    if hidden_count > 64 {
        return Err(r.fail(at, format!("implausible hidden layer count {hidden_count}")));
    }
    let mut hidden = Vec::with_capacity(hidden_count);
    for _ in 0..hidden_count {
        hidden.push(r.u32()? as usize);
    }
    let output_dim = r.u32()? as usize;
    let at = r.pos;
    let activation = Activation::from_code(r.u8()?).ok_or_else(|| r.fail(at, "unknown activation"))?;
    let at = r.pos;
    let head = Head::from_code(r.u8()?).ok_or_else(|| r.fail(at, "unknown head"))?;
    let seed = r.u64()?;
    let steps = r.u64()?;
    let spec = ModelSpec {
        input_dim,
        hidden,
        output_dim,
        activation,
        head,
        seed,
    };
    spec.validate().map_err(|e| r.fail(8, e.to_string()))?;
    let count = spec.param_count();
    let payload_at = r.pos;
    let raw = r.take(count.checked_mul(4).ok_or_else(|| r.fail(payload_at, "parameter count overflows"))?)?;
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, "trailing bytes after parameters"));
    }
    let params = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut model = DenseModel::from_parameters(spec, params)?;
    model.set_steps(steps);
    Ok(model)
}

pub fn write_checkpoint(path: &Path, model: &DenseModel) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<DenseModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> DenseModel {
        let mut m = DenseModel::new(ModelSpec {
            input_dim: 5,
            hidden: vec![3, 2],
            output_dim: 4,
            activation: Activation::Relu,
            head: Head::Classification,
            seed: 99,
        })
        .unwrap();
        m.set_steps(1234);
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        assert_eq!(back.spec(), m.spec());
        assert_eq!(back.steps(), 1234);
        let bits = |m: &DenseModel| m.parameters().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&model());
        assert_eq!(&bytes[..4], b"NGCM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
    }

    #[test]
    fn corruption_is_reported() {
        let mut bytes = encode_checkpoint(&model());
        let len = bytes.len();
        assert!(matches!(
            decode_checkpoint(&bytes[..len - 3]),
            Err(Error::Parse { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Parse { offset: 0, .. })));
    }
}
