//! Little-endian parameter checkpoints.
//!
//! Layout: the 8-byte magic `CDFKD001`, then for each parameter until end of
//! file: `u32` name length, UTF-8 name, `u32` rank, `rank` extents as `u64`,
//! and `prod(extents)` raw `f32` values. Momentum buffers and trainability
//! are not stored.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::Parameter;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CDFKD001";

pub fn encode(params: &[Parameter]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for p in params {
        let name = p.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.value().shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
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
            return Err(Error::invalid(
                "checkpoint",
                format!("truncated at byte {} (wanted {n} more)", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint. Every parameter comes back trainable.
pub fn decode(bytes: &[u8]) -> Result<Vec<Parameter>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::invalid("checkpoint", "bad magic"));
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let mut params = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::invalid("checkpoint", format!("parameter name: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Parameter::new(name, Tensor::new(shape, data)?, true));
    }
    Ok(params)
}

pub fn save(path: &Path, params: &[Parameter]) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<Parameter>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Hex SHA-256 of the encoded parameters.
pub fn digest(params: &[Parameter]) -> String {
    hex::encode(Sha256::digest(encode(params)))
}

/// `name shape` lines, one per parameter, in order.
pub fn manifest(params: &[Parameter]) -> Vec<(String, Vec<usize>)> {
    params
        .iter()
        .map(|p| (p.name().to_string(), p.value().shape().to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let p = Parameter::new("ab", Tensor::new([1, 2], vec![1.0, -0.0]).unwrap(), true);
        let bytes = encode(&[p]);
        assert_eq!(&bytes[..8], b"CDFKD001");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..14], b"ab");
        assert_eq!(&bytes[14..18], &2u32.to_le_bytes());
        assert_eq!(&bytes[18..26], &1u64.to_le_bytes());
        assert_eq!(&bytes[26..34], &2u64.to_le_bytes());
        assert_eq!(bytes.len(), 34 + 8);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"CDFKD000").is_err());
        let p = Parameter::new("w", Tensor::zeros([3]), true);
        let bytes = encode(&[p]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            raw in proptest::collection::vec(
                (proptest::collection::vec(1usize..4, 1..4), any::<u32>()),
                0..5,
            )
        ) {
            let params: Vec<Parameter> = raw
                .iter()
                .enumerate()
                .map(|(i, (shape, seed))| {
                    let n: usize = shape.iter().product();
                    let data = (0..n)
                        .map(|j| f32::from_bits(seed.wrapping_mul(j as u32 + 1) & 0xbf7f_ffff))
                        .collect();
                    Parameter::new(format!("p{i}.w"), Tensor::new(shape.clone(), data).unwrap(), true)
                })
                .collect();
            let bytes = encode(&params);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(back.len(), params.len());
            for (a, b) in params.iter().zip(&back) {
                prop_assert_eq!(a.name(), b.name());
                prop_assert!(a.value().bit_eq(b.value()));
            }
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
