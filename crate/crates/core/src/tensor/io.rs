//! Binary tensor files.
//!
//! Layout: `b"MTNS"`, version `u8 = 1`, dtype `u8` (0 = f32, 1 = f64),
//! ndim `u8`, one padding byte, `ndim` little-endian `u32` extents, then
//! the little-endian payload in row-major order.

use std::fs;
use std::path::Path;

use super::{numel, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MTNS";
pub const VERSION: u8 = 1;

pub fn encode<F: Real>(t: &Tensor<F>) -> Result<Vec<u8>> {
    let ndim = u8::try_from(t.ndim())
        .map_err(|_| Error::Format(format!("rank {} too large", t.ndim())))?;
    let mut out = Vec::with_capacity(8 + 4 * t.ndim() + F::BYTES * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(F::DTYPE);
    out.push(ndim);
    out.push(0);
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| Error::Format(format!("extent {e} exceeds u32")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    for &x in t.data() {
        x.write_le(&mut out);
    }
    Ok(out)
}

pub fn decode<F: Real>(bytes: &[u8]) -> Result<Tensor<F>> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing MTNS magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let dtype = bytes[5];
    let ndim = bytes[6] as usize;
    let header = 8 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Format("truncated header".into()));
    }
    let shape: Vec<usize> = (0..ndim)
        .map(|d| {
            let o = 8 + 4 * d;
            u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let n = numel(&shape);
    let payload = &bytes[header..];
    let data: Vec<F> = match dtype {
        0 => read_payload::<f32>(payload, n)?
            .into_iter()
            .map(|x| F::lit(x as f64))
            .collect(),
        1 => read_payload::<f64>(payload, n)?
            .into_iter()
            .map(F::lit)
            .collect(),
        other => return Err(Error::Format(format!("unknown dtype {other}"))),
    };
    Tensor::new(shape, data)
}

fn read_payload<G: Real>(payload: &[u8], n: usize) -> Result<Vec<G>> {
    if payload.len() != n * G::BYTES {
        return Err(Error::Format(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            n * G::BYTES
        )));
    }
    Ok(payload.chunks_exact(G::BYTES).map(G::read_le).collect())
}

pub fn save<F: Real>(t: &Tensor<F>, path: &Path) -> Result<()> {
    fs::write(path, encode(t)?).map_err(|e| Error::io(path, e))
}

pub fn load<F: Real>(path: &Path) -> Result<Tensor<F>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::new(vec![2, 1], vec![1.0, -2.0]).unwrap();
        let bytes = encode(&t).unwrap();
        assert_eq!(&bytes[..8], b"MTNS\x01\x00\x02\x00");
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 24);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode::<f32>(b"NOPE\x01\x00\x00\x00").is_err());
        let t = Tensor::<f32>::ones(&[3]);
        let bytes = encode(&t).unwrap();
        assert!(decode::<f32>(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn scalar_round_trips() {
        let t = Tensor::<f64>::scalar(0.25);
        assert_eq!(decode::<f64>(&encode(&t).unwrap()).unwrap(), t);
    }

    proptest::proptest! {
        #[test]
        fn round_trip_bit_exact(shape in proptest::collection::vec(1usize..4, 0..4), seed in 0u64..1000) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f32 / 7.0 - 50.0).collect();
            let t = Tensor::new(shape, data).unwrap();
            let back: Tensor<f32> = decode(&encode(&t).unwrap()).unwrap();
            proptest::prop_assert_eq!(back, t);
        }
    }
}
