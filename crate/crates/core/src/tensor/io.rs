//! TNSR binary layout: `"TNS1"`, rank `u32`, `rank` extents `u32`, then the
//! elements as IEEE-754 `f32`, all little-endian, row-major.

use std::io::{Read, Write};

use super::{Shape, Tensor};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"TNS1";

/// Upper bound on rank accepted when reading; guards against garbage headers.
const MAX_RANK: u32 = 16;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.shape().rank() as u32).to_le_bytes())?;
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "extent exceeds u32")
        })?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for x in t.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_u32<R: Read>(r: &mut R, field: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::format(field, format!("truncated ({e})")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::format("tensor.magic", format!("truncated ({e})")))?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::format(
            "tensor.magic",
            format!("expected {:?}, found {:?}", TENSOR_MAGIC, magic),
        ));
    }
    let rank = read_u32(r, "tensor.rank")?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::format("tensor.rank", format!("unsupported rank {rank}")));
    }
    let dims = (0..rank)
        .map(|_| read_u32(r, "tensor.extent").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let shape =
        Shape::new(dims).map_err(|e| Error::format("tensor.extent", e.to_string()))?;
    let mut bytes = vec![0u8; shape.numel() * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::format("tensor.data", format!("truncated ({e})")))?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::from_parts(shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::from_vec(&[1, 2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"TNS1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(&buf[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&buf[20..24], &(-2.5f32).to_le_bytes());
        assert_eq!(buf.len(), 24);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor(&mut bad.as_slice()), Err(Error::Format { .. })));

        let short = &buf[..buf.len() - 1];
        let err = read_tensor(&mut &short[..]).unwrap_err();
        assert!(matches!(err, Error::Format { ref field, .. } if field == "tensor.data"));
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(seed in any::<u64>(), dims in proptest::collection::vec(1usize..6, 1..5)) {
            let mut t = Tensor::fill_normal(&mut Rng::new(seed), &dims, 0.0, 10.0).unwrap();
            // include special patterns
            t.data_mut()[0] = -0.0;
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back = read_tensor(&mut buf.as_slice()).unwrap();
            prop_assert!(back.bitwise_eq(&t));
        }
    }
}
