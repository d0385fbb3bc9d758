//! `GBT1` tensor blobs: magic `GBT1`, `u32` rank, `rank` x `u32` dims,
//! then `f32` payload. Everything little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GBT1";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlob {
    dims: Vec<usize>,
    payload: Vec<f32>,
}

impl TensorBlob {
    pub fn new(dims: Vec<usize>, payload: Vec<f32>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Format("rank-0 blob".into()));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Format("blob extent exceeds u32".into()));
        }
        let n: usize = dims.iter().product();
        if n != payload.len() {
            return Err(Error::Format(format!(
                "payload length {} != product of dims {:?}",
                payload.len(),
                dims
            )));
        }
        Ok(Self { dims, payload })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn payload(&self) -> &[f32] {
        &self.payload
    }

    pub fn into_payload(self) -> Vec<f32> {
        self.payload
    }

    pub fn encoded_len(&self) -> usize {
        4 + 4 + 4 * self.dims.len() + 4 * self.payload.len()
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Decode one blob from the front of `bytes`; returns it and the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, expected GBT1".into()));
        }
        let rank = cur.u32()? as usize;
        if rank == 0 {
            return Err(Error::Format("rank-0 blob".into()));
        }
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("blob size overflows".into()))?;
        let raw = cur.take(n.checked_mul(4).ok_or_else(|| Error::Format("blob size overflows".into()))?)?;
        let payload = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((Self { dims, payload }, cur.pos))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated blob: needed {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn write_blob(blob: &TensorBlob, path: impl AsRef<Path>) -> Result<()> {
    write_blobs(std::slice::from_ref(blob), path)
}

/// Read a file holding exactly one blob.
pub fn read_blob(path: impl AsRef<Path>) -> Result<TensorBlob> {
    let mut blobs = read_blobs(path)?;
    if blobs.len() != 1 {
        return Err(Error::Format(format!("expected one blob, found {}", blobs.len())));
    }
    Ok(blobs.pop().unwrap())
}

/// Write blobs back to back into one file.
pub fn write_blobs(blobs: &[TensorBlob], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(blobs.iter().map(TensorBlob::encoded_len).sum());
    for b in blobs {
        b.encode(&mut out);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_blobs(path: impl AsRef<Path>) -> Result<Vec<TensorBlob>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut blobs = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let (b, used) = TensorBlob::decode(&bytes[pos..])?;
        blobs.push(b);
        pos += used;
    }
    if blobs.is_empty() {
        return Err(Error::Format("empty blob file".into()));
    }
    Ok(blobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn file_size_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.gbt");
        let blob = TensorBlob::new(vec![2, 3], vec![1.0; 6]).unwrap();
        write_blob(&blob, &p).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 4 + 4 + 8 + 24);
        assert_eq!(read_blob(&p).unwrap(), blob);
    }

    #[test]
    fn rejects_degenerate_and_corrupt() {
        assert!(matches!(TensorBlob::new(vec![], vec![]), Err(Error::Format(_))));
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"GBT1");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(TensorBlob::decode(&bytes), Err(Error::Format(_))));

        let mut good = Vec::new();
        TensorBlob::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().encode(&mut good);
        assert!(matches!(TensorBlob::decode(&good[..good.len() - 1]), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(TensorBlob::decode(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn little_endian_layout() {
        let mut out = Vec::new();
        TensorBlob::new(vec![1], vec![1.0]).unwrap().encode(&mut out);
        assert_eq!(out, [b'G', b'B', b'T', b'1', 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0x80, 0x3f]);
    }

    proptest! {
        #[test]
        fn roundtrip_bit_exact(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let payload: Vec<f32> = (0..n)
                .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 7919) & 0x7f7f_ffff))
                .collect();
            let blob = TensorBlob::new(dims, payload).unwrap();
            let mut bytes = Vec::new();
            blob.encode(&mut bytes);
            let (back, used) = TensorBlob::decode(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back.payload().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            blob.payload().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.dims(), blob.dims());
        }
    }
}
