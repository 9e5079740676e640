//! Little-endian byte encoding helpers shared by payload codecs, envelope
//! wire framing, and the atom file format.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("bad tag {tag} at offset {offset}")]
    BadTag { tag: u8, offset: usize },
    #[error("bad magic")]
    BadMagic,
    #[error("length {0} exceeds remaining input")]
    BadLength(u64),
}

pub fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// u32 length prefix followed by the raw bytes.
pub fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

pub fn put_str(out: &mut Vec<u8>, s: &str) {
    put_bytes(out, s.as_bytes());
}

/// Sequential reader over a byte slice. All multi-byte integers are
/// little-endian.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated(self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let n = self.u32()? as usize;
        if self.remaining() < n {
            return Err(DecodeError::BadLength(n as u64));
        }
        Ok(self.take(n)?.to_vec())
    }

    pub fn str(&mut self) -> Result<String, DecodeError> {
        let b = self.bytes()?;
        String::from_utf8(b).map_err(|_| DecodeError::BadTag { tag: 0, offset: self.pos })
    }

    /// All bytes must have been consumed; trailing garbage is an error.
    pub fn finish(self) -> Result<(), DecodeError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(DecodeError::BadLength(self.remaining() as u64))
        }
    }
}

/// Encode a slice of f64 values, length-prefixed.
pub fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    put_u32(out, vs.len() as u32);
    for v in vs {
        put_f64(out, *v);
    }
}

pub fn read_f64s(r: &mut Reader) -> Result<Vec<f64>, DecodeError> {
    let n = r.u32()? as usize;
    // Bound the allocation by what is actually present, so a corrupt
    // length prefix is an error instead of an abort.
    if n.checked_mul(8).map_or(true, |bytes| bytes > r.remaining()) {
        return Err(DecodeError::BadLength(n as u64));
    }
    let mut vs = Vec::with_capacity(n);
    for _ in 0..n {
        vs.push(r.f64()?);
    }
    Ok(vs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_scalars() {
        let mut out = Vec::new();
        put_u8(&mut out, 7);
        put_u32(&mut out, 0xdead_beef);
        put_u64(&mut out, u64::MAX - 1);
        put_f64(&mut out, -0.125);
        put_bytes(&mut out, b"abc");
        put_str(&mut out, "key");
        let mut r = Reader::new(&out);
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.u32().unwrap(), 0xdead_beef);
        assert_eq!(r.u64().unwrap(), u64::MAX - 1);
        assert_eq!(r.f64().unwrap(), -0.125);
        assert_eq!(r.bytes().unwrap(), b"abc");
        assert_eq!(r.str().unwrap(), "key");
        r.finish().unwrap();
    }

    #[test]
    fn truncated_input_is_an_error() {
        let mut out = Vec::new();
        put_u32(&mut out, 10);
        out.truncate(2);
        let mut r = Reader::new(&out);
        assert!(matches!(r.u32(), Err(DecodeError::Truncated(_))));
    }

    #[test]
    fn bad_length_is_an_error() {
        let mut out = Vec::new();
        put_u32(&mut out, 100); // claims 100 bytes, provides none
        let mut r = Reader::new(&out);
        assert!(matches!(r.bytes(), Err(DecodeError::BadLength(100))));
    }

    #[test]
    fn f64_array_with_corrupt_length_prefix_is_an_error() {
        let mut out = Vec::new();
        // An f64 whose low 4 bytes read as an enormous u32 count: the
        // decoder must refuse before allocating anything.
        put_f64(&mut out, f64::from_bits(u64::MAX));
        let mut r = Reader::new(&out);
        assert!(matches!(read_f64s(&mut r), Err(DecodeError::BadLength(_))));

        let mut out = Vec::new();
        put_f64s(&mut out, &[1.0, 2.0]);
        out.truncate(out.len() - 1);
        let mut r = Reader::new(&out);
        assert!(read_f64s(&mut r).is_err());
    }

    #[test]
    fn trailing_bytes_rejected_by_finish() {
        let out = vec![1u8, 2, 3];
        let mut r = Reader::new(&out);
        r.u8().unwrap();
        assert!(r.finish().is_err());
    }
}
