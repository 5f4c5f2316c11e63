//! Canonical byte strings for everything that gets signed or hashed.
//!
//! A tuple is encoded as its domain tag followed by its fields, where every
//! item (tag included) is written as a little-endian `u32` byte length and
//! then the bytes themselves. Integers are written little-endian at their
//! natural width before being length-prefixed, so `(round: u64)` becomes
//! `08 00 00 00` followed by eight bytes.

use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default)]
pub struct TupleWriter {
    buf: Vec<u8>,
}

impl TupleWriter {
    pub fn new(domain: &str) -> Self {
        let mut w = TupleWriter { buf: Vec::with_capacity(128) };
        w.bytes(domain.as_bytes());
        w
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(&(b.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(b);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn finish(&self) -> Vec<u8> {
        self.buf.clone()
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(&self.buf).into()
    }
}

/// SHA-256 of the concatenation of the parts, each length-prefixed.
pub fn hash_parts(domain: &str, parts: &[&[u8]]) -> [u8; 32] {
    let mut w = TupleWriter::new(domain);
    for p in parts {
        w.bytes(p);
    }
    w.digest()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_length_prefixed() {
        let mut w = TupleWriter::new("t");
        w.u64(7).bytes(b"ab");
        let bytes = w.finish();
        assert_eq!(
            bytes,
            [
                &1u32.to_le_bytes()[..],
                b"t",
                &8u32.to_le_bytes(),
                &7u64.to_le_bytes(),
                &2u32.to_le_bytes(),
                b"ab"
            ]
            .concat()
        );
    }

    #[test]
    fn concatenation_is_unambiguous() {
        assert_ne!(hash_parts("d", &[b"ab", b"c"]), hash_parts("d", &[b"a", b"bc"]));
    }
}
