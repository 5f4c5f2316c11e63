//! Additively homomorphic vector commitments over Ristretto.
//!
//! A commitment to `v` is the single multi-base element
//! `sum_c v_c G_c (+ r H)`. With an opening `r` it is a hiding Pedersen
//! commitment; without one it is deterministic and anyone holding `v` can
//! recompute it. The bases come from hashing a domain tag, so nobody knows
//! their discrete-log relations.
//!
//! Field vectors are lifted through their centered representatives, which
//! makes `commit(a) + commit(b) == commit(a + b)` hold whenever the centered
//! sum does not wrap around `q/2` (the fixed-point codec guarantees this for
//! encoded reals).

use std::sync::Arc;

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint, VartimeRistrettoPrecomputation};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::VartimePrecomputedMultiscalarMul;
use sha2::Sha512;

use super::CryptoError;
use crate::field::{Field, FieldVec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommitMode {
    /// Pedersen: hiding, opened with the blinding scalar.
    WithOpening,
    /// No blinding; opened by recomputation.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Commitment {
    mode: CommitMode,
    point: RistrettoPoint,
}

impl Commitment {
    pub fn mode(&self) -> CommitMode {
        self.mode
    }

    pub fn point(&self) -> RistrettoPoint {
        self.point
    }

    pub fn from_point(mode: CommitMode, point: RistrettoPoint) -> Self {
        Commitment { mode, point }
    }

    /// 1 mode byte followed by the 32-byte compressed point.
    pub fn to_bytes(&self) -> [u8; 33] {
        let mut out = [0u8; 33];
        out[0] = match self.mode {
            CommitMode::WithOpening => 1,
            CommitMode::Deterministic => 2,
        };
        out[1..].copy_from_slice(self.point.compress().as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != 33 {
            return Err(CryptoError::Malformed);
        }
        let mode = match bytes[0] {
            1 => CommitMode::WithOpening,
            2 => CommitMode::Deterministic,
            _ => return Err(CryptoError::Malformed),
        };
        let point = CompressedRistretto::from_slice(&bytes[1..])
            .map_err(|_| CryptoError::Malformed)?
            .decompress()
            .ok_or(CryptoError::Malformed)?;
        Ok(Commitment { mode, point })
    }
}

/// `C1 (+) C2`; both commitments must use the same mode.
pub fn commit_add(a: &Commitment, b: &Commitment) -> Result<Commitment, CryptoError> {
    if a.mode != b.mode {
        return Err(CryptoError::ModeMismatch);
    }
    Ok(Commitment { mode: a.mode, point: a.point + b.point })
}

/// Public generators `G_0..G_{n-1}` and `H`, with a precomputed table for
/// fast fixed-base multiscalar multiplication.
#[derive(Clone)]
pub struct CommitmentBases {
    tag: String,
    gens: Vec<RistrettoPoint>,
    blind: RistrettoPoint,
    table: Arc<VartimeRistrettoPrecomputation>,
}

impl std::fmt::Debug for CommitmentBases {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CommitmentBases").field("tag", &self.tag).field("len", &self.gens.len()).finish()
    }
}

impl CommitmentBases {
    pub fn new(tag: &str, len: usize) -> Self {
        let derive = |label: &[u8], i: u64| {
            let mut input = Vec::with_capacity(tag.len() + label.len() + 8);
            input.extend_from_slice(tag.as_bytes());
            input.extend_from_slice(label);
            input.extend_from_slice(&i.to_le_bytes());
            RistrettoPoint::hash_from_bytes::<Sha512>(&input)
        };
        let gens: Vec<RistrettoPoint> = (0..len as u64).map(|i| derive(b"/G/", i)).collect();
        let blind = derive(b"/H/", 0);
        let table = Arc::new(VartimeRistrettoPrecomputation::new(
            gens.iter().chain(std::iter::once(&blind)),
        ));
        CommitmentBases { tag: tag.to_string(), gens, blind, table }
    }

    pub fn len(&self) -> usize {
        self.gens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gens.is_empty()
    }

    pub fn blinding_base(&self) -> RistrettoPoint {
        self.blind
    }

    /// Commits to raw scalars (at most `len()` of them).
    pub fn commit_scalars(&self, values: &[Scalar], opening: Option<Scalar>) -> Commitment {
        assert!(values.len() <= self.gens.len(), "vector longer than the commitment bases");
        let scalars = values
            .iter()
            .copied()
            .chain(std::iter::repeat(Scalar::ZERO).take(self.gens.len() - values.len()))
            .chain(std::iter::once(opening.unwrap_or(Scalar::ZERO)));
        let mode = if opening.is_some() { CommitMode::WithOpening } else { CommitMode::Deterministic };
        Commitment { mode, point: self.table.vartime_multiscalar_mul(scalars) }
    }

    /// Commits to a field vector through its centered representatives.
    pub fn commit(&self, field: Field, v: &FieldVec, opening: Option<Scalar>) -> Commitment {
        self.commit_scalars(&centered_scalars(field, v), opening)
    }

    pub fn open(&self, field: Field, c: &Commitment, v: &FieldVec, opening: Option<Scalar>) -> bool {
        let expected_mode = if opening.is_some() { CommitMode::WithOpening } else { CommitMode::Deterministic };
        c.mode == expected_mode && v.len() <= self.len() && self.commit(field, v, opening).point == c.point
    }
}

pub fn centered_scalars(field: Field, v: &FieldVec) -> Vec<Scalar> {
    v.0.iter()
        .map(|&r| {
            let c = field.centered(r);
            if c >= 0 {
                Scalar::from(c as u64)
            } else {
                -Scalar::from(c.unsigned_abs())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FixedPointCodec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn setup() -> (Field, CommitmentBases, ChaCha20Rng) {
        (Field::default(), CommitmentBases::new("test/commit", 8), ChaCha20Rng::seed_from_u64(1))
    }

    #[test]
    fn open_round_trip_both_modes() {
        let (f, b, mut rng) = setup();
        let v = f.random_vec(8, &mut rng);
        let r = Scalar::random(&mut rng);
        assert!(b.open(f, &b.commit(f, &v, Some(r)), &v, Some(r)));
        assert!(b.open(f, &b.commit(f, &v, None), &v, None));
        // wrong mode at open time
        assert!(!b.open(f, &b.commit(f, &v, None), &v, Some(r)));
    }

    #[test]
    fn homomorphic_in_codec_range() {
        let (f, b, mut rng) = setup();
        let codec = FixedPointCodec::new(f, 16, 1e6, 1 << 10).unwrap();
        for _ in 0..20 {
            let x1: Vec<f64> = (0..8).map(|_| rng.gen_range(-1e3..1e3)).collect();
            let x2: Vec<f64> = (0..8).map(|_| rng.gen_range(-1e3..1e3)).collect();
            let v1 = codec.encode(&x1).unwrap();
            let v2 = codec.encode(&x2).unwrap();
            let (r1, r2) = (Scalar::random(&mut rng), Scalar::random(&mut rng));
            let sum = commit_add(&b.commit(f, &v1, Some(r1)), &b.commit(f, &v2, Some(r2))).unwrap();
            assert!(b.open(f, &sum, &f.vec_add(&v1, &v2).unwrap(), Some(r1 + r2)));
            let dsum = commit_add(&b.commit(f, &v1, None), &b.commit(f, &v2, None)).unwrap();
            assert!(b.open(f, &dsum, &f.vec_add(&v1, &v2).unwrap(), None));
        }
    }

    #[test]
    fn cross_mode_addition_is_rejected() {
        let (f, b, mut rng) = setup();
        let v = f.random_vec(8, &mut rng);
        let p = b.commit(f, &v, Some(Scalar::ONE));
        let d = b.commit(f, &v, None);
        assert_eq!(commit_add(&p, &d), Err(CryptoError::ModeMismatch));
    }

    #[test]
    fn binding_sanity() {
        let (f, b, mut rng) = setup();
        let v = f.random_vec(8, &mut rng);
        let c = b.commit(f, &v, None);
        for _ in 0..1000 {
            let other = f.random_vec(8, &mut rng);
            if other != v {
                assert!(!b.open(f, &c, &other, None));
            }
        }
    }

    #[test]
    fn bytes_round_trip() {
        let (f, b, mut rng) = setup();
        let c = b.commit(f, &f.random_vec(3, &mut rng), Some(Scalar::ONE));
        assert_eq!(Commitment::from_bytes(&c.to_bytes()).unwrap(), c);
        assert!(Commitment::from_bytes(&[0u8; 33]).is_err());
    }
}
