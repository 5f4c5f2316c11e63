//! Prime-field vectors, fixed-point encoding of reals, and the public
//! masking matrix.
//!
//! Everything that is masked, shared or summed travels as a [`FieldVec`]
//! over `Z_q`. Reals enter the field through a [`FixedPointCodec`] using a
//! centered representation: residues above `q/2` stand for negative values.

use sha3::digest::{ExtendableOutput, Update, XofReader};
use sha3::Shake128;
use thiserror::Error;

/// The Mersenne prime 2^61 - 1.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("matrix is {rows}x{cols} but operand has length {len}")]
    DimensionMismatch { rows: usize, cols: usize, len: usize },
    #[error("coordinate {index} has magnitude {value} above the codec limit {limit}")]
    MagnitudeOverflow { index: usize, value: f64, limit: f64 },
    #[error("residue {value} is not reduced modulo {modulus}")]
    Unreduced { value: u64, modulus: u64 },
    #[error("decoded coordinate {index} = {value} exceeds the range of {summands} summands")]
    DecodeRange { index: usize, value: f64, summands: u64 },
    #[error("codec headroom violated: {0}")]
    Headroom(String),
    #[error("modulus {0} is not usable (must be an odd prime below 2^63)")]
    BadModulus(u64),
    #[error("malformed field vector encoding")]
    Malformed,
}

/// The prime field `Z_q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Field {
    modulus: u64,
}

impl Default for Field {
    fn default() -> Self {
        Field { modulus: MERSENNE_61 }
    }
}

impl Field {
    pub fn new(modulus: u64) -> Result<Self, FieldError> {
        if modulus < 3 || modulus % 2 == 0 || modulus >= 1 << 63 || !is_prime(modulus) {
            return Err(FieldError::BadModulus(modulus));
        }
        Ok(Field { modulus })
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// Number of significant bits in `q`.
    pub fn bits(&self) -> u32 {
        64 - self.modulus.leading_zeros()
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.modulus {
            s - self.modulus
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.modulus - b
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.modulus as u128) as u64
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.modulus - a
        }
    }

    /// Maps a signed integer to its residue.
    #[inline]
    pub fn from_i64(&self, v: i64) -> u64 {
        let r = (v as i128).rem_euclid(self.modulus as i128);
        r as u64
    }

    /// Centered representative in `(-q/2, q/2]`.
    #[inline]
    pub fn centered(&self, r: u64) -> i64 {
        if r > self.modulus / 2 {
            -((self.modulus - r) as i64)
        } else {
            r as i64
        }
    }

    pub fn vec_add(&self, a: &FieldVec, b: &FieldVec) -> Result<FieldVec, FieldError> {
        check_len(a, b)?;
        Ok(FieldVec(
            a.0.iter().zip(&b.0).map(|(&x, &y)| self.add(x, y)).collect(),
        ))
    }

    pub fn vec_sub(&self, a: &FieldVec, b: &FieldVec) -> Result<FieldVec, FieldError> {
        check_len(a, b)?;
        Ok(FieldVec(
            a.0.iter().zip(&b.0).map(|(&x, &y)| self.sub(x, y)).collect(),
        ))
    }

    pub fn vec_add_assign(&self, acc: &mut FieldVec, b: &FieldVec) -> Result<(), FieldError> {
        check_len(acc, b)?;
        for (x, &y) in acc.0.iter_mut().zip(&b.0) {
            *x = self.add(*x, y);
        }
        Ok(())
    }

    /// Uniformly random vector.
    pub fn random_vec<R: rand::Rng + ?Sized>(&self, len: usize, rng: &mut R) -> FieldVec {
        FieldVec((0..len).map(|_| rng.gen_range(0..self.modulus)).collect())
    }

    /// Checks that every residue is below `q`.
    pub fn check(&self, v: &FieldVec) -> Result<(), FieldError> {
        match v.0.iter().find(|&&x| x >= self.modulus) {
            Some(&value) => Err(FieldError::Unreduced { value, modulus: self.modulus }),
            None => Ok(()),
        }
    }
}

fn check_len(a: &FieldVec, b: &FieldVec) -> Result<(), FieldError> {
    if a.len() != b.len() {
        return Err(FieldError::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(())
}

fn is_prime(n: u64) -> bool {
    // Deterministic Miller-Rabin for 64-bit inputs.
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n % p == 0 {
            return n == p;
        }
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut r = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                r = mulmod(r, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        r
    };
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// A vector of residues modulo `q`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FieldVec(pub Vec<u64>);

impl FieldVec {
    pub fn zeros(len: usize) -> Self {
        FieldVec(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    /// Length-prefixed little-endian encoding: a `u32` count followed by one
    /// 8-byte residue per element.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * self.len());
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.0.len() as u32).to_le_bytes());
        for x in &self.0 {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }

    /// Parses the encoding produced by [`FieldVec::to_bytes`], returning the
    /// vector and the number of bytes consumed.
    pub fn read_from(bytes: &[u8]) -> Result<(Self, usize), FieldError> {
        let len_bytes: [u8; 4] = bytes.get(..4).ok_or(FieldError::Malformed)?.try_into().unwrap();
        let len = u32::from_le_bytes(len_bytes) as usize;
        let end = len.checked_mul(8).and_then(|n| n.checked_add(4)).ok_or(FieldError::Malformed)?;
        let body = bytes.get(4..end).ok_or(FieldError::Malformed)?;
        let elems = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((FieldVec(elems), end))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FieldError> {
        let (v, used) = Self::read_from(bytes)?;
        if used != bytes.len() {
            return Err(FieldError::Malformed);
        }
        Ok(v)
    }
}

/// Fixed-point encoding of reals into `Z_q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointCodec {
    field: Field,
    scale_bits: u32,
    max_magnitude: f64,
    max_summands: u64,
}

impl FixedPointCodec {
    /// Builds a codec, rejecting parameters for which a sum of
    /// `max_summands` maximal values could wrap around `q/2`.
    pub fn new(
        field: Field,
        scale_bits: u32,
        max_magnitude: f64,
        max_summands: u64,
    ) -> Result<Self, FieldError> {
        if !(max_magnitude > 0.0 && max_magnitude.is_finite()) || max_summands == 0 {
            return Err(FieldError::Headroom(
                "max_magnitude and max_summands must be positive".into(),
            ));
        }
        if scale_bits > 52 {
            return Err(FieldError::Headroom(format!("scale_bits {scale_bits} exceeds 52")));
        }
        // Compare in log2 space to stay exact for large operands.
        let needed = (max_summands as f64).log2() + max_magnitude.log2() + scale_bits as f64;
        let available = ((field.modulus() / 2) as f64).log2();
        if needed >= available {
            return Err(FieldError::Headroom(format!(
                "{max_summands} x {max_magnitude} x 2^{scale_bits} does not fit below q/2 = 2^{available:.2}"
            )));
        }
        Ok(FixedPointCodec { field, scale_bits, max_magnitude, max_summands })
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn scale_bits(&self) -> u32 {
        self.scale_bits
    }

    pub fn max_magnitude(&self) -> f64 {
        self.max_magnitude
    }

    pub fn max_summands(&self) -> u64 {
        self.max_summands
    }

    /// One unit in the last place: `2^-scale_bits`.
    pub fn resolution(&self) -> f64 {
        (-(self.scale_bits as f64)).exp2()
    }

    pub fn encode(&self, x: &[f64]) -> Result<FieldVec, FieldError> {
        let scale = (self.scale_bits as f64).exp2();
        x.iter()
            .enumerate()
            .map(|(index, &value)| {
                if !value.is_finite() || value.abs() > self.max_magnitude {
                    return Err(FieldError::MagnitudeOverflow {
                        index,
                        value,
                        limit: self.max_magnitude,
                    });
                }
                Ok(self.field.from_i64((value * scale).round() as i64))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(FieldVec)
    }

    pub fn decode(&self, v: &FieldVec) -> Vec<f64> {
        let inv = self.resolution();
        v.0.iter().map(|&r| self.field.centered(r) as f64 * inv).collect()
    }

    /// Decodes a sum of `summands` encodings, failing when a coordinate lies
    /// outside the range such a sum can legitimately reach. Out-of-range
    /// values indicate that masks did not cancel.
    pub fn decode_sum(&self, v: &FieldVec, summands: u64) -> Result<Vec<f64>, FieldError> {
        let limit = summands as f64 * self.max_magnitude;
        let out = self.decode(v);
        if let Some((index, &value)) = out.iter().enumerate().find(|(_, x)| x.abs() > limit) {
            return Err(FieldError::DecodeRange { index, value, summands });
        }
        Ok(out)
    }

    /// Rounds reals onto the codec grid.
    pub fn quantize(&self, x: &[f64]) -> Result<Vec<f64>, FieldError> {
        Ok(self.decode(&self.encode(x)?))
    }
}

/// The public matrix `A` with `rows = N_g` and `cols = N_s`, expanded from a
/// 32-byte seed with SHAKE128.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicMatrix {
    seed: [u8; 32],
    rows: usize,
    cols: usize,
    field: Field,
    entries: Vec<u64>,
}

const MATRIX_DOMAIN: &[u8] = b"pvfed/public-matrix/v1";

impl PublicMatrix {
    pub fn expand(seed: [u8; 32], rows: usize, cols: usize, field: Field) -> Result<Self, FieldError> {
        if cols > rows || cols == 0 {
            return Err(FieldError::DimensionMismatch { rows, cols, len: cols });
        }
        let mut xof = Shake128::default();
        xof.update(MATRIX_DOMAIN);
        xof.update(&seed);
        xof.update(&(rows as u32).to_le_bytes());
        xof.update(&(cols as u32).to_le_bytes());
        xof.update(&field.modulus().to_le_bytes());
        let mut reader = xof.finalize_xof();

        let mask = if field.bits() == 64 { u64::MAX } else { (1u64 << field.bits()) - 1 };
        let mut entries = Vec::with_capacity(rows * cols);
        let mut word = [0u8; 8];
        while entries.len() < rows * cols {
            reader.read(&mut word);
            let candidate = u64::from_le_bytes(word) & mask;
            if candidate < field.modulus() {
                entries.push(candidate);
            }
        }
        Ok(PublicMatrix { seed, rows, cols, field, entries })
    }

    /// The identity-shaped matrix used to exercise the one-time-pad limit
    /// of the masking (`N_s = N_g`, `A = I`).
    pub fn identity(dim: usize, field: Field) -> Self {
        let mut entries = vec![0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1;
        }
        PublicMatrix { seed: [0; 32], rows: dim, cols: dim, field, entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> &[u8; 32] {
        &self.seed
    }

    pub fn entry(&self, row: usize, col: usize) -> u64 {
        self.entries[row * self.cols + col]
    }

    pub fn mat_vec_mul(&self, s: &FieldVec) -> Result<FieldVec, FieldError> {
        if s.len() != self.cols {
            return Err(FieldError::DimensionMismatch { rows: self.rows, cols: self.cols, len: s.len() });
        }
        let q = self.field.modulus() as u128;
        let out = self
            .entries
            .chunks_exact(self.cols)
            .map(|row| {
                // Each reduced product is below 2^63, so the accumulator can
                // absorb 2^65 of them before overflowing.
                let acc: u128 = row
                    .iter()
                    .zip(&s.0)
                    .map(|(&a, &x)| (a as u128 * x as u128) % q)
                    .sum();
                (acc % q) as u64
            })
            .collect();
        Ok(FieldVec(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn codec16() -> FixedPointCodec {
        FixedPointCodec::new(Field::default(), 16, 1024.0, 1 << 16).unwrap()
    }

    #[test]
    fn encode_examples() {
        let c = codec16();
        assert_eq!(c.encode(&[0.0, 0.0, 0.0]).unwrap(), FieldVec::zeros(3));
        assert_eq!(c.encode(&[1.0]).unwrap(), FieldVec(vec![65536]));
        assert_eq!(c.encode(&[-0.5]).unwrap(), FieldVec(vec![MERSENNE_61 - 32768]));
    }

    #[test]
    fn encode_rejects_overflow() {
        let c = codec16();
        let err = c.encode(&[1.0, 2048.0]).unwrap_err();
        assert!(matches!(err, FieldError::MagnitudeOverflow { index: 1, .. }));
        assert!(c.encode(&[f64::NAN]).is_err());
    }

    #[test]
    fn decode_examples() {
        let c = codec16();
        assert_eq!(c.decode(&FieldVec(vec![0])), vec![0.0]);
        let c2 = FixedPointCodec::new(Field::default(), 2, 10.0, 10).unwrap();
        assert_eq!(c2.decode(&c2.encode(&[0.25]).unwrap()), vec![0.25]);
    }

    #[test]
    fn hundred_small_summands() {
        let c = codec16();
        let f = c.field();
        let one = c.encode(&[0.01]).unwrap();
        let mut acc = FieldVec::zeros(1);
        let mut direct = 0.0f64;
        for _ in 0..100 {
            f.vec_add_assign(&mut acc, &one).unwrap();
            direct += 0.01;
        }
        let got = c.decode(&acc)[0];
        assert!((got - direct).abs() <= 100.0 * c.resolution());
        assert!((got - 1.0).abs() <= 100.0 * c.resolution());
    }

    #[test]
    fn headroom_is_enforced() {
        assert!(FixedPointCodec::new(Field::default(), 16, 1024.0, 1 << 34).is_err());
        assert!(FixedPointCodec::new(Field::default(), 16, 1024.0, 1 << 33).is_ok());
    }

    #[test]
    fn modulus_validation() {
        assert!(Field::new(MERSENNE_61).is_ok());
        assert!(Field::new(1_000_000_007).is_ok());
        assert!(Field::new(1_000_000_008).is_err());
        assert!(Field::new(561).is_err()); // Carmichael number
    }

    #[test]
    fn vec_add_wraps_and_checks_lengths() {
        let f = Field::default();
        let a = FieldVec(vec![MERSENNE_61 - 1]);
        let b = FieldVec(vec![1]);
        assert_eq!(f.vec_add(&a, &b).unwrap(), FieldVec(vec![0]));
        assert_eq!(f.vec_add(&a, &FieldVec::zeros(1)).unwrap(), a);
        assert!(matches!(
            f.vec_add(&a, &FieldVec::zeros(2)),
            Err(FieldError::LengthMismatch { .. })
        ));
        assert_eq!(f.vec_sub(&b, &a).unwrap(), FieldVec(vec![2]));
    }

    #[test]
    fn add_sub_round_trip_random() {
        let f = Field::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = f.random_vec(16, &mut rng);
            let b = f.random_vec(16, &mut rng);
            let s = f.vec_add(&a, &b).unwrap();
            f.check(&s).unwrap();
            assert_eq!(f.vec_sub(&s, &b).unwrap(), a);
        }
    }

    #[test]
    fn matrix_determinism_and_zero() {
        let f = Field::default();
        let mut seed = [0u8; 32];
        seed[0] = 42;
        let a = PublicMatrix::expand(seed, 8, 4, f).unwrap();
        let b = PublicMatrix::expand(seed, 8, 4, f).unwrap();
        assert_eq!(a, b);
        assert!(a.entries.iter().all(|&x| x < f.modulus()));
        assert_eq!(a.mat_vec_mul(&FieldVec::zeros(4)).unwrap(), FieldVec::zeros(8));
        seed[0] = 43;
        assert_ne!(PublicMatrix::expand(seed, 8, 4, f).unwrap().entries, a.entries);
        assert!(PublicMatrix::expand(seed, 4, 8, f).is_err());
        assert!(matches!(
            a.mat_vec_mul(&FieldVec::zeros(5)),
            Err(FieldError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matrix_linearity() {
        let f = Field::default();
        let a = PublicMatrix::expand([9; 32], 32, 8, f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s1 = f.random_vec(8, &mut rng);
            let s2 = f.random_vec(8, &mut rng);
            let lhs = a.mat_vec_mul(&f.vec_add(&s1, &s2).unwrap()).unwrap();
            let rhs = f
                .vec_add(&a.mat_vec_mul(&s1).unwrap(), &a.mat_vec_mul(&s2).unwrap())
                .unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn mat_vec_matches_naive_bigint_product() {
        // Oracle: schoolbook product accumulated in u128 with a single
        // final reduction per row (entries < 2^61 and 8 columns cannot
        // overflow 2^128).
        let f = Field::default();
        let a = PublicMatrix::expand([5; 32], 16, 8, f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = f.random_vec(8, &mut rng);
        let got = a.mat_vec_mul(&s).unwrap();
        for r in 0..16 {
            let mut acc: u128 = 0;
            for c in 0..8 {
                acc += a.entry(r, c) as u128 * s.0[c] as u128;
            }
            assert_eq!(got.0[r], (acc % MERSENNE_61 as u128) as u64);
        }
    }

    #[test]
    fn adversarial_top_residues_stay_reduced() {
        let f = Field::default();
        let top = FieldVec(vec![MERSENNE_61 - 1; 8]);
        let a = PublicMatrix::expand([1; 32], 8, 8, f).unwrap();
        f.check(&a.mat_vec_mul(&top).unwrap()).unwrap();
        f.check(&f.vec_add(&top, &top).unwrap()).unwrap();
        f.check(&f.vec_sub(&FieldVec::zeros(8), &top).unwrap()).unwrap();
    }

    #[test]
    fn bytes_round_trip() {
        let v = FieldVec(vec![1, 2, MERSENNE_61 - 1]);
        let bytes = v.to_bytes();
        assert_eq!(bytes.len(), 4 + 24);
        assert_eq!(&bytes[..4], &3u32.to_le_bytes());
        assert_eq!(FieldVec::from_bytes(&bytes).unwrap(), v);
        assert!(FieldVec::from_bytes(&bytes[..10]).is_err());
    }

    proptest! {
        #[test]
        fn prop_encode_decode_within_resolution(x in prop::collection::vec(-1000.0f64..1000.0, 1..32)) {
            let c = codec16();
            let back = c.decode(&c.encode(&x).unwrap());
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() <= c.resolution());
            }
        }

        #[test]
        fn prop_homomorphic_sum(xs in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 1..50)) {
            let c = codec16();
            let f = c.field();
            let mut acc = FieldVec::zeros(4);
            let mut direct = [0.0f64; 4];
            for x in &xs {
                f.vec_add_assign(&mut acc, &c.encode(x).unwrap()).unwrap();
                for (d, v) in direct.iter_mut().zip(x) { *d += v; }
            }
            let got = c.decode(&acc);
            for (g, d) in got.iter().zip(direct) {
                prop_assert!((g - d).abs() <= xs.len() as f64 * c.resolution());
            }
        }
    }
}
