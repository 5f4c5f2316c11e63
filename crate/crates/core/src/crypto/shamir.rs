//! Shamir sharing of mask vectors with Pedersen-style verifiable dealings.
//!
//! Secrets are vectors of `Z_q` residues lifted into the Ristretto scalar
//! field (order `l ~ 2^252`). Sharing happens over `Z_l`, so the sum of up
//! to `l / q` dealt secrets recovers as an exact integer and reduces back to
//! `Z_q` without wraparound. Every dealing also carries a blinding
//! polynomial and coefficient commitments, which lets a coordinator check a
//! (summed) share against the (summed) commitments.

use curve25519_dalek::ristretto::RistrettoPoint;
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::Identity;
use rand::{CryptoRng, RngCore};

use super::commit::CommitmentBases;
use super::CryptoError;
use crate::field::{Field, FieldVec};

/// One aggregator's share of a mask (or of a sum of masks).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Share {
    /// Evaluation point, equal to the recipient aggregator's id.
    pub owner: u32,
    /// The client that dealt the share; `None` once shares were summed.
    pub dealer: Option<u32>,
    pub round: u64,
    pub values: Vec<Scalar>,
    /// Evaluation of the blinding polynomial at `owner`.
    pub blind: Scalar,
}

/// Coefficient commitments `C_j = sum_c a_{j,c} G_c + b_j H` of a dealing.
/// `C_0` is a hiding commitment to the secret itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialProof(pub Vec<RistrettoPoint>);

#[derive(Debug, Clone)]
pub struct Dealing {
    pub shares: Vec<Share>,
    coefficients: Vec<Vec<Scalar>>,
    blind_coefficients: Vec<Scalar>,
}

pub fn lift(field: Field, v: &FieldVec) -> Vec<Scalar> {
    debug_assert!(field.check(v).is_ok());
    v.0.iter().map(|&x| Scalar::from(x)).collect()
}

/// Reduces a scalar, read as an integer in `[0, l)`, modulo `q`.
pub fn scalar_mod_q(field: Field, s: &Scalar) -> u64 {
    let q = field.modulus() as u128;
    s.as_bytes()
        .iter()
        .rev()
        .fold(0u128, |acc, &b| ((acc << 8) | b as u128) % q) as u64
}

/// Shares `secret` with threshold `t` among owners `1..=n`.
pub fn ss_share<R: RngCore + CryptoRng>(
    field: Field,
    secret: &FieldVec,
    dealer: u32,
    round: u64,
    n: u32,
    t: u32,
    rng: &mut R,
) -> Result<Dealing, CryptoError> {
    if t == 0 || t > n {
        return Err(CryptoError::BadThreshold { n, t });
    }
    let t = t as usize;
    let mut coefficients = Vec::with_capacity(t);
    coefficients.push(lift(field, secret));
    for _ in 1..t {
        coefficients.push((0..secret.len()).map(|_| Scalar::random(rng)).collect());
    }
    let blind_coefficients: Vec<Scalar> = (0..t).map(|_| Scalar::random(rng)).collect();

    let shares = (1..=n)
        .map(|owner| {
            let x = Scalar::from(owner as u64);
            let values = (0..secret.len())
                .map(|c| horner(coefficients.iter().map(|coef| coef[c]), x))
                .collect();
            Share {
                owner,
                dealer: Some(dealer),
                round,
                values,
                blind: horner(blind_coefficients.iter().copied(), x),
            }
        })
        .collect();
    Ok(Dealing { shares, coefficients, blind_coefficients })
}

/// Evaluates the polynomial with coefficients in ascending degree at `x`.
fn horner(coefficients: impl DoubleEndedIterator<Item = Scalar>, x: Scalar) -> Scalar {
    coefficients.rev().fold(Scalar::ZERO, |acc, c| acc * x + c)
}

impl Dealing {
    pub fn threshold(&self) -> usize {
        self.coefficients.len()
    }

    pub fn partial_proof(&self, bases: &CommitmentBases) -> PartialProof {
        PartialProof(
            self.coefficients
                .iter()
                .zip(&self.blind_coefficients)
                .map(|(coef, blind)| bases.commit_scalars(coef, Some(*blind)).point())
                .collect(),
        )
    }
}

impl PartialProof {
    pub fn zero(t: usize) -> Self {
        PartialProof(vec![RistrettoPoint::identity(); t])
    }

    /// Homomorphic sum of two dealings' proofs.
    pub fn add(&self, other: &PartialProof) -> Result<PartialProof, CryptoError> {
        if self.0.len() != other.0.len() {
            return Err(CryptoError::LengthMismatch);
        }
        Ok(PartialProof(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    /// Checks `sum_c v_c G_c + r H == sum_j owner^j C_j`.
    pub fn verify_share(&self, share: &Share, bases: &CommitmentBases) -> bool {
        if share.values.len() > bases.len() || self.0.is_empty() {
            return false;
        }
        let lhs = bases.commit_scalars(&share.values, Some(share.blind)).point();
        let x = Scalar::from(share.owner as u64);
        let mut power = Scalar::ONE;
        let mut rhs = RistrettoPoint::identity();
        for c in &self.0 {
            rhs += c * power;
            power *= x;
        }
        lhs == rhs
    }
}

/// Homomorphic share addition.
pub fn ss_add(a: &Share, b: &Share) -> Result<Share, CryptoError> {
    if a.owner != b.owner || a.round != b.round {
        return Err(CryptoError::OwnerMismatch);
    }
    if a.values.len() != b.values.len() {
        return Err(CryptoError::LengthMismatch);
    }
    Ok(Share {
        owner: a.owner,
        dealer: if a.dealer == b.dealer { a.dealer } else { None },
        round: a.round,
        values: a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect(),
        blind: a.blind + b.blind,
    })
}

/// The all-zero share held by `owner`; the identity for [`ss_add`].
pub fn zero_share(owner: u32, round: u64, len: usize) -> Share {
    Share { owner, dealer: None, round, values: vec![Scalar::ZERO; len], blind: Scalar::ZERO }
}

/// Lagrange interpolation at zero from the first `t` shares.
pub fn recover_scalars(shares: &[Share], t: usize) -> Result<Vec<Scalar>, CryptoError> {
    if t == 0 {
        return Err(CryptoError::BadThreshold { n: shares.len() as u32, t: 0 });
    }
    if shares.len() < t {
        return Err(CryptoError::InsufficientShares { have: shares.len(), need: t });
    }
    let round = shares[0].round;
    let len = shares[0].values.len();
    let mut seen = std::collections::BTreeSet::new();
    for s in shares {
        if !seen.insert(s.owner) || s.owner == 0 {
            return Err(CryptoError::DuplicateOwner(s.owner));
        }
        if s.round != round {
            return Err(CryptoError::OwnerMismatch);
        }
        if s.values.len() != len {
            return Err(CryptoError::LengthMismatch);
        }
    }
    let used = &shares[..t];
    let xs: Vec<Scalar> = used.iter().map(|s| Scalar::from(s.owner as u64)).collect();
    let lagrange: Vec<Scalar> = (0..t)
        .map(|i| {
            let (num, den) = (0..t).filter(|&j| j != i).fold(
                (Scalar::ONE, Scalar::ONE),
                |(num, den), j| (num * xs[j], den * (xs[j] - xs[i])),
            );
            num * den.invert()
        })
        .collect();
    Ok((0..len)
        .map(|c| used.iter().zip(&lagrange).map(|(s, l)| s.values[c] * l).sum())
        .collect())
}

/// Recovers the shared secret (or sum of secrets) and maps it back to
/// `Z_q`.
pub fn ss_recover(field: Field, shares: &[Share], t: usize) -> Result<FieldVec, CryptoError> {
    let scalars = recover_scalars(shares, t)?;
    Ok(FieldVec(scalars.iter().map(|s| scalar_mod_q(field, s)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_secret_recovers_from_any_three() {
        let f = Field::default();
        let d = ss_share(f, &FieldVec::zeros(4), 1, 0, 4, 3, &mut rng(1)).unwrap();
        for subset in d.shares.iter().cloned().combinations(3) {
            assert_eq!(ss_recover(f, &subset, 3).unwrap(), FieldVec::zeros(4));
        }
    }

    #[test]
    fn every_subset_agrees() {
        let f = Field::default();
        let mut r = rng(2);
        let secret = f.random_vec(8, &mut r);
        let d = ss_share(f, &secret, 1, 0, 4, 3, &mut r).unwrap();
        let without_two: Vec<_> =
            d.shares.iter().filter(|s| s.owner != 2).cloned().collect();
        assert_eq!(
            ss_recover(f, &without_two, 3).unwrap(),
            ss_recover(f, &d.shares[..3], 3).unwrap()
        );
        for subset in d.shares.iter().cloned().combinations(3) {
            assert_eq!(ss_recover(f, &subset, 3).unwrap(), secret);
        }
        assert_eq!(ss_recover(f, &d.shares, 3).unwrap(), secret);
    }

    #[test]
    fn too_few_or_duplicate_shares_fail() {
        let f = Field::default();
        let d = ss_share(f, &FieldVec(vec![5]), 1, 0, 4, 3, &mut rng(3)).unwrap();
        assert!(matches!(
            ss_recover(f, &d.shares[..2], 3),
            Err(CryptoError::InsufficientShares { have: 2, need: 3 })
        ));
        let dup = vec![d.shares[0].clone(), d.shares[0].clone(), d.shares[1].clone()];
        assert!(matches!(ss_recover(f, &dup, 3), Err(CryptoError::DuplicateOwner(1))));
    }

    #[test]
    fn bad_thresholds() {
        let f = Field::default();
        let s = FieldVec(vec![1]);
        assert!(ss_share(f, &s, 1, 0, 4, 0, &mut rng(0)).is_err());
        assert!(ss_share(f, &s, 1, 0, 4, 5, &mut rng(0)).is_err());
    }

    #[test]
    fn summed_shares_recover_the_sum() {
        let f = Field::default();
        let mut r = rng(4);
        let secrets: Vec<_> = (0..3).map(|_| f.random_vec(6, &mut r)).collect();
        let dealings: Vec<_> = secrets
            .iter()
            .enumerate()
            .map(|(i, s)| ss_share(f, s, i as u32 + 1, 9, 4, 3, &mut r).unwrap())
            .collect();
        let summed: Vec<Share> = (0..4)
            .map(|owner| {
                dealings
                    .iter()
                    .map(|d| d.shares[owner].clone())
                    .reduce(|a, b| ss_add(&a, &b).unwrap())
                    .unwrap()
            })
            .collect();
        let mut expected = FieldVec::zeros(6);
        for s in &secrets {
            f.vec_add_assign(&mut expected, s).unwrap();
        }
        assert_eq!(ss_recover(f, &summed[1..], 3).unwrap(), expected);
        assert!(summed.iter().all(|s| s.dealer.is_none()));
    }

    #[test]
    fn add_identity_and_owner_checks() {
        let f = Field::default();
        let d = ss_share(f, &FieldVec(vec![1, 2]), 1, 0, 3, 2, &mut rng(5)).unwrap();
        let z = zero_share(1, 0, 2);
        assert_eq!(ss_add(&d.shares[0], &z).unwrap().values, d.shares[0].values);
        assert!(matches!(ss_add(&d.shares[0], &d.shares[1]), Err(CryptoError::OwnerMismatch)));
    }

    #[test]
    fn add_commutes_and_associates() {
        let f = Field::default();
        let mut r = rng(6);
        for _ in 0..50 {
            let sh: Vec<Share> = (0..3)
                .map(|i| {
                    let s = f.random_vec(3, &mut r);
                    ss_share(f, &s, i, 0, 4, 2, &mut r).unwrap().shares[2].clone()
                })
                .collect();
            let ab = ss_add(&sh[0], &sh[1]).unwrap();
            let ba = ss_add(&sh[1], &sh[0]).unwrap();
            assert_eq!(ab, ba);
            let left = ss_add(&ab, &sh[2]).unwrap();
            let right = ss_add(&sh[0], &ss_add(&sh[1], &sh[2]).unwrap()).unwrap();
            assert_eq!(left, right);
        }
    }

    #[test]
    fn pedersen_partial_verification() {
        let f = Field::default();
        let bases = CommitmentBases::new("test/vss", 4);
        let mut r = rng(7);
        let d1 = ss_share(f, &f.random_vec(4, &mut r), 1, 0, 4, 3, &mut r).unwrap();
        let d2 = ss_share(f, &f.random_vec(4, &mut r), 2, 0, 4, 3, &mut r).unwrap();
        let p1 = d1.partial_proof(&bases);
        let p2 = d2.partial_proof(&bases);
        for s in &d1.shares {
            assert!(p1.verify_share(s, &bases));
            assert!(!p2.verify_share(s, &bases));
        }
        let sum_proof = p1.add(&p2).unwrap();
        for owner in 0..4 {
            let mut summed = ss_add(&d1.shares[owner], &d2.shares[owner]).unwrap();
            assert!(sum_proof.verify_share(&summed, &bases));
            summed.values[0] += Scalar::ONE;
            assert!(!sum_proof.verify_share(&summed, &bases));
        }
    }

    #[test]
    fn scalar_reduction_matches_u128() {
        let f = Field::default();
        let big = Scalar::from(u128::MAX);
        assert_eq!(scalar_mod_q(f, &big), (u128::MAX % f.modulus() as u128) as u64);
        assert_eq!(scalar_mod_q(f, &Scalar::from(f.modulus())), 0);
    }
}
