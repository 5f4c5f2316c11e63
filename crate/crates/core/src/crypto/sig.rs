//! Ed25519 signatures and threshold certificates.
//!
//! A threshold certificate is a set of individual signatures from distinct
//! registered signers over one digest; it verifies when at least
//! `threshold` of them are valid.

use std::collections::BTreeSet;

use ed25519_dalek::{Signer, Verifier};

use super::CryptoError;

#[derive(Clone)]
pub struct SigningKey(ed25519_dalek::SigningKey);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublicKey(ed25519_dalek::VerifyingKey);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Signature(ed25519_dalek::Signature);

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("SigningKey").field(&self.public()).finish()
    }
}

impl SigningKey {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        SigningKey(ed25519_dalek::SigningKey::from_bytes(&seed))
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(self.0.verifying_key())
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.0.sign(msg))
    }
}

impl PublicKey {
    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        self.0.verify(msg, &sig.0).is_ok()
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }
}

impl Signature {
    pub fn to_bytes(&self) -> [u8; 64] {
        self.0.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; 64] = bytes.try_into().map_err(|_| CryptoError::Malformed)?;
        Ok(Signature(ed25519_dalek::Signature::from_bytes(&arr)))
    }
}

pub fn verify(pk: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    pk.verify(msg, sig)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdCert {
    pub digest: [u8; 32],
    /// `(signer id, signature)`, signer ids 1-based into the key list.
    pub signatures: Vec<(u32, Signature)>,
    pub threshold: usize,
}

fn key_of(keys: &[PublicKey], signer: u32) -> Option<&PublicKey> {
    signer.checked_sub(1).and_then(|i| keys.get(i as usize))
}

/// Combines candidate signatures over `digest`. Signatures that do not
/// verify (wrong digest, unknown signer) are dropped; a repeated signer id is
/// an error.
pub fn threshold_combine(
    digest: [u8; 32],
    candidates: &[(u32, Signature)],
    keys: &[PublicKey],
    threshold: usize,
) -> Result<ThresholdCert, CryptoError> {
    let mut seen = BTreeSet::new();
    for (signer, _) in candidates {
        if !seen.insert(*signer) {
            return Err(CryptoError::DuplicateSigner(*signer));
        }
    }
    let mut signatures: Vec<(u32, Signature)> = candidates
        .iter()
        .filter(|(signer, sig)| key_of(keys, *signer).is_some_and(|pk| pk.verify(&digest, sig)))
        .copied()
        .collect();
    if signatures.len() < threshold {
        return Err(CryptoError::BelowThreshold { have: signatures.len(), need: threshold });
    }
    signatures.sort_by_key(|(s, _)| *s);
    Ok(ThresholdCert { digest, signatures, threshold })
}

/// True iff at least `max(threshold, cert.threshold)` distinct registered
/// signers produced valid signatures over the certificate's digest.
pub fn verify_combined(cert: &ThresholdCert, keys: &[PublicKey], threshold: usize) -> bool {
    let mut seen = BTreeSet::new();
    let mut valid = 0;
    for (signer, sig) in &cert.signatures {
        if !seen.insert(*signer) {
            return false;
        }
        if key_of(keys, *signer).is_some_and(|pk| pk.verify(&cert.digest, sig)) {
            valid += 1;
        }
    }
    valid >= threshold.max(cert.threshold)
}
