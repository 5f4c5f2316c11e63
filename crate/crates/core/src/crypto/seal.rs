//! Authenticated public-key sealing: ephemeral X25519 key agreement, a
//! SHA-256 key derivation, and ChaCha20-Poly1305. The recipient id and the
//! ephemeral key are bound as associated data.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

use super::CryptoError;

#[derive(Clone)]
pub struct DecryptionKey {
    secret: StaticSecret,
    public: XPublic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncryptionKey(XPublic);

impl std::fmt::Debug for DecryptionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("DecryptionKey").field(&self.public()).finish()
    }
}

impl DecryptionKey {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let secret = StaticSecret::from(seed);
        let public = XPublic::from(&secret);
        DecryptionKey { secret, public }
    }

    pub fn public(&self) -> EncryptionKey {
        EncryptionKey(self.public)
    }
}

impl EncryptionKey {
    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedEnvelope {
    pub recipient: u32,
    pub ephemeral: [u8; 32],
    pub ciphertext: Vec<u8>,
}

const SEAL_DOMAIN: &[u8] = b"pvfed/seal/v1";

fn derive_key(shared: &[u8; 32], ephemeral: &[u8; 32], recipient_pk: &[u8; 32]) -> Key {
    let mut h = Sha256::new();
    h.update(SEAL_DOMAIN);
    h.update(shared);
    h.update(ephemeral);
    h.update(recipient_pk);
    Key::from(<[u8; 32]>::from(h.finalize()))
}

fn aad(recipient: u32, ephemeral: &[u8; 32]) -> Vec<u8> {
    [&recipient.to_le_bytes()[..], ephemeral].concat()
}

/// One ephemeral key reused across the recipients of a single message.
/// Each recipient still gets its own shared secret and AEAD key, since the
/// key derivation binds the recipient's public key.
pub struct Sealer {
    eph: StaticSecret,
    eph_pub: [u8; 32],
}

impl Sealer {
    pub fn new<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let eph = StaticSecret::random_from_rng(rng);
        let eph_pub = XPublic::from(&eph).to_bytes();
        Sealer { eph, eph_pub }
    }

    pub fn seal(&self, payload: &[u8], recipient: u32, recipient_key: &EncryptionKey) -> SealedEnvelope {
        let shared = self.eph.diffie_hellman(&recipient_key.0);
        let key = derive_key(shared.as_bytes(), &self.eph_pub, &recipient_key.to_bytes());
        // every (ephemeral, recipient) pair yields a fresh key, so a fixed nonce is safe
        let ciphertext = ChaCha20Poly1305::new(&key)
            .encrypt(&Nonce::default(), Payload { msg: payload, aad: &aad(recipient, &self.eph_pub) })
            .expect("in-memory encryption cannot fail");
        SealedEnvelope { recipient, ephemeral: self.eph_pub, ciphertext }
    }
}

pub fn seal<R: RngCore + CryptoRng>(
    payload: &[u8],
    recipient: u32,
    recipient_key: &EncryptionKey,
    rng: &mut R,
) -> SealedEnvelope {
    Sealer::new(rng).seal(payload, recipient, recipient_key)
}

pub fn unseal(env: &SealedEnvelope, me: u32, key: &DecryptionKey) -> Result<Vec<u8>, CryptoError> {
    if env.recipient != me {
        return Err(CryptoError::WrongRecipient { addressed: env.recipient, actual: me });
    }
    let shared = key.secret.diffie_hellman(&XPublic::from(env.ephemeral));
    let k = derive_key(shared.as_bytes(), &env.ephemeral, key.public.as_bytes());
    ChaCha20Poly1305::new(&k)
        .decrypt(
            &Nonce::default(),
            Payload { msg: &env.ciphertext, aad: &aad(env.recipient, &env.ephemeral) },
        )
        .map_err(|_| CryptoError::AuthFailure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn round_trip_and_wrong_recipient() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let k1 = DecryptionKey::from_seed([1; 32]);
        let k2 = DecryptionKey::from_seed([2; 32]);
        let env = seal(b"share bytes", 1, &k1.public(), &mut rng);
        assert_eq!(unseal(&env, 1, &k1).unwrap(), b"share bytes");
        assert!(matches!(unseal(&env, 2, &k2), Err(CryptoError::WrongRecipient { .. })));
        // relabelling the envelope does not help the wrong key holder
        let mut relabelled = env.clone();
        relabelled.recipient = 2;
        assert_eq!(unseal(&relabelled, 2, &k2), Err(CryptoError::AuthFailure));
    }

    #[test]
    fn any_bit_flip_is_detected() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let k = DecryptionKey::from_seed([3; 32]);
        let env = seal(&[0xAB; 48], 3, &k.public(), &mut rng);
        for pos in 0..64 {
            let mut bad = env.clone();
            let byte = pos % bad.ciphertext.len();
            bad.ciphertext[byte] ^= 1 << (pos % 8);
            assert_eq!(unseal(&bad, 3, &k), Err(CryptoError::AuthFailure), "bit {pos}");
        }
        let mut bad_eph = env.clone();
        bad_eph.ephemeral[0] ^= 1;
        assert_eq!(unseal(&bad_eph, 3, &k), Err(CryptoError::AuthFailure));
    }
}
