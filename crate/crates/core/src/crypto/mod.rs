//! Secret sharing, commitments, signatures and sealing.

pub mod commit;
pub mod encoding;
pub mod seal;
pub mod shamir;
pub mod sig;

pub use commit::{commit_add, CommitMode, Commitment, CommitmentBases};
pub use encoding::{hash_parts, TupleWriter};
pub use seal::{seal, unseal, Sealer, DecryptionKey, EncryptionKey, SealedEnvelope};
pub use shamir::{recover_scalars, ss_add, ss_recover, ss_share, zero_share, Dealing, PartialProof, Share};
pub use sig::{threshold_combine, verify, verify_combined, PublicKey, Signature, SigningKey, ThresholdCert};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("threshold {t} is not in 1..={n}")]
    BadThreshold { n: u32, t: u32 },
    #[error("shares belong to different owners or rounds")]
    OwnerMismatch,
    #[error("vector length mismatch")]
    LengthMismatch,
    #[error("need {need} shares, have {have}")]
    InsufficientShares { have: usize, need: usize },
    #[error("owner {0} appears twice")]
    DuplicateOwner(u32),
    #[error("cannot add commitments of different modes")]
    ModeMismatch,
    #[error("signer {0} appears twice")]
    DuplicateSigner(u32),
    #[error("{have} valid signatures, {need} required")]
    BelowThreshold { have: usize, need: usize },
    #[error("envelope addressed to {addressed}, opened by {actual}")]
    WrongRecipient { addressed: u32, actual: u32 },
    #[error("authentication failed")]
    AuthFailure,
    #[error("malformed encoding")]
    Malformed,
}
