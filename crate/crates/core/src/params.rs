//! Public protocol parameters and genesis key material.

use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::crypto::{CommitmentBases, DecryptionKey, EncryptionKey, PublicKey, SigningKey};
use crate::dp::DpConfig;
use crate::field::{FieldVec, FixedPointCodec, PublicMatrix};
use crate::ids::{AggregatorId, ClientId};
use crate::inclusion::BlameParams;
use crate::rng::derive_seed;
use crate::task::StepSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InclusionMode {
    /// Least-included first, with blaming.
    Debiased,
    /// The first `rho` updates to arrive; no blaming. Baseline only.
    FirstArrival,
}

#[derive(Debug, Clone)]
pub struct ProtocolParams {
    pub n_c: u32,
    pub n_a: u32,
    pub t_c: u32,
    pub t_a: u32,
    pub rho: usize,
    /// Gradient length `N_g`.
    pub dim: usize,
    /// Mask length `N_s`.
    pub mask_len: usize,
    pub codec: FixedPointCodec,
    pub matrix_seed: [u8; 32],
    pub assign_seed: [u8; 32],
    pub dp: DpConfig,
    pub blame: BlameParams,
    pub step: StepSchedule,
    pub inclusion: InclusionMode,
    /// Rounds `0..horizon` are run.
    pub horizon: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{rule}: {detail}")]
pub struct ParamError {
    pub rule: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Validation {
    /// Permit `n_a < 3 t_a + 1` (negative tests only).
    pub allow_weak_resilience: bool,
    /// Permit `rho <= 1 + sqrt(1 + k)` (tests only).
    pub allow_small_rho: bool,
    /// Enforce `k > 2 rho`.
    pub fairness: bool,
}

impl ProtocolParams {
    pub fn k(&self) -> usize {
        (self.n_c / self.n_a) as usize
    }

    /// Shares (and signatures) needed to unmask or certify: `n_a - t_a`.
    pub fn quorum(&self) -> usize {
        (self.n_a - self.t_a) as usize
    }

    /// Pings needed before a UNIFICATION is sent. Clusters of halted
    /// coordinators never receive TRAIN, so they are discounted as well as
    /// crashed clients.
    pub fn unification_threshold(&self) -> usize {
        (self.n_c as usize).saturating_sub(self.t_c as usize + self.t_a as usize * self.k())
    }

    /// Number of top counts examined when blaming.
    pub fn blame_keep(&self) -> usize {
        (self.n_c as usize).saturating_sub(2 * self.t_c as usize).max(1)
    }

    pub fn validate(&self, v: Validation) -> Result<(), ParamError> {
        let fail = |rule, detail: String| Err(ParamError { rule, detail });
        if self.n_a == 0 || self.n_c == 0 {
            return fail("nonempty", "need at least one client and one aggregator".into());
        }
        if !v.allow_weak_resilience && self.n_a < 3 * self.t_a + 1 {
            return fail("n_a >= 3 t_a + 1", format!("n_a = {}, t_a = {}", self.n_a, self.t_a));
        }
        if self.n_c % self.n_a != 0 {
            return fail("n_a divides n_c", format!("n_c = {}, n_a = {}", self.n_c, self.n_a));
        }
        let k = self.k();
        if self.rho == 0 || self.rho >= k {
            return fail("0 < rho < k", format!("rho = {}, k = {k}", self.rho));
        }
        if v.fairness && k <= 2 * self.rho {
            return fail("k > 2 rho", format!("rho = {}, k = {k}", self.rho));
        }
        if !v.allow_small_rho && (self.rho as f64) <= 1.0 + (1.0 + k as f64).sqrt() {
            return fail("rho > 1 + sqrt(1 + k)", format!("rho = {}, k = {k}", self.rho));
        }
        if self.t_c as usize >= self.n_c as usize {
            return fail("t_c < n_c", format!("t_c = {}", self.t_c));
        }
        if (self.codec.max_summands() as usize) < self.rho {
            return fail(
                "codec headroom",
                format!("codec sums at most {} vectors, rho = {}", self.codec.max_summands(), self.rho),
            );
        }
        if self.mask_len == 0 || self.mask_len > self.dim {
            return fail("0 < N_s <= N_g", format!("N_s = {}, N_g = {}", self.mask_len, self.dim));
        }
        if self.dp.rho != self.rho {
            return fail("dp.rho = rho", format!("{} vs {}", self.dp.rho, self.rho));
        }
        Ok(())
    }
}

/// Public keys registered at genesis. Index `i` holds the key of id `i+1`.
#[derive(Debug, Clone)]
pub struct Registry {
    pub clients: Vec<PublicKey>,
    pub aggregators: Vec<PublicKey>,
    pub aggregator_enc: Vec<EncryptionKey>,
}

/// Everything a node needs that is public and fixed for the run.
#[derive(Debug)]
pub struct Context {
    pub params: ProtocolParams,
    pub matrix: PublicMatrix,
    pub mask_bases: CommitmentBases,
    pub grad_bases: CommitmentBases,
    pub registry: Registry,
    /// Fingerprints of certificates that already verified. Verification
    /// is deterministic, so co-located nodes may share the result.
    pub verified_certs: Mutex<HashSet<[u8; 32]>>,
}

pub struct AggregatorKeys {
    pub sign: SigningKey,
    pub decrypt: DecryptionKey,
}

pub struct Genesis {
    pub ctx: Arc<Context>,
    pub client_keys: Vec<SigningKey>,
    pub aggregator_keys: Vec<AggregatorKeys>,
}

impl Genesis {
    pub fn new(params: ProtocolParams, root_seed: u64) -> Self {
        let client_keys: Vec<SigningKey> = (1..=params.n_c)
            .map(|c| SigningKey::from_seed(derive_seed(root_seed, "key/client", &[c as u64])))
            .collect();
        let aggregator_keys: Vec<AggregatorKeys> = (1..=params.n_a)
            .map(|a| AggregatorKeys {
                sign: SigningKey::from_seed(derive_seed(root_seed, "key/aggregator", &[a as u64])),
                decrypt: DecryptionKey::from_seed(derive_seed(root_seed, "key/aggregator-enc", &[a as u64])),
            })
            .collect();
        let registry = Registry {
            clients: client_keys.iter().map(SigningKey::public).collect(),
            aggregators: aggregator_keys.iter().map(|k| k.sign.public()).collect(),
            aggregator_enc: aggregator_keys.iter().map(|k| k.decrypt.public()).collect(),
        };
        let field = params.codec.field();
        let matrix = PublicMatrix::expand(params.matrix_seed, params.dim, params.mask_len, field)
            .expect("validated dimensions");
        let ctx = Context {
            mask_bases: CommitmentBases::new("pvfed/mask-bases/v1", params.mask_len),
            grad_bases: CommitmentBases::new("pvfed/grad-bases/v1", params.dim),
            matrix,
            registry,
            params,
            verified_certs: Mutex::new(HashSet::new()),
        };
        Genesis { ctx: Arc::new(ctx), client_keys, aggregator_keys }
    }
}

impl Context {
    pub fn genesis_model(&self) -> FieldVec {
        FieldVec::zeros(self.params.dim)
    }

    pub fn client_key(&self, c: ClientId) -> Option<&PublicKey> {
        c.0.checked_sub(1).and_then(|i| self.registry.clients.get(i as usize))
    }

    pub fn aggregator_key(&self, a: AggregatorId) -> Option<&PublicKey> {
        a.0.checked_sub(1).and_then(|i| self.registry.aggregators.get(i as usize))
    }
}
