//! Debiasing inclusion, participation lists, wasted-cluster detection and
//! blaming.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crypto::{PublicKey, Signature, TupleWriter};
use crate::ids::{AggregatorId, ClientId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InclusionError {
    #[error("only {have} candidates for {need} slots")]
    NotEnough { have: usize, need: usize },
    #[error("bad ping signature from {0}")]
    BadSignature(ClientId),
}

pub fn tie_break_key(seed: &[u8; 32], round: u64, client: ClientId) -> [u8; 32] {
    Sha256::new()
        .chain_update(b"pvfed/include-tie/v1")
        .chain_update(seed)
        .chain_update(round.to_le_bytes())
        .chain_update(client.0.to_le_bytes())
        .finalize()
        .into()
}

/// Picks the `rho` least-included candidates. Ties are ordered by a
/// per-round hash so no id is systematically preferred. The result is
/// sorted by id.
pub fn include(
    counts: &dyn Fn(ClientId) -> u64,
    candidates: &[ClientId],
    rho: usize,
    seed: &[u8; 32],
    round: u64,
) -> Result<Vec<ClientId>, InclusionError> {
    if candidates.len() < rho {
        return Err(InclusionError::NotEnough { have: candidates.len(), need: rho });
    }
    let mut keyed: Vec<(u64, [u8; 32], ClientId)> = candidates
        .iter()
        .map(|&c| (counts(c), tie_break_key(seed, round, c), c))
        .collect();
    keyed.sort_unstable();
    keyed.dedup_by_key(|e| e.2);
    if keyed.len() < rho {
        return Err(InclusionError::NotEnough { have: keyed.len(), need: rho });
    }
    let mut chosen: Vec<ClientId> = keyed[..rho].iter().map(|e| e.2).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Per-aggregator inclusion counts: `lambda[j][c]` is how often
/// coordinator `j + 1` has included client `c + 1`, as observed locally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionLedger {
    counts: Vec<Vec<u64>>,
}

impl InclusionLedger {
    pub fn new(n_a: u32, n_c: u32) -> Self {
        InclusionLedger { counts: vec![vec![0; n_c as usize]; n_a as usize] }
    }

    pub fn of(&self, coordinator: AggregatorId) -> &[u64] {
        &self.counts[coordinator.index()]
    }

    pub fn count(&self, coordinator: AggregatorId, client: ClientId) -> u64 {
        self.counts[coordinator.index()][client.index()]
    }

    pub fn record(&mut self, coordinator: AggregatorId, included: &[ClientId]) {
        for c in included {
            self.counts[coordinator.index()][c.index()] += 1;
        }
    }

    /// Counts as they would be after `included` is recorded.
    pub fn tentative(&self, coordinator: AggregatorId, included: &[ClientId]) -> Vec<u64> {
        let mut v = self.counts[coordinator.index()].clone();
        for c in included {
            v[c.index()] += 1;
        }
        v
    }
}

pub fn ping_message(round: u64, client: ClientId) -> Vec<u8> {
    TupleWriter::new("pvfed/ping/v1").u64(round).u32(client.0).finish()
}

/// Clients known to have sent their round-`tau` update, each backed by the
/// client's signature of the round number.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PingList {
    pub round: u64,
    pub entries: BTreeMap<ClientId, Signature>,
}

impl PingList {
    pub fn new(round: u64) -> Self {
        PingList { round, entries: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, c: ClientId) -> bool {
        self.entries.contains_key(&c)
    }

    /// Idempotent; returns whether the entry is new.
    pub fn record(&mut self, client: ClientId, sig: Signature, keys: &[PublicKey]) -> Result<bool, InclusionError> {
        if self.entries.contains_key(&client) {
            return Ok(false);
        }
        if !verify_ping(self.round, client, &sig, keys) {
            return Err(InclusionError::BadSignature(client));
        }
        self.entries.insert(client, sig);
        Ok(true)
    }

    /// Merges a peer's list. Lists below `min_size` or with any bad
    /// signature are ignored entirely. Returns whether the merge happened.
    pub fn merge(&mut self, remote: &PingList, min_size: usize, keys: &[PublicKey]) -> bool {
        if remote.round != self.round || remote.len() < min_size {
            return false;
        }
        // entries we already hold with the same signature were checked on arrival
        let fresh = remote.entries.iter().filter(|(c, s)| self.entries.get(c) != Some(s));
        if !fresh.clone().all(|(c, s)| verify_ping(self.round, *c, s, keys)) {
            return false;
        }
        for (c, s) in &remote.entries {
            self.entries.entry(*c).or_insert(*s);
        }
        true
    }
}

pub fn verify_ping(round: u64, client: ClientId, sig: &Signature, keys: &[PublicKey]) -> bool {
    client.0 >= 1
        && keys
            .get(client.index())
            .is_some_and(|pk| pk.verify(&ping_message(round, client), sig))
}

/// A cluster is wasted when fewer than `rho` of its clients participate
/// and the unification quorum has been reached.
pub fn wasted_detection(own_participants: usize, rho: usize, unifications: usize, quorum: usize) -> bool {
    unifications >= quorum && own_participants < rho
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlameParams {
    pub expected_var: f64,
    pub sec_param: f64,
    pub delta_max: u64,
}

impl BlameParams {
    /// Never blames.
    pub fn off() -> Self {
        BlameParams { expected_var: f64::INFINITY, sec_param: 0.0, delta_max: u64::MAX }
    }
}

/// The `keep` largest values.
pub fn restrict(lambda: &[u64], keep: usize) -> Vec<u64> {
    let mut v = lambda.to_vec();
    v.sort_unstable_by(|a, b| b.cmp(a));
    v.truncate(keep);
    v
}

/// Population variance and spread of a count vector.
pub fn spread_stats(lambda: &[u64]) -> (f64, u64) {
    if lambda.is_empty() {
        return (0.0, 0);
    }
    let n = lambda.len() as f64;
    let mean = lambda.iter().sum::<u64>() as f64 / n;
    let var = lambda.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let spread = lambda.iter().max().unwrap() - lambda.iter().min().unwrap();
    (var, spread)
}

/// True when the `keep` most frequent counts are too uneven.
pub fn blaming(lambda: &[u64], keep: usize, params: &BlameParams) -> bool {
    let (var, spread) = spread_stats(&restrict(lambda, keep));
    var > params.expected_var + params.sec_param || spread > params.delta_max
}
