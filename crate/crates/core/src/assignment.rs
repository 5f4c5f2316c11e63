//! Verifiable per-round partition of clients into clusters.
//!
//! Client positions are permuted with a 90-round swap-or-not shuffle keyed
//! by `SHA-256(seed || round)` and the permuted list is cut into
//! consecutive blocks of `k = n_c / n_a`. Block `j` (0-based) is
//! coordinated by aggregator `j + 1`. Every party can recompute the result
//! from public values.

use sha2::{Digest, Sha256};

use crate::ids::{AggregatorId, ClientId};

pub const SHUFFLE_ROUNDS: u8 = 90;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AssignmentError {
    #[error("n_a = {n_a} does not divide n_c = {n_c}")]
    DivisibilityViolation { n_c: u32, n_a: u32 },
}

/// Swap-or-not permutation of `[0, n)` for one round key.
#[derive(Debug, Clone)]
pub struct Shuffle {
    n: u64,
    key: [u8; 32],
    pivots: Vec<u64>,
    // sources[r][chunk] is the 32-byte bit source for positions
    // chunk*256 .. chunk*256+255 in round r
    sources: Vec<Vec<[u8; 32]>>,
}

impl Shuffle {
    pub fn new(key: [u8; 32], n: u64) -> Self {
        assert!(n > 0, "empty shuffle domain");
        let chunks = n.div_ceil(256);
        let mut pivots = Vec::with_capacity(SHUFFLE_ROUNDS as usize);
        let mut sources = Vec::with_capacity(SHUFFLE_ROUNDS as usize);
        for r in 0..SHUFFLE_ROUNDS {
            let h = Sha256::new().chain_update(key).chain_update([r]).finalize();
            pivots.push(u64::from_le_bytes(h[..8].try_into().unwrap()) % n);
            sources.push(
                (0..chunks as u32)
                    .map(|c| {
                        Sha256::new()
                            .chain_update(key)
                            .chain_update([r])
                            .chain_update(c.to_le_bytes())
                            .finalize()
                            .into()
                    })
                    .collect(),
            );
        }
        Shuffle { n, key, pivots, sources }
    }

    pub fn key(&self) -> &[u8; 32] {
        &self.key
    }

    fn round(&self, r: usize, index: u64) -> u64 {
        let flip = (self.pivots[r] + self.n - index) % self.n;
        let position = index.max(flip);
        let byte = self.sources[r][(position / 256) as usize][((position % 256) / 8) as usize];
        if (byte >> (position % 8)) & 1 == 1 {
            flip
        } else {
            index
        }
    }

    /// Image of `index` under the permutation.
    pub fn forward(&self, index: u64) -> u64 {
        assert!(index < self.n);
        (0..SHUFFLE_ROUNDS as usize).fold(index, |i, r| self.round(r, i))
    }

    /// Every round is an involution, so the inverse runs them backwards.
    pub fn inverse(&self, index: u64) -> u64 {
        assert!(index < self.n);
        (0..SHUFFLE_ROUNDS as usize).rev().fold(index, |i, r| self.round(r, i))
    }
}

pub fn round_key(seed: &[u8; 32], round: u64) -> [u8; 32] {
    Sha256::new()
        .chain_update(b"pvfed/assign/v1")
        .chain_update(seed)
        .chain_update(round.to_le_bytes())
        .finalize()
        .into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundAssignment {
    pub round: u64,
    pub seed: [u8; 32],
    /// `clusters[j]` is coordinated by aggregator `j + 1`.
    pub clusters: Vec<Vec<ClientId>>,
}

impl RoundAssignment {
    pub fn cluster_size(&self) -> usize {
        self.clusters.first().map_or(0, Vec::len)
    }

    pub fn cluster(&self, a: AggregatorId) -> &[ClientId] {
        &self.clusters[a.index()]
    }

    pub fn coordinator_of(&self, c: ClientId) -> Option<AggregatorId> {
        self.clusters
            .iter()
            .position(|cl| cl.contains(&c))
            .map(|j| AggregatorId(j as u32 + 1))
    }
}

fn check(n_c: u32, n_a: u32) -> Result<(), AssignmentError> {
    if n_a == 0 || n_c == 0 || n_c % n_a != 0 {
        return Err(AssignmentError::DivisibilityViolation { n_c, n_a });
    }
    Ok(())
}

pub fn assign(round: u64, n_c: u32, n_a: u32, seed: &[u8; 32]) -> Result<RoundAssignment, AssignmentError> {
    check(n_c, n_a)?;
    let k = (n_c / n_a) as u64;
    let shuffle = Shuffle::new(round_key(seed, round), n_c as u64);
    let clusters = (0..n_a as u64)
        .map(|j| {
            (j * k..(j + 1) * k)
                .map(|p| ClientId(shuffle.forward(p) as u32 + 1))
                .collect()
        })
        .collect();
    Ok(RoundAssignment { round, seed: *seed, clusters })
}

/// Coordinator of `client` in `round`, without building the whole partition.
pub fn assigned(
    round: u64,
    client: ClientId,
    n_c: u32,
    n_a: u32,
    seed: &[u8; 32],
) -> Result<AggregatorId, AssignmentError> {
    check(n_c, n_a)?;
    assert!(client.0 >= 1 && client.0 <= n_c, "client {client} out of range");
    let shuffle = Shuffle::new(round_key(seed, round), n_c as u64);
    let position = shuffle.inverse(client.0 as u64 - 1);
    Ok(AggregatorId((position / (n_c / n_a) as u64) as u32 + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn small_partition() {
        for round in 0..20 {
            let a = assign(round, 4, 2, &[1; 32]).unwrap();
            assert_eq!(a.clusters.len(), 2);
            let all: BTreeSet<u32> = a.clusters.iter().flatten().map(|c| c.0).collect();
            assert_eq!(all, (1..=4).collect());
            assert!(a.clusters.iter().all(|c| c.len() == 2));
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(assign(7, 60, 4, &[3; 32]).unwrap(), assign(7, 60, 4, &[3; 32]).unwrap());
        assert_ne!(assign(7, 60, 4, &[3; 32]).unwrap(), assign(8, 60, 4, &[3; 32]).unwrap());
    }

    #[test]
    fn inverse_is_inverse() {
        for n in [1u64, 2, 7, 256, 257, 600] {
            let s = Shuffle::new([n as u8; 32], n);
            let image: BTreeSet<u64> = (0..n).map(|i| s.forward(i)).collect();
            assert_eq!(image.len() as u64, n);
            for i in 0..n {
                assert_eq!(s.inverse(s.forward(i)), i);
            }
        }
    }

    #[test]
    fn assigned_matches_assign() {
        let seed = [5; 32];
        for round in 0..100 {
            let a = assign(round, 28, 4, &seed).unwrap();
            for c in 1..=28 {
                let agg = assigned(round, ClientId(c), 28, 4, &seed).unwrap();
                assert!(a.cluster(agg).contains(&ClientId(c)));
                assert_eq!(a.coordinator_of(ClientId(c)), Some(agg));
            }
        }
    }

    #[test]
    fn single_aggregator() {
        for round in 0..10 {
            assert_eq!(assigned(round, ClientId(3), 8, 1, &[0; 32]).unwrap(), AggregatorId(1));
        }
    }

    #[test]
    fn divisibility() {
        assert!(matches!(assign(0, 10, 3, &[0; 32]), Err(AssignmentError::DivisibilityViolation { .. })));
    }
}
