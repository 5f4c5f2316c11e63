use std::fmt;

use serde::{Deserialize, Serialize};

/// Client identifier, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClientId(pub u32);

/// Aggregator identifier, 1-based. Doubles as the Shamir evaluation point
/// of the aggregator's share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AggregatorId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeId {
    Client(ClientId),
    Aggregator(AggregatorId),
}

impl ClientId {
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl AggregatorId {
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl fmt::Display for AggregatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Client(c) => c.fmt(f),
            NodeId::Aggregator(a) => a.fmt(f),
        }
    }
}

impl From<ClientId> for NodeId {
    fn from(c: ClientId) -> Self {
        NodeId::Client(c)
    }
}

impl From<AggregatorId> for NodeId {
    fn from(a: AggregatorId) -> Self {
        NodeId::Aggregator(a)
    }
}

/// All client ids `1..=n`.
pub fn clients(n: u32) -> impl Iterator<Item = ClientId> {
    (1..=n).map(ClientId)
}

/// All aggregator ids `1..=n`.
pub fn aggregators(n: u32) -> impl Iterator<Item = AggregatorId> {
    (1..=n).map(AggregatorId)
}
