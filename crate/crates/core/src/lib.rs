//! Private, Byzantine-tolerant federated averaging.
//!
//! Clients mask their clipped, noised gradients with `A s` over a prime
//! field and secret-share `s` among the aggregators. Each round a
//! verifiable shuffle assigns every client to one coordinating aggregator,
//! which unmasks exactly `rho` updates at a time with the help of a quorum
//! of its peers. Models are certified by a quorum of aggregator
//! signatures before clients train on them.
//!
//! The crate also contains a deterministic discrete-event simulator, a
//! synthetic strongly convex learning task and the experiment harness.

pub mod aggregator;
pub mod assignment;
pub mod client;
pub mod crypto;
pub mod dp;
pub mod field;
pub mod harness;
pub mod ids;
pub mod inclusion;
pub mod messages;
pub mod params;
pub mod rng;
pub mod sim;
pub mod task;
pub mod wire;

pub use field::{Field, FieldError, FieldVec, FixedPointCodec, PublicMatrix};
pub use ids::{AggregatorId, ClientId, NodeId};
