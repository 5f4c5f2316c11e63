//! Protocol messages and the digests that get signed.

use curve25519_dalek::ristretto::RistrettoPoint;

use crate::crypto::{Commitment, PartialProof, SealedEnvelope, Share, Signature, ThresholdCert, TupleWriter};
use crate::field::FieldVec;
use crate::ids::{AggregatorId, ClientId};
use crate::inclusion::PingList;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Train {
    pub round: u64,
    pub model: FieldVec,
    /// `None` only for the genesis model.
    pub cert: Option<ThresholdCert>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Update {
    pub round: u64,
    pub client: ClientId,
    pub h: FieldVec,
    /// Deterministic commitment to the encoded noisy gradient.
    pub proof: Commitment,
    /// Pedersen commitments to the mask polynomial.
    pub partial: PartialProof,
    /// One per aggregator, in aggregator order.
    pub envelopes: Vec<SealedEnvelope>,
    pub sigma_h: Signature,
    pub ping_sig: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ping {
    pub round: u64,
    pub client: ClientId,
    pub sig: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unification {
    pub round: u64,
    pub from: AggregatorId,
    pub list: PingList,
}

/// One included client's material, as forwarded to a single aggregator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SumItem {
    pub client: ClientId,
    pub h: FieldVec,
    pub proof: Commitment,
    pub partial: PartialProof,
    pub sigma_h: Signature,
    pub envelope: SealedEnvelope,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SumShares {
    pub round: u64,
    pub coordinator: AggregatorId,
    pub included: Vec<ClientId>,
    pub items: Vec<SumItem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntraReply {
    pub round: u64,
    pub from: AggregatorId,
    pub coordinator: AggregatorId,
    pub share: Share,
    pub c_sum: Commitment,
    /// Over [`cluster_digest`].
    pub sig: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterSum {
    pub round: u64,
    pub coordinator: AggregatorId,
    pub included: Vec<ClientId>,
    pub h_hat: FieldVec,
    /// Encoded sum of the included noisy gradients.
    pub g_hat: FieldVec,
    pub c_sum: Commitment,
    pub cert: ThresholdCert,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certify {
    pub round: u64,
    pub from: AggregatorId,
    /// The proposer's round-`round` model and the certificate it was
    /// trained under.
    pub prev_model: FieldVec,
    pub prev_cert: Option<ThresholdCert>,
    /// Sorted by coordinator.
    pub entries: Vec<InterSum>,
    /// The proposed round-`round + 1` model.
    pub candidate: FieldVec,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertifyAck {
    pub round: u64,
    pub from: AggregatorId,
    pub digest: [u8; 32],
    pub sig: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wasted {
    pub round: u64,
    pub from: AggregatorId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Train(Train),
    Update(Box<Update>),
    Ping(Ping),
    Unification(Unification),
    SumShares(Box<SumShares>),
    IntraReply(Box<IntraReply>),
    InterSum(Box<InterSum>),
    Certify(Box<Certify>),
    CertifyAck(CertifyAck),
    Wasted(Wasted),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MsgKind {
    Train,
    Update,
    Ping,
    Unification,
    SumShares,
    IntraReply,
    InterSum,
    Certify,
    CertifyAck,
    Wasted,
}

impl MsgKind {
    pub const ALL: [MsgKind; 10] = [
        MsgKind::Train,
        MsgKind::Update,
        MsgKind::Ping,
        MsgKind::Unification,
        MsgKind::SumShares,
        MsgKind::IntraReply,
        MsgKind::InterSum,
        MsgKind::Certify,
        MsgKind::CertifyAck,
        MsgKind::Wasted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MsgKind::Train => "TRAIN",
            MsgKind::Update => "UPDATE",
            MsgKind::Ping => "PING",
            MsgKind::Unification => "UNIFICATION",
            MsgKind::SumShares => "SUM-SHARES",
            MsgKind::IntraReply => "INTRA-CLUSTER-RECONSTRUCTION",
            MsgKind::InterSum => "INTER-CLUSTER-SUM",
            MsgKind::Certify => "CERTIFY",
            MsgKind::CertifyAck => "CERTIFY-ACK",
            MsgKind::Wasted => "WASTED",
        }
    }
}

impl Message {
    pub fn kind(&self) -> MsgKind {
        match self {
            Message::Train(_) => MsgKind::Train,
            Message::Update(_) => MsgKind::Update,
            Message::Ping(_) => MsgKind::Ping,
            Message::Unification(_) => MsgKind::Unification,
            Message::SumShares(_) => MsgKind::SumShares,
            Message::IntraReply(_) => MsgKind::IntraReply,
            Message::InterSum(_) => MsgKind::InterSum,
            Message::Certify(_) => MsgKind::Certify,
            Message::CertifyAck(_) => MsgKind::CertifyAck,
            Message::Wasted(_) => MsgKind::Wasted,
        }
    }

    pub fn round(&self) -> u64 {
        match self {
            Message::Train(m) => m.round,
            Message::Update(m) => m.round,
            Message::Ping(m) => m.round,
            Message::Unification(m) => m.round,
            Message::SumShares(m) => m.round,
            Message::IntraReply(m) => m.round,
            Message::InterSum(m) => m.round,
            Message::Certify(m) => m.round,
            Message::CertifyAck(m) => m.round,
            Message::Wasted(m) => m.round,
        }
    }
}

fn write_points(w: &mut TupleWriter, points: &[RistrettoPoint]) {
    w.u32(points.len() as u32);
    for p in points {
        w.bytes(p.compress().as_bytes());
    }
}

pub fn update_digest(round: u64, client: ClientId, h: &FieldVec, proof: &Commitment, partial: &PartialProof) -> [u8; 32] {
    let mut w = TupleWriter::new("pvfed/update/v1");
    w.u64(round).u32(client.0).bytes(&h.to_bytes()).bytes(&proof.to_bytes());
    write_points(&mut w, &partial.0);
    w.digest()
}

/// Signed by the dealer inside each sealed envelope.
pub fn share_message(round: u64, client: ClientId, share: &Share) -> Vec<u8> {
    let mut w = TupleWriter::new("pvfed/share/v1");
    w.u64(round).u32(client.0).u32(share.owner);
    for v in &share.values {
        w.bytes(v.as_bytes());
    }
    w.bytes(share.blind.as_bytes());
    w.finish()
}

/// What aggregators sign when they contribute to a cluster's unmasking.
pub fn cluster_digest(
    round: u64,
    coordinator: AggregatorId,
    included: &[ClientId],
    h_hat: &FieldVec,
    c_sum: &Commitment,
) -> [u8; 32] {
    let mut w = TupleWriter::new("pvfed/cluster/v1");
    w.u64(round).u32(coordinator.0).u32(included.len() as u32);
    for c in included {
        w.u32(c.0);
    }
    w.bytes(&h_hat.to_bytes()).bytes(&c_sum.to_bytes());
    w.digest()
}

/// Digest certified for the model clients train on in `round`.
pub fn model_digest(round: u64, model: &FieldVec) -> [u8; 32] {
    TupleWriter::new("pvfed/model/v1").u64(round).bytes(&model.to_bytes()).digest()
}
