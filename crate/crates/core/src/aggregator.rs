//! Aggregator state machine.
//!
//! Per round an aggregator coordinates its own cluster (TRAIN, collect
//! UPDATEs, pick the included set, fan the shares out, unmask with the
//! replies), helps every other coordinator unmask, and certifies the next
//! model with its peers. Handlers never look at a clock: all progress is
//! driven by received messages.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Mutex};

use curve25519_dalek::scalar::Scalar;
use sha2::{Digest, Sha256};

use crate::assignment::{assign, RoundAssignment};
use crate::client::{verify_certificate, Outbound};
use crate::crypto::{
    commit_add, ss_add, ss_recover, threshold_combine, unseal, verify_combined, Commitment, PartialProof, Share,
    ThresholdCert,
};
use crate::dp::unmask_encoded;
use crate::field::FieldVec;
use crate::ids::{aggregators, AggregatorId, ClientId, NodeId};
use crate::inclusion::{blaming, include, InclusionLedger, PingList};
use crate::messages::*;
use crate::params::{AggregatorKeys, Context, InclusionMode};
use crate::wire::{decode_share_payload, encode};

/// Deviations a Byzantine aggregator may follow. `Honest` for correct
/// nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Behavior {
    Honest,
    /// Sends nothing for rounds `>= from_round`.
    Halt { from_round: u64 },
    /// Only the listed aggregators (and all clients) hear from it.
    Omit { allowed: BTreeSet<AggregatorId> },
    /// Trains its cluster on a forged model and broadcasts an uncertified
    /// cluster sum in place of its own.
    FabricateModel,
    /// Perturbs the summed shares it returns to other coordinators.
    TamperShares,
    /// Sends different included sets to different peers, including a set
    /// of size `rho - 1`, and sends every variant twice.
    EquivocateInclusion,
    /// Always includes the given clients when they are in its cluster.
    BiasInclusion { favourites: Vec<ClientId> },
}

/// Server-side checks; both are on except in negative tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Defenses {
    pub exact_rho: bool,
    pub single_serve: bool,
}

impl Default for Defenses {
    fn default() -> Self {
        Defenses { exact_rho: true, single_serve: true }
    }
}

/// Shared state of colluding Byzantine aggregators.
#[derive(Debug, Default)]
pub struct Blackboard {
    pub keys: BTreeMap<AggregatorId, crate::crypto::DecryptionKey>,
    /// Updates received by colluding coordinators.
    pub updates: Vec<Update>,
    /// Every bundle a colluder sent, with its recipient.
    pub bundles: Vec<(AggregatorId, SumShares)>,
    /// Every reconstruction reply a colluder received.
    pub replies: Vec<IntraReply>,
}

pub type SharedBlackboard = Arc<Mutex<Blackboard>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WasteReason {
    TooFewParticipants,
    SelfBlame,
    /// Tampered replies left fewer than `n_a - t_a` usable shares, or the
    /// unmasked sum did not match its commitment.
    ReconstructionFailed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    WrongSize,
    NotInCluster,
    BadItem,
    SenderWasted,
    AlreadyServed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AggEvent {
    TrainSent { round: u64, clients: usize },
    Included { round: u64, clients: Vec<ClientId> },
    WastedDeclared { round: u64, reason: WasteReason },
    Served { round: u64, coordinator: AggregatorId },
    Rejected { round: u64, coordinator: AggregatorId, reason: RejectReason },
    Blamed { round: u64, coordinator: AggregatorId },
    DetectedTamper { round: u64, suspect: AggregatorId },
    Inconsistent { round: u64, suspect: AggregatorId },
    InterSent { round: u64 },
    Finalized { round: u64, model: FieldVec, cert: ThresholdCert, final_selec: Vec<AggregatorId> },
}

#[derive(Debug, Clone)]
struct Pending {
    included: Vec<ClientId>,
    h_hat: FieldVec,
    c_sum: Commitment,
    partial: PartialProof,
    digest: [u8; 32],
    valid: BTreeMap<AggregatorId, (Share, crate::crypto::Signature)>,
    rejected: BTreeSet<AggregatorId>,
}

#[derive(Debug, Clone)]
enum Phase {
    Idle,
    /// Waiting for the first `rho` updates (baseline mode).
    WaitingArrivals,
    /// Included set chosen; waiting for all of its updates.
    WaitingUpdates(Vec<ClientId>),
    Collecting(Box<Pending>),
    Done,
    Wasted,
}

#[derive(Debug, Clone)]
struct CertifyState {
    candidate: FieldVec,
    digest: [u8; 32],
    final_selec: Vec<AggregatorId>,
    acks: BTreeMap<u32, crate::crypto::Signature>,
}

#[derive(Debug)]
struct RoundState {
    train_sent: bool,
    cluster: Vec<ClientId>,
    updates: HashMap<ClientId, Update>,
    arrivals: Vec<ClientId>,
    pings: PingList,
    unification_sent: bool,
    unifications: BTreeSet<AggregatorId>,
    phase: Phase,
    sum_shares_sent: bool,
    wasted_from: BTreeSet<AggregatorId>,
    served: BTreeSet<AggregatorId>,
    bundles_from: BTreeSet<AggregatorId>,
    inters: BTreeMap<AggregatorId, InterSum>,
    certify: Option<CertifyState>,
}

impl RoundState {
    fn new(round: u64) -> Self {
        RoundState {
            train_sent: false,
            cluster: Vec::new(),
            updates: HashMap::new(),
            arrivals: Vec::new(),
            pings: PingList::new(round),
            unification_sent: false,
            unifications: BTreeSet::new(),
            phase: Phase::Idle,
            sum_shares_sent: false,
            wasted_from: BTreeSet::new(),
            served: BTreeSet::new(),
            bundles_from: BTreeSet::new(),
            inters: BTreeMap::new(),
            certify: None,
        }
    }
}

pub struct Aggregator {
    id: AggregatorId,
    ctx: Arc<Context>,
    keys: AggregatorKeys,
    behavior: Behavior,
    defenses: Defenses,
    blackboard: Option<SharedBlackboard>,
    round: u64,
    model: FieldVec,
    model_cert: Option<ThresholdCert>,
    done: bool,
    ledger: InclusionLedger,
    rounds: BTreeMap<u64, RoundState>,
    assignments: HashMap<u64, Arc<RoundAssignment>>,
    verified_inters: HashSet<[u8; 32]>,
    events: Vec<AggEvent>,
    out: Vec<Outbound>,
}

impl Aggregator {
    pub fn new(id: AggregatorId, ctx: Arc<Context>, keys: AggregatorKeys) -> Self {
        let p = &ctx.params;
        Aggregator {
            id,
            keys,
            behavior: Behavior::Honest,
            defenses: Defenses::default(),
            blackboard: None,
            round: 0,
            model: ctx.genesis_model(),
            model_cert: None,
            done: false,
            ledger: InclusionLedger::new(p.n_a, p.n_c),
            rounds: BTreeMap::new(),
            assignments: HashMap::new(),
            verified_inters: HashSet::new(),
            events: Vec::new(),
            out: Vec::new(),
            ctx,
        }
    }

    pub fn with_behavior(mut self, behavior: Behavior, blackboard: Option<SharedBlackboard>) -> Self {
        if let Some(bb) = &blackboard {
            bb.lock().unwrap().keys.insert(self.id, self.keys.decrypt.clone());
        }
        self.behavior = behavior;
        self.blackboard = blackboard;
        self
    }

    pub fn with_defenses(mut self, defenses: Defenses) -> Self {
        self.defenses = defenses;
        self
    }

    pub fn id(&self) -> AggregatorId {
        self.id
    }

    pub fn behavior(&self) -> &Behavior {
        &self.behavior
    }

    pub fn is_honest(&self) -> bool {
        self.behavior == Behavior::Honest
    }

    /// The round whose model this aggregator currently holds.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn model(&self) -> &FieldVec {
        &self.model
    }

    pub fn model_cert(&self) -> Option<&ThresholdCert> {
        self.model_cert.as_ref()
    }

    /// All horizon rounds finalized.
    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn ledger(&self) -> &InclusionLedger {
        &self.ledger
    }

    /// Overwrites the inclusion counts (state-injection tests).
    pub fn ledger_mut(&mut self) -> &mut InclusionLedger {
        &mut self.ledger
    }

    pub fn take_events(&mut self) -> Vec<AggEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn start(&mut self) -> Vec<Outbound> {
        if self.ctx.params.horizon == 0 {
            self.done = true;
        } else {
            self.start_round(0);
        }
        self.flush()
    }

    pub fn on_message(&mut self, from: NodeId, msg: Message) -> Vec<Outbound> {
        match (from, msg) {
            (NodeId::Client(c), Message::Update(m)) => self.on_update(c, *m),
            (NodeId::Client(c), Message::Ping(m)) => self.on_ping(c, m),
            (NodeId::Aggregator(a), Message::Unification(m)) => self.on_unification(a, m),
            (NodeId::Aggregator(a), Message::SumShares(m)) => self.on_sum_shares(a, *m),
            (NodeId::Aggregator(a), Message::IntraReply(m)) => self.on_intra_reply(a, *m),
            (NodeId::Aggregator(a), Message::InterSum(m)) => self.on_inter_sum(a, *m),
            (NodeId::Aggregator(a), Message::Certify(m)) => self.on_certify(a, *m),
            (NodeId::Aggregator(a), Message::CertifyAck(m)) => self.on_certify_ack(a, m),
            (NodeId::Aggregator(a), Message::Wasted(m)) => self.on_wasted(a, m),
            _ => {}
        }
        self.flush()
    }

    // ---- plumbing -------------------------------------------------------

    fn rs(&mut self, round: u64) -> &mut RoundState {
        self.rounds.entry(round).or_insert_with(|| RoundState::new(round))
    }

    fn assignment(&mut self, round: u64) -> Arc<RoundAssignment> {
        let p = &self.ctx.params;
        self.assignments
            .entry(round)
            .or_insert_with(|| Arc::new(assign(round, p.n_c, p.n_a, &p.assign_seed).expect("validated")))
            .clone()
    }

    fn send(&mut self, to: impl Into<NodeId>, msg: Message) {
        self.out.push(Outbound { to: to.into(), msg });
    }

    fn broadcast(&mut self, msg: Message) {
        for a in aggregators(self.ctx.params.n_a) {
            self.send(a, msg.clone());
        }
    }

    fn flush(&mut self) -> Vec<Outbound> {
        let out = std::mem::take(&mut self.out);
        match &self.behavior {
            Behavior::Honest => out,
            Behavior::Halt { from_round } => out.into_iter().filter(|o| o.msg.round() < *from_round).collect(),
            Behavior::Omit { allowed } => out
                .into_iter()
                .filter(|o| match o.to {
                    NodeId::Aggregator(a) => a == self.id || allowed.contains(&a),
                    NodeId::Client(_) => true,
                })
                .collect(),
            Behavior::FabricateModel => out.into_iter().map(|o| self.fabricate(o)).collect(),
            Behavior::TamperShares => out
                .into_iter()
                .map(|mut o| {
                    if let Message::IntraReply(r) = &mut o.msg {
                        if r.coordinator != self.id {
                            r.share.values[0] += Scalar::ONE;
                        }
                    }
                    o
                })
                .collect(),
            Behavior::EquivocateInclusion | Behavior::BiasInclusion { .. } => out,
        }
    }

    fn fabricate(&self, mut o: Outbound) -> Outbound {
        let p = &self.ctx.params;
        match &mut o.msg {
            Message::Train(t) => {
                let forged = p.codec.encode(&vec![p.codec.max_magnitude() / 4.0; p.dim]).expect("in range");
                t.model = forged;
            }
            Message::Wasted(w) if w.from == self.id => {
                let round = w.round;
                let g_hat = p.codec.encode(&vec![1.0; p.dim]).expect("in range");
                let c_sum = self.ctx.grad_bases.commit(p.codec.field(), &g_hat, None);
                let included: Vec<ClientId> = self.assignments.get(&round).map_or(Vec::new(), |a| {
                    a.cluster(self.id).iter().take(p.rho).copied().collect()
                });
                let digest = cluster_digest(round, self.id, &included, &g_hat, &c_sum);
                let cert = ThresholdCert {
                    digest,
                    signatures: vec![(self.id.0, self.keys.sign.sign(&digest))],
                    threshold: p.quorum(),
                };
                o.msg = Message::InterSum(Box::new(InterSum {
                    round,
                    coordinator: self.id,
                    included,
                    h_hat: g_hat.clone(),
                    g_hat,
                    c_sum,
                    cert,
                }));
            }
            _ => {}
        }
        o
    }

    // ---- own cluster ----------------------------------------------------

    fn start_round(&mut self, round: u64) {
        self.round = round;
        let cluster = self.assignment(round).cluster(self.id).to_vec();
        let train = Train { round, model: self.model.clone(), cert: self.model_cert.clone() };
        for &c in &cluster {
            self.send(c, Message::Train(train.clone()));
        }
        self.events.push(AggEvent::TrainSent { round, clients: cluster.len() });
        let rs = self.rs(round);
        rs.train_sent = true;
        rs.cluster = cluster;
        self.try_prepare(round);
        self.try_certify(round);
    }

    fn on_update(&mut self, c: ClientId, m: Update) {
        let round = m.round;
        if m.client != c {
            return;
        }
        let p = &self.ctx.params;
        let ok_shape = m.h.len() == p.dim
            && m.envelopes.len() == p.n_a as usize
            && m.partial.0.len() == p.quorum()
            && p.codec.field().check(&m.h).is_ok();
        let Some(pk) = self.ctx.client_key(c).copied() else { return };
        if !ok_shape || !pk.verify(&update_digest(round, c, &m.h, &m.proof, &m.partial), &m.sigma_h) {
            return;
        }
        let keys = self.ctx.registry.clients.clone();
        let rs = self.rs(round);
        if !rs.train_sent || !rs.cluster.contains(&c) || rs.updates.contains_key(&c) {
            return;
        }
        // an UPDATE doubles as the client's PING
        if rs.pings.record(c, m.ping_sig, &keys).is_err() {
            return;
        }
        rs.arrivals.push(c);
        if let Some(bb) = &self.blackboard {
            bb.lock().unwrap().updates.push(m.clone());
        }
        self.rs(round).updates.insert(c, m);
        self.check_unification(round);
        self.try_prepare(round);
    }

    fn on_ping(&mut self, c: ClientId, m: Ping) {
        if m.client != c {
            return;
        }
        let keys = &self.ctx.registry.clients;
        let round = m.round;
        let fresh = {
            let rs = self.rounds.entry(round).or_insert_with(|| RoundState::new(round));
            matches!(rs.pings.record(c, m.sig, keys), Ok(true))
        };
        if fresh {
            self.check_unification(round);
            self.try_prepare(round);
        }
    }

    fn check_unification(&mut self, round: u64) {
        let threshold = self.ctx.params.unification_threshold();
        let from = self.id;
        let rs = self.rs(round);
        if rs.unification_sent || rs.sum_shares_sent || rs.pings.len() < threshold {
            return;
        }
        rs.unification_sent = true;
        let list = rs.pings.clone();
        self.broadcast(Message::Unification(Unification { round, from, list }));
    }

    fn on_unification(&mut self, a: AggregatorId, m: Unification) {
        if m.from != a {
            return;
        }
        let threshold = self.ctx.params.unification_threshold();
        let keys = &self.ctx.registry.clients;
        let round = m.round;
        let merged = {
            let rs = self.rounds.entry(round).or_insert_with(|| RoundState::new(round));
            if rs.unifications.contains(&a) {
                return;
            }
            let ok = rs.pings.merge(&m.list, threshold, keys);
            if ok {
                rs.unifications.insert(a);
            }
            ok
        };
        if merged {
            self.check_unification(round);
            self.try_prepare(round);
        }
    }

    fn declare_wasted(&mut self, round: u64, reason: WasteReason) {
        self.rs(round).phase = Phase::Wasted;
        self.events.push(AggEvent::WastedDeclared { round, reason });
        let from = self.id;
        self.broadcast(Message::Wasted(Wasted { round, from }));
    }

    fn try_prepare(&mut self, round: u64) {
        let p = self.ctx.params.clone();
        let id = self.id;
        let equivocating = self.behavior == Behavior::EquivocateInclusion;
        let rs = self.rs(round);
        if !rs.train_sent {
            return;
        }
        match &rs.phase {
            Phase::Idle => {
                if rs.unifications.len() < p.quorum() {
                    return;
                }
                let part: Vec<ClientId> = rs.cluster.iter().copied().filter(|c| rs.pings.contains(*c)).collect();
                if part.len() < p.rho {
                    self.declare_wasted(round, WasteReason::TooFewParticipants);
                    return;
                }
                if p.inclusion == InclusionMode::FirstArrival {
                    rs.phase = Phase::WaitingArrivals;
                    self.try_prepare(round);
                    return;
                }
                let mut chosen = Vec::new();
                if let Behavior::BiasInclusion { favourites } = &self.behavior {
                    chosen.extend(favourites.iter().copied().filter(|c| part.contains(c)).take(p.rho));
                }
                let rest: Vec<ClientId> = part.iter().copied().filter(|c| !chosen.contains(c)).collect();
                let need = p.rho - chosen.len();
                let ledger = &self.ledger;
                let more = include(&|c| ledger.count(id, c), &rest, need, &p.assign_seed, round)
                    .expect("enough participants");
                chosen.extend(more);
                chosen.sort_unstable();
                let biased = matches!(self.behavior, Behavior::BiasInclusion { .. });
                if !biased && blaming(&self.ledger.tentative(id, &chosen), p.blame_keep(), &p.blame) {
                    self.declare_wasted(round, WasteReason::SelfBlame);
                    return;
                }
                self.rs(round).phase = Phase::WaitingUpdates(chosen);
                self.try_prepare(round);
            }
            Phase::WaitingArrivals => {
                if rs.arrivals.len() >= p.rho {
                    let mut chosen = rs.arrivals[..p.rho].to_vec();
                    chosen.sort_unstable();
                    rs.phase = Phase::WaitingUpdates(chosen);
                    self.try_prepare(round);
                }
            }
            Phase::WaitingUpdates(chosen) => {
                // an equivocator also needs one update outside the set to swap in
                let spare = !equivocating || rs.updates.len() > chosen.len();
                if spare && chosen.iter().all(|c| rs.updates.contains_key(c)) {
                    let chosen = chosen.clone();
                    self.emit_sum_shares(round, chosen);
                }
            }
            _ => {}
        }
    }

    fn bundle_for(&self, round: u64, included: &[ClientId], to: AggregatorId) -> SumShares {
        let rs = &self.rounds[&round];
        let items = included
            .iter()
            .map(|c| {
                let u = &rs.updates[c];
                SumItem {
                    client: *c,
                    h: u.h.clone(),
                    proof: u.proof,
                    partial: u.partial.clone(),
                    sigma_h: u.sigma_h,
                    envelope: u.envelopes[to.index()].clone(),
                }
            })
            .collect();
        SumShares { round, coordinator: self.id, included: included.to_vec(), items }
    }

    fn emit_sum_shares(&mut self, round: u64, included: Vec<ClientId>) {
        let field = self.ctx.params.codec.field();
        let (h_hat, c_sum, partial) = {
            let rs = &self.rounds[&round];
            let mut h_hat = FieldVec::zeros(self.ctx.params.dim);
            let mut c_sum: Option<Commitment> = None;
            let mut partial = PartialProof::zero(self.ctx.params.quorum());
            for c in &included {
                let u = &rs.updates[c];
                field.vec_add_assign(&mut h_hat, &u.h).expect("checked length");
                c_sum = Some(match c_sum {
                    None => u.proof,
                    Some(acc) => commit_add(&acc, &u.proof).expect("deterministic commitments"),
                });
                partial = partial.add(&u.partial).expect("checked length");
            }
            (h_hat, c_sum.expect("rho > 0"), partial)
        };
        let digest = cluster_digest(round, self.id, &included, &h_hat, &c_sum);
        self.ledger.record(self.id, &included);
        self.events.push(AggEvent::Included { round, clients: included.clone() });
        let rs = self.rs(round);
        rs.sum_shares_sent = true;
        rs.phase = Phase::Collecting(Box::new(Pending {
            included: included.clone(),
            h_hat,
            c_sum,
            partial,
            digest,
            valid: BTreeMap::new(),
            rejected: BTreeSet::new(),
        }));

        if self.behavior == Behavior::EquivocateInclusion {
            self.equivocate(round, included);
            return;
        }
        for a in aggregators(self.ctx.params.n_a) {
            let b = self.bundle_for(round, &included, a);
            self.send(a, Message::SumShares(Box::new(b)));
        }
    }

    /// The differencing attack: one set to half the peers, a set with one
    /// client swapped to the rest, a set one client short to everyone,
    /// and every variant twice.
    fn equivocate(&mut self, round: u64, included: Vec<ClientId>) {
        let rs = &self.rounds[&round];
        let spare = rs.arrivals.iter().copied().find(|c| !included.contains(c));
        let mut swapped = included.clone();
        if let Some(s) = spare {
            swapped[0] = s;
            swapped.sort_unstable();
        }
        let short = included[1..].to_vec();
        let n_a = self.ctx.params.n_a;
        let mut plan: Vec<(AggregatorId, Vec<ClientId>)> = Vec::new();
        for a in aggregators(n_a) {
            let first = if a.0 <= n_a.div_ceil(2) { &included } else { &swapped };
            let second = if a.0 <= n_a.div_ceil(2) { &swapped } else { &included };
            plan.push((a, short.clone()));
            plan.push((a, first.clone()));
            plan.push((a, second.clone()));
        }
        for (a, set) in plan {
            let b = self.bundle_for(round, &set, a);
            if let Some(bb) = &self.blackboard {
                bb.lock().unwrap().bundles.push((a, b.clone()));
            }
            self.send(a, Message::SumShares(Box::new(b)));
        }
    }

    fn on_intra_reply(&mut self, a: AggregatorId, m: IntraReply) {
        if m.from != a || m.coordinator != self.id {
            return;
        }
        if let Some(bb) = &self.blackboard {
            bb.lock().unwrap().replies.push(m.clone());
        }
        let round = m.round;
        let quorum = self.ctx.params.quorum();
        let n_a = self.ctx.params.n_a as usize;
        let Some(pk) = self.ctx.aggregator_key(a).copied() else { return };
        let mask_len = self.ctx.params.mask_len;
        let Some(rs) = self.rounds.get_mut(&round) else { return };
        let Phase::Collecting(p) = &mut rs.phase else { return };
        if p.valid.contains_key(&a) || p.rejected.contains(&a) {
            return;
        }
        let ok = pk.verify(&p.digest, &m.sig)
            && m.c_sum == p.c_sum
            && m.share.owner == a.0
            && m.share.round == round
            && m.share.values.len() == mask_len
            && p.partial.verify_share(&m.share, &self.ctx.mask_bases);
        if !ok {
            p.rejected.insert(a);
            let hopeless = n_a - p.rejected.len() < quorum;
            self.events.push(AggEvent::DetectedTamper { round, suspect: a });
            if hopeless {
                self.declare_wasted(round, WasteReason::ReconstructionFailed);
            }
            return;
        }
        p.valid.insert(a, (m.share, m.sig));
        if p.valid.len() < quorum {
            return;
        }
        let p = p.clone();
        self.finish_cluster(round, &p);
    }

    fn finish_cluster(&mut self, round: u64, p: &Pending) {
        let params = &self.ctx.params;
        let field = params.codec.field();
        let shares: Vec<Share> = p.valid.values().map(|(s, _)| s.clone()).collect();
        let sigs: Vec<(u32, crate::crypto::Signature)> = p.valid.iter().map(|(a, (_, s))| (a.0, *s)).collect();
        let recovered = ss_recover(field, &shares, params.quorum())
            .ok()
            .and_then(|s_hat| unmask_encoded(&p.h_hat, &s_hat, &self.ctx.matrix, &params.codec).ok())
            .filter(|g_hat| self.ctx.grad_bases.open(field, &p.c_sum, g_hat, None));
        let cert = threshold_combine(p.digest, &sigs, &self.ctx.registry.aggregators, params.quorum());
        match (recovered, cert) {
            (Some(g_hat), Ok(cert)) => {
                let inter = InterSum {
                    round,
                    coordinator: self.id,
                    included: p.included.clone(),
                    h_hat: p.h_hat.clone(),
                    g_hat,
                    c_sum: p.c_sum,
                    cert,
                };
                self.rs(round).phase = Phase::Done;
                self.events.push(AggEvent::InterSent { round });
                self.broadcast(Message::InterSum(Box::new(inter)));
            }
            _ => self.declare_wasted(round, WasteReason::ReconstructionFailed),
        }
    }

    // ---- serving other coordinators --------------------------------------

    fn check_bundle(&mut self, j: AggregatorId, m: &SumShares) -> Result<Vec<Share>, RejectReason> {
        let ctx = self.ctx.clone();
        let p = &ctx.params;
        let round = m.round;
        if self.defenses.exact_rho && m.included.len() != p.rho {
            return Err(RejectReason::WrongSize);
        }
        if m.included.is_empty()
            || m.items.len() != m.included.len()
            || !m.included.windows(2).all(|w| w[0] < w[1])
        {
            return Err(RejectReason::BadItem);
        }
        let assignment = self.assignment(round);
        if !m.included.iter().all(|c| assignment.cluster(j).contains(c)) {
            return Err(RejectReason::NotInCluster);
        }
        let mut shares = Vec::with_capacity(m.items.len());
        for (item, c) in m.items.iter().zip(&m.included) {
            let pk = ctx.client_key(*c).ok_or(RejectReason::BadItem)?;
            let good = item.client == *c
                && item.h.len() == p.dim
                && item.partial.0.len() == p.quorum()
                && pk.verify(&update_digest(round, *c, &item.h, &item.proof, &item.partial), &item.sigma_h);
            if !good {
                return Err(RejectReason::BadItem);
            }
            let payload = unseal(&item.envelope, self.id.0, &self.keys.decrypt).map_err(|_| RejectReason::BadItem)?;
            let (share, sig) = decode_share_payload(&payload).map_err(|_| RejectReason::BadItem)?;
            let good = share.owner == self.id.0
                && share.round == round
                && share.dealer == Some(c.0)
                && share.values.len() == p.mask_len
                && pk.verify(&share_message(round, *c, &share), &sig);
            if !good {
                return Err(RejectReason::BadItem);
            }
            shares.push(share);
        }
        Ok(shares)
    }

    fn on_sum_shares(&mut self, a: AggregatorId, m: SumShares) {
        if m.coordinator != a {
            return;
        }
        let round = m.round;
        let shares = match self.check_bundle(a, &m) {
            Ok(s) => s,
            Err(reason) => {
                self.events.push(AggEvent::Rejected { round, coordinator: a, reason });
                return;
            }
        };
        let single_serve = self.defenses.single_serve;
        let rs = self.rs(round);
        if rs.wasted_from.contains(&a) {
            self.events.push(AggEvent::Rejected { round, coordinator: a, reason: RejectReason::SenderWasted });
            return;
        }
        if single_serve && !rs.bundles_from.insert(a) {
            self.events.push(AggEvent::Rejected { round, coordinator: a, reason: RejectReason::AlreadyServed });
            return;
        }
        rs.bundles_from.insert(a);
        let p = self.ctx.params.clone();
        let blamed = p.inclusion == InclusionMode::Debiased
            && a != self.id
            && blaming(&self.ledger.tentative(a, &m.included), p.blame_keep(), &p.blame);
        if a != self.id {
            self.ledger.record(a, &m.included);
        }
        if blamed {
            self.events.push(AggEvent::Blamed { round, coordinator: a });
            return;
        }
        let field = p.codec.field();
        let mut summed = shares[0].clone();
        for s in &shares[1..] {
            summed = ss_add(&summed, s).expect("same owner and round");
        }
        let mut h_hat = FieldVec::zeros(p.dim);
        let mut c_sum = m.items[0].proof;
        for (i, item) in m.items.iter().enumerate() {
            field.vec_add_assign(&mut h_hat, &item.h).expect("checked length");
            if i > 0 {
                match commit_add(&c_sum, &item.proof) {
                    Ok(c) => c_sum = c,
                    Err(_) => return,
                }
            }
        }
        let digest = cluster_digest(round, a, &m.included, &h_hat, &c_sum);
        let sig = self.keys.sign.sign(&digest);
        self.rs(round).served.insert(a);
        self.events.push(AggEvent::Served { round, coordinator: a });
        let reply = IntraReply { round, from: self.id, coordinator: a, share: summed, c_sum, sig };
        self.send(a, Message::IntraReply(Box::new(reply)));
    }

    // ---- inter-cluster and certification ---------------------------------

    fn verify_inter(&mut self, m: &InterSum) -> bool {
        let key: [u8; 32] = Sha256::digest(encode(&Message::InterSum(Box::new(m.clone())))).into();
        if self.verified_inters.contains(&key) {
            return true;
        }
        let ctx = self.ctx.clone();
        let p = &ctx.params;
        let field = p.codec.field();
        let assignment = self.assignment(m.round);
        let ok = m.coordinator.0 >= 1
            && m.coordinator.0 <= p.n_a
            && m.included.len() == p.rho
            && m.included.windows(2).all(|w| w[0] < w[1])
            && m.included.iter().all(|c| assignment.cluster(m.coordinator).contains(c))
            && m.g_hat.len() == p.dim
            && m.h_hat.len() == p.dim
            && field.check(&m.g_hat).is_ok()
            && m.cert.digest == cluster_digest(m.round, m.coordinator, &m.included, &m.h_hat, &m.c_sum)
            && verify_combined(&m.cert, &ctx.registry.aggregators, p.quorum())
            && ctx.grad_bases.open(field, &m.c_sum, &m.g_hat, None);
        if ok {
            self.verified_inters.insert(key);
        }
        ok
    }

    fn on_inter_sum(&mut self, a: AggregatorId, m: InterSum) {
        if m.coordinator != a || !self.verify_inter(&m) {
            return;
        }
        let round = m.round;
        let rs = self.rs(round);
        let inconsistent = rs.wasted_from.contains(&a);
        rs.inters.entry(a).or_insert(m);
        if inconsistent {
            self.events.push(AggEvent::Inconsistent { round, suspect: a });
        }
        self.try_certify(round);
    }

    fn on_wasted(&mut self, a: AggregatorId, m: Wasted) {
        if m.from != a {
            return;
        }
        let round = m.round;
        let rs = self.rs(round);
        if !rs.wasted_from.insert(a) {
            return;
        }
        if rs.served.contains(&a) || rs.inters.contains_key(&a) {
            self.events.push(AggEvent::Inconsistent { round, suspect: a });
        }
        self.try_certify(round);
    }

    /// `quantize(w - gamma * (1 / (rho |entries|)) sum decode(g_hat))`.
    fn candidate_model(&self, round: u64, prev: &FieldVec, entries: &[InterSum]) -> Option<FieldVec> {
        let p = &self.ctx.params;
        let mut w = p.codec.decode(prev);
        let scale = p.step.gamma(round) / (p.rho as f64 * entries.len() as f64);
        let mut g = vec![0.0; p.dim];
        for e in entries {
            let dec = p.codec.decode_sum(&e.g_hat, p.rho as u64).ok()?;
            for (acc, v) in g.iter_mut().zip(dec) {
                *acc += v;
            }
        }
        for (wi, gi) in w.iter_mut().zip(g) {
            *wi -= scale * gi;
        }
        p.codec.encode(&w).ok()
    }

    fn try_certify(&mut self, round: u64) {
        if self.done || round != self.round {
            return;
        }
        let quorum = self.ctx.params.quorum();
        let rs = self.rs(round);
        if rs.certify.is_some() {
            return;
        }
        let target = quorum.saturating_sub(rs.wasted_from.len()).max(1);
        if rs.inters.len() < target {
            return;
        }
        let entries: Vec<InterSum> = rs.inters.values().cloned().collect();
        let Some(candidate) = self.candidate_model(round, &self.model.clone(), &entries) else { return };
        let digest = model_digest(round + 1, &candidate);
        let final_selec = entries.iter().map(|e| e.coordinator).collect();
        self.rs(round).certify = Some(CertifyState { candidate: candidate.clone(), digest, final_selec, acks: BTreeMap::new() });
        let msg = Certify {
            round,
            from: self.id,
            prev_model: self.model.clone(),
            prev_cert: self.model_cert.clone(),
            entries,
            candidate,
        };
        self.broadcast(Message::Certify(Box::new(msg)));
    }

    fn on_certify(&mut self, a: AggregatorId, m: Certify) {
        if m.from != a || m.entries.is_empty() {
            return;
        }
        let p = &self.ctx.params;
        if m.prev_model.len() != p.dim || !verify_certificate(&self.ctx, m.round, &m.prev_model, m.prev_cert.as_ref()) {
            return;
        }
        if !m.entries.windows(2).all(|w| w[0].coordinator < w[1].coordinator) {
            return;
        }
        for e in &m.entries {
            if e.round != m.round || !self.verify_inter(e) {
                return;
            }
        }
        match self.candidate_model(m.round, &m.prev_model, &m.entries) {
            Some(c) if c == m.candidate => {}
            _ => return,
        }
        let digest = model_digest(m.round + 1, &m.candidate);
        let ack = CertifyAck { round: m.round, from: self.id, digest, sig: self.keys.sign.sign(&digest) };
        self.send(a, Message::CertifyAck(ack));
    }

    fn on_certify_ack(&mut self, a: AggregatorId, m: CertifyAck) {
        if m.from != a || self.done || m.round != self.round {
            return;
        }
        let Some(pk) = self.ctx.aggregator_key(a).copied() else { return };
        let ctx = self.ctx.clone();
        let quorum = ctx.params.quorum();
        let round = m.round;
        let rs = self.rs(round);
        let Some(cs) = &mut rs.certify else { return };
        if cs.digest != m.digest || !pk.verify(&m.digest, &m.sig) {
            return;
        }
        cs.acks.insert(a.0, m.sig);
        if cs.acks.len() < quorum {
            return;
        }
        let sigs: Vec<_> = cs.acks.iter().map(|(s, sig)| (*s, *sig)).collect();
        let Ok(cert) = threshold_combine(cs.digest, &sigs, &ctx.registry.aggregators, quorum) else { return };
        let (candidate, final_selec) = (cs.candidate.clone(), cs.final_selec.clone());
        self.finalize(round, candidate, cert, final_selec);
    }

    fn finalize(&mut self, round: u64, model: FieldVec, cert: ThresholdCert, final_selec: Vec<AggregatorId>) {
        self.model = model.clone();
        self.model_cert = Some(cert.clone());
        self.events.push(AggEvent::Finalized { round, model, cert, final_selec });
        // keep only what later rounds might still need
        if let Some(rs) = self.rounds.get_mut(&round) {
            if matches!(rs.phase, Phase::Done | Phase::Wasted) {
                rs.updates.clear();
            }
        }
        if round + 1 >= self.ctx.params.horizon {
            self.round = round + 1;
            self.done = true;
        } else {
            self.start_round(round + 1);
        }
    }
}
