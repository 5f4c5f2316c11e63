//! Deterministic discrete-event network simulator.
//!
//! Every message gets an independent gamma-distributed delay drawn from a
//! per-edge stream, so a run is a pure function of the configuration and
//! the root seed. Delivery order is (time, send sequence).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::sync::{Arc, Mutex};

use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregator::{AggEvent, Aggregator, Behavior, Blackboard, Defenses, SharedBlackboard};
use crate::client::{verify_certificate, Client, Outbound};
use crate::crypto::ThresholdCert;
use crate::field::FieldVec;
use crate::ids::{aggregators, clients, AggregatorId, ClientId, NodeId};
use crate::inclusion::InclusionLedger;
use crate::messages::{Message, MsgKind};
use crate::params::{Context, Genesis, ProtocolParams};
use crate::rng::derive_rng;
use crate::task::LocalObjective;
use crate::wire::{decode, encode};

/// Mean one-way delays in milliseconds; all gamma with a common shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub shape: f64,
    pub aggregator_ms: f64,
    pub fast_ms: f64,
    pub slow_ms: f64,
    /// Clients with ids `>= slow_from` are slow.
    pub slow_from: u32,
}

impl DelayModel {
    /// The last `2 t_c + 1` clients are slow.
    pub fn for_params(p: &ProtocolParams) -> Self {
        let slow = (2 * p.t_c + 1).min(p.n_c);
        DelayModel { shape: 2.0, aggregator_ms: 5.0, fast_ms: 20.0, slow_ms: 200.0, slow_from: p.n_c - slow + 1 }
    }

    pub fn uniform(mean_ms: f64) -> Self {
        DelayModel { shape: 2.0, aggregator_ms: mean_ms, fast_ms: mean_ms, slow_ms: mean_ms, slow_from: u32::MAX }
    }

    fn mean(&self, from: NodeId, to: NodeId) -> f64 {
        let client = match (from, to) {
            (NodeId::Client(c), _) | (_, NodeId::Client(c)) => c,
            _ => return self.aggregator_ms,
        };
        if client.0 >= self.slow_from {
            self.slow_ms
        } else {
            self.fast_ms
        }
    }

    /// An upper estimate of one round's duration.
    pub fn round_budget_ms(&self) -> f64 {
        2.0 * self.slow_ms.max(self.fast_ms) + 8.0 * self.aggregator_ms
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultPlan {
    /// Client stops responding from the given round on.
    pub crashes: BTreeMap<ClientId, u64>,
    pub byzantine: BTreeMap<AggregatorId, Behavior>,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub params: ProtocolParams,
    pub root_seed: u64,
    pub delays: DelayModel,
    pub faults: FaultPlan,
    pub defenses: Defenses,
    /// Keep each client's plaintext noisy gradients.
    pub record_truth: bool,
    /// Simulated milliseconds before the run is declared stuck.
    pub watchdog_ms: Option<f64>,
    /// Deliver the decoded wire frame instead of the in-memory message.
    pub wire_roundtrip: bool,
}

impl SimConfig {
    pub fn new(params: ProtocolParams, root_seed: u64) -> Self {
        SimConfig {
            delays: DelayModel::for_params(&params),
            params,
            root_seed,
            faults: FaultPlan::default(),
            defenses: Defenses::default(),
            record_truth: false,
            watchdog_ms: None,
            wire_roundtrip: false,
        }
    }

    pub fn watchdog(&self) -> f64 {
        self.watchdog_ms
            .unwrap_or(self.params.horizon.max(1) as f64 * 100.0 * self.delays.round_budget_ms())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Client,
    Aggregator,
}

impl Role {
    pub fn of(n: NodeId) -> Role {
        match n {
            NodeId::Client(_) => Role::Client,
            NodeId::Aggregator(_) => Role::Aggregator,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Client => "client",
            Role::Aggregator => "aggregator",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub count: u64,
    pub bytes: u64,
}

/// Sent-message accounting.
#[derive(Debug, Clone, Default)]
pub struct MessageStats {
    pub by_kind: BTreeMap<(Role, MsgKind), Tally>,
    /// Messages sent by each node, tagged with the round they belong to.
    pub by_node_round: BTreeMap<(NodeId, u64), u64>,
}

impl MessageStats {
    fn record(&mut self, from: NodeId, msg: &Message, bytes: usize) {
        let t = self.by_kind.entry((Role::of(from), msg.kind())).or_default();
        t.count += 1;
        t.bytes += bytes as u64;
        *self.by_node_round.entry((from, msg.round())).or_default() += 1;
    }

    pub fn total(&self) -> u64 {
        self.by_kind.values().map(|t| t.count).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainStats {
    /// TRAINs from honest aggregators whose certificate verified.
    pub honest_valid: u64,
    pub honest_invalid: u64,
    /// TRAINs from Byzantine aggregators that clients refused.
    pub byzantine_rejected: u64,
    pub byzantine_accepted: u64,
}

#[derive(Debug, Clone)]
pub struct FinalizedRecord {
    pub aggregator: AggregatorId,
    pub round: u64,
    pub time_ms: f64,
    pub model: Vec<f64>,
    pub encoded: FieldVec,
    pub cert: ThresholdCert,
    pub final_selec: Vec<AggregatorId>,
}

#[derive(Debug)]
pub struct SimReport {
    pub finalized: Vec<FinalizedRecord>,
    pub events: Vec<(f64, AggregatorId, AggEvent)>,
    pub messages: MessageStats,
    pub trains: TrainStats,
    pub ledgers: BTreeMap<AggregatorId, InclusionLedger>,
    pub honest: Vec<AggregatorId>,
    pub trace_hash: [u8; 32],
    pub watchdog_tripped: bool,
    /// The stop rule ended the run before the horizon.
    pub stopped_early: bool,
    pub end_time_ms: f64,
    pub delivered: u64,
    /// Frames that failed to decode to the message that was sent.
    pub wire_mismatches: u64,
    /// `(client, round, clip(g) + e)` when truth recording was on.
    pub truth: Vec<(ClientId, u64, Vec<f64>)>,
    pub blackboard: Option<SharedBlackboard>,
}

impl SimReport {
    /// Rounds finalized by `a`, in order.
    pub fn finalized_by(&self, a: AggregatorId) -> impl Iterator<Item = &FinalizedRecord> {
        self.finalized.iter().filter(move |r| r.aggregator == a)
    }

    pub fn final_model(&self, a: AggregatorId) -> Option<&[f64]> {
        self.finalized_by(a).last().map(|r| r.model.as_slice())
    }
}

struct Event {
    time: f64,
    seq: u64,
    from: NodeId,
    to: NodeId,
    msg: Message,
    frame: Vec<u8>,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap pops the earliest first
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

fn node_code(n: NodeId) -> u64 {
    match n {
        NodeId::Client(c) => c.0 as u64,
        NodeId::Aggregator(a) => (1 << 32) | a.0 as u64,
    }
}

/// Called after each finalization; returning true ends the run.
pub type StopRule = Box<dyn FnMut(&[FinalizedRecord]) -> bool>;

pub struct Simulation {
    cfg: SimConfig,
    stop: Option<StopRule>,
    ctx: Arc<Context>,
    clients: Vec<Client>,
    aggregators: Vec<Aggregator>,
    queue: BinaryHeap<Event>,
    edges: HashMap<(u64, u64), ChaCha20Rng>,
    gammas: HashMap<u64, Gamma<f64>>,
    seq: u64,
    now: f64,
    hasher: Sha256,
    stats: MessageStats,
    trains: TrainStats,
    finalized: Vec<FinalizedRecord>,
    events: Vec<(f64, AggregatorId, AggEvent)>,
    blackboard: Option<SharedBlackboard>,
    delivered: u64,
    wire_mismatches: u64,
}

impl Simulation {
    /// `objectives[i]` is the local loss of client `i + 1`.
    pub fn new(cfg: SimConfig, objectives: Vec<Arc<dyn LocalObjective>>) -> Self {
        assert_eq!(objectives.len(), cfg.params.n_c as usize, "one objective per client");
        let genesis = Genesis::new(cfg.params.clone(), cfg.root_seed);
        let ctx = genesis.ctx;
        let clients = clients(cfg.params.n_c)
            .zip(genesis.client_keys)
            .zip(objectives)
            .map(|((id, key), obj)| {
                let mut c = Client::new(id, ctx.clone(), key, obj, cfg.root_seed);
                c.record_truth(cfg.record_truth);
                c
            })
            .collect();
        let blackboard =
            (!cfg.faults.byzantine.is_empty()).then(|| Arc::new(Mutex::new(Blackboard::default())));
        let aggregators = aggregators(cfg.params.n_a)
            .zip(genesis.aggregator_keys)
            .map(|(id, keys)| {
                let a = Aggregator::new(id, ctx.clone(), keys).with_defenses(cfg.defenses);
                match cfg.faults.byzantine.get(&id) {
                    Some(b) => a.with_behavior(b.clone(), blackboard.clone()),
                    None => a,
                }
            })
            .collect();
        Simulation {
            cfg,
            stop: None,
            ctx,
            clients,
            aggregators,
            queue: BinaryHeap::new(),
            edges: HashMap::new(),
            gammas: HashMap::new(),
            seq: 0,
            now: 0.0,
            hasher: Sha256::new(),
            stats: MessageStats::default(),
            trains: TrainStats::default(),
            finalized: Vec::new(),
            events: Vec::new(),
            blackboard,
            delivered: 0,
            wire_mismatches: 0,
        }
    }

    pub fn with_stop(mut self, stop: StopRule) -> Self {
        self.stop = Some(stop);
        self
    }

    pub fn aggregator_mut(&mut self, a: AggregatorId) -> &mut Aggregator {
        &mut self.aggregators[a.index()]
    }

    fn delay(&mut self, from: NodeId, to: NodeId) -> f64 {
        let mean = self.cfg.delays.mean(from, to);
        let shape = self.cfg.delays.shape;
        let gamma = *self
            .gammas
            .entry(mean.to_bits())
            .or_insert_with(|| Gamma::new(shape, mean / shape).expect("positive delay parameters"));
        let root = self.cfg.root_seed;
        let rng = self
            .edges
            .entry((node_code(from), node_code(to)))
            .or_insert_with(|| derive_rng(root, "net/edge", &[node_code(from), node_code(to)]));
        gamma.sample(rng)
    }

    fn dispatch(&mut self, from: NodeId, out: Vec<Outbound>) {
        for o in out {
            let bytes = encode(&o.msg);
            self.stats.record(from, &o.msg, bytes.len());
            let time = self.now + self.delay(from, o.to);
            self.seq += 1;
            self.queue.push(Event { time, seq: self.seq, from, to: o.to, msg: o.msg, frame: bytes });
        }
    }

    fn collect_events(&mut self, a: AggregatorId) {
        for e in self.aggregators[a.index()].take_events() {
            if let AggEvent::Finalized { round, model, cert, final_selec } = &e {
                self.finalized.push(FinalizedRecord {
                    aggregator: a,
                    round: *round,
                    time_ms: self.now,
                    model: self.cfg.params.codec.decode(model),
                    encoded: model.clone(),
                    cert: cert.clone(),
                    final_selec: final_selec.clone(),
                });
            }
            self.events.push((self.now, a, e));
        }
    }

    fn honest_done(&self) -> bool {
        self.aggregators.iter().filter(|a| a.is_honest()).all(|a| a.is_done())
    }

    fn deliver(&mut self, mut ev: Event) {
        self.delivered += 1;
        if self.cfg.wire_roundtrip {
            match decode(&ev.frame) {
                Ok(m) if m == ev.msg => ev.msg = m,
                _ => self.wire_mismatches += 1,
            }
        }
        self.hasher.update(ev.time.to_bits().to_le_bytes());
        self.hasher.update(node_code(ev.from).to_le_bytes());
        self.hasher.update(node_code(ev.to).to_le_bytes());
        self.hasher.update(&ev.frame);
        match ev.to {
            NodeId::Client(c) => {
                let Message::Train(train) = &ev.msg else { return };
                if let Some(&r) = self.cfg.faults.crashes.get(&c) {
                    if train.round >= r {
                        self.clients[c.index()].crash();
                    }
                }
                if let NodeId::Aggregator(a) = ev.from {
                    let valid = verify_certificate(&self.ctx, train.round, &train.model, train.cert.as_ref());
                    match (self.aggregators[a.index()].is_honest(), valid) {
                        (true, true) => self.trains.honest_valid += 1,
                        (true, false) => self.trains.honest_invalid += 1,
                        (false, true) => self.trains.byzantine_accepted += 1,
                        (false, false) => self.trains.byzantine_rejected += 1,
                    }
                }
                let out = self.clients[c.index()].on_message(ev.from, &ev.msg);
                self.dispatch(ev.to, out);
            }
            NodeId::Aggregator(a) => {
                let out = self.aggregators[a.index()].on_message(ev.from, ev.msg);
                self.dispatch(ev.to, out);
                self.collect_events(a);
            }
        }
    }

    pub fn run(mut self) -> SimReport {
        for a in aggregators(self.cfg.params.n_a) {
            let out = self.aggregators[a.index()].start();
            self.dispatch(a.into(), out);
            self.collect_events(a);
        }
        let watchdog = self.cfg.watchdog();
        let mut tripped = false;
        let mut stopped = false;
        while !self.honest_done() {
            let Some(ev) = self.queue.pop() else {
                tripped = true;
                break;
            };
            if ev.time > watchdog {
                tripped = true;
                break;
            }
            self.now = ev.time;
            let before = self.finalized.len();
            self.deliver(ev);
            if self.finalized.len() > before {
                if let Some(stop) = self.stop.as_mut() {
                    if stop(&self.finalized) {
                        stopped = true;
                        break;
                    }
                }
            }
        }
        let truth = self
            .clients
            .iter()
            .flat_map(|c| c.truth().iter().map(move |(r, v)| (c.id(), *r, v.clone())))
            .collect();
        SimReport {
            finalized: self.finalized,
            events: self.events,
            messages: self.stats,
            trains: self.trains,
            ledgers: self.aggregators.iter().map(|a| (a.id(), a.ledger().clone())).collect(),
            honest: self.aggregators.iter().filter(|a| a.is_honest()).map(|a| a.id()).collect(),
            trace_hash: self.hasher.finalize().into(),
            watchdog_tripped: tripped,
            stopped_early: stopped,
            end_time_ms: self.now,
            delivered: self.delivered,
            wire_mismatches: self.wire_mismatches,
            truth,
            blackboard: self.blackboard,
        }
    }
}
