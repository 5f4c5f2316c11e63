//! Client state machine: verify the certified model, take one local
//! gradient step, mask it, share the mask and report participation.

use std::sync::Arc;

use rand::{CryptoRng, RngCore};

use crate::assignment::assigned;
use crate::crypto::{ss_share, Sealer, verify_combined, SigningKey, ThresholdCert, TupleWriter};
use crate::dp::{mask_update, noisy_clipped, DpError};
use crate::field::FieldVec;
use crate::ids::{aggregators, AggregatorId, ClientId, NodeId};
use crate::inclusion::ping_message;
use crate::messages::{model_digest, share_message, update_digest, Message, Ping, Train, Update};
use crate::params::Context;
use crate::rng::derive_rng;
use crate::task::LocalObjective;
use crate::wire::encode_share_payload;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub to: NodeId,
    pub msg: Message,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Crypto(#[from] crate::crypto::CryptoError),
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
}

/// An update together with the plaintext it hides, for test oracles.
#[derive(Debug, Clone)]
pub struct BuiltUpdate {
    pub update: Update,
    /// `clip(g) + e` before encoding.
    pub noisy: Vec<f64>,
    pub mask: FieldVec,
}

/// True iff `cert` carries at least `n_a - t_a` aggregator signatures over
/// the round-`round` digest of `model`. The genesis model needs none.
pub fn verify_certificate(ctx: &Context, round: u64, model: &FieldVec, cert: Option<&ThresholdCert>) -> bool {
    match cert {
        None => round == 0 && *model == ctx.genesis_model(),
        Some(cert) => {
            if cert.digest != model_digest(round, model) {
                return false;
            }
            let fp = cert_fingerprint(cert);
            if ctx.verified_certs.lock().unwrap().contains(&fp) {
                return true;
            }
            let ok = verify_combined(cert, &ctx.registry.aggregators, ctx.params.quorum());
            if ok {
                ctx.verified_certs.lock().unwrap().insert(fp);
            }
            ok
        }
    }
}

fn cert_fingerprint(cert: &ThresholdCert) -> [u8; 32] {
    let mut w = TupleWriter::new("pvfed/cert-fingerprint/v1");
    w.bytes(&cert.digest).u64(cert.threshold as u64);
    for (signer, sig) in &cert.signatures {
        w.u32(*signer).bytes(&sig.to_bytes());
    }
    w.digest()
}

/// Builds the UPDATE for one round. Pure given the rng.
pub fn build_update<R: RngCore + CryptoRng>(
    ctx: &Context,
    key: &SigningKey,
    client: ClientId,
    round: u64,
    model: &[f64],
    objective: &dyn LocalObjective,
    rng: &mut R,
) -> Result<BuiltUpdate, ClientError> {
    let p = &ctx.params;
    let field = p.codec.field();
    let g = objective.gradient(model);
    let noisy = noisy_clipped(&g, &p.dp, &p.codec, rng);
    let mask = field.random_vec(p.mask_len, rng);
    let h = mask_update(&noisy, &mask, &ctx.matrix, &p.codec)?;
    let encoded = p.codec.encode(&noisy)?;
    let proof = ctx.grad_bases.commit(field, &encoded, None);

    let dealing = ss_share(field, &mask, client.0, round, p.n_a, p.quorum() as u32, rng)?;
    let partial = dealing.partial_proof(&ctx.mask_bases);
    let sealer = Sealer::new(rng);
    let envelopes = dealing
        .shares
        .iter()
        .map(|share| {
            let sig = key.sign(&share_message(round, client, share));
            let payload = encode_share_payload(share, &sig);
            sealer.seal(&payload, share.owner, &ctx.registry.aggregator_enc[share.owner as usize - 1])
        })
        .collect();
    let sigma_h = key.sign(&update_digest(round, client, &h, &proof, &partial));
    let ping_sig = key.sign(&ping_message(round, client));
    Ok(BuiltUpdate {
        update: Update { round, client, h, proof, partial, envelopes, sigma_h, ping_sig },
        noisy,
        mask,
    })
}

pub struct Client {
    id: ClientId,
    ctx: Arc<Context>,
    key: SigningKey,
    objective: Arc<dyn LocalObjective>,
    root_seed: u64,
    last_round: Option<u64>,
    crashed: bool,
    record_truth: bool,
    truth: Vec<(u64, Vec<f64>)>,
}

impl Client {
    pub fn new(id: ClientId, ctx: Arc<Context>, key: SigningKey, objective: Arc<dyn LocalObjective>, root_seed: u64) -> Self {
        Client { id, ctx, key, objective, root_seed, last_round: None, crashed: false, record_truth: false, truth: Vec::new() }
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn last_round(&self) -> Option<u64> {
        self.last_round
    }

    pub fn crash(&mut self) {
        self.crashed = true;
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed
    }

    /// Keep every round's `clip(g) + e` for later inspection.
    pub fn record_truth(&mut self, on: bool) {
        self.record_truth = on;
    }

    pub fn truth(&self) -> &[(u64, Vec<f64>)] {
        &self.truth
    }

    /// Checks whether a TRAIN is acceptable without consuming it.
    pub fn accepts(&self, from: NodeId, train: &Train) -> bool {
        let p = &self.ctx.params;
        let NodeId::Aggregator(a) = from else { return false };
        if self.crashed || self.last_round.is_some_and(|r| train.round <= r) {
            return false;
        }
        match assigned(train.round, self.id, p.n_c, p.n_a, &p.assign_seed) {
            Ok(coord) if coord == a => {}
            _ => return false,
        }
        train.model.len() == p.dim
            && p.codec.field().check(&train.model).is_ok()
            && verify_certificate(&self.ctx, train.round, &train.model, train.cert.as_ref())
    }

    /// Prepares the update for an accepted TRAIN; pure, so callers may run
    /// it ahead of time on another thread.
    pub fn prepare(&self, train: &Train) -> Result<BuiltUpdate, ClientError> {
        let model = self.ctx.params.codec.decode(&train.model);
        let mut rng = derive_rng(self.root_seed, "client/round", &[self.id.0 as u64, train.round]);
        build_update(&self.ctx, &self.key, self.id, train.round, &model, self.objective.as_ref(), &mut rng)
    }

    /// Emits the UPDATE to the coordinator, then a PING to every aggregator.
    pub fn respond(&mut self, coordinator: AggregatorId, built: BuiltUpdate) -> Vec<Outbound> {
        let round = built.update.round;
        self.last_round = Some(round);
        if self.record_truth {
            self.truth.push((round, built.noisy.clone()));
        }
        let ping = Ping { round, client: self.id, sig: built.update.ping_sig };
        let mut out = vec![Outbound { to: coordinator.into(), msg: Message::Update(Box::new(built.update)) }];
        out.extend(
            aggregators(self.ctx.params.n_a).map(|a| Outbound { to: a.into(), msg: Message::Ping(ping.clone()) }),
        );
        out
    }

    pub fn on_message(&mut self, from: NodeId, msg: &Message) -> Vec<Outbound> {
        let Message::Train(train) = msg else { return Vec::new() };
        if !self.accepts(from, train) {
            return Vec::new();
        }
        let NodeId::Aggregator(coordinator) = from else { unreachable!() };
        match self.prepare(train) {
            Ok(built) => self.respond(coordinator, built),
            // out-of-range model or gradient: stay silent this round
            Err(_) => Vec::new(),
        }
    }
}
