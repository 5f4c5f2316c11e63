//! Versioned binary encoding of protocol messages.
//!
//! A frame is `u32 LE body length`, then the body: a version byte, a kind
//! tag and the fields in declaration order. Integers are little-endian,
//! sequences carry a `u32` count, field vectors use their own
//! length-prefixed layout, curve points are 32-byte compressed Ristretto
//! encodings, scalars are 32-byte canonical encodings and signatures are 64
//! bytes.

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;

use crate::crypto::{Commitment, PartialProof, SealedEnvelope, Share, Signature, ThresholdCert};
use crate::field::FieldVec;
use crate::ids::{AggregatorId, ClientId};
use crate::inclusion::PingList;
use crate::messages::*;

pub const WIRE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("input ended early")]
    Truncated,
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("unknown message tag {0}")]
    Tag(u8),
    #[error("malformed {0}")]
    Malformed(&'static str),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn raw(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.raw(b);
    }
    fn fv(&mut self, v: &FieldVec) {
        v.write_to(&mut self.0);
    }
    fn sig(&mut self, s: &Signature) {
        self.raw(&s.to_bytes());
    }
    fn point(&mut self, p: &RistrettoPoint) {
        self.raw(p.compress().as_bytes());
    }
    fn scalar(&mut self, s: &Scalar) {
        self.raw(s.as_bytes());
    }
    fn commitment(&mut self, c: &Commitment) {
        self.raw(&c.to_bytes());
    }
    fn clients(&mut self, ids: &[ClientId]) {
        self.u32(ids.len() as u32);
        for c in ids {
            self.u32(c.0);
        }
    }
    fn partial(&mut self, p: &PartialProof) {
        self.u32(p.0.len() as u32);
        for pt in &p.0 {
            self.point(pt);
        }
    }
    fn envelope(&mut self, e: &SealedEnvelope) {
        self.u32(e.recipient);
        self.raw(&e.ephemeral);
        self.bytes(&e.ciphertext);
    }
    fn cert(&mut self, c: &ThresholdCert) {
        self.raw(&c.digest);
        self.u32(c.threshold as u32);
        self.u32(c.signatures.len() as u32);
        for (s, sig) in &c.signatures {
            self.u32(*s);
            self.sig(sig);
        }
    }
    fn opt_cert(&mut self, c: &Option<ThresholdCert>) {
        match c {
            None => self.u8(0),
            Some(c) => {
                self.u8(1);
                self.cert(c);
            }
        }
    }
    fn share(&mut self, s: &Share) {
        self.u32(s.owner);
        match s.dealer {
            None => self.u8(0),
            Some(d) => {
                self.u8(1);
                self.u32(d);
            }
        }
        self.u64(s.round);
        self.u32(s.values.len() as u32);
        for v in &s.values {
            self.scalar(v);
        }
        self.scalar(&s.blind);
    }
    fn inter(&mut self, m: &InterSum) {
        self.u64(m.round);
        self.u32(m.coordinator.0);
        self.clients(&m.included);
        self.fv(&m.h_hat);
        self.fv(&m.g_hat);
        self.commitment(&m.c_sum);
        self.cert(&m.cert);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(WireError::Truncated)?;
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn arr32(&mut self) -> Result<[u8; 32], WireError> {
        Ok(self.take(32)?.try_into().unwrap())
    }
    fn count(&mut self, min_item: usize) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        // refuse counts that cannot fit in the rest of the input
        if n.saturating_mul(min_item) > self.buf.len() - self.pos {
            return Err(WireError::Truncated);
        }
        Ok(n)
    }
    fn bytes(&mut self) -> Result<Vec<u8>, WireError> {
        let n = self.count(1)?;
        Ok(self.take(n)?.to_vec())
    }
    fn fv(&mut self) -> Result<FieldVec, WireError> {
        let (v, used) = FieldVec::read_from(&self.buf[self.pos..]).map_err(|_| WireError::Malformed("field vector"))?;
        self.pos += used;
        Ok(v)
    }
    fn sig(&mut self) -> Result<Signature, WireError> {
        Signature::from_bytes(self.take(64)?).map_err(|_| WireError::Malformed("signature"))
    }
    fn point(&mut self) -> Result<RistrettoPoint, WireError> {
        CompressedRistretto(self.arr32()?).decompress().ok_or(WireError::Malformed("point"))
    }
    fn scalar(&mut self) -> Result<Scalar, WireError> {
        Option::from(Scalar::from_canonical_bytes(self.arr32()?)).ok_or(WireError::Malformed("scalar"))
    }
    fn commitment(&mut self) -> Result<Commitment, WireError> {
        Commitment::from_bytes(self.take(33)?).map_err(|_| WireError::Malformed("commitment"))
    }
    fn clients(&mut self) -> Result<Vec<ClientId>, WireError> {
        let n = self.count(4)?;
        (0..n).map(|_| self.u32().map(ClientId)).collect()
    }
    fn partial(&mut self) -> Result<PartialProof, WireError> {
        let n = self.count(32)?;
        Ok(PartialProof((0..n).map(|_| self.point()).collect::<Result<_, _>>()?))
    }
    fn envelope(&mut self) -> Result<SealedEnvelope, WireError> {
        Ok(SealedEnvelope { recipient: self.u32()?, ephemeral: self.arr32()?, ciphertext: self.bytes()? })
    }
    fn cert(&mut self) -> Result<ThresholdCert, WireError> {
        let digest = self.arr32()?;
        let threshold = self.u32()? as usize;
        let n = self.count(68)?;
        let signatures = (0..n).map(|_| Ok((self.u32()?, self.sig()?))).collect::<Result<_, WireError>>()?;
        Ok(ThresholdCert { digest, signatures, threshold })
    }
    fn opt_cert(&mut self) -> Result<Option<ThresholdCert>, WireError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.cert()?)),
            _ => Err(WireError::Malformed("option")),
        }
    }
    fn share(&mut self) -> Result<Share, WireError> {
        let owner = self.u32()?;
        let dealer = match self.u8()? {
            0 => None,
            1 => Some(self.u32()?),
            _ => return Err(WireError::Malformed("option")),
        };
        let round = self.u64()?;
        let n = self.count(32)?;
        let values = (0..n).map(|_| self.scalar()).collect::<Result<_, _>>()?;
        Ok(Share { owner, dealer, round, values, blind: self.scalar()? })
    }
    fn inter(&mut self) -> Result<InterSum, WireError> {
        Ok(InterSum {
            round: self.u64()?,
            coordinator: AggregatorId(self.u32()?),
            included: self.clients()?,
            h_hat: self.fv()?,
            g_hat: self.fv()?,
            c_sum: self.commitment()?,
            cert: self.cert()?,
        })
    }
    fn finish(&self) -> Result<(), WireError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(WireError::Trailing(n)),
        }
    }
}

fn tag(kind: MsgKind) -> u8 {
    MsgKind::ALL.iter().position(|k| *k == kind).unwrap() as u8 + 1
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(0);
    w.u8(WIRE_VERSION);
    w.u8(tag(msg.kind()));
    match msg {
        Message::Train(m) => {
            w.u64(m.round);
            w.fv(&m.model);
            w.opt_cert(&m.cert);
        }
        Message::Update(m) => {
            w.u64(m.round);
            w.u32(m.client.0);
            w.fv(&m.h);
            w.commitment(&m.proof);
            w.partial(&m.partial);
            w.u32(m.envelopes.len() as u32);
            for e in &m.envelopes {
                w.envelope(e);
            }
            w.sig(&m.sigma_h);
            w.sig(&m.ping_sig);
        }
        Message::Ping(m) => {
            w.u64(m.round);
            w.u32(m.client.0);
            w.sig(&m.sig);
        }
        Message::Unification(m) => {
            w.u64(m.round);
            w.u32(m.from.0);
            w.u64(m.list.round);
            w.u32(m.list.entries.len() as u32);
            for (c, s) in &m.list.entries {
                w.u32(c.0);
                w.sig(s);
            }
        }
        Message::SumShares(m) => {
            w.u64(m.round);
            w.u32(m.coordinator.0);
            w.clients(&m.included);
            w.u32(m.items.len() as u32);
            for it in &m.items {
                w.u32(it.client.0);
                w.fv(&it.h);
                w.commitment(&it.proof);
                w.partial(&it.partial);
                w.sig(&it.sigma_h);
                w.envelope(&it.envelope);
            }
        }
        Message::IntraReply(m) => {
            w.u64(m.round);
            w.u32(m.from.0);
            w.u32(m.coordinator.0);
            w.share(&m.share);
            w.commitment(&m.c_sum);
            w.sig(&m.sig);
        }
        Message::InterSum(m) => w.inter(m),
        Message::Certify(m) => {
            w.u64(m.round);
            w.u32(m.from.0);
            w.fv(&m.prev_model);
            w.opt_cert(&m.prev_cert);
            w.u32(m.entries.len() as u32);
            for e in &m.entries {
                w.inter(e);
            }
            w.fv(&m.candidate);
        }
        Message::CertifyAck(m) => {
            w.u64(m.round);
            w.u32(m.from.0);
            w.raw(&m.digest);
            w.sig(&m.sig);
        }
        Message::Wasted(m) => {
            w.u64(m.round);
            w.u32(m.from.0);
        }
    }
    let body = (w.0.len() - 4) as u32;
    w.0[..4].copy_from_slice(&body.to_le_bytes());
    w.0
}

pub fn decode(frame: &[u8]) -> Result<Message, WireError> {
    let mut r = Reader { buf: frame, pos: 0 };
    let len = r.u32()? as usize;
    if frame.len() - 4 != len {
        return Err(if frame.len() - 4 < len { WireError::Truncated } else { WireError::Trailing(frame.len() - 4 - len) });
    }
    let version = r.u8()?;
    if version != WIRE_VERSION {
        return Err(WireError::Version(version));
    }
    let t = r.u8()?;
    let kind = *MsgKind::ALL.get((t as usize).wrapping_sub(1)).ok_or(WireError::Tag(t))?;
    let msg = match kind {
        MsgKind::Train => Message::Train(Train { round: r.u64()?, model: r.fv()?, cert: r.opt_cert()? }),
        MsgKind::Update => {
            let round = r.u64()?;
            let client = ClientId(r.u32()?);
            let h = r.fv()?;
            let proof = r.commitment()?;
            let partial = r.partial()?;
            let n = r.count(40)?;
            let envelopes = (0..n).map(|_| r.envelope()).collect::<Result<_, _>>()?;
            Message::Update(Box::new(Update {
                round,
                client,
                h,
                proof,
                partial,
                envelopes,
                sigma_h: r.sig()?,
                ping_sig: r.sig()?,
            }))
        }
        MsgKind::Ping => Message::Ping(Ping { round: r.u64()?, client: ClientId(r.u32()?), sig: r.sig()? }),
        MsgKind::Unification => {
            let round = r.u64()?;
            let from = AggregatorId(r.u32()?);
            let mut list = PingList::new(r.u64()?);
            let n = r.count(68)?;
            for _ in 0..n {
                let c = ClientId(r.u32()?);
                list.entries.insert(c, r.sig()?);
            }
            Message::Unification(Unification { round, from, list })
        }
        MsgKind::SumShares => {
            let round = r.u64()?;
            let coordinator = AggregatorId(r.u32()?);
            let included = r.clients()?;
            let n = r.count(100)?;
            let items = (0..n)
                .map(|_| {
                    Ok(SumItem {
                        client: ClientId(r.u32()?),
                        h: r.fv()?,
                        proof: r.commitment()?,
                        partial: r.partial()?,
                        sigma_h: r.sig()?,
                        envelope: r.envelope()?,
                    })
                })
                .collect::<Result<_, WireError>>()?;
            Message::SumShares(Box::new(SumShares { round, coordinator, included, items }))
        }
        MsgKind::IntraReply => Message::IntraReply(Box::new(IntraReply {
            round: r.u64()?,
            from: AggregatorId(r.u32()?),
            coordinator: AggregatorId(r.u32()?),
            share: r.share()?,
            c_sum: r.commitment()?,
            sig: r.sig()?,
        })),
        MsgKind::InterSum => Message::InterSum(Box::new(r.inter()?)),
        MsgKind::Certify => {
            let round = r.u64()?;
            let from = AggregatorId(r.u32()?);
            let prev_model = r.fv()?;
            let prev_cert = r.opt_cert()?;
            let n = r.count(100)?;
            let entries = (0..n).map(|_| r.inter()).collect::<Result<_, _>>()?;
            Message::Certify(Box::new(Certify { round, from, prev_model, prev_cert, entries, candidate: r.fv()? }))
        }
        MsgKind::CertifyAck => {
            Message::CertifyAck(CertifyAck { round: r.u64()?, from: AggregatorId(r.u32()?), digest: r.arr32()?, sig: r.sig()? })
        }
        MsgKind::Wasted => Message::Wasted(Wasted { round: r.u64()?, from: AggregatorId(r.u32()?) }),
    };
    r.finish()?;
    Ok(msg)
}

/// Plaintext of a sealed share envelope.
pub fn encode_share_payload(share: &Share, sig: &Signature) -> Vec<u8> {
    let mut w = Writer::default();
    w.share(share);
    w.sig(sig);
    w.0
}

pub fn decode_share_payload(bytes: &[u8]) -> Result<(Share, Signature), WireError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let share = r.share()?;
    let sig = r.sig()?;
    r.finish()?;
    Ok((share, sig))
}
