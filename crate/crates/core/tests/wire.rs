use pvfed_core::harness::presets::{liveness, smoke};
use pvfed_core::harness::{run_prepared, RunConfig};
use pvfed_core::harness::config::Script;
use pvfed_core::ids::AggregatorId;
use pvfed_core::messages::{Message, MsgKind, Wasted};
use pvfed_core::sim::Role;
use pvfed_core::wire::{decode, encode, WireError};

fn roundtrip_run(cfg: &RunConfig) -> pvfed_core::harness::Outcome {
    let mut prepared = cfg.prepare().unwrap();
    prepared.sim.wire_roundtrip = true;
    run_prepared(cfg.clone(), prepared)
}

#[test]
fn live_traffic_survives_the_codec() {
    let cfg = smoke();
    let plain = pvfed_core::harness::run_config(&cfg).unwrap();
    let out = roundtrip_run(&cfg);
    assert_eq!(out.report.wire_mismatches, 0);
    assert!(out.ok(), "{:?}", out.summary.violations);
    // delivering the decoded frame changes nothing
    assert_eq!(out.summary.trace_hash, plain.summary.trace_hash);
}

#[test]
fn byzantine_traffic_survives_the_codec() {
    let mut cfg = liveness(Script::Tamper);
    cfg.horizon = 3;
    cfg.topology.n_c = 40;
    cfg.topology.t_c = 0;
    cfg.faults.crash_count = 0;
    cfg.topology.rho = 6;
    let out = roundtrip_run(&cfg);
    assert_eq!(out.report.wire_mismatches, 0);
    let kinds: Vec<MsgKind> = out.report.messages.by_kind.keys().map(|(_, k)| *k).collect();
    for k in [MsgKind::Train, MsgKind::Update, MsgKind::Ping, MsgKind::Unification, MsgKind::SumShares,
        MsgKind::IntraReply, MsgKind::InterSum, MsgKind::Certify, MsgKind::CertifyAck]
    {
        assert!(kinds.contains(&k), "{} never sent", k.name());
    }
    assert!(out.report.messages.by_kind.keys().any(|(r, _)| *r == Role::Client));
}

#[test]
fn every_prefix_is_rejected() {
    let msg = Message::Wasted(Wasted { round: 77, from: AggregatorId(3) });
    let frame = encode(&msg);
    assert_eq!(decode(&frame).unwrap(), msg);
    for cut in 0..frame.len() {
        assert!(decode(&frame[..cut]).is_err(), "prefix of {cut} bytes accepted");
    }
    let mut long = frame.clone();
    long.push(0);
    assert!(matches!(decode(&long), Err(WireError::Trailing(1))));
}

#[test]
fn unknown_version_and_tag_are_rejected() {
    let frame = encode(&Message::Wasted(Wasted { round: 1, from: AggregatorId(1) }));
    let mut bad = frame.clone();
    bad[0] ^= 0xff;
    assert!(decode(&bad).is_err());
    let mut bad = frame.clone();
    bad[1] = 0xee;
    assert!(decode(&bad).is_err());
}
