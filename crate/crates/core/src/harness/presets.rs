//! Named scenarios and the acceptance checks built on them.
//!
//! Presets `smoke`, `liveness-*`, `fairness-*` and `fedavg` are plain run
//! configurations. Each `c1`..`c9` check runs its own experiments and
//! returns a [`Verdict`]; the raw outcomes are returned alongside so that
//! callers can apply further checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::aggregator::{AggEvent, Blackboard};
use crate::client::verify_certificate;
use crate::crypto::{commit_add, ss_add, ss_recover, ss_share, unseal, verify_combined, Commitment, Share};
use crate::dp::{calibrate_sigma2, dp_epsilon, dp_from_rdp, draw_noise, mask_update, noisy_clipped, unmask, unmask_encoded, DpConfig};
use crate::field::{Field, FieldVec, FixedPointCodec, PublicMatrix};
use crate::ids::{AggregatorId, ClientId};
use crate::inclusion::{include, InclusionLedger};
use crate::messages::model_digest;
use crate::params::{Genesis, InclusionMode};
use crate::rng::{derive_rng, derive_seed};
use crate::sim::{FinalizedRecord, SimReport};
use crate::task::{HeterogeneityProfile, TaskSet};
use crate::wire::decode_share_payload;

use super::complexity::{complexity_report, fit_two, ComplexityReport};
use super::config::*;
use super::experiment::{run_config, run_prepared_until, Outcome};

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Verdict { name, passed, detail: detail.into() }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub const PRESETS: &[&str] = &[
    "smoke",
    "liveness-halt",
    "liveness-omit",
    "liveness-fabricate",
    "liveness-tamper",
    "fairness-debiased",
    "fairness-first-arrival",
    "fedavg",
];

pub const CRITERIA: &[&str] = &["c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8", "c9"];

pub fn preset(name: &str) -> Option<RunConfig> {
    Some(match name {
        "smoke" => smoke(),
        "liveness-halt" => liveness(Script::Halt { from_round: 0 }),
        "liveness-omit" => liveness(Script::Omit { allowed: vec![1] }),
        "liveness-fabricate" => liveness(Script::Fabricate),
        "liveness-tamper" => liveness(Script::Tamper),
        "fairness-debiased" => fairness(InclusionMode::Debiased),
        "fairness-first-arrival" => fairness(InclusionMode::FirstArrival),
        "fedavg" => fedavg(),
        _ => return None,
    })
}

/// Runs the named check.
pub fn criterion(name: &str, seed: u64) -> Option<Verdict> {
    Some(match name {
        "c1" => mask_cancellation(1000, seed),
        "c2" => share_recovery(seed),
        "c3" => dp_calibration(seed),
        "c4" => equivocation(200, seed).0,
        "c5" => liveness_all(seed).0,
        "c6" => fairness_check(seed).0,
        "c7" => convergence(&ConvergenceSettings { seed, ..Default::default() }).0,
        "c8" => fedavg_equivalence(seed).0,
        "c9" => complexity_sweep(seed).0,
        _ => return None,
    })
}

/// Two aggregators, eight clients, no faults.
pub fn smoke() -> RunConfig {
    let mut c = RunConfig::new(8, 2, 0, 0, 3, 5);
    c.name = "smoke".into();
    c.validation.allow_small_rho = true;
    c
}

// ---- c1 --------------------------------------------------------------------

/// Random cluster aggregations: the unmasked sum must decode to the
/// plaintext sum of noisy gradients within `rho` ulps.
pub fn mask_cancellation(trials: usize, seed: u64) -> Verdict {
    let field = Field::default();
    let codec = FixedPointCodec::new(field, 24, 65536.0, 1024).expect("valid codec");
    let (dim, mask_len, n_a, t) = (32, 8, 4u32, 3u32);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for trial in 0..trials {
        let rho = [4, 8, 16][trial % 3];
        let mut rng = derive_rng(seed, "c1", &[trial as u64]);
        let a = PublicMatrix::expand(rng.gen(), dim, mask_len, field).expect("dims");
        let dp = DpConfig { sigma2: 4.0, ..DpConfig::disabled(1.0, rho) };
        let mut h_hat = FieldVec::zeros(dim);
        let mut plain = vec![0.0; dim];
        let mut owners: Vec<Option<Share>> = vec![None; n_a as usize];
        for c in 0..rho {
            let g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let noisy = noisy_clipped(&g, &dp, &codec, &mut rng);
            let s = field.random_vec(mask_len, &mut rng);
            let h = mask_update(&noisy, &s, &a, &codec).expect("in range");
            field.vec_add_assign(&mut h_hat, &h).expect("dims");
            for (p, v) in plain.iter_mut().zip(&noisy) {
                *p += v;
            }
            let dealing = ss_share(field, &s, c as u32 + 1, 0, n_a, t, &mut rng).expect("valid");
            for sh in dealing.shares {
                let slot = &mut owners[sh.owner as usize - 1];
                *slot = Some(match slot.take() {
                    None => sh,
                    Some(acc) => ss_add(&acc, &sh).expect("same owner"),
                });
            }
        }
        let mut summed: Vec<Share> = owners.into_iter().flatten().collect();
        summed.shuffle(&mut rng);
        summed.truncate(t as usize);
        let ok = ss_recover(field, &summed, t as usize)
            .ok()
            .and_then(|s_hat| unmask(&h_hat, &s_hat, &a, &codec, rho).ok())
            .map(|dec| dec.iter().zip(&plain).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        match ok {
            Some(err) if err <= rho as f64 * codec.resolution() => worst = worst.max(err / codec.resolution()),
            _ => failures += 1,
        }
    }
    Verdict::new(
        "c1 mask cancellation",
        failures == 0,
        format!("{trials} aggregations, {failures} failures, worst error {worst:.2} ulp (limit rho ulp)"),
    )
}

// ---- c2 --------------------------------------------------------------------

fn subsets(n: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0u32..1 << n).filter(move |m| m.count_ones() as usize == size).map(move |m| {
        (0..n).filter(|i| m & (1 << i) != 0).collect()
    })
}

/// Recovery from every `t`-subset agrees with the secret; every
/// `(t-1)`-subset is refused.
pub fn share_recovery(seed: u64) -> Verdict {
    let field = Field::default();
    let mut checked = 0;
    let mut bad = Vec::new();
    for n_a in [4u32, 7] {
        let t_a = (n_a - 1) / 3;
        let t = (n_a - t_a) as usize;
        for trial in 0..10u64 {
            let mut rng = derive_rng(seed, "c2", &[n_a as u64, trial]);
            let secret = field.random_vec(8, &mut rng);
            let d = ss_share(field, &secret, 1, trial, n_a, t as u32, &mut rng).expect("valid");
            for set in subsets(n_a as usize, t) {
                let shares: Vec<Share> = set.iter().map(|&i| d.shares[i].clone()).collect();
                checked += 1;
                if ss_recover(field, &shares, t).ok().as_ref() != Some(&secret) {
                    bad.push(format!("n_a={n_a} subset {set:?} disagreed"));
                }
            }
            for set in subsets(n_a as usize, t - 1) {
                let shares: Vec<Share> = set.iter().map(|&i| d.shares[i].clone()).collect();
                checked += 1;
                if ss_recover(field, &shares, t).is_ok() {
                    bad.push(format!("n_a={n_a} subset {set:?} of size t-1 recovered"));
                }
            }
        }
    }
    Verdict::new(
        "c2 share recovery",
        bad.is_empty(),
        if bad.is_empty() { format!("{checked} subsets checked") } else { bad.join("; ") },
    )
}

// ---- c3 --------------------------------------------------------------------

pub fn dp_calibration(seed: u64) -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for &(t, c, alpha, eps) in &[(79u64, 1.0, 8.0, 8.0), (10, 0.5, 2.5, 3.0), (300, 2.0, 32.0, 0.75)] {
        let got = calibrate_sigma2(t, c, alpha, eps).expect("valid");
        if got.to_bits() != (t as f64 * c * c * alpha / (2.0 * eps)).to_bits() {
            ok = false;
            notes.push(format!("calibrate_sigma2({t}, {c}, {alpha}, {eps}) = {got}"));
        }
    }

    let (sigma2, rho, n) = (2.5, 16, 100_000);
    let mut rng = derive_rng(seed, "c3", &[]);
    let mut sum_sq = 0.0;
    let mut sum = 0.0;
    for _ in 0..n {
        let s: f64 = (0..rho).map(|_| draw_noise(sigma2, rho, 1, &mut rng)[0]).sum();
        sum += s;
        sum_sq += s * s;
    }
    let mean = sum / n as f64;
    let var = sum_sq / n as f64 - mean * mean;
    let rel = (var / sigma2 - 1.0).abs();
    ok &= rel <= 0.03;
    notes.push(format!("summed noise variance {var:.4} vs {sigma2} ({:.2}%)", rel * 100.0));

    let t = 79;
    match dp_from_rdp(8.0, 1e-5, t, 1.0) {
        Ok((alpha, s2)) => {
            let back = dp_epsilon(alpha, t, s2, 1.0, 1e-5);
            ok &= back <= 8.0 + 1e-9;
            notes.push(format!("dp_from_rdp(8, 1e-5) -> alpha {alpha}, sigma2 {s2:.4}, re-evaluates to {back:.6}"));
        }
        Err(e) => {
            ok = false;
            notes.push(format!("dp_from_rdp failed: {e}"));
        }
    }
    Verdict::new("c3 dp calibration", ok, notes.join("; "))
}

// ---- c4 --------------------------------------------------------------------

/// Sums the attacker could unmask from its transcripts.
#[derive(Debug, Clone)]
pub struct Recovered {
    pub set: Vec<ClientId>,
    pub sum: Vec<f64>,
}

/// What colluders can reconstruct: for every inclusion set they sent
/// around, the shares they hold themselves plus the summed shares honest
/// aggregators returned for that exact set.
pub fn colluder_recoveries(bb: &Blackboard, ctx: &crate::params::Context) -> Vec<Recovered> {
    let p = &ctx.params;
    let field = p.codec.field();
    let mut by_set: BTreeMap<Vec<ClientId>, (crate::field::FieldVec, Commitment, BTreeMap<u32, Share>)> =
        BTreeMap::new();
    for (to, bundle) in &bb.bundles {
        let entry = by_set.entry(bundle.included.clone()).or_insert_with(|| {
            let mut h = FieldVec::zeros(p.dim);
            let mut c: Option<Commitment> = None;
            for item in &bundle.items {
                field.vec_add_assign(&mut h, &item.h).expect("dims");
                c = Some(match c {
                    None => item.proof,
                    Some(acc) => commit_add(&acc, &item.proof).expect("same mode"),
                });
            }
            (h, c.expect("non-empty"), BTreeMap::new())
        });
        // colluders open the envelopes addressed to them
        if let Some(key) = bb.keys.get(to) {
            let mut acc: Option<Share> = None;
            for item in &bundle.items {
                let Ok(payload) = unseal(&item.envelope, to.0, key) else { continue };
                let Ok((share, _)) = decode_share_payload(&payload) else { continue };
                acc = Some(match acc {
                    None => share,
                    Some(a) => ss_add(&a, &share).expect("same owner"),
                });
            }
            if let Some(s) = acc {
                entry.2.insert(to.0, s);
            }
        }
    }
    for reply in &bb.replies {
        for (h, c, shares) in by_set.values_mut() {
            let _ = h;
            if reply.c_sum == *c && !bb.keys.contains_key(&reply.from) {
                shares.insert(reply.from.0, reply.share.clone());
            }
        }
    }
    by_set
        .into_iter()
        .filter_map(|(set, (h, _, shares))| {
            let shares: Vec<Share> = shares.into_values().collect();
            let s_hat = ss_recover(field, &shares, p.quorum()).ok()?;
            let g = unmask_encoded(&h, &s_hat, &ctx.matrix, &p.codec).ok()?;
            Some(Recovered { sum: p.codec.decode(&g), set })
        })
        .collect()
}

/// Candidate individual values from differencing recovered sums.
pub fn differencing_candidates(recovered: &[Recovered]) -> Vec<(ClientId, Vec<f64>)> {
    let mut out = Vec::new();
    for a in recovered {
        if a.set.len() == 1 {
            out.push((a.set[0], a.sum.clone()));
        }
        for b in recovered {
            let sa: BTreeSet<_> = a.set.iter().collect();
            let sb: BTreeSet<_> = b.set.iter().collect();
            let extra: Vec<_> = sa.difference(&sb).collect();
            let missing: Vec<_> = sb.difference(&sa).collect();
            if extra.len() == 1 && missing.len() <= 1 {
                let diff = a.sum.iter().zip(&b.sum).map(|(x, y)| x - y).collect();
                out.push((**extra[0], diff));
            }
        }
    }
    out
}

fn equivocation_config(seed: u64, defenses: bool) -> RunConfig {
    let mut c = RunConfig::new(28, 4, 0, 1, 4, 1);
    c.name = "equivocation".into();
    c.seed = seed;
    c.record_truth = true;
    c.dp = DpSection::Sigma2 { sigma2: 1.0, clip: 1.0 };
    c.faults.byzantine.push(ByzantineSpec { id: 1 + (seed % 4) as u32, script: Script::Equivocate });
    c.defenses = DefenseSection { exact_rho: defenses, single_serve: defenses };
    c
}

/// Runs one equivocation trial; returns whether any differencing
/// candidate matches a true client value, and the honest double-serve
/// count.
pub fn equivocation_trial(seed: u64, defenses: bool) -> (bool, usize, Outcome) {
    let cfg = equivocation_config(seed, defenses);
    let out = run_config(&cfg).expect("valid config");
    let ctx = Genesis::new(out.prepared.sim.params.clone(), cfg.seed).ctx;
    let bb = out.report.blackboard.as_ref().expect("Byzantine run").lock().unwrap();
    let recovered = colluder_recoveries(&bb, &ctx);
    let tol = 4.0 * out.prepared.sim.params.rho as f64 * out.prepared.sim.params.codec.resolution();
    let leaked = differencing_candidates(&recovered).iter().any(|(c, v)| {
        out.report.truth.iter().any(|(tc, _, truth)| {
            tc == c && truth.iter().zip(v).all(|(x, y)| (x - y).abs() <= tol)
        })
    });
    drop(bb);
    (leaked, double_serves(&out.report), out)
}

/// Bundles honest aggregators served beyond one per coordinator and round.
pub fn double_serves(report: &SimReport) -> usize {
    let mut served: BTreeMap<(AggregatorId, u64, AggregatorId), usize> = BTreeMap::new();
    for (_, a, e) in &report.events {
        if let AggEvent::Served { round, coordinator } = e {
            if report.honest.contains(a) {
                *served.entry((*a, *round, *coordinator)).or_default() += 1;
            }
        }
    }
    served.values().map(|n| n.saturating_sub(1)).sum()
}

/// Returns the verdict and, for reference, how often the same attack
/// succeeds with the server-side checks disabled.
pub fn equivocation(trials: u64, seed: u64) -> (Verdict, usize) {
    let mut leaks = 0;
    let mut doubles = 0;
    for t in 0..trials {
        let (leaked, d, _) = equivocation_trial(seed.wrapping_mul(1000).wrapping_add(t), true);
        leaks += leaked as usize;
        doubles += d;
    }
    let control_trials = 10.min(trials);
    let control = (0..control_trials)
        .filter(|t| equivocation_trial(seed.wrapping_mul(1000).wrapping_add(*t), false).0)
        .count();
    (
        Verdict::new(
            "c4 equivocation",
            leaks == 0 && doubles == 0,
            format!(
                "{trials} trials: {leaks} individual values recovered, {doubles} honest double serves \
                 (without the checks: {control}/{control_trials} leak)"
            ),
        ),
        control,
    )
}

// ---- c5 --------------------------------------------------------------------

pub fn liveness(script: Script) -> RunConfig {
    let mut c = RunConfig::new(120, 4, 30, 1, 8, 50);
    c.name = "liveness".into();
    c.faults.crash_count = 30;
    c.faults.byzantine.push(ByzantineSpec { id: 4, script });
    c.dp = DpSection::Dp { epsilon: 8.0, delta: 1e-5, clip: 1.0, tau_max: None };
    c.blame = BlameSection::Calibrate { trials: 40 };
    c
}

/// Re-verifies each finalized certificate at threshold `n_a - t_a`.
pub fn bad_certificates(out: &Outcome) -> usize {
    let ctx = Genesis::new(out.prepared.sim.params.clone(), out.config.seed).ctx;
    out.report
        .finalized
        .iter()
        .filter(|r: &&FinalizedRecord| {
            !(r.cert.digest == model_digest(r.round + 1, &r.encoded)
                && verify_combined(&r.cert, &ctx.registry.aggregators, ctx.params.quorum())
                && verify_certificate(&ctx, r.round + 1, &r.encoded, Some(&r.cert)))
        })
        .count()
}

pub fn liveness_all(seed: u64) -> (Verdict, Vec<Outcome>) {
    let scripts = [
        Script::Halt { from_round: 0 },
        Script::Omit { allowed: vec![1] },
        Script::Fabricate,
        Script::Tamper,
    ];
    let mut notes = Vec::new();
    let mut ok = true;
    let mut outs = Vec::new();
    for s in scripts {
        let mut cfg = liveness(s.clone());
        cfg.seed = seed;
        let out = run_config(&cfg).expect("valid config");
        let horizon = cfg.horizon;
        let min_rounds = out.report.honest.iter().map(|a| out.report.finalized_by(*a).count()).min().unwrap_or(0);
        let bad = bad_certificates(&out);
        let pass = out.ok() && min_rounds as u64 == horizon && bad == 0 && !out.report.watchdog_tripped;
        ok &= pass;
        notes.push(format!(
            "{:?}: {}/{horizon} rounds, {} bad certs, {} honest TRAINs verified{}",
            s,
            min_rounds,
            bad,
            out.summary.trains_honest_valid,
            if out.ok() { String::new() } else { format!(" {:?}", out.summary.violations) }
        ));
        outs.push(out);
    }
    (Verdict::new("c5 liveness", ok, notes.join("; ")), outs)
}

// ---- c6 --------------------------------------------------------------------

pub fn fairness(mode: InclusionMode) -> RunConfig {
    let mut c = RunConfig::new(64, 1, 15, 0, 16, 300);
    c.name = "fairness".into();
    c.inclusion = mode;
    c.dp = DpSection::Off { clip: 1e3 };
    c.step = StepSection::Decay { t0: 4.0 };
    c.task.offset = 1.0;
    // slow clients are the last 2 t_c + 1
    c.task.profile = HeterogeneityProfile::TwoPopulation { spread: 0.2, first_slow: 64 - 31 + 1 };
    c.blame = match mode {
        InclusionMode::Debiased => BlameSection::Calibrate { trials: 40 },
        InclusionMode::FirstArrival => BlameSection::Off,
    };
    c
}

/// `(with, without)` debiasing.
pub fn fairness_check(seed: u64) -> (Verdict, (Outcome, Outcome)) {
    let mut with = fairness(InclusionMode::Debiased);
    with.seed = seed;
    let mut without = fairness(InclusionMode::FirstArrival);
    without.seed = seed;
    let with = run_config(&with).expect("valid config");
    let without = run_config(&without).expect("valid config");

    let d_with = with.final_distances().first().copied().unwrap_or(f64::INFINITY);
    let d_without = without.final_distances().first().copied().unwrap_or(0.0);
    let p = &with.prepared.sim.params;
    let keep = p.blame_keep();
    let counts = with.inclusion_totals();
    // ids are ordered fastest first
    let fastest = &counts[..keep];
    let mean = fastest.iter().sum::<u64>() as f64 / keep as f64;
    let dev = fastest.iter().map(|&c| (c as f64 - mean).abs() / mean).fold(0.0, f64::max);
    let bound = (p.horizon * p.rho as u64).div_ceil(p.k() as u64) + p.blame.delta_max;
    let max = counts.iter().copied().max().unwrap_or(0);
    let pass = with.ok() && without.ok() && d_without > 5.0 * d_with && dev <= 0.2 && max <= bound;
    (
        Verdict::new(
            "c6 inclusion fairness",
            pass,
            format!(
                "distance without {d_without:.4} vs with {d_with:.4} (ratio {:.1}); \
                 fastest {keep} counts deviate {:.1}% from {mean:.1}; max count {max} <= {bound}",
                d_without / d_with,
                dev * 100.0
            ),
        ),
        (with, without),
    )
}

// ---- c7 --------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConvergenceSettings {
    pub seed: u64,
    /// Seeds averaged per sweep point.
    pub seeds: u64,
    pub n_c: u32,
    pub floor_rounds: u64,
    pub horizon: u64,
    pub offset: f64,
    /// Per-coordinate spread of the client optima.
    pub spread: f64,
    pub gamma: f64,
    pub epsilons: Vec<f64>,
    pub rhos: Vec<usize>,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        ConvergenceSettings {
            seed: 0,
            seeds: 8,
            n_c: 196,
            floor_rounds: 120,
            horizon: 300,
            offset: 3.0,
            spread: 0.5,
            gamma: 0.1,
            epsilons: vec![3.0, 5.0, 8.0],
            rhos: vec![16, 32, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub floor: f64,
    pub target: f64,
    /// `(n_a, worst honest rounds to target)`; `None` if never reached.
    pub faulty: Vec<(u32, Option<u64>)>,
    /// Mean rounds to target per `rho` at the largest epsilon.
    pub by_rho: Vec<(usize, f64)>,
    /// Mean rounds to target per epsilon at the smallest `rho`.
    pub by_epsilon: Vec<(f64, f64)>,
}

pub fn convergence_config(s: &ConvergenceSettings, n_a: u32, rho: usize, epsilon: f64, horizon: u64, seed: u64) -> RunConfig {
    let n_c = s.n_c;
    let t_a = (n_a - 1) / 3;
    let mut c = RunConfig::new(n_c, n_a, 0, t_a, rho, horizon);
    c.name = "convergence".into();
    c.seed = seed;
    c.task.offset = s.offset;
    c.task.profile = HeterogeneityProfile::Iid { spread: s.spread };
    c.step = StepSection::Constant { gamma: s.gamma };
    c.dp = DpSection::Dp { epsilon, delta: 1e-5, clip: 1.0, tau_max: Some(s.horizon) };
    if n_a > 1 {
        c.topology.t_c = n_c / 10;
        c.faults.crash_count = n_c / 10;
        let scripts = [Script::Tamper, Script::Halt { from_round: 10 }];
        for (i, sc) in scripts.iter().take(t_a as usize).enumerate() {
            c.faults.byzantine.push(ByzantineSpec { id: n_a - i as u32, script: sc.clone() });
        }
        c.blame = BlameSection::Calibrate { trials: 20 };
    }
    c
}

/// Distance of every honest aggregator after each round.
fn distances(report: &SimReport, tasks: &TaskSet) -> BTreeMap<AggregatorId, Vec<f64>> {
    let mut d: BTreeMap<AggregatorId, Vec<f64>> = BTreeMap::new();
    for r in &report.finalized {
        if report.honest.contains(&r.aggregator) {
            d.entry(r.aggregator).or_default().push(tasks.evaluate(&r.model).distance);
        }
    }
    d
}

/// Runs until every honest aggregator is within `target`; returns the
/// worst round count (1-based) or `None`.
pub fn rounds_to_target(cfg: &RunConfig, target: f64) -> (Option<u64>, Outcome) {
    let prepared = cfg.prepare().expect("valid config");
    let tasks = prepared.tasks.clone();
    let honest: Vec<AggregatorId> = crate::ids::aggregators(cfg.topology.n_a)
        .filter(|a| !cfg.faults.byzantine.iter().any(|b| b.id == a.0))
        .collect();
    let stop_tasks = tasks.clone();
    let mut reached: BTreeMap<AggregatorId, u64> = BTreeMap::new();
    let stop = Box::new(move |fin: &[FinalizedRecord]| {
        let r = fin.last().expect("called after a finalization");
        if !reached.contains_key(&r.aggregator) && stop_tasks.evaluate(&r.model).distance <= target {
            reached.insert(r.aggregator, r.round + 1);
        }
        honest.iter().all(|a| reached.contains_key(a))
    });
    let out = run_prepared_until(cfg.clone(), prepared, Some(stop));
    let d = distances(&out.report, &tasks);
    let worst = out
        .report
        .honest
        .iter()
        .map(|a| d.get(a).and_then(|v| v.iter().position(|&x| x <= target)).map(|i| i as u64 + 1))
        .collect::<Option<Vec<u64>>>()
        .and_then(|v| v.into_iter().max());
    (worst, out)
}

pub fn convergence(s: &ConvergenceSettings) -> (Verdict, ConvergenceReport) {
    let rho0 = *s.rhos.first().expect("rhos");
    let eps_max = s.epsilons.iter().copied().fold(f64::MIN, f64::max);
    // noise floor: single aggregator, no faults, second half of a long run
    let floor_cfg = convergence_config(s, 1, rho0, eps_max, s.floor_rounds, s.seed);
    let floor_out = run_config(&floor_cfg).expect("valid config");
    let d = distances(&floor_out.report, &floor_out.prepared.tasks);
    let tail: Vec<f64> = d.values().next().map(|v| v[v.len() / 2..].to_vec()).unwrap_or_default();
    let floor = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    let target = 3.0 * floor;

    let mean_rounds = |n_a: u32, rho: usize, eps: f64| -> f64 {
        let v: Vec<f64> = (0..s.seeds)
            .map(|i| {
                let cfg = convergence_config(s, n_a, rho, eps, s.horizon, s.seed + i);
                rounds_to_target(&cfg, target).0.map_or(f64::INFINITY, |r| r as f64)
            })
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let by_rho: Vec<(usize, f64)> = s.rhos.iter().map(|&r| (r, mean_rounds(1, r, eps_max))).collect();
    let by_epsilon: Vec<(f64, f64)> = s.epsilons.iter().map(|&e| (e, mean_rounds(1, rho0, e))).collect();
    let faulty: Vec<(u32, Option<u64>)> = [4u32, 7]
        .iter()
        .map(|&n_a| {
            let cfg = convergence_config(s, n_a, rho0, eps_max, s.horizon, s.seed);
            (n_a, rounds_to_target(&cfg, target).0)
        })
        .collect();

    let single_ok = by_rho.iter().chain(by_epsilon.iter().map(|(_, r)| r).map(|r| (0, *r)).collect::<Vec<_>>().iter())
        .all(|(_, r)| r.is_finite() && *r <= s.horizon as f64);
    let faulty_ok = faulty.iter().all(|(_, r)| r.is_some_and(|r| r <= s.horizon));
    let rho_mono = by_rho.windows(2).all(|w| w[1].1 <= w[0].1);
    let mut eps_sorted = by_epsilon.clone();
    eps_sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let eps_mono = eps_sorted.windows(2).all(|w| w[1].1 <= w[0].1);
    let report = ConvergenceReport { floor, target, faulty, by_rho, by_epsilon };
    (
        Verdict::new(
            "c7 convergence",
            single_ok && faulty_ok && rho_mono && eps_mono,
            format!(
                "floor {:.4}, target {:.4}; faulty n_a rounds {:?}; rounds by rho {:?}; by epsilon {:?}",
                report.floor, report.target, report.faulty, report.by_rho, report.by_epsilon
            ),
        ),
        report,
    )
}

// ---- c8 --------------------------------------------------------------------

pub fn fedavg() -> RunConfig {
    let mut c = RunConfig::new(20, 1, 0, 0, 8, 100);
    c.name = "fedavg".into();
    c.dp = DpSection::Off { clip: 1e3 };
    c.blame = BlameSection::Off;
    c
}

/// Plain federated averaging over the same inclusion sequence.
pub fn fedavg_reference(out: &Outcome) -> Vec<Vec<f64>> {
    let p = &out.prepared.sim.params;
    let tasks = &out.prepared.tasks;
    let coord = AggregatorId(1);
    let everyone: Vec<ClientId> = crate::ids::clients(p.n_c).collect();
    let mut ledger = InclusionLedger::new(1, p.n_c);
    let mut w = vec![0.0; p.dim];
    let mut models = Vec::new();
    for round in 0..p.horizon {
        let chosen = include(&|c| ledger.count(coord, c), &everyone, p.rho, &p.assign_seed, round).expect("enough");
        ledger.record(coord, &chosen);
        let mut g = vec![0.0; p.dim];
        for c in &chosen {
            for (acc, v) in g.iter_mut().zip(crate::dp::clip(&tasks.tasks[c.index()].local_gradient(&w), p.dp.clip)) {
                *acc += v / p.rho as f64;
            }
        }
        let gamma = p.step.gamma(round);
        for (wi, gi) in w.iter_mut().zip(g) {
            *wi -= gamma * gi;
        }
        models.push(w.clone());
    }
    models
}

pub fn fedavg_equivalence(seed: u64) -> (Verdict, Outcome) {
    let mut cfg = fedavg();
    cfg.seed = seed;
    let out = run_config(&cfg).expect("valid config");
    let reference = fedavg_reference(&out);
    let tol = 1e-5;
    let worst = out
        .report
        .finalized
        .iter()
        .map(|r| r.model.iter().zip(&reference[r.round as usize]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let rounds = out.report.finalized.len();
    (
        Verdict::new(
            "c8 fedavg equivalence",
            out.ok() && rounds as u64 == cfg.horizon && worst <= tol,
            format!("{rounds} rounds, max deviation {worst:.2e} (tolerance {tol:.0e})"),
        ),
        out,
    )
}

// ---- c9 --------------------------------------------------------------------

/// Smallest `rho` allowed for cluster size `k`.
pub fn min_rho(k: usize) -> usize {
    (1.0 + (1.0 + k as f64).sqrt()).floor() as usize + 1
}

/// Client counts divisible by `n_a`, closest to the nominal sizes.
pub fn sweep_sizes(n_a: u32) -> Vec<u32> {
    [60u32, 120, 240].iter().map(|&n| ((n as f64 / n_a as f64).round() as u32) * n_a).collect()
}

pub fn complexity_sweep(seed: u64) -> (Verdict, Vec<ComplexityReport>) {
    let mut reports = Vec::new();
    for n_a in [4u32, 7] {
        for n_c in sweep_sizes(n_a) {
            let k = (n_c / n_a) as usize;
            let mut c = RunConfig::new(n_c, n_a, 0, (n_a - 1) / 3, min_rho(k), 3);
            c.seed = seed;
            c.name = "complexity".into();
            let out = run_config(&c).expect("valid config");
            reports.push(complexity_report(&out.report, &out.prepared.sim.params));
        }
    }
    let points: Vec<(f64, f64, f64)> =
        reports.iter().map(|r| (r.n_a as f64, r.k as f64, r.aggregator_max as f64)).collect();
    let fit = fit_two(&points);
    let ok = reports.iter().all(|r| r.ok) && fit.is_some_and(|(c1, c2)| c1.abs() <= 10.0 && c2.abs() <= 10.0);
    (
        Verdict::new(
            "c9 complexity",
            ok,
            format!(
                "client messages/round {:?}; aggregator max {:?}; fit c1={:.2} c2={:.2}",
                reports.iter().map(|r| (r.n_c, r.n_a, r.client_max)).collect::<Vec<_>>(),
                reports.iter().map(|r| r.aggregator_max).collect::<Vec<_>>(),
                fit.map_or(f64::NAN, |f| f.0),
                fit.map_or(f64::NAN, |f| f.1)
            ),
        ),
        reports,
    )
}

/// Seed for a sub-experiment, so presets stay reproducible.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    u64::from_le_bytes(derive_seed(seed, label, &[])[..8].try_into().expect("8 bytes"))
}
