//! Runs a prepared configuration and extracts metrics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::aggregator::AggEvent;
use crate::ids::{AggregatorId, ClientId};
use crate::sim::{SimReport, Simulation, StopRule};
use crate::task::{LocalObjective, TaskSet};

use super::config::{ConfigError, Prepared, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetric {
    pub round: u64,
    pub aggregator: u32,
    pub distance: f64,
    pub objective: f64,
    pub final_selec: usize,
    pub wasted: bool,
    pub blame_events: u32,
    pub time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatorSummary {
    pub id: u32,
    pub honest: bool,
    pub rounds_finalized: u64,
    pub final_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub horizon: u64,
    pub n_c: u32,
    pub n_a: u32,
    pub rho: usize,
    pub sigma2: f64,
    pub epsilon_rdp: f64,
    pub alpha: f64,
    pub blame_expected_var: f64,
    pub blame_sec_param: f64,
    pub blame_delta_max: u64,
    pub aggregators: Vec<AggregatorSummary>,
    pub messages_total: u64,
    pub bytes_total: u64,
    pub trains_honest_valid: u64,
    pub trains_honest_invalid: u64,
    pub trains_byzantine_rejected: u64,
    pub watchdog_tripped: bool,
    pub simulated_ms: f64,
    pub trace_hash: String,
    pub violations: Vec<String>,
}

pub struct Outcome {
    pub config: RunConfig,
    pub prepared: Prepared,
    pub report: SimReport,
    pub rounds: Vec<RoundMetric>,
    /// `(client, coordinator) -> times included`.
    pub inclusion: BTreeMap<(ClientId, AggregatorId), u64>,
    pub summary: Summary,
}

impl Outcome {
    pub fn ok(&self) -> bool {
        self.summary.violations.is_empty()
    }

    /// Total inclusions of each client, index `i` for client `i + 1`.
    pub fn inclusion_totals(&self) -> Vec<u64> {
        let mut v = vec![0; self.config.topology.n_c as usize];
        for ((c, _), n) in &self.inclusion {
            v[c.index()] += n;
        }
        v
    }

    /// Final distance to the optimum for each honest aggregator.
    pub fn final_distances(&self) -> Vec<f64> {
        self.summary.aggregators.iter().filter(|a| a.honest).filter_map(|a| a.final_distance).collect()
    }
}

pub fn objectives(tasks: &TaskSet) -> Vec<Arc<dyn LocalObjective>> {
    tasks.tasks.iter().map(|t| Arc::new(t.clone()) as Arc<dyn LocalObjective>).collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Invariants every run must satisfy.
fn violations(report: &SimReport, horizon: u64) -> Vec<String> {
    let mut v = Vec::new();
    if report.watchdog_tripped {
        v.push("watchdog tripped".into());
    }
    if report.wire_mismatches > 0 {
        v.push(format!("{} frames did not decode to the sent message", report.wire_mismatches));
    }
    if report.trains.honest_invalid > 0 {
        v.push(format!("{} honest TRAIN certificates failed to verify", report.trains.honest_invalid));
    }
    for &a in &report.honest {
        let n = report.finalized_by(a).count() as u64;
        if n != horizon && !report.stopped_early {
            v.push(format!("aggregator {a} finalized {n} of {horizon} rounds"));
        }
    }
    let by_kind: u64 = report.messages.by_kind.values().map(|t| t.count).sum();
    let by_node: u64 = report.messages.by_node_round.values().sum();
    if by_kind != by_node {
        v.push(format!("message accounting mismatch: {by_kind} vs {by_node}"));
    }
    let mut served: BTreeMap<(AggregatorId, u64, AggregatorId), u32> = BTreeMap::new();
    for (_, a, e) in &report.events {
        if let AggEvent::Served { round, coordinator } = e {
            *served.entry((*a, *round, *coordinator)).or_default() += 1;
        }
    }
    for ((a, r, c), n) in served {
        if n > 1 && report.honest.contains(&a) {
            v.push(format!("aggregator {a} served coordinator {c} {n} times in round {r}"));
        }
    }
    v
}

pub fn run_prepared(config: RunConfig, prepared: Prepared) -> Outcome {
    run_prepared_until(config, prepared, None)
}

pub fn run_prepared_until(config: RunConfig, prepared: Prepared, stop: Option<StopRule>) -> Outcome {
    let mut sim = Simulation::new(prepared.sim.clone(), objectives(&prepared.tasks));
    if let Some(stop) = stop {
        sim = sim.with_stop(stop);
    }
    let report = sim.run();
    let params = &prepared.sim.params;

    let mut wasted: BTreeMap<(AggregatorId, u64), bool> = BTreeMap::new();
    let mut blamed: BTreeMap<(AggregatorId, u64), u32> = BTreeMap::new();
    let mut inclusion = BTreeMap::new();
    for (_, a, e) in &report.events {
        match e {
            AggEvent::WastedDeclared { round, .. } => {
                wasted.insert((*a, *round), true);
            }
            AggEvent::Blamed { round, .. } => *blamed.entry((*a, *round)).or_default() += 1,
            AggEvent::Included { clients, .. } => {
                for c in clients {
                    *inclusion.entry((*c, *a)).or_default() += 1;
                }
            }
            _ => {}
        }
    }
    let rounds: Vec<RoundMetric> = report
        .finalized
        .iter()
        .map(|r| {
            let eval = prepared.tasks.evaluate(&r.model);
            RoundMetric {
                round: r.round,
                aggregator: r.aggregator.0,
                distance: eval.distance,
                objective: eval.objective,
                final_selec: r.final_selec.len(),
                wasted: wasted.contains_key(&(r.aggregator, r.round)),
                blame_events: blamed.get(&(r.aggregator, r.round)).copied().unwrap_or(0),
                time_ms: r.time_ms,
            }
        })
        .collect();

    let aggregators = crate::ids::aggregators(params.n_a)
        .map(|a| AggregatorSummary {
            id: a.0,
            honest: report.honest.contains(&a),
            rounds_finalized: report.finalized_by(a).count() as u64,
            final_distance: report.final_model(a).map(|m| prepared.tasks.evaluate(m).distance),
        })
        .collect();
    let summary = Summary {
        name: config.name.clone(),
        seed: config.seed,
        horizon: params.horizon,
        n_c: params.n_c,
        n_a: params.n_a,
        rho: params.rho,
        sigma2: params.dp.sigma2,
        epsilon_rdp: params.dp.epsilon_max,
        alpha: params.dp.alpha,
        blame_expected_var: params.blame.expected_var,
        blame_sec_param: params.blame.sec_param,
        blame_delta_max: params.blame.delta_max,
        aggregators,
        messages_total: report.messages.total(),
        bytes_total: report.messages.by_kind.values().map(|t| t.bytes).sum(),
        trains_honest_valid: report.trains.honest_valid,
        trains_honest_invalid: report.trains.honest_invalid,
        trains_byzantine_rejected: report.trains.byzantine_rejected,
        watchdog_tripped: report.watchdog_tripped,
        simulated_ms: report.end_time_ms,
        trace_hash: hex(&report.trace_hash),
        violations: violations(&report, params.horizon),
    };
    Outcome { config, prepared, report, rounds, inclusion, summary }
}

pub fn run_config(config: &RunConfig) -> Result<Outcome, ConfigError> {
    let prepared = config.prepare()?;
    Ok(run_prepared(config.clone(), prepared))
}

/// Writes `metrics.csv`, `inclusion.csv`, `messages.csv` and
/// `summary.json` into `dir`.
pub fn write_outputs(outcome: &Outcome, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    for r in &outcome.rounds {
        w.serialize(r)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("inclusion.csv"))?;
    w.write_record(["client", "coordinator", "count"])?;
    for ((c, a), n) in &outcome.inclusion {
        w.write_record([c.0.to_string(), a.0.to_string(), n.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("messages.csv"))?;
    w.write_record(["role", "kind", "count", "bytes"])?;
    for ((role, kind), t) in &outcome.report.messages.by_kind {
        w.write_record([role.name(), kind.name(), &t.count.to_string(), &t.bytes.to_string()])?;
    }
    w.flush()?;

    let json = serde_json::to_string_pretty(&outcome.summary).expect("summary is serializable");
    fs::write(dir.join("summary.json"), json + "\n")
}
