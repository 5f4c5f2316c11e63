//! Per-role message counts against the asymptotic bounds.
//!
//! A client that trains sends one UPDATE and `n_a` PINGs. An aggregator
//! sends `k` TRAINs plus a constant number of broadcasts per round, so
//! its count stays below `c1 n_a + c2 k`.

use std::fmt;

use serde::Serialize;

use crate::ids::NodeId;
use crate::params::ProtocolParams;
use crate::sim::SimReport;

/// Constants of the aggregator bound, with slack for re-sends.
pub const AGGREGATOR_C1: f64 = 8.0;
pub const AGGREGATOR_C2: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub n_c: u32,
    pub n_a: u32,
    pub k: usize,
    pub client_expected: u64,
    pub client_min: u64,
    pub client_max: u64,
    pub aggregator_mean: f64,
    pub aggregator_max: u64,
    pub aggregator_bound: f64,
    pub ok: bool,
}

pub fn complexity_report(report: &SimReport, params: &ProtocolParams) -> ComplexityReport {
    let (mut client_min, mut client_max) = (u64::MAX, 0);
    let (mut agg_sum, mut agg_n, mut agg_max) = (0u64, 0u64, 0u64);
    for (&(node, round), &n) in &report.messages.by_node_round {
        if round >= params.horizon {
            continue;
        }
        match node {
            NodeId::Client(_) => {
                client_min = client_min.min(n);
                client_max = client_max.max(n);
            }
            NodeId::Aggregator(a) if report.honest.contains(&a) => {
                agg_sum += n;
                agg_n += 1;
                agg_max = agg_max.max(n);
            }
            NodeId::Aggregator(_) => {}
        }
    }
    let expected = params.n_a as u64 + 1;
    let bound = AGGREGATOR_C1 * params.n_a as f64 + AGGREGATOR_C2 * params.k() as f64;
    let client_ok = client_max == 0 || (client_min == expected && client_max == expected);
    ComplexityReport {
        n_c: params.n_c,
        n_a: params.n_a,
        k: params.k(),
        client_expected: expected,
        client_min: if client_min == u64::MAX { 0 } else { client_min },
        client_max,
        aggregator_mean: if agg_n == 0 { 0.0 } else { agg_sum as f64 / agg_n as f64 },
        aggregator_max: agg_max,
        aggregator_bound: bound,
        ok: client_ok && client_max > 0 && (agg_max as f64) <= bound,
    }
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n_c={} n_a={} k={}", self.n_c, self.n_a, self.k)?;
        writeln!(
            f,
            "  client messages/round: measured {}..{}, expected n_a+1 = {}",
            self.client_min, self.client_max, self.client_expected
        )?;
        write!(
            f,
            "  aggregator messages/round: mean {:.1}, max {}, bound {}*n_a + {}*k = {:.0}  [{}]",
            self.aggregator_mean,
            self.aggregator_max,
            AGGREGATOR_C1,
            AGGREGATOR_C2,
            self.aggregator_bound,
            if self.ok { "ok" } else { "FAIL" }
        )
    }
}

/// Least-squares fit of `y = c1 x1 + c2 x2` through the origin.
pub fn fit_two(points: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x1, x2, y) in points {
        a11 += x1 * x1;
        a12 += x1 * x2;
        a22 += x2 * x2;
        b1 += x1 * y;
        b2 += x2 * y;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-12 {
        return None;
    }
    Some(((b1 * a22 - b2 * a12) / det, (a11 * b2 - a12 * b1) / det))
}
