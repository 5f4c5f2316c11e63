//! Monte Carlo calibration of the blaming thresholds.
//!
//! Each trial replays the honest inclusion rule over the full horizon with
//! fresh delays. Participants in a round are the clients whose round trip
//! ranks among the first `n_c - t_c - t_a k`, as that is when the ping
//! lists close. The thresholds cover the largest variance and spread seen
//! at any round of any trial.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use crate::assignment::assign;
use crate::ids::{aggregators, clients, ClientId};
use crate::inclusion::{include, restrict, spread_stats, BlameParams, InclusionLedger};
use crate::params::ProtocolParams;
use crate::rng::derive_rng;
use crate::sim::DelayModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSettings {
    pub trials: u32,
    pub validation_trials: u32,
    pub seed: u64,
    /// Added to the largest spread seen.
    pub spread_margin: u64,
    /// Multiples of the standard deviation of the per-trial maxima.
    pub sd_factor: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings { trials: 40, validation_trials: 100, seed: 0, spread_margin: 2, sd_factor: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub params: BlameParams,
    /// Fraction of validation trials in which an honest coordinator would
    /// have been blamed.
    pub false_blame_rate: f64,
    pub max_var: f64,
    pub max_spread: u64,
}

/// Largest `(variance, spread)` of any coordinator's restricted counts
/// over one simulated honest run.
pub fn honest_extremes(p: &ProtocolParams, delays: &DelayModel, trial_seed: u64) -> (f64, u64) {
    let mut rng = derive_rng(trial_seed, "calibrate/trial", &[]);
    let shape = delays.shape;
    let fast = Gamma::new(2.0 * shape, delays.fast_ms / shape).expect("positive");
    let slow = Gamma::new(2.0 * shape, delays.slow_ms / shape).expect("positive");
    let mut ledger = InclusionLedger::new(p.n_a, p.n_c);
    let open = p.unification_threshold().clamp(1, p.n_c as usize);
    let keep = p.blame_keep();
    let (mut max_var, mut max_spread) = (0.0f64, 0u64);
    for round in 0..p.horizon {
        let rtt: Vec<f64> = clients(p.n_c)
            .map(|c| if c.0 >= delays.slow_from { slow.sample(&mut rng) } else { fast.sample(&mut rng) })
            .collect();
        let mut sorted = rtt.clone();
        sorted.sort_by(f64::total_cmp);
        let cutoff = sorted[open - 1];
        let assignment = assign(round, p.n_c, p.n_a, &p.assign_seed).expect("validated");
        for a in aggregators(p.n_a) {
            let part: Vec<ClientId> =
                assignment.cluster(a).iter().copied().filter(|c| rtt[c.index()] <= cutoff).collect();
            if part.len() < p.rho {
                continue;
            }
            let chosen = include(&|c| ledger.count(a, c), &part, p.rho, &p.assign_seed, round).expect("enough");
            ledger.record(a, &chosen);
            let (var, spread) = spread_stats(&restrict(ledger.of(a), keep));
            max_var = max_var.max(var);
            max_spread = max_spread.max(spread);
        }
    }
    (max_var, max_spread)
}

pub fn calibrate_blame(p: &ProtocolParams, delays: &DelayModel, s: &CalibrationSettings) -> Calibration {
    let samples: Vec<(f64, u64)> =
        (0..s.trials.max(2)).map(|t| honest_extremes(p, delays, derive_seed_u64(s.seed, "fit", t))).collect();
    let n = samples.len() as f64;
    let mean = samples.iter().map(|x| x.0).sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let max_var = samples.iter().map(|x| x.0).fold(0.0, f64::max);
    let max_spread = samples.iter().map(|x| x.1).max().unwrap_or(0);
    // never tighter than what was already observed
    let sec_param = (s.sd_factor * sd).max(max_var - mean) + 0.5;
    let params = BlameParams { expected_var: mean, sec_param, delta_max: max_spread + s.spread_margin };

    let blamed = (0..s.validation_trials)
        .filter(|&t| {
            let (var, spread) = honest_extremes(p, delays, derive_seed_u64(s.seed, "validate", t));
            var > params.expected_var + params.sec_param || spread > params.delta_max
        })
        .count();
    Calibration {
        params,
        false_blame_rate: blamed as f64 / s.validation_trials.max(1) as f64,
        max_var,
        max_spread,
    }
}

fn derive_seed_u64(seed: u64, label: &str, trial: u32) -> u64 {
    derive_rng(seed, label, &[trial as u64]).gen()
}
