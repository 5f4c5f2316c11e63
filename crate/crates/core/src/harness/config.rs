//! Run configuration: a TOML file with one table per concern.
//!
//! ```toml
//! seed = 7
//! horizon = 50
//!
//! [topology]
//! n_c = 120
//! n_a = 4
//! t_c = 30
//! t_a = 1
//! rho = 8
//!
//! [dp]
//! mode = "dp"
//! epsilon = 8.0
//! delta = 1e-5
//! clip = 1.0
//!
//! [[faults.byzantine]]
//! id = 4
//! script = "halt"
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::{Behavior, Defenses};
use crate::dp::{DpConfig, DpError};
use crate::field::{Field, FieldError, FixedPointCodec};
use crate::ids::{AggregatorId, ClientId};
use crate::inclusion::BlameParams;
use crate::params::{InclusionMode, ParamError, ProtocolParams, Validation};
use crate::rng::{derive_rng, derive_seed};
use crate::sim::{DelayModel, FaultPlan, SimConfig};
use crate::task::{make_tasks, HeterogeneityProfile, StepSchedule, TaskSet, TaskSpec};

use super::calibrate::{calibrate_blame, Calibration, CalibrationSettings};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid parameters: {0}")]
    Param(#[from] ParamError),
    #[error("dp: {0}")]
    Dp(#[from] DpError),
    #[error("codec: {0}")]
    Field(#[from] FieldError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub n_c: u32,
    pub n_a: u32,
    #[serde(default)]
    pub t_c: u32,
    #[serde(default)]
    pub t_a: u32,
    pub rho: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Vectors {
    pub dim: usize,
    pub mask_len: usize,
}

impl Default for Vectors {
    fn default() -> Self {
        Vectors { dim: 32, mask_len: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub scale_bits: u32,
    pub max_magnitude: f64,
    pub max_summands: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig { scale_bits: 24, max_magnitude: 65536.0, max_summands: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DpSection {
    Off {
        #[serde(default = "default_clip")]
        clip: f64,
    },
    /// Fixed total noise variance per cluster sum.
    Sigma2 {
        sigma2: f64,
        #[serde(default = "default_clip")]
        clip: f64,
    },
    Rdp {
        epsilon: f64,
        alpha: f64,
        #[serde(default = "default_clip")]
        clip: f64,
        tau_max: Option<u64>,
    },
    Dp {
        epsilon: f64,
        delta: f64,
        #[serde(default = "default_clip")]
        clip: f64,
        tau_max: Option<u64>,
    },
}

fn default_clip() -> f64 {
    1.0
}

impl Default for DpSection {
    fn default() -> Self {
        DpSection::Off { clip: default_clip() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub mu: f64,
    pub l: f64,
    pub offset: f64,
    pub profile: HeterogeneityProfile,
}

impl Default for TaskSection {
    fn default() -> Self {
        let t = TaskSpec::default();
        TaskSection { mu: t.mu, l: t.l, offset: t.offset, profile: t.profile }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepSection {
    /// `1 / L`.
    Suggested,
    Constant { gamma: f64 },
    /// `1 / (mu (round + t0))` with the task's `mu`.
    Decay { t0: f64 },
}

impl Default for StepSection {
    fn default() -> Self {
        StepSection::Suggested
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "script", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Script {
    Halt {
        #[serde(default)]
        from_round: u64,
    },
    Omit {
        #[serde(default)]
        allowed: Vec<u32>,
    },
    Fabricate,
    Tamper,
    Equivocate,
    Bias {
        favourites: Vec<u32>,
    },
}

impl Script {
    pub fn behavior(&self) -> Behavior {
        match self {
            Script::Halt { from_round } => Behavior::Halt { from_round: *from_round },
            Script::Omit { allowed } => Behavior::Omit { allowed: allowed.iter().map(|&a| AggregatorId(a)).collect() },
            Script::Fabricate => Behavior::FabricateModel,
            Script::Tamper => Behavior::TamperShares,
            Script::Equivocate => Behavior::EquivocateInclusion,
            Script::Bias { favourites } => {
                Behavior::BiasInclusion { favourites: favourites.iter().map(|&c| ClientId(c)).collect() }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByzantineSpec {
    pub id: u32,
    #[serde(flatten)]
    pub script: Script,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultSection {
    /// Number of clients that crash; drawn from the seed.
    pub crash_count: u32,
    pub crash_first_round: u64,
    /// Defaults to the last round.
    pub crash_last_round: Option<u64>,
    pub byzantine: Vec<ByzantineSpec>,
}

impl Default for FaultSection {
    fn default() -> Self {
        FaultSection { crash_count: 0, crash_first_round: 0, crash_last_round: None, byzantine: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BlameSection {
    Off,
    Fixed { expected_var: f64, sec_param: f64, delta_max: u64 },
    /// Monte Carlo estimate from the assignment and delay model.
    Calibrate {
        #[serde(default = "default_trials")]
        trials: u32,
    },
}

fn default_trials() -> u32 {
    40
}

impl Default for BlameSection {
    fn default() -> Self {
        BlameSection::Calibrate { trials: default_trials() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSection {
    pub fairness: bool,
    pub allow_small_rho: bool,
    pub allow_weak_resilience: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseSection {
    pub exact_rho: bool,
    pub single_serve: bool,
}

impl Default for DefenseSection {
    fn default() -> Self {
        DefenseSection { exact_rho: true, single_serve: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub horizon: u64,
    pub topology: Topology,
    #[serde(default)]
    pub vectors: Vectors,
    #[serde(default)]
    pub codec: CodecConfig,
    #[serde(default)]
    pub dp: DpSection,
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub step: StepSection,
    pub delays: Option<DelayModel>,
    #[serde(default)]
    pub faults: FaultSection,
    #[serde(default)]
    pub blame: BlameSection,
    #[serde(default = "default_inclusion")]
    pub inclusion: InclusionMode,
    #[serde(default)]
    pub validation: ValidationSection,
    #[serde(default)]
    pub defenses: DefenseSection,
    /// Keep plaintext noisy gradients (test oracles only).
    #[serde(default)]
    pub record_truth: bool,
    pub watchdog_ms: Option<f64>,
}

fn default_name() -> String {
    "run".into()
}

fn default_inclusion() -> InclusionMode {
    InclusionMode::Debiased
}

/// A validated configuration ready to simulate.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub sim: SimConfig,
    pub tasks: TaskSet,
}

impl RunConfig {
    pub fn new(n_c: u32, n_a: u32, t_c: u32, t_a: u32, rho: usize, horizon: u64) -> Self {
        RunConfig {
            name: default_name(),
            seed: 0,
            horizon,
            topology: Topology { n_c, n_a, t_c, t_a, rho },
            vectors: Vectors::default(),
            codec: CodecConfig::default(),
            dp: DpSection::default(),
            task: TaskSection::default(),
            step: StepSection::default(),
            delays: None,
            faults: FaultSection::default(),
            blame: BlameSection::Off,
            inclusion: InclusionMode::Debiased,
            validation: ValidationSection::default(),
            defenses: DefenseSection::default(),
            record_truth: false,
            watchdog_ms: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is serializable")
    }

    pub fn k(&self) -> usize {
        (self.topology.n_c / self.topology.n_a.max(1)) as usize
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            dim: self.vectors.dim,
            mu: self.task.mu,
            l: self.task.l,
            offset: self.task.offset,
            profile: self.task.profile.clone(),
        }
    }

    fn validation(&self) -> Validation {
        Validation {
            allow_weak_resilience: self.validation.allow_weak_resilience,
            allow_small_rho: self.validation.allow_small_rho,
            fairness: self.validation.fairness,
        }
    }

    /// Parameters with blaming switched off and no noise; enough for
    /// structural validation and calibration.
    fn base_params(&self) -> Result<ProtocolParams, ConfigError> {
        let t = &self.topology;
        let codec = FixedPointCodec::new(
            Field::default(),
            self.codec.scale_bits,
            self.codec.max_magnitude,
            self.codec.max_summands,
        )?;
        let step = match self.step {
            StepSection::Suggested => StepSchedule::Constant { gamma: 1.0 / self.task.l },
            StepSection::Constant { gamma } => StepSchedule::Constant { gamma },
            StepSection::Decay { t0 } => StepSchedule::Decay { mu: self.task.mu, t0 },
        };
        let params = ProtocolParams {
            n_c: t.n_c,
            n_a: t.n_a,
            t_c: t.t_c,
            t_a: t.t_a,
            rho: t.rho,
            dim: self.vectors.dim,
            mask_len: self.vectors.mask_len,
            codec,
            matrix_seed: derive_seed(self.seed, "public/matrix", &[]),
            assign_seed: derive_seed(self.seed, "public/assign", &[]),
            dp: DpConfig::disabled(default_clip(), t.rho),
            blame: BlameParams::off(),
            step,
            inclusion: self.inclusion,
            horizon: self.horizon,
        };
        params.validate(self.validation())?;
        Ok(params)
    }

    fn fault_plan(&self, n_c: u32) -> Result<FaultPlan, ConfigError> {
        let f = &self.faults;
        if f.crash_count > n_c {
            return Err(ConfigError::Invalid(format!("crash_count {} exceeds n_c", f.crash_count)));
        }
        let mut plan = FaultPlan::default();
        let mut rng = derive_rng(self.seed, "faults/crash", &[]);
        let last = f.crash_last_round.unwrap_or(self.horizon.saturating_sub(1)).max(f.crash_first_round);
        for i in sample(&mut rng, n_c as usize, f.crash_count as usize) {
            plan.crashes.insert(ClientId(i as u32 + 1), rng.gen_range(f.crash_first_round..=last));
        }
        let mut seen = BTreeSet::new();
        for b in &f.byzantine {
            if b.id == 0 || b.id > self.topology.n_a || !seen.insert(b.id) {
                return Err(ConfigError::Invalid(format!("bad Byzantine aggregator id {}", b.id)));
            }
            plan.byzantine.insert(AggregatorId(b.id), b.script.behavior());
        }
        if plan.byzantine.len() > self.topology.t_a as usize {
            return Err(ConfigError::Invalid(format!(
                "{} Byzantine aggregators but t_a = {}",
                plan.byzantine.len(),
                self.topology.t_a
            )));
        }
        Ok(plan)
    }

    /// Validates everything, calibrates blaming if asked and builds the
    /// simulator input.
    /// Runs the blame calibration for this topology without preparing a run.
    pub fn calibrate(&self, settings: &CalibrationSettings) -> Result<Calibration, ConfigError> {
        let params = self.base_params()?;
        let delays = self.delays.unwrap_or_else(|| DelayModel::for_params(&params));
        Ok(calibrate_blame(&params, &delays, settings))
    }

    pub fn prepare(&self) -> Result<Prepared, ConfigError> {
        let mut params = self.base_params()?;
        let delays = self.delays.unwrap_or_else(|| DelayModel::for_params(&params));
        let faults = self.fault_plan(params.n_c)?;
        params.blame = match &self.blame {
            BlameSection::Off => BlameParams::off(),
            BlameSection::Fixed { expected_var, sec_param, delta_max } => {
                BlameParams { expected_var: *expected_var, sec_param: *sec_param, delta_max: *delta_max }
            }
            BlameSection::Calibrate { trials } => {
                let settings = CalibrationSettings { trials: *trials, seed: self.seed, ..Default::default() };
                calibrate_blame(&params, &delays, &settings).params
            }
        };
        let delta_max = if params.blame.delta_max == u64::MAX { 0 } else { params.blame.delta_max };
        let k = params.k();
        let rho = params.rho;
        params.dp = match self.dp {
            DpSection::Off { clip } => DpConfig::disabled(clip, rho),
            DpSection::Sigma2 { sigma2, clip } => {
                if !(sigma2 >= 0.0 && sigma2.is_finite()) {
                    return Err(ConfigError::Invalid(format!("sigma2 = {sigma2}")));
                }
                DpConfig { sigma2, ..DpConfig::disabled(clip, rho) }
            }
            DpSection::Rdp { epsilon, alpha, clip, tau_max } => {
                DpConfig::from_rdp(epsilon, alpha, clip, tau_max.unwrap_or(self.horizon), rho, k, delta_max)?
            }
            DpSection::Dp { epsilon, delta, clip, tau_max } => {
                DpConfig::from_dp(epsilon, delta, clip, tau_max.unwrap_or(self.horizon), rho, k, delta_max)?
            }
        };
        params.validate(self.validation())?;
        let tasks = make_tasks(params.n_c, &self.task_spec(), self.seed);
        let sim = SimConfig {
            params,
            root_seed: self.seed,
            delays,
            faults,
            defenses: Defenses { exact_rho: self.defenses.exact_rho, single_serve: self.defenses.single_serve },
            record_truth: self.record_truth,
            watchdog_ms: self.watchdog_ms,
            wire_roundtrip: false,
        };
        Ok(Prepared { sim, tasks })
    }
}
