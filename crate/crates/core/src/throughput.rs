//! Monte-Carlo evaluation of the reconfiguration levels: one trial draws a
//! spectrum state and fading, senses, fuses, and lets every SU transmit.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_spectrum_state, sample_pu_activities, synthesize_into, ChannelModel, SignalFamily};
use crate::cooperation::{
    allocate_basic, allocate_best_snr, fuse_or, minimal_connecting_graph, random_positions, run_consensus_quiet,
    stable_step_size, Allocation, ConsensusState,
};
use crate::detectors::{
    calibrate_threshold_pd, decide, ed_statistic_samples, ofdm_surrogate_statistic, pd_statistic_for_channel,
    DetectorKind,
};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::mathcore::{draw_rayleigh_snr, RandomStream, SnrValue};
use crate::multiband::{kind_for_family, local_detection_target, optimize_problem, threshold_for_fa, BranchProblem, Constraint};

const TAG_ENV_ACTIVITY: u64 = 0xE1;
const TAG_ENV_POSITIONS: u64 = 0xE2;
const TAG_TRIAL: u64 = 0x7A;
const TAG_STATE: u64 = 1;
const TAG_FADING: u64 = 2;
const TAG_OBSERVATION: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconfigLevel {
    Basic,
    DeviceMjd,
    DeviceRmd,
    NetCentralized,
    NetDistributed,
}

impl ReconfigLevel {
    pub const ALL: [ReconfigLevel; 5] = [
        ReconfigLevel::Basic,
        ReconfigLevel::DeviceMjd,
        ReconfigLevel::DeviceRmd,
        ReconfigLevel::NetCentralized,
        ReconfigLevel::NetDistributed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReconfigLevel::Basic => "basic",
            ReconfigLevel::DeviceMjd => "device_mjd",
            ReconfigLevel::DeviceRmd => "device_rmd",
            ReconfigLevel::NetCentralized => "net_centralized",
            ReconfigLevel::NetDistributed => "net_distributed",
        }
    }

    pub fn is_network(self) -> bool {
        matches!(self, ReconfigLevel::NetCentralized | ReconfigLevel::NetDistributed)
    }

    /// Allocation strategy used by this level.
    pub fn allocation_mode(self) -> &'static str {
        if self.is_network() {
            "best_snr"
        } else {
            "round_robin"
        }
    }
}

/// Which requirement sets the detection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    FalseAlarm,
    #[default]
    Protection,
}

/// `Optimized` searches the window in `[1, window_cap]`; `Fixed` senses for
/// exactly `window_cap` samples and tunes only thresholds. The distributed
/// level always senses for `window_cap` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    #[default]
    Optimized,
    Fixed,
}

/// How SUs that pick the same idle channel share it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSharing {
    /// The channel's rate is split equally among the SUs on it.
    Split,
    /// Every SU on an idle channel gets its full link rate.
    #[default]
    Orthogonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusParams {
    pub iterations: usize,
    pub mu: f64,
}

impl Default for ConsensusParams {
    fn default() -> Self {
        Self { iterations: 10, mu: 0.25 }
    }
}

fn default_tx_snr_db() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub level: ReconfigLevel,
    pub k_count: usize,
    pub m_count: usize,
    pub i_per_su: usize,
    pub sample_budget: usize,
    pub window_cap: usize,
    pub target_fa: f64,
    pub protection_level: f64,
    pub mean_snr_db: f64,
    #[serde(default = "default_tx_snr_db")]
    pub su_tx_snr_db: f64,
    #[serde(default)]
    pub consensus: ConsensusParams,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub constraint: ConstraintMode,
    #[serde(default)]
    pub window_mode: WindowMode,
    #[serde(default)]
    pub sharing: RateSharing,
    /// Per-channel signal families; cycles pilot, pilot, unknown, unknown, OFDM
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub families: Option<Vec<SignalFamily>>,
    /// Fixed PU activities; drawn from U(0, 1) with the master seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pu_activities: Option<Vec<f64>>,
}

fn open_prob(field: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must lie in (0, 1), got {p}")))
    }
}

impl ScenarioConfig {
    /// The Fig. 9a operating point for `level`.
    pub fn reference(level: ReconfigLevel) -> Self {
        Self {
            level,
            k_count: 10,
            m_count: 5,
            i_per_su: 2,
            sample_budget: 10_000,
            window_cap: 2500,
            target_fa: 0.1,
            protection_level: 0.9,
            mean_snr_db: -15.0,
            su_tx_snr_db: 10.0,
            consensus: ConsensusParams::default(),
            trials: 2000,
            master_seed: 1,
            constraint: ConstraintMode::Protection,
            window_mode: WindowMode::Optimized,
            sharing: RateSharing::default(),
            families: None,
            pu_activities: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_count == 0 {
            return Err(Error::validation("k_count", "need at least one SU"));
        }
        if self.m_count == 0 {
            return Err(Error::validation("m_count", "need at least one channel"));
        }
        if self.i_per_su == 0 || self.i_per_su > self.m_count {
            return Err(Error::validation(
                "i_per_su",
                format!("must lie in [1, m_count = {}], got {}", self.m_count, self.i_per_su),
            ));
        }
        if self.window_cap == 0 {
            return Err(Error::validation("window_cap", "must be at least 1"));
        }
        if self.sample_budget < self.window_cap {
            return Err(Error::validation(
                "sample_budget",
                format!("must be at least window_cap = {}", self.window_cap),
            ));
        }
        if self.i_per_su * self.window_cap > self.sample_budget {
            return Err(Error::validation(
                "window_cap",
                format!(
                    "{} channels of {} samples exceed the budget of {}",
                    self.i_per_su, self.window_cap, self.sample_budget
                ),
            ));
        }
        open_prob("target_fa", self.target_fa)?;
        open_prob("protection_level", self.protection_level)?;
        if !self.mean_snr_db.is_finite() {
            return Err(Error::validation("mean_snr_db", "must be finite"));
        }
        if !self.su_tx_snr_db.is_finite() {
            return Err(Error::validation("su_tx_snr_db", "must be finite"));
        }
        if !(self.consensus.mu.is_finite() && self.consensus.mu >= 0.0) {
            return Err(Error::validation("consensus.mu", "must be finite and non-negative"));
        }
        if self.trials == 0 {
            return Err(Error::validation("trials", "must be at least 1"));
        }
        if let Some(f) = &self.families {
            if f.len() != self.m_count {
                return Err(Error::validation(
                    "families",
                    format!("expected {} entries, got {}", self.m_count, f.len()),
                ));
            }
            for fam in f {
                fam.validate().map_err(|e| Error::validation("families", e.to_string()))?;
            }
        }
        if let Some(p) = &self.pu_activities {
            if p.len() != self.m_count {
                return Err(Error::validation(
                    "pu_activities",
                    format!("expected {} entries, got {}", self.m_count, p.len()),
                ));
            }
            if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::validation("pu_activities", format!("{bad} is not a probability")));
            }
        }
        Ok(())
    }

    pub fn families(&self) -> Vec<SignalFamily> {
        self.families.clone().unwrap_or_else(|| {
            const CYCLE: [SignalFamily; 5] = [
                SignalFamily::Pilot { theta: 0.5 },
                SignalFamily::Pilot { theta: 0.5 },
                SignalFamily::Unknown,
                SignalFamily::Unknown,
                SignalFamily::OfdmCp,
            ];
            (0..self.m_count).map(|m| CYCLE[m % CYCLE.len()]).collect()
        })
    }

    /// Threshold regime actually applied at this level.
    pub fn constraint_label(&self) -> &'static str {
        match self.constraint {
            ConstraintMode::FalseAlarm => "false_alarm",
            ConstraintMode::Protection => "protection",
        }
    }

    /// True when detection thresholds are chosen to meet `protection_level`.
    pub fn is_protection_constrained(&self) -> bool {
        self.constraint == ConstraintMode::Protection
    }

    /// Level name with the per-SU channel count, e.g. `net_centralized/i2`.
    pub fn level_label(&self) -> String {
        format!("{}/i{}", self.level.name(), self.i_per_su)
    }
}

/// What stays fixed across the trials of an experiment: channels with their
/// PU activities, and SU positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub channels: Vec<ChannelModel>,
    pub positions: Vec<(f64, f64)>,
}

impl Environment {
    pub fn for_config(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let root = RandomStream::new(config.master_seed, 0);
        let activities = match &config.pu_activities {
            Some(p) => p.clone(),
            None => sample_pu_activities(&mut root.fork(TAG_ENV_ACTIVITY).rng(), config.m_count)?,
        };
        let channels = activities
            .iter()
            .zip(config.families())
            .enumerate()
            .map(|(m, (&p, fam))| ChannelModel::new(m, p, fam))
            .collect::<Result<Vec<_>>>()?;
        let positions = random_positions(&mut root.fork(TAG_ENV_POSITIONS).rng(), config.k_count);
        Ok(Self { channels, positions })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelOutcome {
    pub busy: bool,
    /// At least one SU sensed the channel.
    pub sensed: bool,
    /// Network-level verdict: OR fusion for centralized levels; for the
    /// distributed level, busy only if every sensing SU said busy.
    pub declared_busy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub throughput: f64,
    pub channels: Vec<ChannelOutcome>,
    /// A detector could not be calibrated; the trial earns nothing.
    pub infeasible: bool,
    /// The consensus step size had to be reduced for stability.
    pub mu_clamped: bool,
}

#[derive(Debug, Clone, Copy)]
struct Branch {
    kind: DetectorKind,
    window: usize,
    threshold: f64,
}

/// A validated config bound to its environment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub env: Environment,
    /// Offset separating the trial streams of different sweep points.
    pub stream_offset: u64,
    rate: f64,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let env = Environment::for_config(&config)?;
        Self::with_environment(config, env, 0)
    }

    pub fn with_environment(config: ScenarioConfig, env: Environment, stream_offset: u64) -> Result<Self> {
        config.validate()?;
        if env.channels.len() != config.m_count || env.positions.len() != config.k_count {
            return Err(Error::invalid("environment does not match the scenario dimensions"));
        }
        let rate = (1.0 + SnrValue::from_db(config.su_tx_snr_db)?.linear()).log2();
        Ok(Self {
            config,
            env,
            stream_offset,
            rate,
        })
    }

    /// Link rate `log2(1 + snr_tx)` of one SU transmission.
    pub fn link_rate(&self) -> f64 {
        self.rate
    }

    fn trial_stream(&self, trial_index: usize) -> RandomStream {
        RandomStream::new(self.config.master_seed, 0).fork_path(&[TAG_TRIAL, self.stream_offset, trial_index as u64])
    }

    fn sensing_kind(&self, channel: usize) -> DetectorKind {
        match self.config.level {
            ReconfigLevel::Basic | ReconfigLevel::DeviceMjd => DetectorKind::Energy,
            _ => kind_for_family(self.env.channels[channel].family),
        }
    }

    fn plan_branch(&self, channel: usize, snr: f64, cofusers: usize) -> Result<Branch> {
        let cfg = &self.config;
        let kind = self.sensing_kind(channel);
        let cap = cfg.window_cap;
        match cfg.level {
            // Basic thresholds are shared across an SU's channels and fixed
            // after planning.
            ReconfigLevel::Basic | ReconfigLevel::NetDistributed => Ok(Branch {
                kind,
                window: cap,
                // Set after consensus.
                threshold: f64::NAN,
            }),
            _ => {
                let constraint = match cfg.constraint {
                    ConstraintMode::FalseAlarm => Constraint::TargetFa(cfg.target_fa),
                    ConstraintMode::Protection => Constraint::ProtectionLevel {
                        p_d_global: cfg.protection_level,
                        cofusers,
                    },
                };
                let problem = BranchProblem::new(
                    &self.env.channels[channel],
                    snr,
                    kind,
                    cap,
                    cfg.sample_budget,
                    constraint,
                    SnrValue::from_db(cfg.su_tx_snr_db)?.linear(),
                )?;
                let opt = match cfg.window_mode {
                    WindowMode::Optimized => optimize_problem(&problem)?,
                    WindowMode::Fixed => problem.evaluate(cap)?,
                };
                Ok(Branch {
                    kind,
                    window: opt.window,
                    threshold: opt.threshold,
                })
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn statistic(
        &self,
        stream: &RandomStream,
        su: usize,
        channel: usize,
        branch: &Branch,
        busy: bool,
        snr: f64,
        buf: &mut Vec<Complex64>,
    ) -> Result<f64> {
        let mut rng = stream.fork_path(&[TAG_OBSERVATION, su as u64, channel as u64]).rng();
        let model = &self.env.channels[channel];
        match branch.kind {
            DetectorKind::Ofdm => Ok(ofdm_surrogate_statistic(
                &mut rng,
                branch.window,
                snr,
                crate::channel::Hypothesis::from_busy(busy),
            )),
            kind => {
                let snr = SnrValue::from_linear(snr)?;
                if model.family == SignalFamily::OfdmCp {
                    // An energy detector sees an OFDM waveform as Gaussian.
                    let gaussian = ChannelModel::new(model.index, model.pu_activity, SignalFamily::Unknown)?;
                    synthesize_into(&mut rng, &gaussian, busy, snr, branch.window, buf)?;
                } else {
                    synthesize_into(&mut rng, model, busy, snr, branch.window, buf)?;
                }
                match kind {
                    DetectorKind::Pilot { .. } => pd_statistic_for_channel(buf, channel),
                    _ => ed_statistic_samples(buf),
                }
            }
        }
    }

    /// Run one trial. Errors other than calibration infeasibility propagate.
    pub fn run_trial(&self, trial_index: usize) -> Result<TrialOutcome> {
        let cfg = &self.config;
        let (k_count, m_count) = (cfg.k_count, cfg.m_count);
        let stream = self.trial_stream(trial_index);
        let state = draw_spectrum_state(&mut stream.fork(TAG_STATE).rng(), &self.env.channels)?;
        let mean = SnrValue::from_db(cfg.mean_snr_db)?;
        let mut fading = stream.fork(TAG_FADING).rng();
        let snr: Vec<Vec<f64>> = (0..k_count)
            .map(|_| (0..m_count).map(|_| draw_rayleigh_snr(&mut fading, mean).linear()).collect())
            .collect();
        let allocation = if cfg.level.is_network() {
            allocate_best_snr(&snr, cfg.i_per_su)?
        } else {
            allocate_basic(k_count, m_count, cfg.i_per_su)?
        };

        let mut plans: Vec<Vec<Option<Branch>>> = vec![vec![None; m_count]; k_count];
        let mut infeasible = false;
        'plan: for (k, list) in allocation.per_su.iter().enumerate() {
            for &m in list {
                match self.plan_branch(m, snr[k][m], allocation.per_channel[m].len()) {
                    Ok(b) => plans[k][m] = Some(b),
                    Err(Error::Infeasible(_)) => {
                        infeasible = true;
                        break 'plan;
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        if !infeasible && cfg.level == ReconfigLevel::Basic {
            if let Err(e) = self.share_basic_thresholds(&allocation, &snr, &mut plans) {
                match e {
                    Error::Infeasible(_) => infeasible = true,
                    e => return Err(e),
                }
            }
        }

        let mut buf = Vec::new();
        let mut stats = vec![vec![f64::NAN; m_count]; k_count];
        if !infeasible {
            for (k, list) in allocation.per_su.iter().enumerate() {
                for &m in list {
                    let branch = plans[k][m].as_ref().expect("planned");
                    stats[k][m] = self.statistic(&stream, k, m, branch, state.occupancy[m], snr[k][m], &mut buf)?;
                }
            }
        }

        // view[k][m]: whether SU k considers channel m busy.
        let mut view = vec![vec![true; m_count]; k_count];
        let mut mu_clamped = false;
        let mut channels: Vec<ChannelOutcome> = (0..m_count)
            .map(|m| ChannelOutcome {
                busy: state.occupancy[m],
                sensed: !allocation.per_channel[m].is_empty(),
                declared_busy: true,
            })
            .collect();

        if !infeasible {
            if cfg.level == ReconfigLevel::NetDistributed {
                match self.distributed_decisions(&allocation, &plans, &stats, &snr, &mut view) {
                    Ok(clamped) => mu_clamped = clamped,
                    Err(Error::Infeasible(_)) => infeasible = true,
                    Err(e) => return Err(e),
                }
                for (m, out) in channels.iter_mut().enumerate() {
                    let members = &allocation.per_channel[m];
                    out.declared_busy = members.iter().all(|&k| view[k][m]);
                }
            } else {
                for (m, out) in channels.iter_mut().enumerate() {
                    let members = &allocation.per_channel[m];
                    if members.is_empty() {
                        continue;
                    }
                    let local: Vec<_> = members
                        .iter()
                        .map(|&k| decide(stats[k][m], plans[k][m].as_ref().expect("planned").threshold))
                        .collect();
                    out.declared_busy = fuse_or(&local)?.is_busy();
                    for &k in members {
                        view[k][m] = out.declared_busy;
                    }
                }
            }
        }

        if infeasible {
            for out in channels.iter_mut() {
                out.declared_busy = true;
            }
            return Ok(TrialOutcome {
                throughput: 0.0,
                channels,
                infeasible,
                mu_clamped,
            });
        }

        // Each SU takes the lowest-index channel it believes idle.
        let mut users: Vec<Vec<usize>> = vec![Vec::new(); m_count];
        for (k, list) in allocation.per_su.iter().enumerate() {
            if let Some(&m) = list.iter().find(|&&m| !view[k][m]) {
                users[m].push(k);
            }
        }
        let tau = cfg.sample_budget as f64;
        let mut throughput = 0.0;
        for (m, on) in users.iter().enumerate() {
            if on.is_empty() || state.occupancy[m] {
                continue;
            }
            let earned: f64 = on
                .iter()
                .map(|&k| (1.0 - plans[k][m].as_ref().expect("planned").window as f64 / tau) * self.rate)
                .sum();
            throughput += match cfg.sharing {
                RateSharing::Split => earned / on.len() as f64,
                RateSharing::Orthogonal => earned,
            };
        }
        Ok(TrialOutcome {
            throughput,
            channels,
            infeasible: false,
            mu_clamped,
        })
    }

    /// One energy threshold per SU for all its channels. Under the protection
    /// constraint it is the lowest of the per-channel thresholds meeting the
    /// local detection target, so every channel is protected.
    fn share_basic_thresholds(
        &self,
        allocation: &Allocation,
        snr: &[Vec<f64>],
        plans: &mut [Vec<Option<Branch>>],
    ) -> Result<()> {
        let cfg = &self.config;
        let kind = DetectorKind::Energy;
        let fa_threshold = threshold_for_fa(kind, cfg.window_cap, cfg.target_fa)?;
        for (k, list) in allocation.per_su.iter().enumerate() {
            let shared = match cfg.constraint {
                ConstraintMode::FalseAlarm => fa_threshold,
                ConstraintMode::Protection => {
                    let mut t = f64::INFINITY;
                    for &m in list {
                        let target = local_detection_target(cfg.protection_level, allocation.per_channel[m].len());
                        t = t.min(calibrate_threshold_pd(kind, cfg.window_cap, snr[k][m], target)?.threshold);
                    }
                    t
                }
            };
            for &m in list {
                if let Some(b) = plans[k][m].as_mut() {
                    b.threshold = shared;
                }
            }
        }
        Ok(())
    }

    /// Consensus on each channel's statistics followed by per-SU decisions.
    /// Returns whether any step size was clamped.
    fn distributed_decisions(
        &self,
        allocation: &Allocation,
        plans: &[Vec<Option<Branch>>],
        stats: &[Vec<f64>],
        snr: &[Vec<f64>],
        view: &mut [Vec<bool>],
    ) -> Result<bool> {
        let cfg = &self.config;
        let groups: Vec<Vec<usize>> = allocation.per_channel.iter().filter(|g| !g.is_empty()).cloned().collect();
        let (graph, _radius) = minimal_connecting_graph(&self.env.positions, &groups);
        let mut clamped = false;
        for (m, members) in allocation.per_channel.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let kind = plans[members[0]][m].as_ref().expect("planned").kind;
            let window = cfg.window_cap;
            let (mu, was_clamped) = stable_step_size(cfg.consensus.mu, &graph, members);
            clamped |= was_clamped;
            let values: Vec<f64> = members.iter().map(|&k| stats[k][m]).collect();
            let statistic = run_consensus_quiet(
                &ConsensusState::new(vec![(m, members.clone(), values)], mu, &graph)?,
                &graph,
                cfg.consensus.iterations,
            )?;
            let thresholds: Vec<f64> = match cfg.constraint {
                ConstraintMode::FalseAlarm => {
                    let t = threshold_for_fa(kind, window, cfg.target_fa)?;
                    vec![t; members.len()]
                }
                ConstraintMode::Protection => {
                    // The averaged statistic's mean follows the same weights
                    // as an average of the quantity it is linear in.
                    let level = |s: f64| match kind {
                        DetectorKind::Pilot { .. } => s.sqrt(),
                        _ => s,
                    };
                    let levels: Vec<f64> = members.iter().map(|&k| level(snr[k][m])).collect();
                    let averaged = run_consensus_quiet(
                        &ConsensusState::new(vec![(m, members.clone(), levels)], mu, &graph)?,
                        &graph,
                        cfg.consensus.iterations,
                    )?;
                    averaged.groups[0]
                        .values
                        .iter()
                        .map(|&v| {
                            let s = match kind {
                                DetectorKind::Pilot { .. } => v * v,
                                _ => v,
                            };
                            calibrate_threshold_pd(kind, window, s.max(0.0), cfg.protection_level).map(|c| c.threshold)
                        })
                        .collect::<Result<_>>()?
                }
            };
            for ((&k, &v), t) in members.iter().zip(&statistic.groups[0].values).zip(thresholds) {
                view[k][m] = decide(v, t).is_busy();
            }
        }
        Ok(clamped)
    }

    /// All trials, collected in trial order.
    pub fn run_trials(&self, exec: Execution) -> Result<Vec<TrialOutcome>> {
        map_indexed(exec, self.config.trials, |t| self.run_trial(t))
            .into_iter()
            .collect()
    }

    pub fn run(&self, exec: Execution) -> Result<ThroughputReport> {
        let outcomes = self.run_trials(exec)?;
        Ok(ThroughputReport::from_outcomes(&self.config, &outcomes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    /// Global detection probability over trials where the channel was busy
    /// and sensed; `None` if there were none.
    pub p_d: Option<f64>,
    pub p_fa: Option<f64>,
    pub busy_trials: usize,
    pub idle_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub level: ReconfigLevel,
    pub i_per_su: usize,
    pub trials: usize,
    /// Bits/s/Hz summed over SUs, averaged over trials.
    pub mean_throughput: f64,
    /// Half-width of the normal 95% confidence interval of the mean.
    pub ci95: f64,
    pub per_channel: Vec<ChannelMetrics>,
    pub global_pd_min: Option<f64>,
    pub global_pfa_max: Option<f64>,
    /// Fraction of sensed busy channel-trials declared idle.
    pub missed_detection_rate: Option<f64>,
    pub constraint_mode: String,
    pub allocation_mode: String,
    pub infeasible_trials: usize,
    pub mu_clamped_trials: usize,
}

/// Pairwise summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ThroughputReport {
    pub fn from_outcomes(config: &ScenarioConfig, outcomes: &[TrialOutcome]) -> Self {
        let n = outcomes.len();
        let values: Vec<f64> = outcomes.iter().map(|o| o.throughput).collect();
        let mean = if n == 0 { 0.0 } else { pairwise_sum(&values) / n as f64 };
        let ci95 = if n > 1 {
            let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
            1.96 * (pairwise_sum(&dev) / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        let m_count = outcomes.first().map_or(config.m_count, |o| o.channels.len());
        let mut detected = vec![0usize; m_count];
        let mut busy = vec![0usize; m_count];
        let mut alarms = vec![0usize; m_count];
        let mut idle = vec![0usize; m_count];
        for o in outcomes.iter().filter(|o| !o.infeasible) {
            for (m, c) in o.channels.iter().enumerate().filter(|(_, c)| c.sensed) {
                if c.busy {
                    busy[m] += 1;
                    detected[m] += c.declared_busy as usize;
                } else {
                    idle[m] += 1;
                    alarms[m] += c.declared_busy as usize;
                }
            }
        }
        let per_channel: Vec<ChannelMetrics> = (0..m_count)
            .map(|m| ChannelMetrics {
                p_d: ratio(detected[m], busy[m]),
                p_fa: ratio(alarms[m], idle[m]),
                busy_trials: busy[m],
                idle_trials: idle[m],
            })
            .collect();
        let fold = |xs: &mut dyn Iterator<Item = f64>, min: bool| {
            xs.reduce(|a, b| if min { a.min(b) } else { a.max(b) })
        };
        let global_pd_min = fold(&mut per_channel.iter().filter_map(|c| c.p_d), true);
        let global_pfa_max = fold(&mut per_channel.iter().filter_map(|c| c.p_fa), false);
        let total_busy: usize = busy.iter().sum();
        let total_detected: usize = detected.iter().sum();
        Self {
            level: config.level,
            i_per_su: config.i_per_su,
            trials: n,
            mean_throughput: mean,
            ci95,
            per_channel,
            global_pd_min,
            global_pfa_max,
            missed_detection_rate: ratio(total_busy - total_detected, total_busy),
            constraint_mode: config.constraint_label().to_string(),
            allocation_mode: config.level.allocation_mode().to_string(),
            infeasible_trials: outcomes.iter().filter(|o| o.infeasible).count(),
            mu_clamped_trials: outcomes.iter().filter(|o| o.mu_clamped).count(),
        }
    }
}

/// One trial of `config` in its own environment.
pub fn run_trial(config: &ScenarioConfig, trial_index: usize) -> Result<TrialOutcome> {
    Scenario::new(config.clone())?.run_trial(trial_index)
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ThroughputReport> {
    run_scenario_with(config, Execution::default())
}

pub fn run_scenario_with(config: &ScenarioConfig, exec: Execution) -> Result<ThroughputReport> {
    Scenario::new(config.clone())?.run(exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    ProtectionLevel(Vec<f64>),
    MeanSnrDb(Vec<f64>),
    IPerSu(Vec<usize>),
}

impl SweepAxis {
    pub fn len(&self) -> usize {
        match self {
            SweepAxis::ProtectionLevel(v) | SweepAxis::MeanSnrDb(v) => v.len(),
            SweepAxis::IPerSu(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn point(&self, config: &ScenarioConfig, i: usize) -> (f64, ScenarioConfig) {
        let mut c = config.clone();
        let value = match self {
            SweepAxis::ProtectionLevel(v) => {
                c.protection_level = v[i];
                v[i]
            }
            SweepAxis::MeanSnrDb(v) => {
                c.mean_snr_db = v[i];
                v[i]
            }
            SweepAxis::IPerSu(v) => {
                c.i_per_su = v[i];
                v[i] as f64
            }
        };
        (value, c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub label: String,
    pub report: ThroughputReport,
}

/// One report per grid point. Every point shares the environment drawn from
/// the master seed; point `i` uses trial streams offset by `i`, so two sweeps
/// over the same grid see identical spectrum states and fading.
pub fn sweep(config: &ScenarioConfig, axis: &SweepAxis, exec: Execution) -> Result<Vec<SweepRow>> {
    if axis.is_empty() {
        return Err(Error::validation("axis", "sweep grid is empty"));
    }
    let env = Environment::for_config(config)?;
    (0..axis.len())
        .map(|i| {
            let (axis_value, point) = axis.point(config, i);
            let label = point.level_label();
            let scenario = Scenario::with_environment(point, env.clone(), i as u64)?;
            Ok(SweepRow {
                axis_value,
                label,
                report: scenario.run(exec)?,
            })
        })
        .collect()
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV: `axis_value,level,mean_throughput,ci95,global_pd_min,global_pfa_max,constraint_mode`.
/// Missing probabilities are written as empty fields.
pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "axis_value,level,mean_throughput,ci95,global_pd_min,global_pfa_max,constraint_mode")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.axis_value,
            r.label,
            r.report.mean_throughput,
            r.report.ci95,
            opt_field(r.report.global_pd_min),
            opt_field(r.report.global_pfa_max),
            r.report.constraint_mode
        )?;
    }
    Ok(())
}
