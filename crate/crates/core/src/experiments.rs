//! Run plans: configuration documents, compiled-in figure presets, and the
//! CSV/manifest artifacts each plan produces.
//!
//! A configuration document is TOML in one of these shapes:
//!
//! ```toml
//! preset = "fig9a_protection"
//! ```
//!
//! ```toml
//! [scenario]            # every ScenarioConfig field
//! level = "net_centralized"
//! # ...
//! [sweep]               # optional; without it the scenario runs once
//! axis = "protection_level"   # or "mean_snr_db", "i_per_su"
//! values = [0.8, 0.9]
//! levels = ["basic", "net_centralized"]   # optional
//! i_values = [1, 2]                       # optional
//! ```
//!
//! ```toml
//! [scenario]
//! # ...
//! [consensus_trace]
//! channels = [1, 2]     # zero-based
//! ```
//!
//! ```toml
//! [roc]
//! window = 1000
//! p_fa = 0.1
//! theta = 0.5
//! snr_db = [-20.0, -15.0]
//! trials = 2000
//! master_seed = 7
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::channel::{synthesize_into, ChannelModel, Hypothesis, SignalFamily};
use crate::cooperation::{
    allocate_best_snr, minimal_connecting_graph, run_consensus, stable_step_size, write_trace_csv, ConsensusState,
    TraceRow,
};
use crate::detectors::{
    decide, ed_statistic_samples, ofdm_surrogate_statistic, pd_statistic_for_channel, roc,
    DetectorKind,
};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::mathcore::{draw_rayleigh_snr, RandomStream, SnrValue};
use crate::multiband::{kind_for_family, threshold_for_fa};
use crate::throughput::{
    sweep, write_sweep_csv, ConstraintMode, Environment, ReconfigLevel, ScenarioConfig, SweepAxis, SweepRow,
    WindowMode,
};

/// Version of the CSV layouts, recorded in every manifest.
pub const CSV_SCHEMA_VERSION: u32 = 1;

const TAG_ROC: u64 = 0x40C;
const TAG_TRACE: u64 = 0x10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Fig4Roc,
    Fig9aProtection,
    Fig9bSnr,
    Fig10Consensus,
}

impl PresetName {
    pub const ALL: [PresetName; 4] = [
        PresetName::Fig4Roc,
        PresetName::Fig9aProtection,
        PresetName::Fig9bSnr,
        PresetName::Fig10Consensus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Fig4Roc => "fig4_roc",
            PresetName::Fig9aProtection => "fig9a_protection",
            PresetName::Fig9bSnr => "fig9b_snr",
            PresetName::Fig10Consensus => "fig10_consensus",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<_> = PresetName::ALL.iter().map(|p| p.as_str()).collect();
                Error::validation("preset", format!("unknown preset `{s}`; expected one of {}", known.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RocPlan {
    pub window: usize,
    pub p_fa: f64,
    /// Pilot power fraction of the PD curve.
    pub theta: f64,
    pub snr_db: Vec<f64>,
    /// Monte-Carlo trials per (SNR, detector) point for the empirical column.
    pub trials: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisName {
    ProtectionLevel,
    MeanSnrDb,
    IPerSu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: AxisName,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<ReconfigLevel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_values: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub base: ScenarioConfig,
    pub axis: SweepAxis,
    pub levels: Vec<ReconfigLevel>,
    pub i_values: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    /// Zero-based channels whose consensus is traced.
    pub channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusPlan {
    /// Sensing window is `window_cap`; the number of iterations and the step
    /// size come from `consensus`.
    pub base: ScenarioConfig,
    pub channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Plan {
    Roc(RocPlan),
    Sweep(SweepPlan),
    Consensus(ConsensusPlan),
}

/// Raw document shape; see the module docs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scenario: Option<ScenarioConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    consensus_trace: Option<TraceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    roc: Option<RocPlan>,
}

fn fig9a_base() -> ScenarioConfig {
    ScenarioConfig {
        trials: 2000,
        ..ScenarioConfig::reference(ReconfigLevel::Basic)
    }
}

/// Parameter sets of the reproduced figures.
pub fn preset(name: PresetName) -> Plan {
    match name {
        PresetName::Fig4Roc => Plan::Roc(RocPlan {
            window: 1000,
            p_fa: 0.1,
            theta: 0.5,
            snr_db: (-25..=0).map(f64::from).collect(),
            trials: 2000,
            master_seed: 1,
        }),
        PresetName::Fig9aProtection => Plan::Sweep(SweepPlan {
            base: fig9a_base(),
            axis: SweepAxis::ProtectionLevel(vec![0.80, 0.85, 0.90, 0.95, 0.99]),
            levels: vec![
                ReconfigLevel::Basic,
                ReconfigLevel::DeviceMjd,
                ReconfigLevel::DeviceRmd,
                ReconfigLevel::NetCentralized,
            ],
            i_values: vec![1, 2],
        }),
        PresetName::Fig9bSnr => Plan::Sweep(SweepPlan {
            base: ScenarioConfig {
                level: ReconfigLevel::NetCentralized,
                window_cap: 5000,
                window_mode: WindowMode::Fixed,
                constraint: ConstraintMode::FalseAlarm,
                target_fa: 0.1,
                ..fig9a_base()
            },
            axis: SweepAxis::MeanSnrDb(vec![-20.0, -15.0, -10.0, -5.0]),
            levels: vec![ReconfigLevel::NetCentralized, ReconfigLevel::NetDistributed],
            i_values: vec![2],
        }),
        PresetName::Fig10Consensus => Plan::Consensus(ConsensusPlan {
            base: ScenarioConfig {
                level: ReconfigLevel::NetDistributed,
                window_cap: 1000,
                consensus: crate::throughput::ConsensusParams { iterations: 30, mu: 0.1 },
                trials: 1,
                ..fig9a_base()
            },
            // f2 carries a pilot, f3 an unknown waveform.
            channels: vec![1, 2],
        }),
    }
}

impl Plan {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Plan::Roc(_) => "roc",
            Plan::Sweep(_) => "sweep",
            Plan::Consensus(_) => "consensus",
        }
    }

    pub fn master_seed(&self) -> u64 {
        match self {
            Plan::Roc(p) => p.master_seed,
            Plan::Sweep(p) => p.base.master_seed,
            Plan::Consensus(p) => p.base.master_seed,
        }
    }

    pub fn trials(&self) -> usize {
        match self {
            Plan::Roc(p) => p.trials,
            Plan::Sweep(p) => p.base.trials,
            Plan::Consensus(p) => p.base.trials,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Plan::Roc(p) => p.master_seed = seed,
            Plan::Sweep(p) => p.base.master_seed = seed,
            Plan::Consensus(p) => p.base.master_seed = seed,
        }
    }

    pub fn set_trials(&mut self, trials: usize) {
        match self {
            Plan::Roc(p) => p.trials = trials,
            Plan::Sweep(p) => p.base.trials = trials,
            Plan::Consensus(p) => p.base.trials = trials,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Plan::Roc(p) => {
                if p.window == 0 {
                    return Err(Error::validation("roc.window", "must be at least 1"));
                }
                if !(p.p_fa > 0.0 && p.p_fa < 1.0) {
                    return Err(Error::validation("roc.p_fa", "must lie in (0, 1)"));
                }
                if !(p.theta > 0.0 && p.theta <= 1.0) {
                    return Err(Error::validation("roc.theta", "must lie in (0, 1]"));
                }
                if p.snr_db.is_empty() || p.snr_db.iter().any(|s| !s.is_finite()) {
                    return Err(Error::validation("roc.snr_db", "needs at least one finite value"));
                }
                if p.trials == 0 {
                    return Err(Error::validation("trials", "must be at least 1"));
                }
                Ok(())
            }
            Plan::Sweep(p) => {
                p.base.validate()?;
                if p.levels.is_empty() {
                    return Err(Error::validation("sweep.levels", "needs at least one level"));
                }
                if p.i_values.is_empty() {
                    return Err(Error::validation("sweep.i_values", "needs at least one value"));
                }
                if p.axis.is_empty() {
                    return Err(Error::validation("sweep.values", "sweep grid is empty"));
                }
                for &i in &p.i_values {
                    let base = ScenarioConfig {
                        i_per_su: i,
                        ..p.base.clone()
                    };
                    for cfg in axis_points(&base, &p.axis) {
                        cfg.validate()?;
                    }
                }
                Ok(())
            }
            Plan::Consensus(p) => {
                p.base.validate()?;
                if p.channels.is_empty() {
                    return Err(Error::validation("consensus_trace.channels", "needs at least one channel"));
                }
                if let Some(&m) = p.channels.iter().find(|&&m| m >= p.base.m_count) {
                    return Err(Error::validation(
                        "consensus_trace.channels",
                        format!("channel {m} is outside 0..{}", p.base.m_count),
                    ));
                }
                let families = p.base.families();
                if p.channels.iter().any(|&m| families[m] == SignalFamily::OfdmCp) {
                    return Err(Error::validation(
                        "consensus_trace.channels",
                        "OFDM channels have no sample-level statistic to trace",
                    ));
                }
                Ok(())
            }
        }
    }
}

fn axis_points(base: &ScenarioConfig, axis: &SweepAxis) -> Vec<ScenarioConfig> {
    match axis {
        SweepAxis::ProtectionLevel(v) => v
            .iter()
            .map(|&p| ScenarioConfig {
                protection_level: p,
                ..base.clone()
            })
            .collect(),
        SweepAxis::MeanSnrDb(v) => v
            .iter()
            .map(|&s| ScenarioConfig {
                mean_snr_db: s,
                ..base.clone()
            })
            .collect(),
        SweepAxis::IPerSu(v) => v
            .iter()
            .map(|&i| ScenarioConfig {
                i_per_su: i,
                ..base.clone()
            })
            .collect(),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn parse_document(text: &str) -> Result<Document> {
    if text.trim().is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "empty configuration".into(),
        });
    }
    toml::from_str::<Document>(text).map_err(|e| Error::Parse {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })
}

fn sweep_axis(spec: &SweepSpec) -> Result<SweepAxis> {
    Ok(match spec.axis {
        AxisName::ProtectionLevel => SweepAxis::ProtectionLevel(spec.values.clone()),
        AxisName::MeanSnrDb => SweepAxis::MeanSnrDb(spec.values.clone()),
        AxisName::IPerSu => SweepAxis::IPerSu(
            spec.values
                .iter()
                .map(|&v| {
                    if v >= 1.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
                        Ok(v as usize)
                    } else {
                        Err(Error::validation("sweep.values", format!("{v} is not a channel count")))
                    }
                })
                .collect::<Result<_>>()?,
        ),
    })
}

/// Parse and validate a configuration document.
pub fn parse_config(text: &str) -> Result<Plan> {
    let doc = parse_document(text)?;
    let plan = match doc {
        Document {
            preset: Some(name),
            scenario: None,
            sweep: None,
            consensus_trace: None,
            roc: None,
        } => preset(name.parse()?),
        Document {
            preset: None,
            scenario: None,
            sweep: None,
            consensus_trace: None,
            roc: Some(roc),
        } => Plan::Roc(roc),
        Document {
            preset: None,
            scenario: Some(base),
            sweep,
            consensus_trace: None,
            roc: None,
        } => {
            let (axis, levels, i_values) = match sweep {
                Some(spec) => (
                    sweep_axis(&spec)?,
                    spec.levels.unwrap_or_else(|| vec![base.level]),
                    spec.i_values.unwrap_or_else(|| vec![base.i_per_su]),
                ),
                None => (
                    SweepAxis::ProtectionLevel(vec![base.protection_level]),
                    vec![base.level],
                    vec![base.i_per_su],
                ),
            };
            Plan::Sweep(SweepPlan {
                base,
                axis,
                levels,
                i_values,
            })
        }
        Document {
            preset: None,
            scenario: Some(base),
            sweep: None,
            consensus_trace: Some(t),
            roc: None,
        } => Plan::Consensus(ConsensusPlan {
            base,
            channels: t.channels,
        }),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "expected `preset`, `[roc]`, `[scenario]` with optional `[sweep]`, or `[scenario]` with \
                          `[consensus_trace]`"
                    .into(),
            })
        }
    };
    plan.validate()?;
    Ok(plan)
}

pub fn parse_config_file(path: &Path) -> Result<Plan> {
    parse_config(&fs::read_to_string(path)?)
}

/// Parse a document holding only a `[scenario]` table.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let doc = parse_document(text)?;
    match doc {
        Document {
            scenario: Some(cfg),
            preset: None,
            sweep: None,
            consensus_trace: None,
            roc: None,
        } => {
            cfg.validate()?;
            Ok(cfg)
        }
        _ => Err(Error::Parse {
            line: 1,
            message: "expected a document with only a `[scenario]` table".into(),
        }),
    }
}

fn to_toml_err(e: toml::ser::Error) -> Error {
    Error::Configuration(format!("cannot serialize configuration: {e}"))
}

/// `[scenario]` document for `config`. TOML integers are signed 64-bit, so
/// seeds above `i64::MAX` cannot be written.
pub fn scenario_to_toml(config: &ScenarioConfig) -> Result<String> {
    toml::to_string(&Document {
        scenario: Some(config.clone()),
        ..Document::default()
    })
    .map_err(to_toml_err)
}

pub fn plan_to_toml(plan: &Plan) -> Result<String> {
    let doc = match plan {
        Plan::Roc(p) => Document {
            roc: Some(p.clone()),
            ..Document::default()
        },
        Plan::Consensus(p) => Document {
            scenario: Some(p.base.clone()),
            consensus_trace: Some(TraceSpec {
                channels: p.channels.clone(),
            }),
            ..Document::default()
        },
        Plan::Sweep(p) => {
            let (axis, values) = match &p.axis {
                SweepAxis::ProtectionLevel(v) => (AxisName::ProtectionLevel, v.clone()),
                SweepAxis::MeanSnrDb(v) => (AxisName::MeanSnrDb, v.clone()),
                SweepAxis::IPerSu(v) => (AxisName::IPerSu, v.iter().map(|&i| i as f64).collect()),
            };
            Document {
                scenario: Some(p.base.clone()),
                sweep: Some(SweepSpec {
                    axis,
                    values,
                    levels: Some(p.levels.clone()),
                    i_values: Some(p.i_values.clone()),
                }),
                ..Document::default()
            }
        }
    };
    toml::to_string(&doc).map_err(to_toml_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRow {
    pub snr_db: f64,
    pub detector: String,
    pub pd_analytic: f64,
    pub pd_empirical: f64,
}

fn detector_channel(kind: DetectorKind) -> Result<ChannelModel> {
    let family = match kind {
        DetectorKind::Energy => SignalFamily::Unknown,
        DetectorKind::Pilot { theta } => SignalFamily::Pilot { theta },
        DetectorKind::Ofdm => SignalFamily::OfdmCp,
    };
    ChannelModel::new(0, 0.5, family)
}

/// Fraction of `trials` single-detector runs whose statistic exceeds
/// `threshold`. Sample-based detectors synthesize observations; the OFDM
/// detector draws from its statistic model. Trial `t` uses `stream.fork(t)`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_exceedance(
    kind: DetectorKind,
    window: usize,
    snr: f64,
    threshold: f64,
    truth: Hypothesis,
    trials: usize,
    stream: RandomStream,
    exec: Execution,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let channel = detector_channel(kind)?;
    let snr_value = SnrValue::from_linear(snr)?;
    let hits = map_indexed(exec, trials, |t| -> Result<bool> {
        let mut rng = stream.fork(t as u64).rng();
        let statistic = match kind {
            DetectorKind::Ofdm => ofdm_surrogate_statistic(&mut rng, window, snr, truth),
            _ => {
                let mut buf = Vec::with_capacity(window);
                synthesize_into(&mut rng, &channel, truth.is_busy(), snr_value, window, &mut buf)?;
                match kind {
                    DetectorKind::Pilot { .. } => pd_statistic_for_channel(&buf, channel.index)?,
                    _ => ed_statistic_samples(&buf)?,
                }
            }
        };
        Ok(decide(statistic, threshold).is_busy())
    });
    let mut count = 0usize;
    for h in hits {
        count += h? as usize;
    }
    Ok(count as f64 / trials as f64)
}

/// Analytic and empirical detection probability for ED, PD and OFDM at every
/// SNR of the plan.
pub fn run_roc(plan: &RocPlan, exec: Execution) -> Result<Vec<RocRow>> {
    Plan::Roc(plan.clone()).validate()?;
    let kinds = [
        DetectorKind::Energy,
        DetectorKind::Pilot { theta: plan.theta },
        DetectorKind::Ofdm,
    ];
    let root = RandomStream::new(plan.master_seed, 0).fork(TAG_ROC);
    let mut rows = Vec::new();
    for (i, &snr_db) in plan.snr_db.iter().enumerate() {
        let snr = SnrValue::from_db(snr_db)?.linear();
        for (d, &kind) in kinds.iter().enumerate() {
            let threshold = threshold_for_fa(kind, plan.window, plan.p_fa)?;
            let stream = root.fork_path(&[i as u64, d as u64]);
            rows.push(RocRow {
                snr_db,
                detector: kind.short_name().to_string(),
                pd_analytic: roc(kind, plan.window, snr, plan.p_fa)?,
                pd_empirical: empirical_exceedance(
                    kind,
                    plan.window,
                    snr,
                    threshold,
                    Hypothesis::H1,
                    plan.trials,
                    stream,
                    exec,
                )?,
            });
        }
    }
    Ok(rows)
}

pub fn write_roc_csv<W: Write>(mut w: W, rows: &[RocRow]) -> Result<()> {
    writeln!(w, "snr_db,detector,pd_analytic,pd_empirical")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.snr_db, r.detector, r.pd_analytic, r.pd_empirical)?;
    }
    Ok(())
}

/// Every (level, I, grid point) of the plan, grouped by level then I.
pub fn run_sweep_plan(plan: &SweepPlan, exec: Execution) -> Result<Vec<SweepRow>> {
    Plan::Sweep(plan.clone()).validate()?;
    let mut rows = Vec::new();
    for &level in &plan.levels {
        for &i in &plan.i_values {
            let cfg = ScenarioConfig {
                level,
                i_per_su: i,
                ..plan.base.clone()
            };
            rows.extend(sweep(&cfg, &plan.axis, exec)?);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracedChannel {
    pub channel: usize,
    pub detector: String,
    pub members: Vec<usize>,
    pub mu: f64,
    pub mu_clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRun {
    pub radius: f64,
    pub channels: Vec<TracedChannel>,
    pub trace: Vec<TraceRow>,
}

/// Consensus traces on the plan's channels for one network snapshot in which
/// the PU is active on every traced channel. SUs pick channels by SNR and talk
/// over the smallest unit-disk graph that connects every co-sensing group.
pub fn run_consensus_plan(plan: &ConsensusPlan) -> Result<ConsensusRun> {
    Plan::Consensus(plan.clone()).validate()?;
    let cfg = &plan.base;
    let env = Environment::for_config(cfg)?;
    let stream = RandomStream::new(cfg.master_seed, 0).fork(TAG_TRACE);
    let mean = SnrValue::from_db(cfg.mean_snr_db)?;
    let mut fading = stream.fork(0).rng();
    let snr: Vec<Vec<f64>> = (0..cfg.k_count)
        .map(|_| (0..cfg.m_count).map(|_| draw_rayleigh_snr(&mut fading, mean).linear()).collect())
        .collect();
    let allocation = allocate_best_snr(&snr, cfg.i_per_su)?;
    let groups: Vec<Vec<usize>> = allocation.per_channel.iter().filter(|g| !g.is_empty()).cloned().collect();
    let (graph, radius) = minimal_connecting_graph(&env.positions, &groups);

    let mut channels = Vec::new();
    let mut trace = Vec::new();
    let mut buf = Vec::new();
    for &m in &plan.channels {
        let members = allocation.per_channel[m].clone();
        let kind = kind_for_family(env.channels[m].family);
        if members.is_empty() {
            channels.push(TracedChannel {
                channel: m,
                detector: kind.short_name().into(),
                members,
                mu: cfg.consensus.mu,
                mu_clamped: false,
            });
            continue;
        }
        let mut values = Vec::with_capacity(members.len());
        for &k in &members {
            let mut rng = stream.fork_path(&[1, k as u64, m as u64]).rng();
            synthesize_into(
                &mut rng,
                &env.channels[m],
                true,
                SnrValue::from_linear(snr[k][m])?,
                cfg.window_cap,
                &mut buf,
            )?;
            values.push(match kind {
                DetectorKind::Pilot { .. } => pd_statistic_for_channel(&buf, m)?,
                _ => ed_statistic_samples(&buf)?,
            });
        }
        let (mu, mu_clamped) = stable_step_size(cfg.consensus.mu, &graph, &members);
        let initial = ConsensusState::new(vec![(m, members.clone(), values)], mu, &graph)?;
        let (_, rows) = run_consensus(&initial, &graph, cfg.consensus.iterations)?;
        trace.extend(rows);
        channels.push(TracedChannel {
            channel: m,
            detector: kind.short_name().into(),
            members,
            mu,
            mu_clamped,
        });
    }
    Ok(ConsensusRun {
        radius,
        channels,
        trace,
    })
}

/// Reproducibility record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub csv_schema_version: u32,
    pub command: String,
    pub preset: Option<String>,
    pub plan: Plan,
    pub master_seed: u64,
    pub trials: usize,
    pub threads: Option<usize>,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<PathBuf>,
    pub conventions: Vec<String>,
    /// Extra per-run facts, e.g. the consensus graph radius.
    pub details: serde_json::Value,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn conventions(plan: &Plan) -> Vec<String> {
    let mut out = Vec::new();
    match plan {
        Plan::Roc(_) => {
            out.push("pd_empirical for OFDM is drawn from the detector's Gaussian statistic model".into());
        }
        Plan::Sweep(p) => {
            out.push("throughput in bits/s/Hz summed over SUs, averaged over trials".into());
            out.push(format!("constraint mode: {}", p.base.constraint_label()));
            out.push(format!("window mode: {:?}", p.base.window_mode).to_lowercase());
            out.push(format!("rate sharing: {:?}", p.base.sharing).to_lowercase());
            if p.base.constraint == ConstraintMode::Protection {
                out.push("target_fa is reported but not enforced; protection_level sets thresholds".into());
            }
            out.push("level column is <level>/i<I>".into());
        }
        Plan::Consensus(_) => {}
    }
    if !matches!(plan, Plan::Roc(_)) {
        out.push("consensus runs only among SUs sensing the same channel with the same detector".into());
    }
    out
}

/// Run `plan`, write its CSV and `manifest.json` into `out_dir`, and return
/// the manifest.
pub fn run_to_dir(
    plan: &Plan,
    out_dir: &Path,
    exec: Execution,
    command: &str,
    preset_name: Option<PresetName>,
    threads: Option<usize>,
) -> Result<RunManifest> {
    plan.validate()?;
    fs::create_dir_all(out_dir)?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let (file, details) = match plan {
        Plan::Roc(p) => {
            let rows = run_roc(p, exec)?;
            let name = "roc.csv";
            write_roc_csv(fs::File::create(out_dir.join(name))?, &rows)?;
            (name, serde_json::Value::Null)
        }
        Plan::Sweep(p) => {
            let rows = run_sweep_plan(p, exec)?;
            let name = "sweep.csv";
            write_sweep_csv(fs::File::create(out_dir.join(name))?, &rows)?;
            let diag: Vec<_> = rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "axis_value": r.axis_value,
                        "level": r.label,
                        "missed_detection_rate": r.report.missed_detection_rate,
                        "infeasible_trials": r.report.infeasible_trials,
                        "mu_clamped_trials": r.report.mu_clamped_trials,
                        "allocation_mode": r.report.allocation_mode,
                    })
                })
                .collect();
            (name, serde_json::Value::Array(diag))
        }
        Plan::Consensus(p) => {
            let run = run_consensus_plan(p)?;
            let name = "consensus_trace.csv";
            write_trace_csv(fs::File::create(out_dir.join(name))?, &run.trace)?;
            (
                name,
                serde_json::json!({ "radius": run.radius, "channels": run.channels }),
            )
        }
    };
    let manifest = RunManifest {
        tool: "crnsim".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        csv_schema_version: CSV_SCHEMA_VERSION,
        command: command.into(),
        preset: preset_name.map(|p| p.as_str().to_string()),
        plan: plan.clone(),
        master_seed: plan.master_seed(),
        trials: plan.trials(),
        threads,
        started_unix_seconds: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        outputs: vec![PathBuf::from(file)],
        conventions: conventions(plan),
        details,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Configuration(format!("cannot serialize manifest: {e}")))?;
    fs::write(out_dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig4_preset_matches_caption() {
        match preset("fig4_roc".parse().unwrap()) {
            Plan::Roc(p) => {
                assert_eq!(p.window, 1000);
                assert_eq!(p.p_fa, 0.1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn presets_carry_figure_parameters() {
        let Plan::Sweep(a) = preset(PresetName::Fig9aProtection) else { panic!() };
        assert_eq!((a.base.k_count, a.base.m_count, a.base.sample_budget), (10, 5, 10_000));
        assert_eq!((a.base.window_cap, a.base.mean_snr_db), (2500, -15.0));
        assert_eq!(a.i_values, vec![1, 2]);
        let Plan::Sweep(b) = preset(PresetName::Fig9bSnr) else { panic!() };
        assert_eq!(b.base.window_cap, 5000);
        assert_eq!(b.base.window_mode, WindowMode::Fixed);
        assert_eq!(b.base.target_fa, 0.1);
        let Plan::Consensus(c) = preset(PresetName::Fig10Consensus) else { panic!() };
        assert_eq!(c.base.consensus.mu, 0.1);
        let fam = c.base.families();
        assert!(matches!(fam[c.channels[0]], SignalFamily::Pilot { .. }));
        assert_eq!(fam[c.channels[1]], SignalFamily::Unknown);
        for p in PresetName::ALL {
            preset(p).validate().unwrap();
            assert_eq!(p.as_str().parse::<PresetName>().unwrap(), p);
        }
        assert!("fig5".parse::<PresetName>().is_err());
    }

    #[test]
    fn preset_documents_resolve() {
        assert_eq!(
            parse_config("preset = \"fig9b_snr\"\n").unwrap(),
            preset(PresetName::Fig9bSnr)
        );
        assert!(matches!(
            parse_config("preset = \"nope\"\n"),
            Err(Error::Validation { field, .. }) if field == "preset"
        ));
    }

    #[test]
    fn too_many_channels_per_su_names_i_per_su() {
        let mut cfg = ScenarioConfig::reference(ReconfigLevel::Basic);
        cfg.i_per_su = 6;
        let text = scenario_to_toml(&ScenarioConfig {
            i_per_su: 2,
            ..cfg.clone()
        })
        .unwrap()
        .replace("i_per_su = 2", "i_per_su = 6");
        match parse_config(&text) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "i_per_su"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_and_malformed_documents_report_lines() {
        assert!(matches!(parse_config(""), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_config("  \n\n"), Err(Error::Parse { .. })));
        match parse_config("preset = \"fig4_roc\"\n\n[roc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_line() {
        let text = scenario_to_toml(&ScenarioConfig::reference(ReconfigLevel::Basic)).unwrap();
        let bad = text.replacen("k_count", "colour = 3\nk_count", 1);
        let line = bad.lines().position(|l| l.starts_with("colour")).unwrap() + 1;
        match parse_config(&bad) {
            Err(Error::Parse { line: l, message }) => {
                assert_eq!(l, line);
                assert!(message.contains("colour"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sweep_document_builds_plan() {
        let mut text = scenario_to_toml(&ScenarioConfig::reference(ReconfigLevel::DeviceRmd)).unwrap();
        text.push_str("\n[sweep]\naxis = \"i_per_su\"\nvalues = [1, 2]\n");
        let Plan::Sweep(p) = parse_config(&text).unwrap() else { panic!() };
        assert_eq!(p.axis, SweepAxis::IPerSu(vec![1, 2]));
        assert_eq!(p.levels, vec![ReconfigLevel::DeviceRmd]);
        let bad = text.replace("values = [1, 2]", "values = [1.5]");
        assert!(matches!(parse_config(&bad), Err(Error::Validation { .. })));
        let too_many = text.replace("values = [1, 2]", "values = [1, 9]");
        assert!(matches!(
            parse_config(&too_many),
            Err(Error::Validation { field, .. }) if field == "i_per_su"
        ));
    }

    #[test]
    fn plans_round_trip_through_toml() {
        for p in PresetName::ALL {
            let plan = preset(p);
            assert_eq!(parse_config(&plan_to_toml(&plan).unwrap()).unwrap(), plan, "{p}");
        }
    }

    #[test]
    fn roc_rows_cover_every_detector() {
        let plan = RocPlan {
            window: 200,
            p_fa: 0.1,
            theta: 0.5,
            snr_db: vec![-10.0, 0.0],
            trials: 300,
            master_seed: 3,
        };
        let rows = run_roc(&plan, Execution::Parallel).unwrap();
        assert_eq!(rows.len(), 6);
        let names: Vec<_> = rows.iter().map(|r| r.detector.as_str()).collect();
        assert_eq!(names, ["ED", "PD", "OFDM", "ED", "PD", "OFDM"]);
        for r in &rows {
            assert!((r.pd_empirical - r.pd_analytic).abs() < 0.1, "{r:?}");
        }
        let mut buf = Vec::new();
        write_roc_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("snr_db,detector,pd_analytic,pd_empirical\n-10,ED,"));
    }

    #[test]
    fn consensus_plan_traces_requested_channels() {
        let Plan::Consensus(plan) = preset(PresetName::Fig10Consensus) else { panic!() };
        let run = run_consensus_plan(&plan).unwrap();
        let iters = plan.base.consensus.iterations;
        for c in &run.channels {
            let rows: Vec<_> = run.trace.iter().filter(|r| r.channel == c.channel).collect();
            assert_eq!(rows.len(), c.members.len() * (iters + 1));
        }
        assert_eq!(run.channels[0].detector, "PD");
        assert_eq!(run.channels[1].detector, "ED");
        assert_eq!(run_consensus_plan(&plan).unwrap(), run);
    }

    #[test]
    fn run_to_dir_writes_csv_and_one_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = preset(PresetName::Fig9bSnr);
        plan.set_trials(5);
        let m = run_to_dir(&plan, dir.path(), Execution::Parallel, "sweep", Some(PresetName::Fig9bSnr), None).unwrap();
        assert_eq!(m.outputs, vec![PathBuf::from("sweep.csv")]);
        let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4 * 2);
        let json: RunManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(json.master_seed, 1);
        assert_eq!(json.trials, 5);
        let files: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 2);
    }
}
