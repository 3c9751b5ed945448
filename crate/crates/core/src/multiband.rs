//! Multiband detectors built from single-band branches, and the per-channel
//! sensing-window optimizer behind device-level reconfiguration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelModel, Hypothesis, Observation, SignalFamily};
use crate::detectors::{
    calibrate_from_quantile, calibrate_threshold_fa, decide, ed_statistic, ofdm_surrogate_statistic,
    pd_statistic_for_channel, threshold_from_standard, DetectorKind, DetectorSpec, SensingDecision,
};
use crate::error::{Error, Result};
use crate::mathcore::q_inv;

/// Coarse grid spacing used by [`optimize_branch`] before local refinement.
pub const GRID_STEP: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultibandKind {
    /// Non-reconfigurable: identical energy detectors, one shared threshold.
    Nmd,
    /// Joint detector: energy branches with per-branch window and threshold.
    Mjd,
    /// Reconfigurable: branch type follows the channel's signal family.
    Rmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub channel: usize,
    pub spec: DetectorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultibandDetector {
    pub label: MultibandKind,
    pub branches: Vec<Branch>,
}

impl MultibandDetector {
    pub fn total_window(&self) -> usize {
        self.branches.iter().map(|b| b.spec.window).sum()
    }

    pub fn check_budget(&self, tau: usize) -> Result<()> {
        let total = self.total_window();
        if total > tau {
            return Err(Error::invalid(format!(
                "branch windows sum to {total}, over the sample budget {tau}"
            )));
        }
        Ok(())
    }

    pub fn branch_for(&self, channel: usize) -> Option<&Branch> {
        self.branches.iter().find(|b| b.channel == channel)
    }
}

/// Branch detector matched to what is known about the primary signal.
pub fn kind_for_family(family: SignalFamily) -> DetectorKind {
    match family {
        SignalFamily::Unknown => DetectorKind::Energy,
        SignalFamily::Pilot { theta } => DetectorKind::Pilot { theta },
        SignalFamily::OfdmCp => DetectorKind::Ofdm,
    }
}

/// NMD over the given channels: every branch is the same energy detector.
pub fn build_nmd(channels: &[usize], window: usize, threshold: f64) -> Result<MultibandDetector> {
    if channels.is_empty() {
        return Err(Error::invalid("a multiband detector needs at least one channel"));
    }
    let spec = DetectorSpec::new(DetectorKind::Energy, window, threshold)?;
    Ok(MultibandDetector {
        label: MultibandKind::Nmd,
        branches: channels.iter().map(|&channel| Branch { channel, spec }).collect(),
    })
}

/// MJD over the given channels, every branch initially set for `p_fa`.
pub fn build_mjd(channels: &[usize], window: usize, p_fa: f64) -> Result<MultibandDetector> {
    if channels.is_empty() {
        return Err(Error::invalid("a multiband detector needs at least one channel"));
    }
    let spec = DetectorSpec::at_false_alarm(DetectorKind::Energy, window, p_fa)?;
    Ok(MultibandDetector {
        label: MultibandKind::Mjd,
        branches: channels.iter().map(|&channel| Branch { channel, spec }).collect(),
    })
}

/// RMD with one branch per `(channel, family)` pair, each set for `p_fa`.
/// OFDM branches carry a standardized threshold (analytic mode).
pub fn build_rmd(
    assignments: &[(usize, SignalFamily)],
    window: usize,
    p_fa: f64,
) -> Result<MultibandDetector> {
    if assignments.is_empty() {
        return Err(Error::invalid("a multiband detector needs at least one channel"));
    }
    let branches = assignments
        .iter()
        .map(|&(channel, family)| {
            let spec = DetectorSpec::at_false_alarm(kind_for_family(family), window, p_fa)?;
            Ok(Branch { channel, spec })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultibandDetector {
        label: MultibandKind::Rmd,
        branches,
    })
}

/// What a branch observes in one trial.
#[derive(Debug, Clone, Copy)]
pub enum BranchInput<'a> {
    Samples(&'a Observation),
    /// No samples; the statistic is drawn from the detector's ROC model.
    Analytic { truth: Hypothesis, snr: f64 },
}

/// Test statistic of a single branch.
pub fn branch_statistic<R: Rng + ?Sized>(
    branch: &Branch,
    input: BranchInput<'_>,
    rng: &mut R,
) -> Result<f64> {
    match (branch.spec.kind, input) {
        (DetectorKind::Energy, BranchInput::Samples(obs)) => ed_statistic(obs),
        (DetectorKind::Pilot { .. }, BranchInput::Samples(obs)) => {
            pd_statistic_for_channel(&obs.samples, branch.channel)
        }
        (DetectorKind::Ofdm, BranchInput::Analytic { truth, snr }) => {
            Ok(ofdm_surrogate_statistic(rng, branch.spec.window, snr, truth))
        }
        (kind, _) => Err(Error::invalid(format!(
            "branch on channel {} ({}) received the wrong kind of input",
            branch.channel,
            kind.short_name()
        ))),
    }
}

/// Apply every branch of an SU's multiband detector to its input.
pub fn sense_multiband<R: Rng + ?Sized>(
    detector: &MultibandDetector,
    inputs: &[BranchInput<'_>],
    su: usize,
    rng: &mut R,
) -> Result<Vec<SensingDecision>> {
    if inputs.len() != detector.branches.len() {
        return Err(Error::invalid(format!(
            "{} branches but {} observations",
            detector.branches.len(),
            inputs.len()
        )));
    }
    detector
        .branches
        .iter()
        .zip(inputs)
        .map(|(branch, &input)| {
            if let BranchInput::Samples(obs) = input {
                if obs.len() != branch.spec.window {
                    return Err(Error::invalid(format!(
                        "observation of {} samples for a window of {}",
                        obs.len(),
                        branch.spec.window
                    )));
                }
            }
            let statistic = branch_statistic(branch, input, rng)?;
            Ok(SensingDecision {
                statistic,
                decided: decide(statistic, branch.spec.threshold),
                channel: branch.channel,
                su,
            })
        })
        .collect()
}

/// Sensing constraint a branch is optimized under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Constraint {
    /// Fixed per-sensor false-alarm probability.
    TargetFa(f64),
    /// Global OR-fused detection probability shared by `cofusers` sensors.
    ProtectionLevel { p_d_global: f64, cofusers: usize },
}

impl Constraint {
    fn validate(&self) -> Result<()> {
        match *self {
            Constraint::TargetFa(p) if p > 0.0 && p < 1.0 => Ok(()),
            Constraint::TargetFa(p) => Err(Error::invalid(format!("target P_FA must lie in (0, 1), got {p}"))),
            Constraint::ProtectionLevel { p_d_global, cofusers } => {
                if !(p_d_global > 0.0 && p_d_global < 1.0) {
                    return Err(Error::invalid(format!(
                        "protection level must lie in (0, 1), got {p_d_global}"
                    )));
                }
                if cofusers == 0 {
                    return Err(Error::invalid("protection constraint needs at least one fusing sensor"));
                }
                Ok(())
            }
        }
    }
}

/// Per-sensor detection target that gives `p_d_global` after OR fusion of
/// `cofusers` equally reliable sensors.
pub fn local_detection_target(p_d_global: f64, cofusers: usize) -> f64 {
    1.0 - (1.0 - p_d_global).powf(1.0 / cofusers as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchOptimum {
    pub window: usize,
    pub threshold: f64,
    pub p_fa_local: f64,
    pub p_fa_global: f64,
    pub expected_throughput: f64,
}

/// One branch's sensing-throughput problem, evaluable at any window.
///
/// `R(N) = (1 - N/tau) (1 - p_m) (1 - P_FA_global(N)) log2(1 + snr_tx)`.
#[derive(Debug, Clone, Copy)]
pub struct BranchProblem {
    pub pu_activity: f64,
    pub snr: f64,
    pub kind: DetectorKind,
    pub cap: usize,
    pub tau: usize,
    pub constraint: Constraint,
    pub rate: f64,
    pd_quantile: f64,
}

impl BranchProblem {
    pub fn new(
        channel: &ChannelModel,
        snr: f64,
        kind: DetectorKind,
        cap: usize,
        tau: usize,
        constraint: Constraint,
        snr_tx_linear: f64,
    ) -> Result<Self> {
        constraint.validate()?;
        if cap == 0 || cap > tau {
            return Err(Error::invalid(format!("need 0 < cap <= tau, got cap={cap}, tau={tau}")));
        }
        if !(snr.is_finite() && snr >= 0.0) {
            return Err(Error::invalid(format!("linear SNR must be non-negative, got {snr}")));
        }
        if !(snr_tx_linear.is_finite() && snr_tx_linear > 0.0) {
            return Err(Error::invalid("transmission SNR must be positive"));
        }
        let pd_quantile = match constraint {
            Constraint::ProtectionLevel { p_d_global, cofusers } => {
                q_inv(local_detection_target(p_d_global, cofusers))?
            }
            Constraint::TargetFa(_) => 0.0,
        };
        Ok(Self {
            pu_activity: channel.pu_activity,
            snr,
            kind,
            cap,
            tau,
            constraint,
            rate: (1.0 + snr_tx_linear).log2(),
            pd_quantile,
        })
    }

    /// Threshold, false-alarm probabilities and expected throughput at `window`.
    pub fn evaluate(&self, window: usize) -> Result<BranchOptimum> {
        let (threshold, p_fa_local, p_fa_global) = match self.constraint {
            Constraint::TargetFa(p) => {
                let x = q_inv(p)?;
                (threshold_from_standard(self.kind, window, x), p, p)
            }
            Constraint::ProtectionLevel { cofusers, .. } => {
                let cal = calibrate_from_quantile(self.kind, window, self.snr, self.pd_quantile)?;
                let global = 1.0 - (1.0 - cal.implied_p_fa).powi(cofusers as i32);
                (cal.threshold, cal.implied_p_fa, global)
            }
        };
        let expected_throughput = (1.0 - window as f64 / self.tau as f64)
            * (1.0 - self.pu_activity)
            * (1.0 - p_fa_global)
            * self.rate;
        Ok(BranchOptimum {
            window,
            threshold,
            p_fa_local,
            p_fa_global,
            expected_throughput,
        })
    }
}

/// Choose the window in `[1, cap]` maximizing expected throughput, with its
/// threshold. Ties go to the smaller window.
///
/// The objective is log-concave in N for every detector here, so a coarse
/// scan every [`GRID_STEP`] samples followed by an exhaustive scan of the
/// neighbourhood of the best grid point finds the integer maximizer.
pub fn optimize_branch(
    channel: &ChannelModel,
    snr: f64,
    kind: DetectorKind,
    cap: usize,
    tau: usize,
    constraint: Constraint,
    snr_tx_linear: f64,
) -> Result<BranchOptimum> {
    let problem = BranchProblem::new(channel, snr, kind, cap, tau, constraint, snr_tx_linear)?;
    optimize_problem(&problem)
}

pub fn optimize_problem(problem: &BranchProblem) -> Result<BranchOptimum> {
    let cap = problem.cap;
    let grid = (1..=cap).step_by(GRID_STEP).chain((!(cap - 1).is_multiple_of(GRID_STEP)).then_some(cap));
    let mut best = scan(problem, grid)?;
    let centre = best.as_ref().map(|b| b.window);
    if let Some(centre) = centre {
        let lo = centre.saturating_sub(GRID_STEP - 1).max(1);
        let hi = (centre + GRID_STEP - 1).min(cap);
        best = scan(problem, lo..=hi)?;
    }
    best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no window in [1, {cap}] satisfies {:?} for a {} branch at SNR {:e}",
            problem.constraint,
            problem.kind.short_name(),
            problem.snr
        ))
    })
}

fn scan(problem: &BranchProblem, windows: impl Iterator<Item = usize>) -> Result<Option<BranchOptimum>> {
    let mut best: Option<BranchOptimum> = None;
    for n in windows {
        let candidate = match problem.evaluate(n) {
            Ok(c) => c,
            Err(Error::Infeasible(_)) => continue,
            Err(e) => return Err(e),
        };
        if best.is_none_or(|b| candidate.expected_throughput > b.expected_throughput) {
            best = Some(candidate);
        }
    }
    Ok(best)
}

/// Convenience for the fixed-window, threshold-only case.
pub fn threshold_for_fa(kind: DetectorKind, window: usize, p_fa: f64) -> Result<f64> {
    match kind {
        DetectorKind::Ofdm => Ok(threshold_from_standard(kind, window, q_inv(p_fa)?)),
        _ => calibrate_threshold_fa(kind, window, p_fa),
    }
}
