//! Single-band spectrum sensors: test statistics, closed-form ROC curves,
//! threshold calibration and the threshold decision rule.
//!
//! All detectors share one convention: a *standardized* threshold `x` such
//! that the false-alarm probability is `Q(x)`. The physical threshold of each
//! detector is an affine map of `x`:
//!
//! | detector | H0 statistic        | threshold           |
//! |----------|---------------------|---------------------|
//! | energy   | ~ N(1, 1/N)         | `1 + x / sqrt(N)`   |
//! | pilot    | ~ N(0, 1/(2N))      | `x / sqrt(2N)`      |
//! | OFDM     | standardized N(0,1) | `x`                 |

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{pilot_symbol, Hypothesis, Observation};
use crate::error::{Error, Result};
use crate::mathcore::{q_inv, q_tail};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorKind {
    Energy,
    Pilot { theta: f64 },
    /// Cyclic-prefix OFDM detector; available in analytic mode only.
    Ofdm,
}

impl DetectorKind {
    pub fn short_name(&self) -> &'static str {
        match self {
            DetectorKind::Energy => "ED",
            DetectorKind::Pilot { .. } => "PD",
            DetectorKind::Ofdm => "OFDM",
        }
    }

    /// Whether the detector runs on synthesized samples (as opposed to the
    /// analytic surrogate).
    pub fn is_sample_based(&self) -> bool {
        !matches!(self, DetectorKind::Ofdm)
    }

    fn validate(&self) -> Result<()> {
        if let DetectorKind::Pilot { theta } = *self {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::invalid(format!("pilot theta must be in (0, 1], got {theta}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    pub window: usize,
    pub threshold: f64,
}

impl DetectorSpec {
    pub fn new(kind: DetectorKind, window: usize, threshold: f64) -> Result<Self> {
        kind.validate()?;
        if window == 0 {
            return Err(Error::invalid("detector window must be at least 1"));
        }
        if !threshold.is_finite() {
            return Err(Error::invalid(format!("threshold must be finite, got {threshold}")));
        }
        Ok(Self {
            kind,
            window,
            threshold,
        })
    }

    /// Spec with the threshold set for a target false-alarm probability.
    pub fn at_false_alarm(kind: DetectorKind, window: usize, p_fa: f64) -> Result<Self> {
        kind.validate()?;
        check_window(window)?;
        let x = q_inv(p_fa)?;
        Self::new(kind, window, threshold_from_standard(kind, window, x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingDecision {
    pub statistic: f64,
    pub decided: Hypothesis,
    pub channel: usize,
    pub su: usize,
}

/// Threshold decision rule: H1 iff the statistic strictly exceeds the
/// threshold.
#[inline]
pub fn decide(statistic: f64, threshold: f64) -> Hypothesis {
    Hypothesis::from_busy(statistic > threshold)
}

/// Energy statistic `(1/N) * sum |y_i|^2`.
pub fn ed_statistic(obs: &Observation) -> Result<f64> {
    ed_statistic_samples(&obs.samples)
}

pub fn ed_statistic_samples(samples: &[Complex64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("energy statistic of an empty observation"));
    }
    Ok(samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / samples.len() as f64)
}

/// Pilot correlation statistic `(1/N) * Re{pilot^H y}`.
pub fn pd_statistic(obs: &Observation, pilot: &[Complex64]) -> Result<f64> {
    if pilot.len() != obs.len() {
        return Err(Error::invalid(format!(
            "pilot length {} does not match observation length {}",
            pilot.len(),
            obs.len()
        )));
    }
    if obs.is_empty() {
        return Err(Error::invalid("pilot statistic of an empty observation"));
    }
    let acc: f64 = pilot
        .iter()
        .zip(&obs.samples)
        .map(|(p, y)| (p.conj() * y).re)
        .sum();
    Ok(acc / obs.len() as f64)
}

/// Pilot statistic against the channel's own pilot pattern, without
/// materializing the sequence.
pub fn pd_statistic_for_channel(samples: &[Complex64], channel_index: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("pilot statistic of an empty observation"));
    }
    let acc: f64 = samples
        .iter()
        .enumerate()
        .map(|(i, y)| (pilot_symbol(channel_index, i).conj() * y).re)
        .sum();
    Ok(acc / samples.len() as f64)
}

/// Draw the standardized OFDM detector statistic implied by its ROC model:
/// N(0, 1) under H0 and N(sqrt(2N)*snr, 4*snr + 1) under H1. Comparing it with
/// `q_inv(p_fa)` reproduces the closed-form detection probability exactly.
pub fn ofdm_surrogate_statistic<R: Rng + ?Sized>(
    rng: &mut R,
    window: usize,
    snr: f64,
    truth: Hypothesis,
) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    match truth {
        Hypothesis::H0 => z,
        Hypothesis::H1 => (2.0 * window as f64).sqrt() * snr + (4.0 * snr + 1.0).sqrt() * z,
    }
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 {
        Err(Error::invalid("sensing window must be at least 1"))
    } else {
        Ok(())
    }
}

fn check_snr(snr: f64) -> Result<()> {
    if snr.is_finite() && snr >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("linear SNR must be finite and non-negative, got {snr}")))
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0, 1), got {p}")))
    }
}

/// Energy detector: `Q((Q^-1(P_FA) - sqrt(N) SNR) / sqrt(2 SNR + 1))`.
pub fn roc_ed(window: usize, snr: f64, p_fa: f64) -> Result<f64> {
    check_window(window)?;
    check_snr(snr)?;
    check_prob("p_fa", p_fa)?;
    let x = q_inv(p_fa)?;
    Ok(q_tail((x - (window as f64).sqrt() * snr) / (2.0 * snr + 1.0).sqrt()))
}

/// Pilot detector: `Q(Q^-1(P_FA) - sqrt(2 theta N SNR))`.
pub fn roc_pd(window: usize, snr: f64, theta: f64, p_fa: f64) -> Result<f64> {
    check_window(window)?;
    check_snr(snr)?;
    check_prob("p_fa", p_fa)?;
    DetectorKind::Pilot { theta }.validate()?;
    let x = q_inv(p_fa)?;
    Ok(q_tail(x - (2.0 * theta * window as f64 * snr).sqrt()))
}

/// OFDM detector: `Q((Q^-1(P_FA) - sqrt(2N) SNR) / sqrt(4 SNR + 1))`.
pub fn roc_ofdm(window: usize, snr: f64, p_fa: f64) -> Result<f64> {
    check_window(window)?;
    check_snr(snr)?;
    check_prob("p_fa", p_fa)?;
    let x = q_inv(p_fa)?;
    Ok(q_tail((x - (2.0 * window as f64).sqrt() * snr) / (4.0 * snr + 1.0).sqrt()))
}

pub fn roc(kind: DetectorKind, window: usize, snr: f64, p_fa: f64) -> Result<f64> {
    match kind {
        DetectorKind::Energy => roc_ed(window, snr, p_fa),
        DetectorKind::Pilot { theta } => roc_pd(window, snr, theta, p_fa),
        DetectorKind::Ofdm => roc_ofdm(window, snr, p_fa),
    }
}

/// Map a standardized threshold onto the detector's statistic scale.
pub fn threshold_from_standard(kind: DetectorKind, window: usize, x: f64) -> f64 {
    let n = window as f64;
    match kind {
        DetectorKind::Energy => 1.0 + x / n.sqrt(),
        DetectorKind::Pilot { .. } => x / (2.0 * n).sqrt(),
        DetectorKind::Ofdm => x,
    }
}

/// Threshold achieving `p_fa` under the H0 statistic distribution.
///
/// The OFDM detector has no sample-level statistic and is rejected.
pub fn calibrate_threshold_fa(kind: DetectorKind, window: usize, p_fa: f64) -> Result<f64> {
    if kind == DetectorKind::Ofdm {
        return Err(Error::Unsupported(
            "OFDM detector runs in analytic mode; it has no sample-level threshold".into(),
        ));
    }
    kind.validate()?;
    check_window(window)?;
    check_prob("p_fa", p_fa)?;
    Ok(threshold_from_standard(kind, window, q_inv(p_fa)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub implied_p_fa: f64,
    /// Standardized threshold, `Q(standard) = implied_p_fa`.
    pub standard: f64,
}

/// Invert a detector's ROC for the threshold that yields `p_d_target` at the
/// given SNR, and report the false-alarm probability that comes with it.
pub fn calibrate_threshold_pd(
    kind: DetectorKind,
    window: usize,
    snr: f64,
    p_d_target: f64,
) -> Result<Calibration> {
    kind.validate()?;
    check_window(window)?;
    check_snr(snr)?;
    check_prob("p_d_target", p_d_target)?;
    let z = q_inv(p_d_target)?;
    calibrate_from_quantile(kind, window, snr, z)
}

/// As [`calibrate_threshold_pd`] with `q_inv(p_d_target)` precomputed.
pub(crate) fn calibrate_from_quantile(
    kind: DetectorKind,
    window: usize,
    snr: f64,
    pd_quantile: f64,
) -> Result<Calibration> {
    let n = window as f64;
    let standard = match kind {
        DetectorKind::Energy => pd_quantile * (2.0 * snr + 1.0).sqrt() + n.sqrt() * snr,
        DetectorKind::Pilot { theta } => pd_quantile + (2.0 * theta * n * snr).sqrt(),
        DetectorKind::Ofdm => pd_quantile * (4.0 * snr + 1.0).sqrt() + (2.0 * n).sqrt() * snr,
    };
    let implied_p_fa = q_tail(standard);
    if implied_p_fa.is_nan() || implied_p_fa >= 1.0 {
        return Err(Error::Infeasible(format!(
            "{} detector with N={window} at SNR {snr:e} needs P_FA = 1 to reach the detection target",
            kind.short_name()
        )));
    }
    Ok(Calibration {
        threshold: threshold_from_standard(kind, window, standard),
        implied_p_fa,
        standard,
    })
}
