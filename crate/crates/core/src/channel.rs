//! Licensed channels, primary-user activity and baseband observation synthesis.

use num_complex::Complex64;
use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{complex_gaussian, splitmix64, SnrValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Channel idle: noise only.
    H0,
    /// Channel occupied by the primary user.
    H1,
}

impl Hypothesis {
    pub fn from_busy(busy: bool) -> Self {
        if busy {
            Hypothesis::H1
        } else {
            Hypothesis::H0
        }
    }

    pub fn is_busy(self) -> bool {
        self == Hypothesis::H1
    }
}

/// What the secondary users know about the primary signal on a channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SignalFamily {
    Unknown,
    /// Known pilot pattern carrying a fraction `theta` of the signal power.
    Pilot { theta: f64 },
    /// OFDM with cyclic prefix.
    OfdmCp,
}

impl SignalFamily {
    pub fn validate(&self) -> Result<()> {
        if let SignalFamily::Pilot { theta } = *self {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::invalid(format!("pilot theta must be in (0, 1], got {theta}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Zero-based channel index; displayed as `f{index+1}`.
    pub index: usize,
    pub pu_activity: f64,
    pub family: SignalFamily,
    pub label: String,
}

impl ChannelModel {
    pub fn new(index: usize, pu_activity: f64, family: SignalFamily) -> Result<Self> {
        if !(0.0..=1.0).contains(&pu_activity) {
            return Err(Error::invalid(format!(
                "PU activity must lie in [0, 1], got {pu_activity}"
            )));
        }
        family.validate()?;
        Ok(Self {
            index,
            pu_activity,
            family,
            label: format!("f{}", index + 1),
        })
    }
}

/// Occupancy of every channel during one trial (`true` = PU active).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpectrumState {
    pub occupancy: Vec<bool>,
}

impl SpectrumState {
    pub fn hypothesis(&self, channel: usize) -> Hypothesis {
        Hypothesis::from_busy(self.occupancy[channel])
    }
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub samples: Vec<Complex64>,
    pub truth: Hypothesis,
    pub snr_used: SnrValue,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Draw `m_count` PU activity probabilities uniformly on (0, 1).
pub fn sample_pu_activities<R: Rng + ?Sized>(rng: &mut R, m_count: usize) -> Result<Vec<f64>> {
    if m_count == 0 {
        return Err(Error::invalid("channel count must be at least 1"));
    }
    Ok((0..m_count).map(|_| rng.sample(Open01)).collect())
}

/// Independent Bernoulli(p_m) occupancy per channel.
pub fn draw_spectrum_state<R: Rng + ?Sized>(
    rng: &mut R,
    channels: &[ChannelModel],
) -> Result<SpectrumState> {
    if channels.is_empty() {
        return Err(Error::invalid("no channels to draw a spectrum state for"));
    }
    let occupancy = channels
        .iter()
        .map(|c| rng.random::<f64>() < c.pu_activity)
        .collect();
    Ok(SpectrumState { occupancy })
}

/// Sample `i` of the unit-modulus QPSK pilot pattern of a channel.
///
/// The pattern is a fixed pseudo-random function of the channel index, so
/// every sensor and the synthesizer agree on it without sharing state.
#[inline]
pub fn pilot_symbol(channel_index: usize, i: usize) -> Complex64 {
    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;
    let bits = splitmix64(((channel_index as u64) << 40) ^ i as u64) >> 62;
    match bits {
        0 => Complex64::new(H, H),
        1 => Complex64::new(-H, H),
        2 => Complex64::new(-H, -H),
        _ => Complex64::new(H, -H),
    }
}

pub fn pilot_sequence(channel_index: usize, len: usize) -> Vec<Complex64> {
    (0..len).map(|i| pilot_symbol(channel_index, i)).collect()
}

/// Synthesize one sensing window for a channel.
///
/// Noise is CN(0, 1). Under H1 the primary signal adds average power
/// `snr.linear()`: a CN(0, snr) waveform for the `Unknown` family, or a pilot
/// carrying `theta * snr` plus CN(0, (1 - theta) * snr) data for `Pilot`.
/// OFDM observations are not synthesized.
pub fn synthesize_observation<R: Rng + ?Sized>(
    rng: &mut R,
    channel: &ChannelModel,
    occupied: bool,
    snr: SnrValue,
    window: usize,
) -> Result<Observation> {
    let mut samples = Vec::new();
    synthesize_into(rng, channel, occupied, snr, window, &mut samples)?;
    Ok(Observation {
        samples,
        truth: Hypothesis::from_busy(occupied),
        snr_used: snr,
    })
}

/// Same as [`synthesize_observation`] but reuses the caller's buffer.
pub fn synthesize_into<R: Rng + ?Sized>(
    rng: &mut R,
    channel: &ChannelModel,
    occupied: bool,
    snr: SnrValue,
    window: usize,
    out: &mut Vec<Complex64>,
) -> Result<()> {
    if window == 0 {
        return Err(Error::invalid("sensing window must be at least 1 sample"));
    }
    if channel.family == SignalFamily::OfdmCp {
        return Err(Error::Unsupported(format!(
            "channel {} carries an OFDM signal; OFDM sensing is analytic-only",
            channel.label
        )));
    }
    out.clear();
    out.reserve(window);
    let s = snr.linear();
    match (occupied, channel.family) {
        (false, _) => out.extend((0..window).map(|_| complex_gaussian(rng, 1.0))),
        (true, SignalFamily::Unknown) => {
            // Sum of independent CN(0,1) noise and CN(0,s) signal.
            out.extend((0..window).map(|_| complex_gaussian(rng, 1.0 + s)))
        }
        (true, SignalFamily::Pilot { theta }) => {
            let amp = (theta * s).sqrt();
            let rest = 1.0 + (1.0 - theta) * s;
            out.extend(
                (0..window).map(|i| pilot_symbol(channel.index, i) * amp + complex_gaussian(rng, rest)),
            )
        }
        (true, SignalFamily::OfdmCp) => unreachable!(),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::RandomStream;

    fn unknown(p: f64) -> ChannelModel {
        ChannelModel::new(0, p, SignalFamily::Unknown).unwrap()
    }

    #[test]
    fn channel_invariants() {
        assert!(ChannelModel::new(0, 1.2, SignalFamily::Unknown).is_err());
        assert!(ChannelModel::new(0, 0.5, SignalFamily::Pilot { theta: 0.0 }).is_err());
        assert!(ChannelModel::new(0, 0.5, SignalFamily::Pilot { theta: 1.0 }).is_ok());
        assert_eq!(ChannelModel::new(2, 0.5, SignalFamily::OfdmCp).unwrap().label, "f3");
    }

    #[test]
    fn pu_activities_in_range_and_reproducible() {
        let s = RandomStream::new(5, 0);
        let a = sample_pu_activities(&mut s.rng(), 5).unwrap();
        let b = sample_pu_activities(&mut s.rng(), 5).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(sample_pu_activities(&mut s.rng(), 0).is_err());
    }

    #[test]
    fn pu_activity_mean() {
        let v = sample_pu_activities(&mut RandomStream::new(6, 0).rng(), 100_000).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn degenerate_occupancy() {
        let mut rng = RandomStream::new(1, 1).rng();
        let idle = vec![unknown(0.0); 4];
        let busy = vec![unknown(1.0); 4];
        for _ in 0..1000 {
            assert!(draw_spectrum_state(&mut rng, &idle).unwrap().occupancy.iter().all(|&b| !b));
            assert!(draw_spectrum_state(&mut rng, &busy).unwrap().occupancy.iter().all(|&b| b));
        }
        assert!(draw_spectrum_state(&mut rng, &[]).is_err());
    }

    #[test]
    fn occupancy_frequency_and_independence() {
        let chans: Vec<_> = [0.3, 0.6, 0.5]
            .iter()
            .enumerate()
            .map(|(i, &p)| ChannelModel::new(i, p, SignalFamily::Unknown).unwrap())
            .collect();
        let mut rng = RandomStream::new(9, 0).rng();
        let n = 100_000;
        let states: Vec<_> = (0..n).map(|_| draw_spectrum_state(&mut rng, &chans).unwrap()).collect();
        let freq = |m: usize| states.iter().filter(|s| s.occupancy[m]).count() as f64 / n as f64;
        assert!((freq(0) - 0.3).abs() < 0.01);
        // Pearson correlation between channels 0 and 1.
        let (p0, p1) = (freq(0), freq(1));
        let joint = states.iter().filter(|s| s.occupancy[0] && s.occupancy[1]).count() as f64 / n as f64;
        let corr = (joint - p0 * p1) / (p0 * (1.0 - p0) * p1 * (1.0 - p1)).sqrt();
        assert!(corr.abs() < 0.01, "corr {corr}");
    }

    fn mean_power(obs: &Observation) -> f64 {
        obs.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / obs.len() as f64
    }

    #[test]
    fn noise_power_is_unit() {
        let mut rng = RandomStream::new(3, 0).rng();
        let obs = synthesize_observation(&mut rng, &unknown(0.5), false, SnrValue::from_linear(1.0).unwrap(), 1000)
            .unwrap();
        assert_eq!(obs.len(), 1000);
        assert_eq!(obs.truth, Hypothesis::H0);
        assert!((mean_power(&obs) - 1.0).abs() < 0.1);
    }

    #[test]
    fn signal_power_adds() {
        let mut rng = RandomStream::new(3, 1).rng();
        let snr = SnrValue::from_linear(0.5).unwrap();
        let obs = synthesize_observation(&mut rng, &unknown(0.5), true, snr, 10_000).unwrap();
        assert!((mean_power(&obs) - 1.5).abs() < 0.05);
        let pilot_ch = ChannelModel::new(1, 0.5, SignalFamily::Pilot { theta: 0.4 }).unwrap();
        let obs = synthesize_observation(&mut rng, &pilot_ch, true, snr, 10_000).unwrap();
        assert!((mean_power(&obs) - 1.5).abs() < 0.05);
    }

    #[test]
    fn pilot_correlation_magnitude() {
        let ch = ChannelModel::new(0, 0.5, SignalFamily::Pilot { theta: 1.0 }).unwrap();
        let snr = SnrValue::from_linear(0.25).unwrap();
        let mut rng = RandomStream::new(4, 0).rng();
        let n = 4096;
        let pilot = pilot_sequence(0, n);
        let mut total = 0.0;
        let reps = 200;
        for _ in 0..reps {
            let obs = synthesize_observation(&mut rng, &ch, true, snr, n).unwrap();
            let corr: Complex64 = pilot.iter().zip(&obs.samples).map(|(p, y)| p.conj() * y).sum();
            total += corr.norm() / n as f64;
        }
        let mean = total / reps as f64;
        assert!((mean - 0.5).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn pilot_is_unit_modulus_and_fixed() {
        let a = pilot_sequence(3, 64);
        assert_eq!(a, pilot_sequence(3, 64));
        assert_ne!(a, pilot_sequence(4, 64));
        assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ofdm_and_empty_window_rejected() {
        let mut rng = RandomStream::new(0, 0).rng();
        let snr = SnrValue::from_linear(1.0).unwrap();
        let ofdm = ChannelModel::new(0, 0.5, SignalFamily::OfdmCp).unwrap();
        assert!(matches!(
            synthesize_observation(&mut rng, &ofdm, true, snr, 10),
            Err(Error::Unsupported(_))
        ));
        assert!(synthesize_observation(&mut rng, &unknown(0.5), true, snr, 0).is_err());
    }
}
