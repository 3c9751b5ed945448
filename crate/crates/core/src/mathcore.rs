//! Numeric primitives shared by the rest of the simulator: the Gaussian tail
//! function and its inverse, keyed random streams, and Rayleigh fading draws.

use num_complex::Complex64;
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Gaussian tail probability `Q(x) = P(Z > x)` for a standard normal `Z`.
///
/// Rejects non-finite input; see [`q_tail`] for the unchecked variant used in
/// inner loops.
pub fn q_func(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("q_func argument must be finite, got {x}")));
    }
    Ok(q_tail(x))
}

/// Unchecked `Q(x)`. Infinite arguments map to the limits, NaN propagates.
///
/// Evaluated as `erfc(x / sqrt 2) / 2` on `|x|` and reflected for negative
/// arguments.
pub fn q_tail(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return 1.0;
    }
    let upper = 0.5 * erfc_nonneg(x.abs() * std::f64::consts::FRAC_1_SQRT_2);
    if x >= 0.0 {
        upper
    } else {
        1.0 - upper
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `erfc(z)` for `z >= 0`.
///
/// Below `z = 2.5` the complement of the positive-term Maclaurin series
/// (A&S 7.1.6) is used; it never cancels, so erf is accurate to a few ulps and
/// erfc inherits a relative error below ~1e-13 on that range. Above, the
/// Laplace continued fraction (A&S 7.1.14) is evaluated with the modified
/// Lentz algorithm to full double precision.
fn erfc_nonneg(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z < 2.5 {
        1.0 - erf_series(z)
    } else {
        erfc_continued_fraction(z)
    }
}

fn erf_series(z: f64) -> f64 {
    // erf z = 2/sqrt(pi) * exp(-z^2) * sum_n 2^n z^(2n+1) / (1*3*...*(2n+1))
    let z2 = z * z;
    let mut term = z;
    let mut sum = z;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * z2 / (2.0 * n + 1.0);
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-z2).exp() * sum
}

fn erfc_continued_fraction(z: f64) -> f64 {
    // erfc z = exp(-z^2)/sqrt(pi) * 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
    const TINY: f64 = 1e-300;
    let mut f = z;
    let mut c = z;
    let mut d = 0.0;
    for k in 1..500 {
        let a = 0.5 * k as f64;
        d = z + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = z + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    FRAC_1_SQRT_PI * (-z * z).exp() / f
}

/// Inverse Gaussian tail: returns `x` with `Q(x) = p`.
pub fn q_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("q_inv requires 0 < p < 1, got {p}")));
    }
    Ok(-normal_quantile(p))
}

/// Standard normal quantile via Wichura's AS 241 (PPND16), relative accuracy
/// about 1e-16 over the open unit interval.
#[allow(clippy::excessive_precision)]
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608e0,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34e0,
        4.630_337_846_156_545_295_9e0,
        5.769_497_221_460_691_405_5e0,
        3.647_848_324_763_204_605_04e0,
        1.270_458_252_452_368_382_58e0,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87e0,
        1.676_384_830_183_803_849_4e0,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2e0,
        5.463_784_911_164_114_369_9e0,
        1.784_826_539_917_291_335_8e0,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    fn horner(coeffs: &[f64; 8], x: f64) -> f64 {
        coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * horner(&A, r) / horner(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        let r = r - 1.6;
        horner(&C, r) / horner(&D, r)
    } else {
        let r = r - 5.0;
        horner(&E, r) / horner(&F, r)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// A reproducible random stream keyed by `(master_seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id mapped onto the cipher's stream
/// counter, so different ids give independent sequences and a stream can be
/// reconstructed anywhere without shared state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RandomStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Derive a child stream; children with distinct tags are distinct streams.
    pub fn fork(&self, tag: u64) -> Self {
        let id = splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d)));
        Self {
            master_seed: self.master_seed,
            stream_id: id,
        }
    }

    /// Fork along a path of tags, e.g. `[domain, trial, su, channel]`.
    pub fn fork_path(&self, tags: &[u64]) -> Self {
        tags.iter().fold(*self, |s, &t| s.fork(t))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Linear power ratio with a strictly positive value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SnrValue(f64);

impl SnrValue {
    pub fn from_linear(linear: f64) -> Result<Self> {
        if linear.is_finite() && linear > 0.0 {
            Ok(Self(linear))
        } else {
            Err(Error::invalid(format!("SNR must be positive and finite, got {linear}")))
        }
    }

    pub fn from_db(db: f64) -> Result<Self> {
        if !db.is_finite() {
            return Err(Error::invalid(format!("SNR in dB must be finite, got {db}")));
        }
        Self::from_linear(10f64.powf(db / 10.0))
    }

    pub fn linear(self) -> f64 {
        self.0
    }

    pub fn db(self) -> f64 {
        10.0 * self.0.log10()
    }
}

impl TryFrom<f64> for SnrValue {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::from_linear(v)
    }
}

impl From<SnrValue> for f64 {
    fn from(v: SnrValue) -> f64 {
        v.0
    }
}

/// One instantaneous SNR under Rayleigh fading: exponential with the given
/// mean, drawn by inversion of an open-interval uniform.
pub fn draw_rayleigh_snr<R: Rng + ?Sized>(rng: &mut R, mean_snr: SnrValue) -> SnrValue {
    let u: f64 = rng.sample(Open01);
    // u < 1 so -ln(u) > 0; the product can only underflow for absurd means.
    SnrValue((-u.ln() * mean_snr.linear()).max(f64::MIN_POSITIVE))
}

/// Circularly-symmetric complex Gaussian sample with the given total variance.
#[inline]
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * scale, im * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_at_zero_is_half() {
        assert_eq!(q_func(0.0).unwrap(), 0.5);
    }

    #[test]
    fn q_known_quantile() {
        assert!((q_func(1.2816).unwrap() - 0.1).abs() < 1e-4);
    }

    #[test]
    fn q_reflection() {
        let x = 0.7;
        let lhs = q_func(-x).unwrap();
        assert!((lhs - (1.0 - q_func(x).unwrap())).abs() < 1e-15);
    }

    #[test]
    fn q_rejects_non_finite() {
        assert!(q_func(f64::NAN).is_err());
        assert!(q_func(f64::INFINITY).is_err());
    }

    // 1001-point table on [-8, 8] evaluated with mpmath at 60 digits.
    fn reference_table() -> Vec<(f64, f64)> {
        include_str!("../tests/data/q_reference.csv")
            .lines()
            .skip(1)
            .map(|l| {
                let (x, q) = l.split_once(',').unwrap();
                (x.parse().unwrap(), q.parse().unwrap())
            })
            .collect()
    }

    #[test]
    fn q_relative_error_against_reference() {
        let worst = reference_table()
            .into_iter()
            .map(|(x, q)| ((q_tail(x) - q) / q).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-10, "worst relative error {worst:e}");
    }

    // Frozen from mpmath at 50 digits: 0.5*erfc(x/sqrt(2)).
    #[test]
    fn q_high_precision_reference_points() {
        let table = [
            (0.5, 0.308_537_538_725_986_9),
            (2.0, 0.022_750_131_948_179_21),
            (3.5355339059327378, 2.034_760_087_224_793_3e-4),
            (5.0, 2.866_515_718_791_939e-7),
            (8.0, 6.220_960_574_271_784e-16),
        ];
        for (x, expect) in table {
            let got = q_tail(x);
            assert!(((got - expect) / expect).abs() < 1e-12, "Q({x}) = {got:e}, want {expect:e}");
        }
    }

    #[test]
    fn q_monotone_on_grid() {
        let xs: Vec<f64> = (0..1000).map(|i| -8.0 + 16.0 * i as f64 / 999.0).collect();
        for w in xs.windows(2) {
            let (a, b) = (q_tail(w[0]), q_tail(w[1]));
            // Within a few ulps of one, neighbouring values of Q can round to
            // the same double; everywhere else the decrease must be strict.
            assert!(a > b || (a == b && a > 1.0 - 8.0 * f64::EPSILON), "Q({}) = {a:e}, Q({}) = {b:e}", w[0], w[1]);
        }
    }

    // Bisection on Q itself, independent of the rational quantile approximation.
    fn q_inv_bisection(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q_tail(mid) > p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn q_inv_examples() {
        assert_eq!(q_inv(0.5).unwrap(), 0.0);
        let x = q_inv(0.1).unwrap();
        assert!((x - 1.2816).abs() < 1e-3);
        assert!((x - q_inv_bisection(0.1)).abs() < 1e-12);
        assert!((q_inv(q_func(2.0).unwrap()).unwrap() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn q_inv_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(q_inv(p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn q_inv_round_trip_grid() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            assert!((q_tail(q_inv(p).unwrap()) - p).abs() < 1e-9);
        }
        for p in [1e-12, 1e-8, 1e-4, 1.0 - 1e-4, 1.0 - 1e-8] {
            assert!((q_tail(q_inv(p).unwrap()) - p).abs() < 1e-9);
        }
    }

    #[test]
    fn snr_db_round_trip() {
        for db in [-30.0, -15.0, -0.5, 0.0, 10.0, 27.3] {
            let s = SnrValue::from_db(db).unwrap();
            let back = SnrValue::from_db(s.db()).unwrap();
            assert!(((back.linear() - s.linear()) / s.linear()).abs() < 1e-12);
        }
        assert!(SnrValue::from_linear(0.0).is_err());
        assert!(SnrValue::from_linear(-1.0).is_err());
    }

    #[test]
    fn streams_reproduce_and_differ() {
        let a: Vec<u64> = (0..16).map({
            let mut r = RandomStream::new(7, 3).rng();
            move |_| r.random()
        }).collect();
        let b: Vec<u64> = (0..16).map({
            let mut r = RandomStream::new(7, 3).rng();
            move |_| r.random()
        }).collect();
        let c: Vec<u64> = (0..16).map({
            let mut r = RandomStream::new(7, 4).rng();
            move |_| r.random()
        }).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn stream_correlation_is_small() {
        let n = 100_000;
        let mut r0 = RandomStream::new(11, 0).rng();
        let mut r1 = RandomStream::new(11, 1).rng();
        let x: Vec<f64> = (0..n).map(|_| r0.random::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| r1.random::<f64>()).collect();
        let mx = x.iter().sum::<f64>() / n as f64;
        let my = y.iter().sum::<f64>() / n as f64;
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        assert!((cov / (vx * vy).sqrt()).abs() < 0.01);
    }

    #[test]
    fn rayleigh_mean_and_support() {
        let mut rng = RandomStream::new(1, 0).rng();
        let mean = SnrValue::from_linear(1.0).unwrap();
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let s = draw_rayleigh_snr(&mut rng, mean).linear();
            assert!(s > 0.0);
            sum += s;
        }
        assert!((sum / n as f64 - 1.0).abs() < 0.01);
    }

    #[test]
    fn rayleigh_ks_against_exponential() {
        let mut rng = RandomStream::new(2, 0).rng();
        let mean = SnrValue::from_db(-15.0).unwrap();
        let n = 1_000_000;
        let mut draws: Vec<f64> = (0..n).map(|_| draw_rayleigh_snr(&mut rng, mean).linear()).collect();
        draws.sort_by(f64::total_cmp);
        let mut ks: f64 = 0.0;
        for (i, &x) in draws.iter().enumerate() {
            let cdf = 1.0 - (-x / mean.linear()).exp();
            ks = ks.max((cdf - i as f64 / n as f64).abs()).max((cdf - (i + 1) as f64 / n as f64).abs());
        }
        assert!(ks < 0.01, "KS statistic {ks}");
    }
}
