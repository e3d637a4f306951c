//! Key-rate mathematics: binary entropy, statistical-fluctuation bounds,
//! single-photon bounds for each protocol family, and the GLLP rate.
//!
//! The rate lower bound is
//!
//! ```text
//! R = q * ( -Q_mu f(E_mu) H2(E_mu) + Q1 (1 - H2(e1)) )
//! ```
//!
//! where `Q1`/`e1` are the single-photon gain and error. Decoy families
//! bound them from the measured decoy statistics after shifting the
//! decoy gain (and background yield) by `u_alpha` standard deviations.
//! Only `Q_nu` and `Y0` are fluctuation-adjusted; `Q_mu`, `E_mu` are
//! used as measured.

use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelPoint};
use crate::error::{Error, Result};
use crate::model::{
    key_length, validate_plan, validate_protocol, validate_setup, validate_stats, KeyRateReport,
    MeasuredStats, ProtocolFamily, ProtocolSpec, SessionPlan, SetupParams, SinglePhotonBounds,
};

/// Inputs this far outside `[0, 1]` are clamped by [`binary_entropy`].
pub const ENTROPY_TOLERANCE: f64 = 1e-12;

/// Upper fluctuation bound reported when no events were observed.
pub const ZERO_EVENT_UPPER_CAP: f64 = 1.0;

/// Single-photon errors above this leave nothing for privacy amplification.
pub const MAX_SINGLE_PHOTON_ERROR: f64 = 0.5;

/// A note is attached when `trials * value` falls to this many `u_alpha^2`.
const WIDE_BAND_EVENTS_PER_U2: f64 = 4.0;

/// `H2(x) = -x log2 x - (1-x) log2 (1-x)`, with `H2(0) = H2(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(-ENTROPY_TOLERANCE..=1.0 + ENTROPY_TOLERANCE).contains(&x) {
        return Err(Error::out_of_range("x", format!("{x} is not a probability")));
    }
    Ok(h2(x.clamp(0.0, 1.0)))
}

fn h2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        -x * x.log2() - (1.0 - x) * (-x).ln_1p() / std::f64::consts::LN_2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

/// `value * (1 -/+ u_alpha / sqrt(trials * value))`, lower end clamped at 0.
///
/// With `u_alpha > 0` and no observed events the interval is undefined and
/// `Degenerate` is returned; callers substitute `(0, ZERO_EVENT_UPPER_CAP)`.
pub fn fluct_bounds(value: f64, trials: f64, u_alpha: f64) -> Result<Interval> {
    if u_alpha == 0.0 {
        return Ok(Interval {
            lower: value,
            upper: value,
        });
    }
    let events = trials * value;
    if !(events > 0.0) {
        return Err(Error::Degenerate(format!(
            "no events observed ({trials} trials at rate {value})"
        )));
    }
    let spread = u_alpha / events.sqrt();
    Ok(Interval {
        lower: (value * (1.0 - spread)).max(0.0),
        upper: value * (1.0 + spread),
    })
}

fn fluct_or_cap(value: f64, trials: f64, u_alpha: f64) -> (Interval, bool) {
    match fluct_bounds(value, trials, u_alpha) {
        Ok(interval) => (interval, false),
        Err(_) => (
            Interval {
                lower: 0.0,
                upper: ZERO_EVENT_UPPER_CAP,
            },
            true,
        ),
    }
}

fn check_intensities(mu: f64, nu: f64) -> Result<f64> {
    let denominator = mu * nu - nu * nu;
    if !(nu > 0.0 && nu < mu) || !(denominator > 0.0) {
        return Err(Error::Degenerate(format!(
            "need 0 < nu < mu, got mu = {mu}, nu = {nu}"
        )));
    }
    Ok(mu * mu * (-mu).exp() / denominator)
}

/// Raw (unclamped) one-decoy single-photon gain bound.
fn one_decoy_q1(prefactor: f64, mu: f64, nu: f64, stats: &MeasuredStats, qnu_lower: f64, e0: f64) -> f64 {
    let (mu2, nu2) = (mu * mu, nu * nu);
    let signal = stats.gain_signal * mu.exp();
    prefactor
        * (qnu_lower * nu.exp()
            - signal * nu2 / mu2
            - stats.qber_signal * signal * (mu2 - nu2) / (e0 * mu2))
}

/// Raw weak+vacuum single-photon gain bound and unclamped error numerator.
fn weak_vacuum_q1(prefactor: f64, mu: f64, nu: f64, stats: &MeasuredStats, qnu_lower: f64, y0: Interval, e0: f64) -> (f64, f64) {
    let (mu2, nu2) = (mu * mu, nu * nu);
    let q1 = prefactor
        * (qnu_lower * nu.exp()
            - stats.gain_signal * mu.exp() * nu2 / mu2
            - y0.upper * (mu2 - nu2) / mu2);
    let error_numerator = stats.qber_signal * stats.gain_signal - e0 * y0.lower * (-mu).exp();
    (q1, error_numerator)
}

fn check_qnu_lower(stats: &MeasuredStats, qnu_lower: f64) -> Result<()> {
    match stats.gain_weak {
        Some(q_nu) if qnu_lower > q_nu => Err(Error::out_of_range(
            "qnu_lower",
            format!("{qnu_lower} exceeds the measured weak gain {q_nu}"),
        )),
        _ => Ok(()),
    }
}

fn no_key_below_zero(q1: f64) -> Error {
    Error::NoSecureKey(format!("single-photon gain lower bound {q1:e} is not positive"))
}

/// One-decoy bounds on `Q1` (lower) and `e1` (upper).
pub fn one_decoy_bounds(
    mu: f64,
    nu: f64,
    stats: &MeasuredStats,
    qnu_lower: f64,
    e0: f64,
) -> Result<SinglePhotonBounds> {
    let prefactor = check_intensities(mu, nu)?;
    check_qnu_lower(stats, qnu_lower)?;
    if !(e0 > 0.0) {
        return Err(Error::Degenerate(format!("vacuum error e0 = {e0} must be positive")));
    }
    let q1 = one_decoy_q1(prefactor, mu, nu, stats, qnu_lower, e0);
    if !(q1 > 0.0) {
        return Err(no_key_below_zero(q1));
    }
    Ok(SinglePhotonBounds {
        q1_lower: q1,
        e1_upper: Some(stats.qber_signal * stats.gain_signal / q1),
        qnu_lower: Some(qnu_lower),
        y0_lower: None,
        y0_upper: None,
    })
}

/// Weak+vacuum bounds on `Q1` (lower) and `e1` (upper, clamped at 0).
pub fn weak_vacuum_bounds(
    mu: f64,
    nu: f64,
    stats: &MeasuredStats,
    qnu_lower: f64,
    y0_lower: f64,
    y0_upper: f64,
    e0: f64,
) -> Result<SinglePhotonBounds> {
    let prefactor = check_intensities(mu, nu)?;
    check_qnu_lower(stats, qnu_lower)?;
    if y0_lower > y0_upper {
        return Err(Error::out_of_range(
            "y0_lower",
            format!("{y0_lower} exceeds y0_upper {y0_upper}"),
        ));
    }
    let y0 = Interval {
        lower: y0_lower,
        upper: y0_upper,
    };
    let (q1, numerator) = weak_vacuum_q1(prefactor, mu, nu, stats, qnu_lower, y0, e0);
    if !(q1 > 0.0) {
        return Err(no_key_below_zero(q1));
    }
    Ok(SinglePhotonBounds {
        q1_lower: q1,
        e1_upper: Some((numerator / q1).max(0.0)),
        qnu_lower: Some(qnu_lower),
        y0_lower: Some(y0_lower),
        y0_upper: Some(y0_upper),
    })
}

/// GLLP key rate in bits per pulse. The raw value is returned; it is
/// negative whenever error correction leaks more than the single-photon
/// part can distill.
pub fn gllp_rate(q: f64, stats: &MeasuredStats, q1: f64, e1: f64, f: f64) -> f64 {
    let leak = stats.gain_signal * f * h2(stats.qber_signal);
    q * (-leak + q1 * (1.0 - h2(e1.clamp(0.0, 1.0))))
}

/// Single-photon yield, error and gain of an ideal infinite-decoy analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalSinglePhoton {
    #[serde(rename = "yield_Y1")]
    pub yield_y1: f64,
    pub error_e1: f64,
    #[serde(rename = "gain_Q1")]
    pub gain_q1: f64,
}

pub fn theoretical_single_photon(setup: &SetupParams, point: &ChannelPoint, mu: f64) -> TheoreticalSinglePhoton {
    let y0 = setup.dark_count_y0;
    let eta = point.eta;
    let yield_y1 = y0 + eta - y0 * eta;
    let error_e1 = if yield_y1 > 0.0 {
        (setup.vacuum_error_e0 * y0 + setup.detector_error_e_det * eta) / yield_y1
    } else {
        setup.vacuum_error_e0
    };
    TheoreticalSinglePhoton {
        yield_y1,
        error_e1,
        gain_q1: yield_y1 * mu * (-mu).exp(),
    }
}

/// Rate with exact knowledge of the single-photon yield and error
/// (infinite data, infinitely many decoys). The signal statistics come
/// from the channel model; `q = 1/2`.
pub fn infinite_decoy_rate(setup: &SetupParams, point: &ChannelPoint, mu: f64) -> Result<f64> {
    let signal = channel::expected_stats(setup, point, mu)?;
    let single = theoretical_single_photon(setup, point, mu);
    let stats = MeasuredStats {
        gain_signal: signal.gain,
        qber_signal: signal.qber,
        gain_weak: None,
        qber_weak: None,
        background_y0: None,
        background_error_e0: None,
        sift_ratio_q: 0.5,
    };
    let f = setup.ec_efficiency(signal.qber);
    Ok(gllp_rate(0.5, &stats, single.gain_q1, single.error_e1, f))
}

/// Probability that a Poisson source of mean `mu` emits two or more photons.
fn multi_photon_probability(mu: f64) -> f64 {
    -(-mu).exp_m1() - mu * (-mu).exp()
}

fn no_decoy_single_photon(mu: f64, stats: &MeasuredStats) -> (f64, f64) {
    let q1 = stats.gain_signal - multi_photon_probability(mu);
    (q1, stats.qber_signal * stats.gain_signal / q1)
}

/// Key rate without decoys: every multi-photon emission is assumed
/// detected and fully known to the eavesdropper.
pub fn no_decoy_rate(q: f64, mu: f64, stats: &MeasuredStats, f: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::out_of_range("mu", format!("{mu} must be positive")));
    }
    let (q1, e1) = no_decoy_single_photon(mu, stats);
    if !(q1 > 0.0) {
        return Err(no_key_below_zero(q1));
    }
    if e1 > MAX_SINGLE_PHOTON_ERROR {
        return Err(Error::NoSecureKey(format!(
            "single-photon error upper bound {e1} exceeds 1/2"
        )));
    }
    Ok(gllp_rate(q, stats, q1, e1, f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NoKeyReason {
    SinglePhotonGainNotPositive,
    SinglePhotonErrorAboveHalf,
    RateNotPositive,
}

impl NoKeyReason {
    pub fn describe(self) -> &'static str {
        match self {
            NoKeyReason::SinglePhotonGainNotPositive => "single-photon gain lower bound is not positive",
            NoKeyReason::SinglePhotonErrorAboveHalf => "single-photon error upper bound exceeds 1/2",
            NoKeyReason::RateNotPositive => "key rate lower bound is not positive",
        }
    }
}

/// Result of the rate pipeline before it is dressed up as a report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEvaluation {
    pub rate: f64,
    pub bounds: SinglePhotonBounds,
    pub e0: f64,
    pub ec_efficiency: f64,
    pub no_key: Option<NoKeyReason>,
    /// `trials * Q_nu` of the weak-decoy fluctuation bound.
    pub weak_events: Option<f64>,
    /// `trials * Y0` of the background fluctuation bound.
    pub vacuum_events: Option<f64>,
    pub weak_zero_events: bool,
    pub vacuum_zero_events: bool,
}

impl RateEvaluation {
    pub fn secure(&self) -> bool {
        self.no_key.is_none()
    }
}

/// Rate lower bound for measured statistics, without validation or
/// report assembly. This is the inner loop of the parameter search.
pub fn evaluate(
    setup: &SetupParams,
    protocol: &ProtocolSpec,
    plan: &SessionPlan,
    stats: &MeasuredStats,
) -> Result<RateEvaluation> {
    let n = plan.total_pulses_n as f64;
    let u = plan.u_alpha;
    let q = stats.sift_ratio_q;
    let f = setup.ec_efficiency(stats.qber_signal);
    let mut eval = RateEvaluation {
        rate: 0.0,
        bounds: SinglePhotonBounds {
            q1_lower: 0.0,
            e1_upper: None,
            qnu_lower: None,
            y0_lower: None,
            y0_upper: None,
        },
        e0: setup.vacuum_error_e0,
        ec_efficiency: f,
        no_key: None,
        weak_events: None,
        vacuum_events: None,
        weak_zero_events: false,
        vacuum_zero_events: false,
    };

    let (q1, e1) = match protocol.family {
        ProtocolFamily::InfiniteDecoy => {
            return Err(Error::Unsupported(
                "the infinite-decoy limit needs the channel model; use infinite_decoy_rate".into(),
            ))
        }
        ProtocolFamily::NoDecoy => no_decoy_single_photon(protocol.mu, stats),
        ProtocolFamily::OneDecoy | ProtocolFamily::WeakVacuum => {
            let nu = protocol.nu.ok_or(Error::MissingField("nu"))?;
            let prefactor = check_intensities(protocol.mu, nu)?;
            let q_nu = stats.gain_weak.ok_or(Error::MissingField("gain_weak_Qnu"))?;
            let weak_trials = protocol.frac_weak * n;
            let (qnu, zero) = fluct_or_cap(q_nu, weak_trials, u);
            eval.weak_events = Some(weak_trials * q_nu);
            eval.weak_zero_events = zero;
            eval.bounds.qnu_lower = Some(qnu.lower);

            if protocol.family == ProtocolFamily::OneDecoy {
                let q1 = one_decoy_q1(prefactor, protocol.mu, nu, stats, qnu.lower, eval.e0);
                (q1, stats.qber_signal * stats.gain_signal / q1)
            } else {
                let y0 = stats.background_y0.ok_or(Error::MissingField("background_Y0"))?;
                eval.e0 = stats.background_error_e0.unwrap_or(setup.vacuum_error_e0);
                let vacuum_trials = protocol.frac_vacuum * n;
                let (y0_bounds, zero) = fluct_or_cap(y0, vacuum_trials, u);
                eval.vacuum_events = Some(vacuum_trials * y0);
                eval.vacuum_zero_events = zero;
                eval.bounds.y0_lower = Some(y0_bounds.lower);
                eval.bounds.y0_upper = Some(y0_bounds.upper);
                let (q1, numerator) =
                    weak_vacuum_q1(prefactor, protocol.mu, nu, stats, qnu.lower, y0_bounds, eval.e0);
                (q1, (numerator / q1).max(0.0))
            }
        }
    };

    if !(q1 > 0.0) {
        eval.no_key = Some(NoKeyReason::SinglePhotonGainNotPositive);
        eval.rate = gllp_rate(q, stats, 0.0, 0.0, f);
        return Ok(eval);
    }
    eval.bounds.q1_lower = q1;
    eval.bounds.e1_upper = Some(e1);
    if e1 > MAX_SINGLE_PHOTON_ERROR {
        eval.no_key = Some(NoKeyReason::SinglePhotonErrorAboveHalf);
        eval.rate = gllp_rate(q, stats, 0.0, 0.0, f);
        return Ok(eval);
    }
    eval.rate = gllp_rate(q, stats, q1, e1, f);
    if !(eval.rate > 0.0) {
        eval.no_key = Some(NoKeyReason::RateNotPositive);
    }
    Ok(eval)
}

/// Full analysis of measured statistics under one protocol family.
///
/// A protocol that yields no secure key still produces a report, with
/// `secure = false` and the raw non-positive rate recorded.
pub fn analyze(
    setup: &SetupParams,
    protocol: &ProtocolSpec,
    plan: &SessionPlan,
    stats: &MeasuredStats,
) -> Result<KeyRateReport> {
    let setup = validate_setup(setup.clone())?;
    let protocol = validate_protocol(*protocol)?;
    let plan = validate_plan(*plan)?;
    let stats = validate_stats(*stats)?;
    let eval = evaluate(&setup, &protocol, &plan, &stats)?;

    let mut notes = Vec::new();
    let u2 = plan.u_alpha * plan.u_alpha;
    for (label, events, zero) in [
        ("Q_nu", eval.weak_events, eval.weak_zero_events),
        ("Y0", eval.vacuum_events, eval.vacuum_zero_events),
    ] {
        let Some(events) = events else { continue };
        if zero {
            notes.push(format!(
                "no {label} events observed; lower bound set to 0 and upper bound capped at {ZERO_EVENT_UPPER_CAP}"
            ));
        } else if plan.u_alpha > 0.0 && events <= WIDE_BAND_EVENTS_PER_U2 * u2 {
            notes.push(format!(
                "wide statistical band on {label}: {events:.3e} expected events against u_alpha^2 = {u2}; \
                 relative half-width {:.3}",
                plan.u_alpha / events.sqrt()
            ));
        }
    }

    Ok(KeyRateReport {
        family: protocol.family,
        rate_lower: eval.rate,
        rate_lower_clamped: eval.rate.max(0.0),
        key_length: key_length(plan.total_pulses_n, eval.rate),
        secure: eval.secure(),
        no_key_reason: eval.no_key.map(|r| r.describe().to_string()),
        bounds: eval.bounds,
        e0_used: eval.e0,
        ec_efficiency_used: eval.ec_efficiency,
        protocol,
        plan,
        stats,
        notes,
    })
}

/// Report for the infinite-decoy limit at one channel point. The
/// statistics are the channel-model expectations and the bounds are the
/// exact single-photon gain and error.
pub fn analyze_infinite_decoy(
    setup: &SetupParams,
    point: &ChannelPoint,
    protocol: &ProtocolSpec,
    plan: &SessionPlan,
) -> Result<KeyRateReport> {
    let setup = validate_setup(setup.clone())?;
    let protocol = validate_protocol(*protocol)?;
    let plan = validate_plan(*plan)?;
    if protocol.family != ProtocolFamily::InfiniteDecoy {
        return Err(Error::Unsupported(format!(
            "{} needs measured statistics; use analyze",
            protocol.family
        )));
    }
    let stats = channel::expected_measured(&setup, point, &protocol)?;
    let single = theoretical_single_photon(&setup, point, protocol.mu);
    let f = setup.ec_efficiency(stats.qber_signal);
    let rate = infinite_decoy_rate(&setup, point, protocol.mu)?;
    let no_key = if single.error_e1 > MAX_SINGLE_PHOTON_ERROR {
        Some(NoKeyReason::SinglePhotonErrorAboveHalf)
    } else if !(rate > 0.0) {
        Some(NoKeyReason::RateNotPositive)
    } else {
        None
    };
    Ok(KeyRateReport {
        family: protocol.family,
        rate_lower: rate,
        rate_lower_clamped: rate.max(0.0),
        key_length: key_length(plan.total_pulses_n, rate),
        secure: no_key.is_none(),
        no_key_reason: no_key.map(|r| r.describe().to_string()),
        bounds: SinglePhotonBounds {
            q1_lower: single.gain_q1,
            e1_upper: Some(single.error_e1),
            qnu_lower: None,
            y0_lower: None,
            y0_upper: None,
        },
        e0_used: setup.vacuum_error_e0,
        ec_efficiency_used: f,
        protocol,
        plan,
        stats,
        notes: vec![format!(
            "infinite-decoy limit at {} km: exact single-photon yield {:.6e}",
            point.distance_km, single.yield_y1
        )],
    })
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use crate::model::presets;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn one_decoy_measurement() -> MeasuredStats {
        MeasuredStats {
            gain_signal: 8.757e-3,
            qber_signal: 9.536e-3,
            gain_weak: Some(1.360e-3),
            qber_weak: Some(2.689e-2),
            background_y0: None,
            background_error_e0: None,
            sift_ratio_q: 0.4478,
        }
    }

    fn weak_vacuum_measurement() -> MeasuredStats {
        MeasuredStats {
            gain_signal: 1.81e-3,
            qber_signal: 3.05e-2,
            gain_weak: Some(5.47e-4),
            qber_weak: Some(7.78e-2),
            background_y0: Some(6.02e-5),
            background_error_e0: Some(0.51),
            sift_ratio_q: 0.319,
        }
    }

    #[test]
    fn entropy_fixed_points() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // oracle: 0.499915958164528
        assert!(rel(binary_entropy(0.11).unwrap(), 0.499915958164528) < 1e-13);
        assert_eq!(binary_entropy(-1e-13).unwrap(), 0.0);
        assert!(binary_entropy(-1e-9).is_err());
        assert!(binary_entropy(1.1).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
    }

    #[test]
    fn entropy_symmetry_and_concavity() {
        let n = 1000;
        for k in 0..=n {
            let x = k as f64 / n as f64;
            let a = binary_entropy(x).unwrap();
            let b = binary_entropy(1.0 - x).unwrap();
            assert!((a - b).abs() < 1e-12, "x={x}");
        }
        let h = 1e-3;
        for k in 1..999 {
            let x = k as f64 * 1e-3;
            if x - h <= 0.0 || x + h >= 1.0 {
                continue;
            }
            let second = binary_entropy(x + h).unwrap() - 2.0 * binary_entropy(x).unwrap()
                + binary_entropy(x - h).unwrap();
            assert!(second < 0.0, "x={x}");
        }
    }

    #[test]
    fn fluctuation_examples() {
        // oracle: 1.2461914724092217e-3
        let weak = fluct_bounds(1.360e-3, 1.05e7, 10.0).unwrap();
        assert!(rel(weak.lower, 1.2461914724092217e-3) < 1e-12);
        assert!(rel(weak.lower, 1.2462e-3) < 1e-4);

        let iv = fluct_bounds(0.37, 123.0, 0.0).unwrap();
        assert_eq!((iv.lower, iv.upper), (0.37, 0.37));

        // oracle: 4.138751837155512e-5, 7.901248162844488e-5
        let y0 = fluct_bounds(6.02e-5, 0.162 * 1.05e8, 10.0).unwrap();
        assert!(rel(y0.lower, 4.138751837155512e-5) < 1e-12);
        assert!(rel(y0.upper, 7.901248162844488e-5) < 1e-12);
    }

    #[test]
    fn fluctuation_zero_events() {
        assert!(matches!(fluct_bounds(0.0, 1e6, 10.0), Err(Error::Degenerate(_))));
        assert!(matches!(fluct_bounds(0.1, 0.0, 10.0), Err(Error::Degenerate(_))));
        assert_eq!(fluct_bounds(0.0, 1e6, 0.0).unwrap().upper, 0.0);
        let lower = fluct_bounds(1e-3, 100.0, 10.0).unwrap().lower;
        assert_eq!(lower, 0.0);
    }

    #[test]
    fn fluctuation_bracket_and_convergence() {
        let value = 2.5e-3;
        let mut previous = f64::INFINITY;
        for k in 4..=12 {
            let iv = fluct_bounds(value, 10f64.powi(k), 10.0).unwrap();
            assert!(iv.lower <= value && value <= iv.upper);
            let width = iv.upper - iv.lower;
            assert!(width < previous);
            previous = width;
        }
        assert!(previous / value < 1e-3);
    }

    #[test]
    fn one_decoy_bounds_against_oracle() {
        let stats = one_decoy_measurement();
        let b = one_decoy_bounds(0.80, 0.120, &stats, 1.2461914724092217e-3, 0.5).unwrap();
        // oracle: 2.12591039610671e-3, 3.9280466454715234e-2
        assert!(rel(b.q1_lower, 2.12591039610671e-3) < 1e-9, "{}", b.q1_lower);
        assert!(rel(b.e1_upper.unwrap(), 3.9280466454715234e-2) < 1e-9);
    }

    #[test]
    fn one_decoy_without_decoy_gain_has_no_key() {
        let mut stats = one_decoy_measurement();
        stats.qber_signal = 0.4;
        let err = one_decoy_bounds(0.8, 0.12, &stats, 0.0, 0.5).unwrap_err();
        assert!(matches!(err, Error::NoSecureKey(_)));
    }

    #[test]
    fn one_decoy_degenerate_intensities() {
        let stats = one_decoy_measurement();
        for nu in [0.8, 0.9, 0.0, -0.1] {
            assert!(matches!(
                one_decoy_bounds(0.8, nu, &stats, 1e-3, 0.5),
                Err(Error::Degenerate(_))
            ));
        }
        assert!(one_decoy_bounds(0.8, 0.12, &stats, 2e-3, 0.5).is_err());
    }

    #[test]
    fn weak_vacuum_bounds_against_oracle() {
        let stats = weak_vacuum_measurement();
        let b = weak_vacuum_bounds(
            0.55,
            0.152,
            &stats,
            4.9634165531262465e-4,
            4.138751837155512e-5,
            7.901248162844488e-5,
            0.51,
        )
        .unwrap();
        // oracle: 7.6518671180389465e-4, 5.6230660686077673e-2
        assert!(rel(b.q1_lower, 7.6518671180389465e-4) < 1e-9, "{}", b.q1_lower);
        assert!(rel(b.e1_upper.unwrap(), 5.6230660686077673e-2) < 1e-9);
    }

    #[test]
    fn weak_vacuum_zero_background_drops_the_error_term() {
        let mut stats = weak_vacuum_measurement();
        stats.background_y0 = Some(0.0);
        let (mu, nu, qnu) = (0.55, 0.152, 5.0e-4);
        let b = weak_vacuum_bounds(mu, nu, &stats, qnu, 0.0, 0.0, 0.51).unwrap();
        let pre = mu * mu * (-mu).exp() / (mu * nu - nu * nu);
        let expected = pre * (qnu * nu.exp() - stats.gain_signal * mu.exp() * nu * nu / (mu * mu));
        assert!(rel(b.q1_lower, expected) < 1e-14);
        assert!(rel(b.e1_upper.unwrap(), stats.qber_signal * stats.gain_signal / expected) < 1e-14);
    }

    #[test]
    fn weak_vacuum_error_clamps_at_zero() {
        let mut stats = weak_vacuum_measurement();
        stats.qber_signal = 1e-4;
        let b = weak_vacuum_bounds(0.55, 0.152, &stats, 4.96e-4, 4.1e-5, 4.2e-5, 0.51).unwrap();
        assert_eq!(b.e1_upper, Some(0.0));
    }

    #[test]
    fn gllp_rate_examples() {
        let stats = one_decoy_measurement();
        let r = gllp_rate(0.4478, &stats, 2.12591039610671e-3, 3.9280466454715234e-2, 1.22);
        // oracle: 3.5274526147745106e-4
        assert!(rel(r, 3.5274526147745106e-4) < 1e-9, "{r}");
        assert!(rel(r, 3.6e-4) < 0.05);

        let leak_only = gllp_rate(0.4478, &stats, 0.0, 0.2, 1.22);
        let expected = -0.4478 * stats.gain_signal * 1.22 * h2(stats.qber_signal);
        assert!(leak_only < 0.0 && rel(leak_only, expected) < 1e-15);

        let mut clean = stats;
        clean.qber_signal = 0.0;
        assert_eq!(gllp_rate(0.5, &clean, 1e-3, 0.0, 1.22), 0.5 * 1e-3);
    }

    #[test]
    fn gllp_rate_is_linear_in_q1_and_falls_with_e1() {
        let stats = one_decoy_measurement();
        let base = gllp_rate(0.45, &stats, 0.0, 0.03, 1.22);
        let slope = gllp_rate(0.45, &stats, 1e-3, 0.03, 1.22) - base;
        for k in 1..10 {
            let q1 = k as f64 * 1e-3;
            let r = gllp_rate(0.45, &stats, q1, 0.03, 1.22);
            assert!((r - (base + k as f64 * slope)).abs() < 1e-15);
        }
        let mut previous = f64::INFINITY;
        for k in 0..=50 {
            let r = gllp_rate(0.45, &stats, 2e-3, k as f64 * 0.01, 1.22);
            assert!(r < previous);
            previous = r;
        }
    }

    #[test]
    fn infinite_decoy_examples() {
        let setup = presets::one_decoy_setup();
        let point = channel::transmittance(&setup, 15.0).unwrap();
        let r = infinite_decoy_rate(&setup, &point, 0.8).unwrap();
        // oracle: 1.4167344057289429e-3
        assert!(rel(r, 1.4167344057289429e-3) < 1e-9, "{r}");
        assert!(rel(r, 1.418e-3) < 0.005);

        let mut ideal = setup.clone();
        ideal.dark_count_y0 = 0.0;
        ideal.detector_error_e_det = 0.0;
        let lossless = ChannelPoint { distance_km: 0.0, eta: 1.0 };
        let mu = 0.4;
        let r = infinite_decoy_rate(&ideal, &lossless, mu).unwrap();
        assert!(rel(r, 0.5 * mu * (-mu).exp()) < 1e-14);

        for l in [95.0, 110.0, 150.0] {
            let point = channel::transmittance(&setup, l).unwrap();
            let best = (1..=1000)
                .map(|k| infinite_decoy_rate(&setup, &point, k as f64 * 1e-3).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(best <= 0.0, "l={l} rate={best}");
        }
    }

    #[test]
    fn infinite_decoy_report() {
        let setup = presets::one_decoy_setup();
        let point = channel::transmittance(&setup, 15.0).unwrap();
        let plan = SessionPlan::new(105_000_000, 10.0);
        let report =
            analyze_infinite_decoy(&setup, &point, &ProtocolSpec::infinite_decoy(0.8), &plan).unwrap();
        assert!(report.secure);
        assert!(rel(report.rate_lower, 1.4167344057289429e-3) < 1e-9);
        assert_eq!(report.stats.sift_ratio_q, 0.5);
        assert!(report.bounds.q1_lower <= report.stats.gain_signal);
        let wrong = analyze_infinite_decoy(&setup, &point, &ProtocolSpec::no_decoy(0.8), &plan);
        assert!(matches!(wrong, Err(Error::Unsupported(_))));
    }

    #[test]
    fn no_decoy_examples() {
        let setup = presets::one_decoy_setup();
        let point = channel::transmittance(&setup, 15.0).unwrap();
        for k in 1..=1000 {
            let mu = k as f64 * 1e-3;
            let protocol = ProtocolSpec::no_decoy(mu);
            let stats = channel::expected_measured(&setup, &point, &protocol).unwrap();
            match no_decoy_rate(0.5, mu, &stats, 1.22) {
                Ok(r) => assert!(r <= 0.0, "mu={mu} r={r}"),
                Err(e) => assert!(matches!(e, Error::NoSecureKey(_))),
            }
        }

        let stats = MeasuredStats {
            gain_signal: 1e-4,
            ..one_decoy_measurement()
        };
        assert!(matches!(no_decoy_rate(0.5, 0.8, &stats, 1.22), Err(Error::NoSecureKey(_))));
        assert!(no_decoy_rate(0.5, 0.0, &stats, 1.22).is_err());
    }

    #[test]
    fn analyze_one_decoy_measurement() {
        let setup = presets::one_decoy_setup();
        let protocol = ProtocolSpec::one_decoy(0.80, 0.120, 0.10);
        let plan = SessionPlan::new(105_000_000, 10.0);
        let report = analyze(&setup, &protocol, &plan, &one_decoy_measurement()).unwrap();
        assert!(report.secure);
        assert!(rel(report.rate_lower, 3.5274526147745106e-4) < 1e-9);
        assert_eq!(report.key_length, 37_038);
        assert!(rel(report.bounds.qnu_lower.unwrap(), 1.2461914724092217e-3) < 1e-12);
        assert!(report.notes.is_empty(), "{:?}", report.notes);
    }

    #[test]
    fn analyze_weak_vacuum_measurement() {
        let setup = presets::weak_vacuum_setup();
        let protocol = ProtocolSpec {
            family: ProtocolFamily::WeakVacuum,
            mu: 0.55,
            nu: Some(0.152),
            frac_signal: 0.635,
            frac_weak: 0.203,
            frac_vacuum: 0.162,
        };
        let plan = SessionPlan::new(105_000_000, 10.0);
        let report = analyze(&setup, &protocol, &plan, &weak_vacuum_measurement()).unwrap();
        assert!(report.secure);
        assert_eq!(report.e0_used, 0.51);
        // oracle: 2.9169987235447259e-5
        assert!(rel(report.rate_lower, 2.9169987235447259e-5) < 1e-9);
    }

    #[test]
    fn analyze_weak_vacuum_data_as_one_decoy_is_insecure() {
        let setup = presets::weak_vacuum_setup();
        let protocol = ProtocolSpec::one_decoy(0.55, 0.152, 0.203);
        let plan = SessionPlan::new(105_000_000, 10.0);
        let report = analyze(&setup, &protocol, &plan, &weak_vacuum_measurement()).unwrap();
        assert!(!report.secure);
        assert!(report.rate_lower <= 0.0);
        assert_eq!(report.key_length, 0);
        // oracle: -6.8125582836055578e-5
        assert!(rel(report.rate_lower, -6.8125582836055578e-5) < 1e-9);
    }

    #[test]
    fn analyze_reports_missing_fields() {
        let setup = presets::weak_vacuum_setup();
        let plan = SessionPlan::new(105_000_000, 10.0);
        let mut stats = weak_vacuum_measurement();
        stats.background_y0 = None;
        let wv = ProtocolSpec::weak_vacuum(0.55, 0.152, 0.2, 0.15);
        assert_eq!(
            analyze(&setup, &wv, &plan, &stats).unwrap_err(),
            Error::MissingField("background_Y0")
        );
        stats.gain_weak = None;
        let one = ProtocolSpec::one_decoy(0.55, 0.152, 0.2);
        assert_eq!(
            analyze(&setup, &one, &plan, &stats).unwrap_err(),
            Error::MissingField("gain_weak_Qnu")
        );
        let inf = ProtocolSpec::infinite_decoy(0.5);
        assert!(matches!(analyze(&setup, &inf, &plan, &stats), Err(Error::Unsupported(_))));
    }

    #[test]
    fn analyze_flags_small_samples_and_zero_events() {
        let setup = presets::one_decoy_setup();
        let protocol = ProtocolSpec::one_decoy(0.80, 0.120, 0.10);
        let small = analyze(&setup, &protocol, &SessionPlan::new(1_000, 10.0), &one_decoy_measurement()).unwrap();
        assert!(small.notes.iter().any(|n| n.contains("wide statistical band on Q_nu")));
        assert!(!small.secure);

        let mut stats = one_decoy_measurement();
        stats.gain_weak = Some(0.0);
        let zero = analyze(&setup, &protocol, &SessionPlan::new(105_000_000, 10.0), &stats).unwrap();
        assert!(zero.notes.iter().any(|n| n.contains("no Q_nu events")));
        assert_eq!(zero.bounds.qnu_lower, Some(0.0));
        assert!(!zero.secure);
    }

    #[test]
    fn analyze_rejects_invalid_inputs() {
        let setup = presets::one_decoy_setup();
        let plan = SessionPlan::new(105_000_000, 10.0);
        let mut stats = one_decoy_measurement();
        stats.gain_signal = 1.5;
        let protocol = ProtocolSpec::one_decoy(0.80, 0.120, 0.10);
        assert!(matches!(
            analyze(&setup, &protocol, &plan, &stats),
            Err(Error::OutOfRange { field: "gain_signal_Qmu", .. })
        ));
    }
}
