//! Domain types shared by every stage of the pipeline.
//!
//! All types are plain data. Construction does not validate; the
//! `validate_*` functions check invariants and hand the value back
//! unchanged, so they can be chained after deserialization.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of state fractions.
pub const FRACTION_SUM_TOLERANCE: f64 = 1e-12;

pub const DEFAULT_VACUUM_ERROR: f64 = 0.5;
pub const DEFAULT_EC_EFFICIENCY: f64 = 1.22;

fn default_vacuum_error() -> f64 {
    DEFAULT_VACUUM_ERROR
}

fn default_ec_efficiency() -> f64 {
    DEFAULT_EC_EFFICIENCY
}

/// One row of a piecewise-constant error-correction efficiency table:
/// `f` applies to every QBER up to and including `max_qber`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcStep {
    pub max_qber: f64,
    pub f: f64,
}

/// Intrinsic device characteristics of a QKD link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupParams {
    /// Dark-count probability per pulse.
    #[serde(rename = "dark_count_Y0")]
    pub dark_count_y0: f64,
    pub detector_error_e_det: f64,
    pub receiver_efficiency_eta_bob: f64,
    pub loss_alpha_db_per_km: f64,
    /// Error rate of a pure background (vacuum) detection.
    #[serde(default = "default_vacuum_error")]
    pub vacuum_error_e0: f64,
    #[serde(default = "default_ec_efficiency")]
    pub ec_efficiency_f: f64,
    /// Optional QBER-dependent override of `ec_efficiency_f`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ec_efficiency_table: Option<Vec<EcStep>>,
}

impl SetupParams {
    pub fn new(
        dark_count_y0: f64,
        detector_error_e_det: f64,
        receiver_efficiency_eta_bob: f64,
        loss_alpha_db_per_km: f64,
    ) -> Self {
        SetupParams {
            dark_count_y0,
            detector_error_e_det,
            receiver_efficiency_eta_bob,
            loss_alpha_db_per_km,
            vacuum_error_e0: DEFAULT_VACUUM_ERROR,
            ec_efficiency_f: DEFAULT_EC_EFFICIENCY,
            ec_efficiency_table: None,
        }
    }

    /// Error-correction inefficiency to apply at the given signal QBER.
    pub fn ec_efficiency(&self, qber: f64) -> f64 {
        match &self.ec_efficiency_table {
            Some(table) if !table.is_empty() => table
                .iter()
                .find(|step| qber <= step.max_qber)
                .unwrap_or_else(|| table.last().unwrap())
                .f,
            _ => self.ec_efficiency_f,
        }
    }
}

/// Two preset detector calibrations.
pub mod presets {
    use super::SetupParams;

    /// Calibration used for the 15 km one-decoy run.
    pub fn one_decoy_setup() -> SetupParams {
        SetupParams::new(2.11e-5, 8.27e-3, 2.27e-2, 0.21)
    }

    /// Calibration used for the 60 km weak+vacuum run.
    pub fn weak_vacuum_setup() -> SetupParams {
        SetupParams::new(6.14e-5, 1.38e-2, 5.82e-2, 0.21)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProtocolFamily {
    NoDecoy,
    OneDecoy,
    WeakVacuum,
    InfiniteDecoy,
}

impl ProtocolFamily {
    pub const ALL: [ProtocolFamily; 4] = [
        ProtocolFamily::NoDecoy,
        ProtocolFamily::OneDecoy,
        ProtocolFamily::WeakVacuum,
        ProtocolFamily::InfiniteDecoy,
    ];

    /// Whether the family sends a weak decoy of intensity `nu`.
    pub fn has_weak_decoy(self) -> bool {
        matches!(self, ProtocolFamily::OneDecoy | ProtocolFamily::WeakVacuum)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolFamily::NoDecoy => "NO_DECOY",
            ProtocolFamily::OneDecoy => "ONE_DECOY",
            ProtocolFamily::WeakVacuum => "WEAK_VACUUM",
            ProtocolFamily::InfiniteDecoy => "INFINITE_DECOY",
        }
    }
}

impl fmt::Display for ProtocolFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A protocol family with its intensities and per-state pulse fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub family: ProtocolFamily,
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    pub frac_signal: f64,
    pub frac_weak: f64,
    pub frac_vacuum: f64,
}

impl ProtocolSpec {
    pub fn no_decoy(mu: f64) -> Self {
        Self::signal_only(ProtocolFamily::NoDecoy, mu)
    }

    pub fn infinite_decoy(mu: f64) -> Self {
        Self::signal_only(ProtocolFamily::InfiniteDecoy, mu)
    }

    pub fn one_decoy(mu: f64, nu: f64, frac_weak: f64) -> Self {
        ProtocolSpec {
            family: ProtocolFamily::OneDecoy,
            mu,
            nu: Some(nu),
            frac_signal: 1.0 - frac_weak,
            frac_weak,
            frac_vacuum: 0.0,
        }
    }

    pub fn weak_vacuum(mu: f64, nu: f64, frac_weak: f64, frac_vacuum: f64) -> Self {
        ProtocolSpec {
            family: ProtocolFamily::WeakVacuum,
            mu,
            nu: Some(nu),
            frac_signal: 1.0 - frac_weak - frac_vacuum,
            frac_weak,
            frac_vacuum,
        }
    }

    fn signal_only(family: ProtocolFamily, mu: f64) -> Self {
        ProtocolSpec {
            family,
            mu,
            nu: None,
            frac_signal: 1.0,
            frac_weak: 0.0,
            frac_vacuum: 0.0,
        }
    }
}

/// Session size and confidence level of the fluctuation analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionPlan {
    #[serde(rename = "total_pulses_N")]
    pub total_pulses_n: u64,
    /// Number of standard deviations used by the fluctuation bounds.
    pub u_alpha: f64,
}

impl SessionPlan {
    pub fn new(total_pulses_n: u64, u_alpha: f64) -> Self {
        SessionPlan {
            total_pulses_n,
            u_alpha,
        }
    }
}

/// Per-state gains and error rates, measured or simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredStats {
    #[serde(rename = "gain_signal_Qmu")]
    pub gain_signal: f64,
    #[serde(rename = "qber_signal_Emu")]
    pub qber_signal: f64,
    #[serde(rename = "gain_weak_Qnu", default, skip_serializing_if = "Option::is_none")]
    pub gain_weak: Option<f64>,
    #[serde(rename = "qber_weak_Enu", default, skip_serializing_if = "Option::is_none")]
    pub qber_weak: Option<f64>,
    #[serde(rename = "background_Y0", default, skip_serializing_if = "Option::is_none")]
    pub background_y0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_error_e0: Option<f64>,
    /// Fraction of all pulses that are signal state and basis matched.
    pub sift_ratio_q: f64,
}

/// Single-photon bounds and the fluctuation-adjusted intermediates that
/// produced them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinglePhotonBounds {
    /// Lower bound on the single-photon gain, clamped at zero.
    pub q1_lower: f64,
    /// Upper bound on the single-photon error; absent when `q1_lower` is zero.
    pub e1_upper: Option<f64>,
    pub qnu_lower: Option<f64>,
    pub y0_lower: Option<f64>,
    pub y0_upper: Option<f64>,
}

/// Outcome of one key-rate analysis, with every input echoed for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub family: ProtocolFamily,
    /// Raw lower bound on the secure key rate in bits per pulse; may be negative.
    #[serde(rename = "rate_lower_R")]
    pub rate_lower: f64,
    #[serde(rename = "rate_lower_R_clamped")]
    pub rate_lower_clamped: f64,
    #[serde(rename = "key_length_L")]
    pub key_length: u64,
    pub secure: bool,
    pub no_key_reason: Option<String>,
    pub bounds: SinglePhotonBounds,
    pub e0_used: f64,
    pub ec_efficiency_used: f64,
    pub protocol: ProtocolSpec,
    pub plan: SessionPlan,
    pub stats: MeasuredStats,
    pub notes: Vec<String>,
}

/// `floor(N * max(R, 0))`.
pub fn key_length(total_pulses_n: u64, rate: f64) -> u64 {
    (total_pulses_n as f64 * rate.max(0.0)).floor() as u64
}

fn check_probability(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::out_of_range(field, format!("{value} is not a probability in [0, 1]")))
    }
}

fn check_optional_probability(field: &'static str, value: Option<f64>) -> Result<()> {
    value.map_or(Ok(()), |v| check_probability(field, v))
}

pub fn validate_setup(raw: SetupParams) -> Result<SetupParams> {
    check_probability("dark_count_Y0", raw.dark_count_y0)?;
    check_probability("detector_error_e_det", raw.detector_error_e_det)?;
    check_probability("receiver_efficiency_eta_bob", raw.receiver_efficiency_eta_bob)?;
    check_probability("vacuum_error_e0", raw.vacuum_error_e0)?;
    if !(raw.loss_alpha_db_per_km.is_finite() && raw.loss_alpha_db_per_km >= 0.0) {
        return Err(Error::out_of_range(
            "loss_alpha_db_per_km",
            format!("{} must be a non-negative attenuation", raw.loss_alpha_db_per_km),
        ));
    }
    if !(raw.ec_efficiency_f.is_finite() && raw.ec_efficiency_f >= 1.0) {
        return Err(Error::out_of_range(
            "ec_efficiency_f",
            format!("{} must be at least 1", raw.ec_efficiency_f),
        ));
    }
    if let Some(table) = &raw.ec_efficiency_table {
        let mut previous = f64::NEG_INFINITY;
        for step in table {
            check_probability("ec_efficiency_table", step.max_qber)?;
            if step.max_qber <= previous {
                return Err(Error::out_of_range(
                    "ec_efficiency_table",
                    "max_qber thresholds must be strictly increasing",
                ));
            }
            if !(step.f.is_finite() && step.f >= 1.0) {
                return Err(Error::out_of_range(
                    "ec_efficiency_table",
                    format!("f = {} must be at least 1", step.f),
                ));
            }
            previous = step.max_qber;
        }
    }
    Ok(raw)
}

pub fn validate_protocol(raw: ProtocolSpec) -> Result<ProtocolSpec> {
    if !(raw.mu.is_finite() && raw.mu > 0.0) {
        return Err(Error::out_of_range("mu", format!("{} must be positive", raw.mu)));
    }
    if raw.family.has_weak_decoy() {
        let nu = raw.nu.ok_or(Error::MissingField("nu"))?;
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::out_of_range("nu", format!("{nu} must be positive")));
        }
        if nu >= raw.mu {
            return Err(Error::Degenerate(format!(
                "nu = {nu} must be strictly below mu = {}; mu*nu - nu^2 = {:e}",
                raw.mu,
                raw.mu * nu - nu * nu
            )));
        }
    } else if raw.nu.is_some() {
        return Err(Error::out_of_range(
            "nu",
            format!("must be absent for {}", raw.family),
        ));
    }

    check_probability("frac_signal", raw.frac_signal)?;
    check_probability("frac_weak", raw.frac_weak)?;
    check_probability("frac_vacuum", raw.frac_vacuum)?;
    if raw.frac_signal == 0.0 {
        return Err(Error::out_of_range("frac_signal", "no signal pulses"));
    }
    let sum = raw.frac_signal + raw.frac_weak + raw.frac_vacuum;
    if (sum - 1.0).abs() > FRACTION_SUM_TOLERANCE {
        return Err(Error::out_of_range(
            "frac_signal",
            format!("fractions sum to {sum}, not 1"),
        ));
    }
    if raw.family != ProtocolFamily::WeakVacuum && raw.frac_vacuum != 0.0 {
        return Err(Error::out_of_range(
            "frac_vacuum",
            format!("must be 0 for {}", raw.family),
        ));
    }
    if !raw.family.has_weak_decoy() && raw.frac_weak != 0.0 {
        return Err(Error::out_of_range(
            "frac_weak",
            format!("must be 0 for {}", raw.family),
        ));
    }
    Ok(raw)
}

pub fn validate_plan(raw: SessionPlan) -> Result<SessionPlan> {
    if raw.total_pulses_n < 1 {
        return Err(Error::out_of_range("total_pulses_N", "must be at least 1"));
    }
    if !(raw.u_alpha.is_finite() && raw.u_alpha >= 0.0) {
        return Err(Error::out_of_range(
            "u_alpha",
            format!("{} must be non-negative", raw.u_alpha),
        ));
    }
    Ok(raw)
}

pub fn validate_stats(raw: MeasuredStats) -> Result<MeasuredStats> {
    check_probability("gain_signal_Qmu", raw.gain_signal)?;
    check_probability("qber_signal_Emu", raw.qber_signal)?;
    check_optional_probability("gain_weak_Qnu", raw.gain_weak)?;
    check_optional_probability("qber_weak_Enu", raw.qber_weak)?;
    check_optional_probability("background_Y0", raw.background_y0)?;
    check_optional_probability("background_error_e0", raw.background_error_e0)?;
    check_probability("sift_ratio_q", raw.sift_ratio_q)?;
    Ok(raw)
}
