//! Deterministic fiber + detector model.
//!
//! Loss is specified in dB/km, so the transmittance at distance `l` is
//! `eta_bob * 10^(-alpha * l / 10)`. Expected gain and QBER for a
//! coherent state of mean photon number `mu` follow the standard
//! small-background model `Q = Y0 + 1 - exp(-eta*mu)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MeasuredStats, ProtocolFamily, ProtocolSpec, SetupParams};

/// Overall transmittance (fiber and receiver) at one distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelPoint {
    pub distance_km: f64,
    pub eta: f64,
}

/// Expected gain and QBER of one intensity class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainQber {
    pub gain: f64,
    pub qber: f64,
}

pub fn transmittance(setup: &SetupParams, distance_km: f64) -> Result<ChannelPoint> {
    if !(distance_km.is_finite() && distance_km >= 0.0) {
        return Err(Error::out_of_range(
            "distance_km",
            format!("{distance_km} must be a non-negative length"),
        ));
    }
    let fiber = 10f64.powf(-setup.loss_alpha_db_per_km * distance_km / 10.0);
    Ok(ChannelPoint {
        distance_km,
        eta: setup.receiver_efficiency_eta_bob * fiber,
    })
}

/// Expected gain and QBER at intensity `intensity_mu`.
///
/// The gain is clamped to 1 (with a warning) in the regime where the
/// small-background approximation overshoots. A zero gain, which needs
/// both `Y0 = 0` and `eta * mu = 0`, reports the vacuum error rate.
pub fn expected_stats(setup: &SetupParams, point: &ChannelPoint, intensity_mu: f64) -> Result<GainQber> {
    if !(intensity_mu.is_finite() && intensity_mu >= 0.0) {
        return Err(Error::out_of_range(
            "intensity_mu",
            format!("{intensity_mu} must be non-negative"),
        ));
    }
    Ok(gain_qber(setup, point.eta, intensity_mu))
}

pub(crate) fn gain_qber(setup: &SetupParams, eta: f64, intensity_mu: f64) -> GainQber {
    let y0 = setup.dark_count_y0;
    let e0 = setup.vacuum_error_e0;
    let signal = -(-eta * intensity_mu).exp_m1();
    let mut gain = y0 + signal;
    if gain > 1.0 {
        log::warn!("expected gain {gain} exceeds 1 at eta*mu = {}; clamped", eta * intensity_mu);
        gain = 1.0;
    }
    let qber = if gain == 0.0 {
        e0
    } else {
        (e0 * y0 + setup.detector_error_e_det * signal) / gain
    };
    GainQber { gain, qber }
}

/// Expected measurement record for every state the protocol sends.
pub fn expected_measured(
    setup: &SetupParams,
    point: &ChannelPoint,
    protocol: &ProtocolSpec,
) -> Result<MeasuredStats> {
    let signal = expected_stats(setup, point, protocol.mu)?;
    let weak = match (protocol.family.has_weak_decoy(), protocol.nu) {
        (true, Some(nu)) => Some(expected_stats(setup, point, nu)?),
        (true, None) => return Err(Error::MissingField("nu")),
        (false, _) => None,
    };
    let vacuum = gain_qber(setup, point.eta, 0.0);
    Ok(assemble_stats(protocol, signal, weak, vacuum))
}

/// Builds the measurement record from per-intensity expectations.
pub(crate) fn assemble_stats(
    protocol: &ProtocolSpec,
    signal: GainQber,
    weak: Option<GainQber>,
    vacuum: GainQber,
) -> MeasuredStats {
    let with_vacuum = protocol.family == ProtocolFamily::WeakVacuum;
    let sift_ratio_q = match protocol.family {
        ProtocolFamily::InfiniteDecoy => 0.5,
        _ => protocol.frac_signal / 2.0,
    };
    MeasuredStats {
        gain_signal: signal.gain,
        qber_signal: signal.qber,
        gain_weak: weak.map(|w| w.gain),
        qber_weak: weak.map(|w| w.qber),
        background_y0: with_vacuum.then_some(vacuum.gain),
        background_error_e0: with_vacuum.then_some(vacuum.qber),
        sift_ratio_q,
    }
}
