//! Pulse-level session simulation.
//!
//! Every random draw is addressed by `(seed, stream, pulse index)`: each
//! pulse consumes a fixed number of ChaCha words starting at
//! `index * WORDS`, so any chunking of the pulse range (and hence any
//! thread count) produces bit-identical schedules and event logs.
//!
//! Receiver model: two detectors, one per bit value. A photon detection
//! (probability `1 - exp(-eta * mu)`) lands on the detector matching the
//! sender's bit, or on the other one with probability `e_det`; with a
//! mismatched basis it lands on either with probability 1/2. Each detector
//! also dark-clicks independently with probability `Y0 / 2`. When both
//! fire the bit is assigned uniformly at random.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelPoint;
use crate::error::{Error, Result};
use crate::model::{
    validate_plan, validate_protocol, validate_setup, MeasuredStats, ProtocolFamily, ProtocolSpec,
    SessionPlan, SetupParams, DEFAULT_VACUUM_ERROR,
};

/// Pulses per parallel work unit. Results do not depend on it.
pub const CHUNK_PULSES: usize = 1 << 16;

const SCHEDULE_STREAM: u64 = 0x5343_4845_4455_4c45;
const SESSION_STREAM: u64 = 0x5345_5353_494f_4e00;
/// 32-bit ChaCha words consumed per pulse: one u64 for the state, one for
/// the basis and key bits.
const SCHEDULE_WORDS: u128 = 4;
/// Photon detection, error routing, two dark counts, and a u64 of bits.
const SESSION_WORDS: u128 = 10;

/// Description of the receiver model, for report metadata.
pub const DETECTOR_MODEL: &str = "two detectors; independent dark clicks of probability Y0/2 each; \
     double clicks assigned a uniformly random bit";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StateLabel {
    Signal,
    Weak,
    Vacuum,
}

impl StateLabel {
    pub const ALL: [StateLabel; 3] = [StateLabel::Signal, StateLabel::Weak, StateLabel::Vacuum];

    fn index(self) -> usize {
        self as usize
    }
}

/// One prepared pulse: state class, sender basis and key bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pulse {
    pub state: StateLabel,
    pub basis: u8,
    pub bit: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub pulses: Vec<Pulse>,
    pub protocol: ProtocolSpec,
    pub seed: u64,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    pub fn count(&self, state: StateLabel) -> usize {
        self.pulses.iter().filter(|p| p.state == state).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    NoClick,
    Click { basis: u8, bit: u8, double: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub outcomes: Vec<Outcome>,
    pub seed: u64,
}

fn rng_at(seed: u64, stream: u64, pulse: usize, words: u128) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(pulse as u128 * words);
    rng
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn assign_state(u: f64, protocol: &ProtocolSpec) -> StateLabel {
    if u < protocol.frac_signal {
        StateLabel::Signal
    } else if u < protocol.frac_signal + protocol.frac_weak || protocol.frac_vacuum == 0.0 {
        if protocol.frac_weak > 0.0 {
            StateLabel::Weak
        } else {
            StateLabel::Signal
        }
    } else {
        StateLabel::Vacuum
    }
}

/// Random per-pulse state assignment with uniform bases and key bits.
pub fn generate_schedule(plan: &SessionPlan, protocol: &ProtocolSpec, seed: u64) -> Result<Schedule> {
    let plan = validate_plan(*plan)?;
    let protocol = validate_protocol(*protocol)?;
    let n = usize::try_from(plan.total_pulses_n)
        .map_err(|_| Error::out_of_range("total_pulses_N", "too large for this platform"))?;
    let mut pulses = vec![
        Pulse {
            state: StateLabel::Signal,
            basis: 0,
            bit: 0
        };
        n
    ];
    pulses
        .par_chunks_mut(CHUNK_PULSES)
        .enumerate()
        .for_each(|(chunk, slice)| {
            let mut rng = rng_at(seed, SCHEDULE_STREAM, chunk * CHUNK_PULSES, SCHEDULE_WORDS);
            for pulse in slice {
                let state = assign_state(uniform(&mut rng), &protocol);
                let bits = rng.next_u64();
                *pulse = Pulse {
                    state,
                    basis: (bits & 1) as u8,
                    bit: ((bits >> 1) & 1) as u8,
                };
            }
        });
    Ok(Schedule { pulses, protocol, seed })
}

/// Simulates the receiver for every pulse of `schedule`.
pub fn simulate_session(
    setup: &SetupParams,
    point: &ChannelPoint,
    schedule: &Schedule,
    seed: u64,
) -> Result<EventLog> {
    let setup = validate_setup(setup.clone())?;
    if !(0.0..=1.0).contains(&point.eta) {
        return Err(Error::out_of_range("eta", format!("{} is not a transmittance", point.eta)));
    }
    let intensity = |state: StateLabel| match state {
        StateLabel::Signal => schedule.protocol.mu,
        StateLabel::Weak => schedule.protocol.nu.unwrap_or(0.0),
        StateLabel::Vacuum => 0.0,
    };
    let detect: [f64; 3] = StateLabel::ALL.map(|s| -(-point.eta * intensity(s)).exp_m1());
    let dark = setup.dark_count_y0 / 2.0;
    let e_det = setup.detector_error_e_det;

    let mut outcomes = vec![Outcome::NoClick; schedule.len()];
    outcomes
        .par_chunks_mut(CHUNK_PULSES)
        .zip(schedule.pulses.par_chunks(CHUNK_PULSES))
        .enumerate()
        .for_each(|(chunk, (out, pulses))| {
            let mut rng = rng_at(seed, SESSION_STREAM, chunk * CHUNK_PULSES, SESSION_WORDS);
            for (slot, pulse) in out.iter_mut().zip(pulses) {
                let photon = uniform(&mut rng) < detect[pulse.state.index()];
                let flipped = uniform(&mut rng) < e_det;
                let dark0 = uniform(&mut rng) < dark;
                let dark1 = uniform(&mut rng) < dark;
                let bits = rng.next_u64();
                let basis = (bits & 1) as u8;
                let mut clicks = [dark0, dark1];
                if photon {
                    let target = if basis == pulse.basis {
                        pulse.bit ^ flipped as u8
                    } else {
                        ((bits >> 1) & 1) as u8
                    };
                    clicks[target as usize] = true;
                }
                *slot = match clicks {
                    [false, false] => Outcome::NoClick,
                    [true, false] => Outcome::Click { basis, bit: 0, double: false },
                    [false, true] => Outcome::Click { basis, bit: 1, double: false },
                    [true, true] => Outcome::Click {
                        basis,
                        bit: ((bits >> 2) & 1) as u8,
                        double: true,
                    },
                };
            }
        });
    Ok(EventLog { outcomes, seed })
}

/// Raw counts for one state class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateTally {
    pub pulses: u64,
    pub clicks: u64,
    pub basis_matched_clicks: u64,
    pub errors: u64,
    pub double_clicks: u64,
    /// Double clicks whose assigned bit is 1.
    pub double_click_ones: u64,
}

impl StateTally {
    fn add(mut self, other: StateTally) -> StateTally {
        self.pulses += other.pulses;
        self.clicks += other.clicks;
        self.basis_matched_clicks += other.basis_matched_clicks;
        self.errors += other.errors;
        self.double_clicks += other.double_clicks;
        self.double_click_ones += other.double_click_ones;
        self
    }

    pub fn gain(&self) -> f64 {
        if self.pulses == 0 {
            0.0
        } else {
            self.clicks as f64 / self.pulses as f64
        }
    }

    /// Error rate over basis-matched clicks; `None` when there are none.
    pub fn qber(&self) -> Option<f64> {
        (self.basis_matched_clicks > 0).then(|| self.errors as f64 / self.basis_matched_clicks as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub signal: StateTally,
    pub weak: StateTally,
    pub vacuum: StateTally,
}

impl Tally {
    pub fn get(&self, state: StateLabel) -> &StateTally {
        match state {
            StateLabel::Signal => &self.signal,
            StateLabel::Weak => &self.weak,
            StateLabel::Vacuum => &self.vacuum,
        }
    }

    fn get_mut(&mut self, state: StateLabel) -> &mut StateTally {
        match state {
            StateLabel::Signal => &mut self.signal,
            StateLabel::Weak => &mut self.weak,
            StateLabel::Vacuum => &mut self.vacuum,
        }
    }

    fn add(self, other: Tally) -> Tally {
        Tally {
            signal: self.signal.add(other.signal),
            weak: self.weak.add(other.weak),
            vacuum: self.vacuum.add(other.vacuum),
        }
    }

    pub fn total_pulses(&self) -> u64 {
        self.signal.pulses + self.weak.pulses + self.vacuum.pulses
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accumulated {
    pub stats: MeasuredStats,
    pub tally: Tally,
    /// States whose QBER had no basis-matched clicks and was filled with 0.5.
    pub zero_event_qber: Vec<StateLabel>,
}

/// Per-state gains and QBERs of a simulated session.
///
/// `q` is the expected basis-matched share of signal pulses,
/// `#signal / (2 N)`, since undetected pulses carry no receiver basis.
pub fn accumulate(schedule: &Schedule, events: &EventLog) -> Result<Accumulated> {
    if schedule.len() != events.outcomes.len() {
        return Err(Error::LengthMismatch {
            schedule: schedule.len(),
            events: events.outcomes.len(),
        });
    }
    let tally = schedule
        .pulses
        .par_chunks(CHUNK_PULSES)
        .zip(events.outcomes.par_chunks(CHUNK_PULSES))
        .map(|(pulses, outcomes)| {
            let mut t = Tally::default();
            for (pulse, outcome) in pulses.iter().zip(outcomes) {
                let s = t.get_mut(pulse.state);
                s.pulses += 1;
                if let Outcome::Click { basis, bit, double } = *outcome {
                    s.clicks += 1;
                    if double {
                        s.double_clicks += 1;
                        s.double_click_ones += bit as u64;
                    }
                    if basis == pulse.basis {
                        s.basis_matched_clicks += 1;
                        s.errors += (bit != pulse.bit) as u64;
                    }
                }
            }
            t
        })
        .reduce(Tally::default, Tally::add);

    let protocol = &schedule.protocol;
    let mut zero_event_qber = Vec::new();
    let mut qber = |state: StateLabel| {
        tally.get(state).qber().unwrap_or_else(|| {
            zero_event_qber.push(state);
            DEFAULT_VACUUM_ERROR
        })
    };
    let qber_signal = qber(StateLabel::Signal);
    let has_weak = protocol.family.has_weak_decoy();
    let qber_weak = has_weak.then(|| qber(StateLabel::Weak));
    let has_vacuum = tally.vacuum.pulses > 0;
    let background_error_e0 = has_vacuum.then(|| qber(StateLabel::Vacuum));
    let n = schedule.len().max(1) as f64;
    let stats = MeasuredStats {
        gain_signal: tally.signal.gain(),
        qber_signal,
        gain_weak: has_weak.then(|| tally.weak.gain()),
        qber_weak,
        background_y0: has_vacuum.then(|| tally.vacuum.gain()),
        background_error_e0,
        sift_ratio_q: match protocol.family {
            ProtocolFamily::InfiniteDecoy => 0.5,
            _ => tally.signal.pulses as f64 / (2.0 * n),
        },
    };
    Ok(Accumulated {
        stats,
        tally,
        zero_event_qber,
    })
}
