//! Exhaustive parameter search over the channel + security pipeline.
//!
//! Intensities and fractions live on integer lattices (`intensity_step`
//! and `fraction_step` units) so every stage is an exact enumeration and
//! ties are broken on lattice indices rather than on rounded floats.
//! The search runs coarse-to-fine: a full scan at the coarse strides
//! followed by windows of `refine_radius` previous-stage cells around the
//! running best, ending at the unit stride.

use std::cmp::Ordering;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelPoint, GainQber};
use crate::error::{Error, Result};
use crate::model::{
    validate_plan, validate_setup, KeyRateReport, ProtocolFamily, ProtocolSpec, SessionPlan, SetupParams,
};
use crate::security;

/// March increment of [`max_secure_distance`].
pub const MARCH_STEP_KM: f64 = 0.5;
/// Bisection stops once the bracket is this narrow.
pub const BISECTION_TOLERANCE_KM: f64 = 0.01;
/// Distances beyond this are treated as a modelling error.
pub const MAX_DISTANCE_CAP_KM: f64 = 1000.0;
/// Relative rise between consecutive sweep points that triggers a warning.
pub const SWEEP_RIPPLE_TOLERANCE: f64 = 0.005;

fn default_range() -> (f64, f64) {
    (0.001, 1.0)
}
fn default_intensity_step() -> f64 {
    0.001
}
fn default_fraction_step() -> f64 {
    0.01
}
fn default_refine_stages() -> u32 {
    2
}
fn default_coarse_intensity_step() -> f64 {
    0.02
}
fn default_coarse_fraction_step() -> f64 {
    0.05
}
fn default_refine_radius() -> u32 {
    2
}

/// Search lattice. `intensity_step`/`fraction_step` are the resolution of
/// the final stage; the coarse steps set the first stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_range")]
    pub mu_range: (f64, f64),
    #[serde(default = "default_range")]
    pub nu_range: (f64, f64),
    #[serde(default = "default_intensity_step")]
    pub intensity_step: f64,
    #[serde(default = "default_fraction_step")]
    pub fraction_step: f64,
    #[serde(default = "default_refine_stages")]
    pub refine_stages: u32,
    #[serde(default = "default_coarse_intensity_step")]
    pub coarse_intensity_step: f64,
    #[serde(default = "default_coarse_fraction_step")]
    pub coarse_fraction_step: f64,
    #[serde(default = "default_refine_radius")]
    pub refine_radius: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            mu_range: default_range(),
            nu_range: default_range(),
            intensity_step: default_intensity_step(),
            fraction_step: default_fraction_step(),
            refine_stages: default_refine_stages(),
            coarse_intensity_step: default_coarse_intensity_step(),
            coarse_fraction_step: default_coarse_fraction_step(),
            refine_radius: default_refine_radius(),
        }
    }
}

fn check_range(field: &'static str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && hi <= 1.0 && lo <= hi) {
        return Err(Error::out_of_range(
            field,
            format!("[{lo}, {hi}] must be a non-empty interval within (0, 1]"),
        ));
    }
    Ok(())
}

fn check_step(field: &'static str, step: f64) -> Result<()> {
    if !(step.is_finite() && step > 0.0 && step <= 1.0) {
        return Err(Error::out_of_range(field, format!("{step} must lie in (0, 1]")));
    }
    Ok(())
}

pub fn validate_grid(raw: GridSpec) -> Result<GridSpec> {
    check_range("mu_range", raw.mu_range)?;
    check_range("nu_range", raw.nu_range)?;
    check_step("intensity_step", raw.intensity_step)?;
    check_step("fraction_step", raw.fraction_step)?;
    check_step("coarse_intensity_step", raw.coarse_intensity_step)?;
    check_step("coarse_fraction_step", raw.coarse_fraction_step)?;
    if raw.coarse_intensity_step < raw.intensity_step {
        return Err(Error::out_of_range(
            "coarse_intensity_step",
            "must not be finer than intensity_step",
        ));
    }
    if raw.coarse_fraction_step < raw.fraction_step {
        return Err(Error::out_of_range(
            "coarse_fraction_step",
            "must not be finer than fraction_step",
        ));
    }
    let units = 1.0 / raw.fraction_step;
    if (units - units.round()).abs() > 1e-9 || units.round() < 3.0 {
        return Err(Error::out_of_range(
            "fraction_step",
            format!("{} must divide 1 into at least 3 parts", raw.fraction_step),
        ));
    }
    if raw.refine_stages == 0 {
        return Err(Error::out_of_range("refine_stages", "need at least one stage"));
    }
    Ok(raw)
}

/// Integer coordinates of one grid point. `nu` is 0 and the fractions are
/// unused for families without a weak decoy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cell {
    mu: i64,
    nu: i64,
    weak: i64,
    vacuum: i64,
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    cell: Cell,
    rate: f64,
    secure: bool,
}

/// Total order used for the argmax: higher rate, then smaller `mu`, smaller
/// `nu`, larger signal fraction, smaller weak fraction.
fn rank(a: &Scored, b: &Scored) -> Ordering {
    a.rate
        .total_cmp(&b.rate)
        .then_with(|| b.cell.mu.cmp(&a.cell.mu))
        .then_with(|| b.cell.nu.cmp(&a.cell.nu))
        .then_with(|| (b.cell.weak + b.cell.vacuum).cmp(&(a.cell.weak + a.cell.vacuum)))
        .then_with(|| b.cell.weak.cmp(&a.cell.weak))
}

/// Best point plus how many points share its rate exactly.
#[derive(Debug, Clone, Copy)]
struct Best {
    top: Scored,
    ties: usize,
    evaluated: usize,
}

fn merge(a: Option<Best>, b: Option<Best>) -> Option<Best> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => {
            let evaluated = a.evaluated + b.evaluated;
            let ties = match a.top.rate.total_cmp(&b.top.rate) {
                Ordering::Equal => a.ties + b.ties,
                Ordering::Greater => a.ties,
                Ordering::Less => b.ties,
            };
            let top = if rank(&a.top, &b.top) == Ordering::Less { b.top } else { a.top };
            Some(Best { top, ties, evaluated })
        }
    }
}

fn offer(best: &mut Option<Best>, s: Scored) {
    *best = merge(
        best.take(),
        Some(Best {
            top: s,
            ties: 1,
            evaluated: 1,
        }),
    );
}

/// Closed integer interval `[lo, hi]` walked at `stride`; both ends included.
#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: i64,
    hi: i64,
    stride: i64,
}

impl Axis {
    fn points(self) -> Vec<i64> {
        if self.lo > self.hi {
            return Vec::new();
        }
        let mut out = vec![self.lo];
        let first = (self.lo.div_euclid(self.stride) + 1) * self.stride;
        out.extend((first..self.hi).step_by(self.stride as usize));
        if self.hi != self.lo {
            out.push(self.hi);
        }
        out
    }

    fn around(self, centre: i64, radius: i64, stride: i64) -> Axis {
        Axis {
            lo: (centre - radius).max(self.lo),
            hi: (centre + radius).min(self.hi),
            stride,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Region {
    mu: Axis,
    nu: Axis,
    weak: Axis,
    vacuum: Axis,
}

struct Lattice {
    intensity_step: f64,
    /// `1 / intensity_step` when that is an integer, for exact decimals.
    intensity_per_unit: Option<f64>,
    fraction_units: i64,
}

impl Lattice {
    fn new(grid: &GridSpec) -> Self {
        let per = 1.0 / grid.intensity_step;
        Lattice {
            intensity_step: grid.intensity_step,
            intensity_per_unit: ((per - per.round()).abs() < 1e-9).then(|| per.round()),
            fraction_units: (1.0 / grid.fraction_step).round() as i64,
        }
    }

    fn intensity(&self, index: i64) -> f64 {
        match self.intensity_per_unit {
            Some(per) => index as f64 / per,
            None => index as f64 * self.intensity_step,
        }
    }

    fn fraction(&self, units: i64) -> f64 {
        units as f64 / self.fraction_units as f64
    }

    fn intensity_axis(&self, (lo, hi): (f64, f64), stride: i64) -> Axis {
        let to_index = |x: f64| x / self.intensity_step;
        Axis {
            lo: (to_index(lo) - 1e-9).ceil().max(1.0) as i64,
            hi: (to_index(hi) + 1e-9).floor() as i64,
            stride,
        }
    }

    fn protocol(&self, family: ProtocolFamily, cell: Cell) -> ProtocolSpec {
        let mu = self.intensity(cell.mu);
        match family {
            ProtocolFamily::NoDecoy => ProtocolSpec::no_decoy(mu),
            ProtocolFamily::InfiniteDecoy => ProtocolSpec::infinite_decoy(mu),
            ProtocolFamily::OneDecoy | ProtocolFamily::WeakVacuum => ProtocolSpec {
                family,
                mu,
                nu: Some(self.intensity(cell.nu)),
                frac_signal: self.fraction(self.fraction_units - cell.weak - cell.vacuum),
                frac_weak: self.fraction(cell.weak),
                frac_vacuum: self.fraction(cell.vacuum),
            },
        }
    }
}

struct Search<'a> {
    setup: &'a SetupParams,
    plan: &'a SessionPlan,
    point: ChannelPoint,
    family: ProtocolFamily,
    lattice: Lattice,
}

impl Search<'_> {
    fn score(&self, cell: Cell, signal: GainQber, weak: Option<GainQber>, vacuum: GainQber) -> Scored {
        let protocol = self.lattice.protocol(self.family, cell);
        let (rate, secure) = if self.family == ProtocolFamily::InfiniteDecoy {
            match security::infinite_decoy_rate(self.setup, &self.point, protocol.mu) {
                Ok(r) => (r, r > 0.0),
                Err(_) => (f64::NEG_INFINITY, false),
            }
        } else {
            let stats = channel::assemble_stats(&protocol, signal, weak, vacuum);
            match security::evaluate(self.setup, &protocol, self.plan, &stats) {
                Ok(e) => (e.rate, e.secure()),
                Err(_) => (f64::NEG_INFINITY, false),
            }
        };
        Scored { cell, rate, secure }
    }

    /// Scans one region. With `stop` set, returns as soon as any secure
    /// point has been seen (the result is then only a witness).
    fn scan(&self, region: &Region, stop: Option<&AtomicBool>) -> Option<Best> {
        let units = self.lattice.fraction_units;
        let vacuum = channel::gain_qber(self.setup, self.point.eta, 0.0);
        let mus = region.mu.points();
        let nus = region.nu.points();
        let weaks = region.weak.points();
        let vacuums = region.vacuum.points();
        mus.par_iter()
            .map(|&mu_index| {
                let mut best = None;
                if stop.is_some_and(|s| s.load(AtomicOrdering::Relaxed)) {
                    return best;
                }
                let mu = self.lattice.intensity(mu_index);
                let signal = channel::gain_qber(self.setup, self.point.eta, mu);
                if !self.family.has_weak_decoy() {
                    let cell = Cell { mu: mu_index, nu: 0, weak: 0, vacuum: 0 };
                    offer(&mut best, self.score(cell, signal, None, vacuum));
                } else {
                    for &nu_index in nus.iter().take_while(|&&n| n < mu_index) {
                        let weak_stats = channel::gain_qber(self.setup, self.point.eta, self.lattice.intensity(nu_index));
                        for &weak in &weaks {
                            for &vac in &vacuums {
                                if weak + vac >= units {
                                    break;
                                }
                                let cell = Cell { mu: mu_index, nu: nu_index, weak, vacuum: vac };
                                offer(&mut best, self.score(cell, signal, Some(weak_stats), vacuum));
                            }
                        }
                    }
                }
                if let (Some(stop), Some(b)) = (stop, &best) {
                    if b.top.secure {
                        stop.store(true, AtomicOrdering::Relaxed);
                    }
                }
                best
            })
            .reduce(|| None, merge)
    }
}

/// One stage of the coarse-to-fine search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: u32,
    pub intensity_step: f64,
    pub fraction_step: f64,
    pub points_evaluated: usize,
    /// Points whose rate equals the stage best exactly; the tie-break
    /// order picked `best_protocol` among them.
    pub points_tied_at_best: usize,
    pub best_protocol: ProtocolSpec,
    #[serde(rename = "best_rate_R")]
    pub best_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOutcome {
    pub family: ProtocolFamily,
    pub distance_km: f64,
    pub protocol: ProtocolSpec,
    #[serde(rename = "rate_R")]
    pub rate: f64,
    pub secure: bool,
    pub tie_break: Vec<String>,
    pub stages: Vec<StageSummary>,
}

/// Tie-break order applied among points with equal rate.
pub fn tie_break_rule() -> Vec<String> {
    ["higher rate_R", "smaller mu", "smaller nu", "larger frac_signal", "smaller frac_weak"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Strides (in lattice units) of each stage, coarse first, ending at 1.
fn stage_strides(coarse: i64, stages: u32) -> Vec<i64> {
    let coarse = coarse.max(1);
    if stages <= 1 {
        return vec![1];
    }
    let last = (stages - 1) as f64;
    let mut out: Vec<i64> = (0..stages)
        .map(|k| ((coarse as f64).powf(1.0 - k as f64 / last)).round().max(1.0) as i64)
        .collect();
    out[0] = coarse;
    *out.last_mut().unwrap() = 1;
    out
}

struct Prepared<'a> {
    search: Search<'a>,
    full: Region,
    intensity_strides: Vec<i64>,
    fraction_strides: Vec<i64>,
    radius: i64,
    grid: GridSpec,
}

fn prepare<'a>(
    setup: &'a SetupParams,
    distance_km: f64,
    family: ProtocolFamily,
    plan: &'a SessionPlan,
    grid: &GridSpec,
) -> Result<Prepared<'a>> {
    let point = channel::transmittance(setup, distance_km)?;
    let lattice = Lattice::new(grid);
    let units = lattice.fraction_units;
    let intensity_strides = stage_strides(
        (grid.coarse_intensity_step / grid.intensity_step).round() as i64,
        grid.refine_stages,
    );
    let fraction_strides = stage_strides(
        (grid.coarse_fraction_step / grid.fraction_step).round() as i64,
        grid.refine_stages,
    );
    let (weak_hi, vacuum_lo, vacuum_hi) = match family {
        ProtocolFamily::OneDecoy => (units - 1, 0, 0),
        ProtocolFamily::WeakVacuum => (units - 2, 1, units - 2),
        _ => (0, 0, 0),
    };
    let weak_lo = if family.has_weak_decoy() { 1 } else { 0 };
    let mu = lattice.intensity_axis(grid.mu_range, 1);
    if mu.lo > mu.hi {
        return Err(Error::out_of_range("mu_range", "contains no lattice point"));
    }
    let full = Region {
        mu,
        nu: lattice.intensity_axis(grid.nu_range, 1),
        weak: Axis { lo: weak_lo, hi: weak_hi, stride: 1 },
        vacuum: Axis { lo: vacuum_lo, hi: vacuum_hi, stride: 1 },
    };
    Ok(Prepared {
        search: Search { setup, plan, point, family, lattice },
        full,
        intensity_strides,
        fraction_strides,
        radius: grid.refine_radius as i64,
        grid: *grid,
    })
}

impl Prepared<'_> {
    fn region(&self, stage: usize, centre: Option<Cell>) -> Region {
        let (si, sf) = (self.intensity_strides[stage], self.fraction_strides[stage]);
        match centre {
            None => Region {
                mu: Axis { stride: si, ..self.full.mu },
                nu: Axis { stride: si, ..self.full.nu },
                weak: Axis { stride: sf, ..self.full.weak },
                vacuum: Axis { stride: sf, ..self.full.vacuum },
            },
            Some(c) => {
                let ri = self.radius * self.intensity_strides[stage - 1];
                let rf = self.radius * self.fraction_strides[stage - 1];
                Region {
                    mu: self.full.mu.around(c.mu, ri, si),
                    nu: self.full.nu.around(c.nu, ri, si),
                    weak: self.full.weak.around(c.weak, rf, sf),
                    vacuum: self.full.vacuum.around(c.vacuum, rf, sf),
                }
            }
        }
    }

    /// Runs every stage; with `stop`, bails out at the first secure point.
    fn run(&self, stop: Option<&AtomicBool>) -> Result<(Scored, Vec<StageSummary>)> {
        let mut best: Option<Best> = None;
        let mut stages = Vec::new();
        for stage in 0..self.intensity_strides.len() {
            let region = self.region(stage, best.map(|b| b.top.cell));
            let found = self.search.scan(&region, stop);
            let Some(found) = found else {
                if stop.is_some_and(|s| s.load(AtomicOrdering::Relaxed)) {
                    break;
                }
                return Err(Error::Degenerate(format!(
                    "no admissible {} grid point in stage {stage}",
                    self.search.family
                )));
            };
            // The previous best is inside every refinement window, so the
            // running best can only improve.
            best = merge(best.map(|b| Best { evaluated: 0, ties: 0, ..b }), Some(found));
            let top = best.unwrap().top;
            stages.push(StageSummary {
                stage: stage as u32,
                intensity_step: self.intensity_strides[stage] as f64 * self.grid.intensity_step,
                fraction_step: self.fraction_strides[stage] as f64 * self.grid.fraction_step,
                points_evaluated: found.evaluated,
                points_tied_at_best: if found.top.rate == top.rate { found.ties } else { 1 },
                best_protocol: self.search.lattice.protocol(self.search.family, top.cell),
                best_rate: top.rate,
            });
            if stop.is_some_and(|s| s.load(AtomicOrdering::Relaxed)) {
                break;
            }
        }
        Ok((best.unwrap().top, stages))
    }
}

fn checked_inputs(setup: &SetupParams, plan: &SessionPlan, grid: &GridSpec) -> Result<(SetupParams, SessionPlan, GridSpec)> {
    Ok((validate_setup(setup.clone())?, validate_plan(*plan)?, validate_grid(*grid)?))
}

/// Best grid point for `family` at `distance_km` using channel-model
/// statistics. When nothing is secure the best raw rate is returned with
/// `secure = false`.
pub fn optimize(
    setup: &SetupParams,
    distance_km: f64,
    family: ProtocolFamily,
    plan: &SessionPlan,
    grid: &GridSpec,
) -> Result<OptimizeOutcome> {
    let (setup, plan, grid) = checked_inputs(setup, plan, grid)?;
    let prepared = prepare(&setup, distance_km, family, &plan, &grid)?;
    let (top, stages) = prepared.run(None)?;
    Ok(OptimizeOutcome {
        family,
        distance_km,
        protocol: prepared.search.lattice.protocol(family, top.cell),
        rate: top.rate,
        secure: top.secure,
        tie_break: tie_break_rule(),
        stages,
    })
}

/// Whether the optimized rate at `distance_km` is secure, stopping at the
/// first secure witness instead of finishing the search.
fn secure_at(setup: &SetupParams, distance_km: f64, family: ProtocolFamily, plan: &SessionPlan, grid: &GridSpec) -> Result<bool> {
    let prepared = prepare(setup, distance_km, family, plan, grid)?;
    let stop = AtomicBool::new(false);
    let (top, _) = prepared.run(Some(&stop))?;
    Ok(stop.load(AtomicOrdering::Relaxed) || top.secure)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub distance_km: f64,
    pub family: ProtocolFamily,
    #[serde(rename = "best_rate_R")]
    pub best_rate: f64,
    pub best_protocol: ProtocolSpec,
    pub secure: bool,
}

/// Distances `d_start + k * d_step` up to and including `d_end`.
pub fn sweep_distances(d_start: f64, d_end: f64, d_step: f64) -> Result<Vec<f64>> {
    if !(d_start.is_finite() && d_start >= 0.0) {
        return Err(Error::out_of_range("d_start", format!("{d_start} must be non-negative")));
    }
    if !(d_end.is_finite() && d_end >= d_start) {
        return Err(Error::out_of_range("d_end", format!("{d_end} is below d_start {d_start}")));
    }
    if !(d_step.is_finite() && d_step > 0.0) {
        return Err(Error::out_of_range("d_step", format!("{d_step} must be positive")));
    }
    let count = ((d_end - d_start) / d_step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| d_start + k as f64 * d_step).collect())
}

pub fn sweep(
    setup: &SetupParams,
    family: ProtocolFamily,
    plan: &SessionPlan,
    d_start: f64,
    d_end: f64,
    d_step: f64,
    grid: &GridSpec,
) -> Result<Vec<SweepPoint>> {
    let distances = sweep_distances(d_start, d_end, d_step)?;
    let points = distances
        .par_iter()
        .map(|&d| {
            optimize(setup, d, family, plan, grid).map(|o| SweepPoint {
                distance_km: d,
                family,
                best_rate: o.rate,
                best_protocol: o.protocol,
                secure: o.secure,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for warning in ripple_warnings(&points) {
        log::warn!("{warning}");
    }
    Ok(points)
}

/// Places where a secure rate rises with distance by more than the
/// ripple tolerance.
pub fn ripple_warnings(points: &[SweepPoint]) -> Vec<String> {
    points
        .windows(2)
        .filter(|w| w[0].family == w[1].family && w[1].secure)
        .filter(|w| w[1].best_rate > w[0].best_rate.max(0.0) * (1.0 + SWEEP_RIPPLE_TOLERANCE))
        .map(|w| {
            format!(
                "{} rate rises from {:.4e} at {} km to {:.4e} at {} km",
                w[1].family, w[0].best_rate, w[0].distance_km, w[1].best_rate, w[1].distance_km
            )
        })
        .collect()
}

/// Largest distance with a secure optimized rate (0.5 km march, then
/// bisection to 0.01 km).
pub fn max_secure_distance(
    setup: &SetupParams,
    family: ProtocolFamily,
    plan: &SessionPlan,
    grid: &GridSpec,
) -> Result<f64> {
    let (setup, plan, grid) = checked_inputs(setup, plan, grid)?;
    let secure = |d: f64| secure_at(&setup, d, family, &plan, &grid);
    if !secure(0.0)? {
        return Err(Error::ZeroRange);
    }
    let mut lo = 0.0;
    let mut hi = loop {
        let next = lo + MARCH_STEP_KM;
        if next > MAX_DISTANCE_CAP_KM {
            return Err(Error::Degenerate(format!(
                "{family} is still secure at {MAX_DISTANCE_CAP_KM} km"
            )));
        }
        if !secure(next)? {
            break next;
        }
        lo = next;
    };
    while hi - lo > BISECTION_TOLERANCE_KM {
        let mid = 0.5 * (lo + hi);
        if secure(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Full report for one protocol at one distance, using channel-model
/// statistics (the same path the search scores).
pub fn report_at(
    setup: &SetupParams,
    distance_km: f64,
    protocol: &ProtocolSpec,
    plan: &SessionPlan,
) -> Result<KeyRateReport> {
    let point = channel::transmittance(setup, distance_km)?;
    if protocol.family == ProtocolFamily::InfiniteDecoy {
        return security::analyze_infinite_decoy(setup, &point, protocol, plan);
    }
    let stats = channel::expected_measured(setup, &point, protocol)?;
    security::analyze(setup, protocol, plan, &stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;

    fn plan() -> SessionPlan {
        SessionPlan::new(105_000_000, 10.0)
    }

    #[test]
    fn axis_includes_both_ends_and_aligned_points() {
        let axis = Axis { lo: 1, hi: 100, stride: 20 };
        assert_eq!(axis.points(), vec![1, 20, 40, 60, 80, 100]);
        assert_eq!(Axis { lo: 5, hi: 5, stride: 3 }.points(), vec![5]);
        assert!(Axis { lo: 6, hi: 5, stride: 3 }.points().is_empty());
        assert_eq!(Axis { lo: 0, hi: 4, stride: 1 }.points(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn stage_strides_end_at_unit() {
        assert_eq!(stage_strides(20, 2), vec![20, 1]);
        assert_eq!(stage_strides(20, 1), vec![1]);
        assert_eq!(stage_strides(16, 3), vec![16, 4, 1]);
        assert_eq!(stage_strides(5, 2), vec![5, 1]);
    }

    #[test]
    fn lattice_values_are_exact_decimals() {
        let lattice = Lattice::new(&GridSpec::default());
        assert_eq!(lattice.intensity(800), 0.8);
        assert_eq!(lattice.intensity(120), 0.12);
        assert_eq!(lattice.fraction(10), 0.1);
        let axis = lattice.intensity_axis((0.001, 1.0), 1);
        assert_eq!((axis.lo, axis.hi), (1, 1000));
    }

    #[test]
    fn rank_is_a_total_order_matching_the_rule() {
        let s = |rate, mu, nu, weak, vacuum| Scored {
            cell: Cell { mu, nu, weak, vacuum },
            rate,
            secure: true,
        };
        let cmp = |a: Scored, b: Scored| rank(&a, &b);
        assert_eq!(cmp(s(2.0, 9, 9, 9, 9), s(1.0, 1, 1, 1, 1)), Ordering::Greater);
        assert_eq!(cmp(s(1.0, 1, 9, 9, 9), s(1.0, 2, 1, 1, 1)), Ordering::Greater);
        assert_eq!(cmp(s(1.0, 1, 1, 9, 9), s(1.0, 1, 2, 1, 1)), Ordering::Greater);
        assert_eq!(cmp(s(1.0, 1, 1, 2, 2), s(1.0, 1, 1, 1, 4)), Ordering::Greater);
        assert_eq!(cmp(s(1.0, 1, 1, 1, 3), s(1.0, 1, 1, 2, 2)), Ordering::Greater);
        assert_eq!(cmp(s(1.0, 1, 1, 1, 1), s(1.0, 1, 1, 1, 1)), Ordering::Equal);
    }

    #[test]
    fn merge_is_order_independent() {
        let items: Vec<Scored> = (0..40)
            .map(|k| Scored {
                cell: Cell { mu: (k * 7) % 11, nu: (k * 3) % 5, weak: k % 4, vacuum: k % 3 },
                rate: ((k * 13) % 6) as f64,
                secure: true,
            })
            .collect();
        let fold = |order: &[usize]| {
            let mut best = None;
            for &i in order {
                offer(&mut best, items[i]);
            }
            best.unwrap()
        };
        let forward: Vec<usize> = (0..items.len()).collect();
        let backward: Vec<usize> = forward.iter().rev().copied().collect();
        let (a, b) = (fold(&forward), fold(&backward));
        assert_eq!(a.top.cell, b.top.cell);
        assert_eq!((a.ties, a.evaluated), (b.ties, b.evaluated));
        assert_eq!(a.top.rate, 5.0);
        assert!(a.ties > 1);
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(GridSpec::default()).is_ok());
        let bad = GridSpec { mu_range: (0.0, 1.0), ..GridSpec::default() };
        assert!(validate_grid(bad).is_err());
        let bad = GridSpec { intensity_step: 0.0, ..GridSpec::default() };
        assert!(validate_grid(bad).is_err());
        let bad = GridSpec { fraction_step: 0.03, ..GridSpec::default() };
        assert!(validate_grid(bad).is_err());
        let bad = GridSpec { coarse_fraction_step: 0.001, ..GridSpec::default() };
        assert!(validate_grid(bad).is_err());
    }

    #[test]
    fn no_decoy_is_insecure_at_15km() {
        let setup = presets::one_decoy_setup();
        let out = optimize(&setup, 15.0, ProtocolFamily::NoDecoy, &plan(), &GridSpec::default()).unwrap();
        assert!(!out.secure);
        assert!(out.rate <= 0.0);
    }

    #[test]
    fn infinite_decoy_optimum_beats_fixed_intensity() {
        let setup = presets::one_decoy_setup();
        let out = optimize(&setup, 15.0, ProtocolFamily::InfiniteDecoy, &plan(), &GridSpec::default()).unwrap();
        let point = channel::transmittance(&setup, 15.0).unwrap();
        let fixed = security::infinite_decoy_rate(&setup, &point, 0.8).unwrap();
        assert!(out.secure && out.rate >= fixed);
        assert_eq!(out.stages.len(), 2);
        assert!(out.stages[1].best_rate >= out.stages[0].best_rate);
        assert_eq!(out.stages[1].intensity_step, 0.001);
    }

    #[test]
    fn refinement_never_loses_rate() {
        let setup = presets::weak_vacuum_setup();
        let grid = GridSpec { refine_stages: 3, ..GridSpec::default() };
        let out = optimize(&setup, 40.0, ProtocolFamily::OneDecoy, &plan(), &grid).unwrap();
        for pair in out.stages.windows(2) {
            assert!(pair[1].best_rate >= pair[0].best_rate);
        }
        let p = out.protocol;
        assert!(p.nu.unwrap() < p.mu);
        assert!((p.frac_signal + p.frac_weak + p.frac_vacuum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_distance_lists() {
        assert_eq!(sweep_distances(0.0, 10.0, 5.0).unwrap(), vec![0.0, 5.0, 10.0]);
        assert_eq!(sweep_distances(15.0, 20.0, 50.0).unwrap(), vec![15.0]);
        assert_eq!(sweep_distances(0.0, 0.3, 0.1).unwrap().len(), 4);
        assert!(sweep_distances(5.0, 1.0, 1.0).is_err());
        assert!(sweep_distances(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn ripple_warning_fires_on_rising_rate() {
        let p = |d, r| SweepPoint {
            distance_km: d,
            family: ProtocolFamily::InfiniteDecoy,
            best_rate: r,
            best_protocol: ProtocolSpec::infinite_decoy(0.5),
            secure: r > 0.0,
        };
        assert!(ripple_warnings(&[p(0.0, 1e-3), p(1.0, 9e-4)]).is_empty());
        assert!(ripple_warnings(&[p(0.0, 1e-3), p(1.0, 1.004e-3)]).is_empty());
        assert_eq!(ripple_warnings(&[p(0.0, 1e-3), p(1.0, 1.1e-3)]).len(), 1);
    }

    #[test]
    fn zero_range_is_reported() {
        let mut setup = presets::one_decoy_setup();
        setup.detector_error_e_det = 0.2;
        let err = max_secure_distance(&setup, ProtocolFamily::InfiniteDecoy, &plan(), &GridSpec::default());
        assert_eq!(err.unwrap_err(), Error::ZeroRange);
    }

    #[test]
    fn early_exit_agrees_with_full_search() {
        let setup = presets::one_decoy_setup();
        let grid = GridSpec::default();
        for (family, d) in [
            (ProtocolFamily::OneDecoy, 30.0),
            (ProtocolFamily::OneDecoy, 70.0),
            (ProtocolFamily::NoDecoy, 3.0),
            (ProtocolFamily::NoDecoy, 15.0),
            (ProtocolFamily::InfiniteDecoy, 95.0),
        ] {
            let full = optimize(&setup, d, family, &plan(), &grid).unwrap().secure;
            let fast = secure_at(&setup, d, family, &plan(), &grid).unwrap();
            assert_eq!(full, fast, "{family} at {d} km");
        }
    }
}
