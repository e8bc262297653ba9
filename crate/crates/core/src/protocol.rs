//! Piecewise control schedules for the measurement / feedback cycle, and the
//! noise-free calibrations they depend on.
//!
//! One cycle: measure (drive ramp, then hold) -> stabilize (raise detuning
//! and drive, start parking) -> detune (finish parking) -> wait ->
//! [optional unconditional pi-pulse] -> retune (cancellation drive on) ->
//! dwell -> conditional pi-pulse.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bifurcation::{critical_photon_numbers, steady_states};
use crate::params::{mhz_to_rad_s, ns_to_s, SystemParams};
use crate::sde::{Controls, NumericalBlowup};
use crate::trajectory::{run_trajectory, TrajectoryOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("segment '{0}' has non-positive duration")]
    ZeroDuration(String),
    #[error("segment '{0}' has a non-finite ramp endpoint")]
    NonFinite(String),
    #[error("schedule has no segments")]
    Empty,
    #[error("number of cycles must be at least 1")]
    NoCycles,
    #[error("segment '{segment}' tunes {control} at {rate:.3e} rad/s^2, above the limit {limit:.3e}")]
    TuningRate {
        segment: String,
        control: &'static str,
        rate: f64,
        limit: f64,
    },
    #[error("{control} jumps by {jump:.3e} rad/s entering segment '{segment}'")]
    Discontinuous {
        segment: String,
        control: &'static str,
        jump: f64,
    },
    #[error("protocol is missing the calibrated {0}")]
    Uncalibrated(&'static str),
    #[error("invalid protocol parameter: {0}")]
    InvalidParameter(String),
    #[error("could not parse schedule: {0}")]
    Parse(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
    #[error(transparent)]
    Blowup(#[from] NumericalBlowup),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RampShape {
    Constant,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ramp<T> {
    pub start: T,
    pub end: T,
    pub shape: RampShape,
}

impl<T> Ramp<T>
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    pub fn constant(v: T) -> Self {
        Self {
            start: v,
            end: v,
            shape: RampShape::Constant,
        }
    }

    pub fn linear(start: T, end: T) -> Self {
        Self {
            start,
            end,
            shape: RampShape::Linear,
        }
    }

    /// Value at fraction `f` in [0, 1] of the segment.
    #[inline]
    pub fn at(&self, f: f64) -> T {
        match self.shape {
            RampShape::Constant => self.start,
            RampShape::Linear => self.start + (self.end - self.start) * f,
        }
    }

    pub fn final_value(&self) -> T {
        match self.shape {
            RampShape::Constant => self.start,
            RampShape::Linear => self.end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSegment {
    pub name: String,
    /// Seconds.
    pub duration: f64,
    /// |alpha_d|, sqrt(photons/s).
    pub drive_amplitude: Ramp<f64>,
    /// arg(alpha_d), radians.
    pub drive_phase: Ramp<f64>,
    pub delta_a: Ramp<f64>,
    pub delta_b: Ramp<f64>,
    pub alpha_in: Ramp<Complex64>,
    pub alpha_p: Ramp<Complex64>,
    pub omega_d: Ramp<Complex64>,
    /// Projectively measure the qubit when this segment starts.
    #[serde(default)]
    pub project_qubit: bool,
}

impl ControlSegment {
    /// Controls at fraction `f` of the segment.
    #[inline]
    pub fn controls_at(&self, f: f64) -> Controls {
        Controls {
            alpha_d: Complex64::from_polar(self.drive_amplitude.at(f), self.drive_phase.at(f)),
            alpha_in: self.alpha_in.at(f),
            alpha_p: self.alpha_p.at(f),
            delta_a: self.delta_a.at(f),
            delta_b: self.delta_b.at(f),
            omega_d: self.omega_d.at(f),
        }
    }

    fn is_finite(&self) -> bool {
        let real = [
            &self.drive_amplitude,
            &self.drive_phase,
            &self.delta_a,
            &self.delta_b,
        ];
        let cplx = [&self.alpha_in, &self.alpha_p, &self.omega_d];
        real.iter().all(|r| r.start.is_finite() && r.end.is_finite())
            && cplx.iter().all(|r| r.start.is_finite() && r.end.is_finite())
    }

    /// Segment holding every control at this segment's final value.
    fn held(&self, name: &str, duration: f64) -> Self {
        Self {
            name: name.to_string(),
            duration,
            drive_amplitude: Ramp::constant(self.drive_amplitude.final_value()),
            drive_phase: Ramp::constant(self.drive_phase.final_value()),
            delta_a: Ramp::constant(self.delta_a.final_value()),
            delta_b: Ramp::constant(self.delta_b.final_value()),
            alpha_in: Ramp::constant(self.alpha_in.final_value()),
            alpha_p: Ramp::constant(self.alpha_p.final_value()),
            omega_d: Ramp::constant(self.omega_d.final_value()),
            project_qubit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub total_duration: f64,
    pub segments: Vec<ControlSegment>,
}

impl Schedule {
    pub fn new(segments: Vec<ControlSegment>) -> Result<Self, ScheduleError> {
        if segments.is_empty() {
            return Err(ScheduleError::Empty);
        }
        for s in &segments {
            if !(s.duration > 0.0) || !s.duration.is_finite() {
                return Err(ScheduleError::ZeroDuration(s.name.clone()));
            }
            if !s.is_finite() {
                return Err(ScheduleError::NonFinite(s.name.clone()));
            }
        }
        let total_duration = segments.iter().map(|s| s.duration).sum();
        Ok(Self {
            total_duration,
            segments,
        })
    }

    /// Cumulative end time of each segment.
    pub fn segment_ends(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.segments
            .iter()
            .map(|s| {
                t += s.duration;
                t
            })
            .collect()
    }

    pub fn controls_at(&self, t: f64) -> Controls {
        let mut start = 0.0;
        for s in &self.segments {
            if t < start + s.duration {
                return s.controls_at(((t - start) / s.duration).clamp(0.0, 1.0));
            }
            start += s.duration;
        }
        let last = self.segments.last().expect("schedule is non-empty");
        last.controls_at(1.0)
    }

    /// End times of every segment with the given name.
    pub fn ends_of(&self, name: &str) -> Vec<f64> {
        self.segments
            .iter()
            .zip(self.segment_ends())
            .filter(|(s, _)| s.name == name)
            .map(|(_, t)| t)
            .collect()
    }

    /// Start time of the first segment with the given name.
    pub fn start_of(&self, name: &str) -> Option<f64> {
        let mut t = 0.0;
        for s in &self.segments {
            if s.name == name {
                return Some(t);
            }
            t += s.duration;
        }
        None
    }

    /// Check |d delta_a/dt| and |d delta_b/dt| against `limit` (rad/s^2),
    /// including jumps between consecutive segments.
    pub fn check_tuning_rate(&self, limit: f64) -> Result<(), ScheduleError> {
        let mut prev: Option<(f64, f64)> = None;
        for s in &self.segments {
            for (control, ramp) in [("delta_a", &s.delta_a), ("delta_b", &s.delta_b)] {
                let rate = (ramp.final_value() - ramp.start).abs() / s.duration;
                if rate > limit {
                    return Err(ScheduleError::TuningRate {
                        segment: s.name.clone(),
                        control,
                        rate,
                        limit,
                    });
                }
            }
            if let Some((a, b)) = prev {
                for (control, before, after) in
                    [("delta_a", a, s.delta_a.start), ("delta_b", b, s.delta_b.start)]
                {
                    let jump = (after - before).abs();
                    if jump > 1e-9 * before.abs().max(after.abs()).max(1.0) {
                        return Err(ScheduleError::Discontinuous {
                            segment: s.name.clone(),
                            control,
                            jump,
                        });
                    }
                }
            }
            prev = Some((s.delta_a.final_value(), s.delta_b.final_value()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schedule serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ScheduleError> {
        let s: Schedule = toml::from_str(text).map_err(|e| ScheduleError::Parse(e.to_string()))?;
        Schedule::new(s.segments)
    }

    /// Hex SHA-256 of the serialized schedule.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

/// Drive-plateau window (in units of sqrt(kappa_d)) in which a qubit in |1>
/// latches the Kerr resonator high while |0> leaves it low.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveWindow {
    /// Smallest plateau at which the |1>-conditioned field latches.
    pub low: f64,
    /// Smallest plateau at which the |0>-conditioned field latches.
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Measurement duration, including the drive ramp (s).
    pub t_measure: f64,
    /// Linear drive ramp at the start of the measurement (s).
    pub ramp_up: f64,
    pub t_stabilize: f64,
    /// Duration of each detuning ramp (s).
    pub t_delta: f64,
    pub t_wait: f64,
    /// Pause between retuning and the pi-pulse (s).
    pub t_dwell: f64,
    pub t_pi: f64,
    /// Drive-free gap between stabilization cycles, letting the Kerr
    /// resonator empty (s).
    pub t_reset: f64,
    /// Measurement drive plateau |alpha_d| / sqrt(kappa_d); `None` means
    /// calibrate.
    pub drive_plateau: Option<f64>,
    /// Where the plateau sits inside the calibrated window, 0 = low edge.
    pub plateau_fraction: f64,
    /// arg(alpha_d), radians.
    pub drive_phase: f64,
    pub stab_detuning_factor: f64,
    pub stab_drive_factor: f64,
    /// Park detuning of drive and Kerr resonator away from the cavity (rad/s).
    pub delta_t: f64,
    /// Rabi rate of the pi-pulses (rad/s).
    pub omega_pi: f64,
    /// sqrt(kappa_p) alpha_p during the measurement (rad/s).
    pub purcell_drive: Complex64,
    /// Cancellation drive at the tee; `None` means calibrate.
    pub alpha_in: Option<Complex64>,
    pub n_cycles: usize,
    /// Unconditional pi-pulse at the end of the wait.
    pub pre_pi: bool,
    /// Allowed tuning rate in units of (kappa_a + kappa_d)^2.
    pub rate_multiplier: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        let omega_pi = mhz_to_rad_s(7.0);
        Self {
            t_measure: ns_to_s(400.0),
            ramp_up: ns_to_s(80.0),
            t_stabilize: ns_to_s(150.0),
            t_delta: ns_to_s(100.0),
            t_wait: ns_to_s(25.0),
            t_dwell: ns_to_s(15.0),
            t_pi: PI / (2.0 * omega_pi),
            t_reset: ns_to_s(200.0),
            drive_plateau: None,
            plateau_fraction: 0.1,
            drive_phase: PI,
            stab_detuning_factor: 1.7,
            stab_drive_factor: 1.8,
            delta_t: mhz_to_rad_s(30.0),
            omega_pi,
            purcell_drive: Complex64::new(0.0, mhz_to_rad_s(8.0)),
            alpha_in: None,
            n_cycles: 1,
            pre_pi: false,
            rate_multiplier: 2.0,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let durations = [
            ("t_measure", self.t_measure),
            ("t_stabilize", self.t_stabilize),
            ("t_delta", self.t_delta),
            ("t_wait", self.t_wait),
            ("t_dwell", self.t_dwell),
            ("t_pi", self.t_pi),
            ("t_reset", self.t_reset),
            ("ramp_up", self.ramp_up),
        ];
        for (name, d) in durations {
            if !(d > 0.0) || !d.is_finite() {
                return Err(ScheduleError::ZeroDuration(name.to_string()));
            }
        }
        if self.ramp_up >= self.t_measure {
            return Err(ScheduleError::InvalidParameter(
                "ramp_up must be shorter than t_measure".into(),
            ));
        }
        for (name, f) in [
            ("stab_detuning_factor", self.stab_detuning_factor),
            ("stab_drive_factor", self.stab_drive_factor),
        ] {
            if !(f > 1.0) || !f.is_finite() {
                return Err(ScheduleError::InvalidParameter(format!("{name} must exceed 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.plateau_fraction) {
            return Err(ScheduleError::InvalidParameter(
                "plateau_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(self.rate_multiplier > 0.0) {
            return Err(ScheduleError::InvalidParameter(
                "rate_multiplier must be positive".into(),
            ));
        }
        if self.n_cycles == 0 {
            return Err(ScheduleError::NoCycles);
        }
        Ok(())
    }

    pub fn tuning_rate_limit(&self, p: &SystemParams) -> f64 {
        self.rate_multiplier * p.kerr.kappa_total().powi(2)
    }

    /// Wait that makes the retuning ramp start at `t_retune`.
    pub fn wait_for_retune_at(&self, t_retune: f64) -> f64 {
        let pre = if self.pre_pi { self.t_pi } else { 0.0 };
        t_retune - (self.t_measure + self.t_stabilize + self.t_delta + pre)
    }
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Absolute drive amplitude for a plateau given in units of sqrt(kappa_d).
pub fn plateau_amplitude(p: &SystemParams, plateau: f64) -> f64 {
    plateau * p.kerr.kappa_d.sqrt()
}

fn purcell_amplitude(p: &SystemParams, pp: &ProtocolParams) -> Complex64 {
    if p.cavity.kappa_p > 0.0 {
        pp.purcell_drive / p.cavity.kappa_p.sqrt()
    } else {
        zero()
    }
}

/// Only the measurement part of a cycle.
fn measurement_segments(p: &SystemParams, pp: &ProtocolParams, plateau: f64) -> Vec<ControlSegment> {
    let amp = plateau_amplitude(p, plateau);
    let delta_a0 = p.kerr.delta_a0;
    let alpha_p = Ramp::constant(purcell_amplitude(p, pp));
    let base = ControlSegment {
        name: "measure_ramp".into(),
        duration: pp.ramp_up,
        drive_amplitude: Ramp::linear(0.0, amp),
        drive_phase: Ramp::constant(pp.drive_phase),
        delta_a: Ramp::constant(delta_a0),
        delta_b: Ramp::constant(0.0),
        alpha_in: Ramp::constant(zero()),
        alpha_p,
        omega_d: Ramp::constant(zero()),
        project_qubit: true,
    };
    let hold = base.held("measure_hold", pp.t_measure - pp.ramp_up);
    vec![base, hold]
}

/// Segments of one cycle with an explicit plateau, cancellation drive and
/// wait; the conditional pi-pulse is left out when `with_pi` is false.
fn cycle_segments(
    p: &SystemParams,
    pp: &ProtocolParams,
    plateau: f64,
    alpha_in: Complex64,
    t_wait: f64,
    with_pi: bool,
) -> Vec<ControlSegment> {
    let amp = plateau_amplitude(p, plateau);
    let delta_a0 = p.kerr.delta_a0;
    let stab_amp = pp.stab_drive_factor * amp;
    let stab_delta = pp.stab_detuning_factor * delta_a0;
    // The park ramp spans stabilize + detune.
    let park_split = -pp.delta_t * pp.t_stabilize / (pp.t_stabilize + pp.t_delta);
    let phase = Ramp::constant(pp.drive_phase);
    let off = Ramp::constant(zero());
    let pulse = Ramp::constant(Complex64::new(pp.omega_pi, 0.0));

    let mut segs = measurement_segments(p, pp, plateau);
    segs.push(ControlSegment {
        name: "stabilize".into(),
        duration: pp.t_stabilize,
        drive_amplitude: Ramp::linear(amp, stab_amp),
        drive_phase: phase,
        delta_a: Ramp::linear(delta_a0, stab_delta),
        delta_b: Ramp::linear(0.0, park_split),
        alpha_in: off,
        alpha_p: off,
        omega_d: off,
        project_qubit: false,
    });
    let mut detune = segs.last().unwrap().held("detune", pp.t_delta);
    detune.delta_b = Ramp::linear(park_split, -pp.delta_t);
    segs.push(detune);
    let wait = segs.last().unwrap().held("wait", t_wait);
    segs.push(wait);
    if pp.pre_pi {
        let mut pre = segs.last().unwrap().held("pre_pi", pp.t_pi);
        pre.omega_d = pulse;
        segs.push(pre);
    }
    segs.push(ControlSegment {
        name: "retune".into(),
        duration: pp.t_delta,
        drive_amplitude: Ramp::linear(stab_amp, amp),
        drive_phase: phase,
        delta_a: Ramp::linear(stab_delta, delta_a0),
        delta_b: Ramp::linear(-pp.delta_t, 0.0),
        alpha_in: Ramp::constant(alpha_in),
        alpha_p: off,
        omega_d: off,
        project_qubit: false,
    });
    let dwell = segs.last().unwrap().held("dwell", pp.t_dwell);
    segs.push(dwell);
    if with_pi {
        let mut pi = segs.last().unwrap().held("pi_pulse", pp.t_pi);
        pi.omega_d = pulse;
        segs.push(pi);
    }
    segs
}

fn calibrated(pp: &ProtocolParams) -> Result<(f64, Complex64), ScheduleError> {
    let plateau = pp.drive_plateau.ok_or(ScheduleError::Uncalibrated("drive plateau"))?;
    let alpha_in = pp.alpha_in.ok_or(ScheduleError::Uncalibrated("alpha_in"))?;
    Ok((plateau, alpha_in))
}

fn finish(p: &SystemParams, pp: &ProtocolParams, segs: Vec<ControlSegment>) -> Result<Schedule, ScheduleError> {
    let s = Schedule::new(segs)?;
    s.check_tuning_rate(pp.tuning_rate_limit(p))?;
    Ok(s)
}

/// One measurement / feedback cycle.
pub fn build_state_prep(p: &SystemParams, pp: &ProtocolParams) -> Result<Schedule, ScheduleError> {
    pp.validate()?;
    let (plateau, alpha_in) = calibrated(pp)?;
    finish(p, pp, cycle_segments(p, pp, plateau, alpha_in, pp.t_wait, true))
}

/// `n_cycles` back-to-back cycles separated by drive-free reset gaps.
pub fn build_stabilization(
    p: &SystemParams,
    pp: &ProtocolParams,
    n_cycles: usize,
) -> Result<Schedule, ScheduleError> {
    if n_cycles == 0 {
        return Err(ScheduleError::NoCycles);
    }
    pp.validate()?;
    let (plateau, alpha_in) = calibrated(pp)?;
    let cycle = cycle_segments(p, pp, plateau, alpha_in, pp.t_wait, true);
    let mut reset = cycle.last().unwrap().held("reset", pp.t_reset);
    reset.drive_amplitude = Ramp::constant(0.0);
    reset.alpha_in = Ramp::constant(zero());
    reset.omega_d = Ramp::constant(zero());
    let mut segs = Vec::with_capacity(n_cycles * (cycle.len() + 1));
    for k in 0..n_cycles {
        if k > 0 {
            segs.push(reset.clone());
        }
        segs.extend(cycle.iter().cloned());
    }
    finish(p, pp, segs)
}

/// A single cycle with a long wait; with `pre_pi` set the qubit gets an
/// unconditional pi-pulse just before retuning.
pub fn build_memory(p: &SystemParams, pp: &ProtocolParams, t_wait_long: f64) -> Result<Schedule, ScheduleError> {
    if !(t_wait_long > 0.0) {
        return Err(ScheduleError::ZeroDuration("wait".into()));
    }
    pp.validate()?;
    let (plateau, alpha_in) = calibrated(pp)?;
    finish(p, pp, cycle_segments(p, pp, plateau, alpha_in, t_wait_long, true))
}

/// Photon number separating the low and high Kerr branches: geometric mean
/// of the two critical photon numbers of the isolated resonator.
pub fn branch_separator(p: &SystemParams) -> Result<f64, ProtocolError> {
    let k = &p.kerr;
    let cp = critical_photon_numbers(k.delta_a0, k.kerr, k.kappa_a, k.kappa_d)
        .map_err(|e| ProtocolError::CalibrationFailed(e.to_string()))?;
    Ok((cp.n_c_minus * cp.n_c_plus).sqrt())
}

/// Default latching threshold for a plateau drive: geometric mean of the two
/// stable isolated-resonator steady states, or of the critical photon
/// numbers when the plateau is outside the bistable window.
pub fn latch_threshold_photons(p: &SystemParams, plateau: f64) -> Result<f64, ProtocolError> {
    let k = &p.kerr;
    let power = k.kappa_d * plateau_amplitude(p, plateau).powi(2);
    let s = steady_states(power, k.delta_a0, k.kerr, k.kappa_a, k.kappa_d);
    let stable: Vec<f64> = s.stable_roots().collect();
    if stable.len() == 2 && stable[0] > 0.0 {
        Ok((stable[0] * stable[1]).sqrt())
    } else {
        branch_separator(p)
    }
}

/// Isolated-resonator upper critical drive in units of sqrt(kappa_d).
pub fn isolated_jump_up_plateau(p: &SystemParams) -> Result<f64, ProtocolError> {
    let k = &p.kerr;
    let cp = critical_photon_numbers(k.delta_a0, k.kerr, k.kappa_a, k.kappa_d)
        .map_err(|e| ProtocolError::CalibrationFailed(e.to_string()))?;
    Ok(cp.jump_up_power().sqrt() / k.kappa_d)
}

fn noise_free(fixed_sz: f64) -> TrajectoryOptions {
    TrajectoryOptions {
        noise: false,
        qubit_decay: false,
        fixed_sz: Some(fixed_sz),
        record_stride: usize::MAX,
        trace: false,
        probe_steps: Vec::new(),
    }
}

/// Noise-free runs with a frozen qubit only draw the unused jump threshold.
fn unused_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// Does the noise-free measurement with the qubit frozen at `sz` latch the
/// Kerr resonator high at this plateau?
fn latches(p: &SystemParams, pp: &ProtocolParams, plateau: f64, sz: f64, separator: f64) -> Result<bool, ProtocolError> {
    let schedule = Schedule::new(measurement_segments(p, pp, plateau))?;
    let out = run_trajectory(&schedule, p, sz > 0.0, &noise_free(sz), &mut unused_rng())?;
    Ok(out.field.n_a() > separator)
}

/// Smallest measurement plateau (units of sqrt(kappa_d)) at which the
/// noise-free field latches with the qubit frozen in the given state.
pub fn latch_onset(p: &SystemParams, pp: &ProtocolParams, excited: bool) -> Result<f64, ProtocolError> {
    pp.validate()?;
    let separator = branch_separator(p)?;
    let sz = if excited { 1.0 } else { -1.0 };
    let top = 3.0 * isolated_jump_up_plateau(p)?;
    let n_grid = 60;
    let mut below = 0.0;
    let mut above = None;
    for k in 1..=n_grid {
        let x = top * k as f64 / n_grid as f64;
        if latches(p, pp, x, sz, separator)? {
            above = Some(x);
            break;
        }
        below = x;
    }
    let mut above = above.ok_or_else(|| {
        ProtocolError::CalibrationFailed(format!("no latching below plateau {top:.2}"))
    })?;
    while above - below > 1e-4 * above {
        let mid = 0.5 * (below + above);
        if latches(p, pp, mid, sz, separator)? {
            above = mid;
        } else {
            below = mid;
        }
    }
    Ok(above)
}

/// Plateau window where a |1> qubit latches the Kerr resonator and |0> does not.
pub fn calibrate_network_threshold(p: &SystemParams, pp: &ProtocolParams) -> Result<DriveWindow, ProtocolError> {
    if p.cavity.chi == 0.0 || p.cavity.kappa_b == 0.0 {
        return Err(ProtocolError::CalibrationFailed(
            "the qubit state does not reach the Kerr resonator".into(),
        ));
    }
    let low = latch_onset(p, pp, true)?;
    let high = latch_onset(p, pp, false)?;
    if low >= high {
        return Err(ProtocolError::CalibrationFailed(format!(
            "|1> latches from {low:.3} but |0> already from {high:.3}"
        )));
    }
    Ok(DriveWindow { low, high })
}

/// Cancellation drive: minus the Kerr resonator's emission towards the cavity
/// when the qubit was found in |0>, solved self-consistently since the tee
/// drive also reaches the Kerr resonator.
pub fn calibrate_alpha_in(p: &SystemParams, pp: &ProtocolParams) -> Result<Complex64, ProtocolError> {
    pp.validate()?;
    let plateau = pp.drive_plateau.ok_or(ScheduleError::Uncalibrated("drive plateau"))?;
    let separator = latch_threshold_photons(p, plateau)?;
    let emit = p.kerr.kappa_a.sqrt() * Complex64::from_polar(1.0, p.kerr.theta_a);
    let mut alpha_in = zero();
    for _ in 0..100 {
        let mut segs = cycle_segments(p, pp, plateau, alpha_in, pp.t_wait, false);
        let settle = segs.last().unwrap().held("settle", ns_to_s(1000.0));
        segs.push(settle);
        let schedule = Schedule::new(segs)?;
        let out = run_trajectory(&schedule, p, false, &noise_free(-1.0), &mut unused_rng())?;
        if out.field.n_a() > separator {
            return Err(ProtocolError::CalibrationFailed(format!(
                "the |0> trajectory latched high ({:.1} photons)",
                out.field.n_a()
            )));
        }
        let next = emit * out.field.alpha;
        let change = (next - alpha_in).norm();
        alpha_in = next;
        if change <= 1e-9 * alpha_in.norm().max(1e-300) {
            return Ok(alpha_in);
        }
    }
    Err(ProtocolError::CalibrationFailed(
        "cancellation drive did not converge".into(),
    ))
}

/// Calibration results, cached in run manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub window: Option<DriveWindow>,
    pub drive_plateau: f64,
    pub alpha_in: Complex64,
}

/// Fill in any missing plateau / cancellation drive by calibration.
pub fn calibrate(p: &SystemParams, pp: &ProtocolParams) -> Result<(ProtocolParams, Calibration), ProtocolError> {
    let mut out = pp.clone();
    let mut window = None;
    if out.drive_plateau.is_none() {
        let w = calibrate_network_threshold(p, pp)?;
        out.drive_plateau = Some(w.low + pp.plateau_fraction * (w.high - w.low));
        window = Some(w);
    }
    if out.alpha_in.is_none() {
        out.alpha_in = Some(calibrate_alpha_in(p, &out)?);
    }
    let cal = Calibration {
        window,
        drive_plateau: out.drive_plateau.unwrap(),
        alpha_in: out.alpha_in.unwrap(),
    };
    Ok((out, cal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::s_to_ns;

    fn ready() -> ProtocolParams {
        ProtocolParams {
            drive_plateau: Some(140.0),
            alpha_in: Some(Complex64::new(1e3, -2e3)),
            ..ProtocolParams::default()
        }
    }

    #[test]
    fn state_prep_duration() {
        let p = SystemParams::default();
        let s = build_state_prep(&p, &ready()).unwrap();
        assert!((s_to_ns(s.total_duration) - 825.714).abs() < 1e-3);
        let names: Vec<&str> = s.segments.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            ["measure_ramp", "measure_hold", "stabilize", "detune", "wait", "retune", "dwell", "pi_pulse"]
        );
    }

    #[test]
    fn park_ramp_rate() {
        let p = SystemParams::default();
        let pp = ready();
        let rate = pp.delta_t / pp.t_delta;
        assert!((rate - 1.885e15).abs() < 1e12);
        let kappa_sq = p.kerr.kappa_total().powi(2);
        assert!((kappa_sq - 1.109e15).abs() < 1e12);
        // Exceeds kappa^2 itself, passes with the default multiplier of 2.
        assert!(rate > kappa_sq);
        build_state_prep(&p, &pp).unwrap();
        let strict = ProtocolParams {
            rate_multiplier: 1.0,
            ..ready()
        };
        assert!(matches!(
            build_state_prep(&p, &strict),
            Err(ScheduleError::TuningRate { .. })
        ));
    }

    #[test]
    fn zero_duration_is_rejected() {
        let p = SystemParams::default();
        let pp = ProtocolParams {
            t_dwell: 0.0,
            ..ready()
        };
        assert!(matches!(build_state_prep(&p, &pp), Err(ScheduleError::ZeroDuration(_))));
        let seg = build_state_prep(&p, &ready()).unwrap().segments[0].clone();
        let bad = ControlSegment {
            duration: 0.0,
            ..seg
        };
        assert!(matches!(Schedule::new(vec![bad]), Err(ScheduleError::ZeroDuration(_))));
    }

    #[test]
    fn stabilization_structure() {
        let p = SystemParams::default();
        let pp = ready();
        let one = build_stabilization(&p, &pp, 1).unwrap();
        assert_eq!(one, build_state_prep(&p, &pp).unwrap());
        assert_eq!(build_stabilization(&p, &pp, 0), Err(ScheduleError::NoCycles));
        let many = build_stabilization(&p, &pp, 20).unwrap();
        let expect = 20.0 * one.total_duration + 19.0 * pp.t_reset;
        assert!((many.total_duration - expect).abs() < 1e-15);
        assert_eq!(many.ends_of("pi_pulse").len(), 20);
    }

    #[test]
    fn memory_reduces_to_state_prep() {
        let p = SystemParams::default();
        let pp = ready();
        assert_eq!(
            build_memory(&p, &pp, pp.t_wait).unwrap(),
            build_state_prep(&p, &pp).unwrap()
        );
        let long = ProtocolParams {
            pre_pi: true,
            ..ready()
        };
        let t_wait = long.wait_for_retune_at(78e-6);
        let s = build_memory(&p, &long, t_wait).unwrap();
        assert!((s.start_of("retune").unwrap() - 78e-6).abs() < 1e-15);
        assert_eq!(s.ends_of("pre_pi").len(), 1);
        let short = build_memory(&p, &long, 5e-6).unwrap();
        let names = |s: &Schedule| s.segments.iter().map(|x| x.name.clone()).collect::<Vec<_>>();
        assert_eq!(names(&s), names(&short));
        for (a, b) in s.segments.iter().zip(&short.segments) {
            if a.name != "wait" {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn schedule_round_trip_and_hash() {
        let p = SystemParams::default();
        let s = build_state_prep(&p, &ready()).unwrap();
        let text = s.to_toml();
        let back = Schedule::from_toml(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.hash(), s.hash());
        assert_eq!(s.hash().len(), 64);
        assert_eq!(build_state_prep(&p, &ready()).unwrap(), s);
    }

    #[test]
    fn controls_follow_ramps() {
        let p = SystemParams::default();
        let s = build_state_prep(&p, &ready()).unwrap();
        let amp = plateau_amplitude(&p, 140.0);
        let c = s.controls_at(ns_to_s(40.0));
        assert!((c.alpha_d.norm() - 0.5 * amp).abs() < 1e-9 * amp);
        assert!((c.alpha_d.arg().abs() - PI).abs() < 1e-12);
        assert!((c.alpha_p * p.cavity.kappa_p.sqrt() - Complex64::new(0.0, mhz_to_rad_s(8.0))).norm() < 1e-3);
        // Park detuning reached at the end of detune.
        let c = s.controls_at(ns_to_s(660.0));
        assert!((c.delta_b + pp_delta_t()).abs() < 1e-6 * pp_delta_t());
        let c = s.controls_at(ns_to_s(800.0));
        assert_eq!(c.omega_d, Complex64::new(mhz_to_rad_s(7.0), 0.0));
        assert_eq!(c.alpha_in, Complex64::new(1e3, -2e3));
    }

    fn pp_delta_t() -> f64 {
        ProtocolParams::default().delta_t
    }

    #[test]
    fn uncalibrated_protocol_is_rejected() {
        let p = SystemParams::default();
        assert!(matches!(
            build_state_prep(&p, &ProtocolParams::default()),
            Err(ScheduleError::Uncalibrated(_))
        ));
    }

    #[test]
    fn no_dispersive_shift_means_no_window() {
        let mut p = SystemParams::default();
        p.cavity.chi = 0.0;
        assert!(matches!(
            calibrate_network_threshold(&p, &ProtocolParams::default()),
            Err(ProtocolError::CalibrationFailed(_))
        ));
    }

    #[test]
    fn zero_drive_needs_no_cancellation() {
        let p = SystemParams::default();
        let pp = ProtocolParams {
            drive_plateau: Some(0.0),
            purcell_drive: zero(),
            ..ProtocolParams::default()
        };
        assert_eq!(calibrate_alpha_in(&p, &pp).unwrap(), zero());
    }
}
