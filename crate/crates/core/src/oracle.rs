//! Full-quantum Monte-Carlo wavefunction simulation of the isolated Kerr
//! resonator in a truncated Fock basis, used to cross-check the stochastic
//! mean-field engine.
//!
//! H = delta a'a + (K/2)(a'a)^2 + i(F a' - F* a), with loss kappa through the
//! jump operator a. F is the forcing term of the mean-field equation, i.e.
//! F = -sqrt(kappa_d) alpha_d.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{run_ensemble, trajectory_rng, EnsembleError, EnsembleOptions, InitialQubit};
use crate::params::SystemParams;
use crate::protocol::{ControlSegment, Ramp, Schedule};
use crate::trajectory::TrajectoryOptions;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("Fock basis of dimension {dim} is too small (tail population {tail:.2e}); try dim = {suggested}")]
    TruncationError { dim: usize, tail: f64, suggested: usize },
    #[error("dimension must be at least 2")]
    TooSmall,
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

/// Largest tail population (top 10% of the basis) tolerated.
pub const TAIL_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    pub amplitudes: Vec<Complex64>,
    pub norm_sq: f64,
    pub r_threshold: f64,
}

impl FockVector {
    pub fn vacuum<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self, OracleError> {
        if dim < 2 {
            return Err(OracleError::TooSmall);
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self {
            amplitudes,
            norm_sq: 1.0,
            r_threshold: draw_threshold(rng),
        })
    }

    /// Truncated coherent state with amplitude `alpha`, normalized.
    pub fn coherent<R: Rng + ?Sized>(dim: usize, alpha: Complex64, rng: &mut R) -> Result<Self, OracleError> {
        let mut v = Self::vacuum(dim, rng)?;
        let mut c = Complex64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
        for n in 0..dim {
            v.amplitudes[n] = c;
            c = c * alpha / ((n + 1) as f64).sqrt();
        }
        v.normalize();
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn refresh_norm(&mut self) {
        self.norm_sq = self.amplitudes.iter().map(|c| c.norm_sqr()).sum();
    }

    pub fn normalize(&mut self) {
        self.refresh_norm();
        let s = 1.0 / self.norm_sq.sqrt();
        for c in &mut self.amplitudes {
            *c *= s;
        }
        self.norm_sq = 1.0;
    }

    /// <n> normalized by the current norm.
    pub fn mean_photons(&self) -> f64 {
        let num: f64 = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(n, c)| n as f64 * c.norm_sqr())
            .sum();
        num / self.norm_sq
    }

    /// <a> normalized by the current norm.
    pub fn mean_field(&self) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for n in 0..self.dim() - 1 {
            acc += self.amplitudes[n].conj() * self.amplitudes[n + 1] * ((n + 1) as f64).sqrt();
        }
        acc / self.norm_sq
    }

    /// Population in the top 10% of the basis, relative to the norm.
    pub fn tail_population(&self) -> f64 {
        let dim = self.dim();
        let start = dim - (dim / 10).max(1);
        let tail: f64 = self.amplitudes[start..].iter().map(|c| c.norm_sqr()).sum();
        tail / self.norm_sq
    }

    fn check_truncation(&self) -> Result<(), OracleError> {
        let tail = self.tail_population();
        if tail < TAIL_LIMIT {
            Ok(())
        } else {
            Err(OracleError::TruncationError {
                dim: self.dim(),
                tail,
                suggested: 2 * self.dim(),
            })
        }
    }
}

fn draw_threshold<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let r: f64 = rng.random();
        if r > 0.0 {
            return r;
        }
    }
}

/// Diagonal of -iH - (kappa/2) a'a in the number basis.
fn diagonal(dim: usize, delta_a: f64, kerr: f64, kappa_sum: f64) -> Vec<Complex64> {
    (0..dim)
        .map(|n| {
            let n = n as f64;
            Complex64::new(-0.5 * kappa_sum * n, -(delta_a * n + 0.5 * kerr * n * n))
        })
        .collect()
}

/// Drive part F a' - F* a applied to `psi`, written into `out`.
#[inline]
fn apply_drive(psi: &[Complex64], drive: Complex64, sqrt_n: &[f64], out: &mut [Complex64]) {
    let dim = psi.len();
    let fc = drive.conj();
    out[0] = -fc * sqrt_n[1] * psi[1];
    for n in 1..dim - 1 {
        out[n] = drive * sqrt_n[n] * psi[n - 1] - fc * sqrt_n[n + 1] * psi[n + 1];
    }
    out[dim - 1] = drive * sqrt_n[dim - 1] * psi[dim - 2];
}

/// d psi/dt = (-iH - (kappa/2) a'a) psi.
pub fn apply_effective_hamiltonian(
    v: &FockVector,
    delta_a: f64,
    kerr: f64,
    drive: Complex64,
    kappa_sum: f64,
) -> Result<Vec<Complex64>, OracleError> {
    v.check_truncation()?;
    let dim = v.dim();
    let sqrt_n: Vec<f64> = (0..dim).map(|n| (n as f64).sqrt()).collect();
    let mut out = vec![Complex64::new(0.0, 0.0); dim];
    apply_drive(&v.amplitudes, drive, &sqrt_n, &mut out);
    for (o, (d, c)) in out
        .iter_mut()
        .zip(diagonal(dim, delta_a, kerr, kappa_sum).iter().zip(&v.amplitudes))
    {
        *o += d * c;
    }
    Ok(out)
}

/// Integrating-factor RK4 stepper: the diagonal is propagated exactly, the
/// drive coupling by classical RK4 in the interaction picture.
struct Stepper {
    dim: usize,
    sqrt_n: Vec<f64>,
    full: Vec<Complex64>,
    half: Vec<Complex64>,
    k: [Vec<Complex64>; 4],
    tmp: Vec<Complex64>,
    cached: Option<(f64, f64)>,
    kerr: f64,
    kappa_sum: f64,
    dt: f64,
}

impl Stepper {
    fn new(dim: usize, kerr: f64, kappa_sum: f64, dt: f64) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); dim];
        Self {
            dim,
            sqrt_n: (0..dim).map(|n| (n as f64).sqrt()).collect(),
            full: z.clone(),
            half: z.clone(),
            k: [z.clone(), z.clone(), z.clone(), z.clone()],
            tmp: z,
            cached: None,
            kerr,
            kappa_sum,
            dt,
        }
    }

    fn prepare(&mut self, delta_a: f64) {
        if self.cached == Some((delta_a, self.dt)) {
            return;
        }
        let d = diagonal(self.dim, delta_a, self.kerr, self.kappa_sum);
        for n in 0..self.dim {
            self.full[n] = (d[n] * self.dt).exp();
            self.half[n] = (d[n] * (0.5 * self.dt)).exp();
        }
        self.cached = Some((delta_a, self.dt));
    }

    fn step(&mut self, psi: &mut [Complex64], delta_a: f64, drive: Complex64) {
        self.prepare(delta_a);
        let h = self.dt;
        let dim = self.dim;
        let [k1, k2, k3, k4] = &mut self.k;
        apply_drive(psi, drive, &self.sqrt_n, k1);
        for n in 0..dim {
            self.tmp[n] = self.half[n] * (psi[n] + 0.5 * h * k1[n]);
        }
        apply_drive(&self.tmp, drive, &self.sqrt_n, k2);
        for n in 0..dim {
            self.tmp[n] = self.half[n] * psi[n] + 0.5 * h * k2[n];
        }
        apply_drive(&self.tmp, drive, &self.sqrt_n, k3);
        for n in 0..dim {
            self.tmp[n] = self.full[n] * psi[n] + h * self.half[n] * k3[n];
        }
        apply_drive(&self.tmp, drive, &self.sqrt_n, k4);
        for n in 0..dim {
            psi[n] = self.full[n] * psi[n]
                + h / 6.0 * (self.full[n] * k1[n] + 2.0 * self.half[n] * (k2[n] + k3[n]) + k4[n]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCWFTrajectory {
    /// <a'a> at recorded steps (0, stride, 2 stride, ...).
    pub mean_n: Vec<f64>,
    pub mean_a: Vec<Complex64>,
    pub jumps: usize,
    pub final_n: f64,
}

/// Evolve one wavefunction through the schedule's alpha_d and delta_a
/// controls, applying photon-loss jumps.
pub fn mcwf_evolve<R: Rng + ?Sized>(
    v: &mut FockVector,
    schedule: &Schedule,
    p: &SystemParams,
    dt: f64,
    record_stride: usize,
    rng: &mut R,
) -> Result<MCWFTrajectory, OracleError> {
    let dim = v.dim();
    let kappa_sum = p.kerr.kappa_total();
    let sqrt_kd = p.kerr.kappa_d.sqrt();
    let mut stepper = Stepper::new(dim, p.kerr.kerr, kappa_sum, dt);
    let n_steps = (schedule.total_duration / dt).round() as usize;
    let stride = record_stride.max(1);
    let bounds = schedule.segment_ends();
    let slack = 1e-6 * dt;
    let mut seg = 0;
    let mut seg_start = 0.0;
    let mut mean_n = Vec::with_capacity(n_steps / stride + 1);
    let mut mean_a = Vec::with_capacity(n_steps / stride + 1);
    let mut jumps = 0;
    let mut scratch = vec![Complex64::new(0.0, 0.0); dim];
    v.check_truncation()?;

    for i in 0..=n_steps {
        if i % stride == 0 {
            mean_n.push(v.mean_photons());
            mean_a.push(v.mean_field());
        }
        if i == n_steps {
            break;
        }
        let t = i as f64 * dt;
        while seg + 1 < bounds.len() && t + slack >= bounds[seg] {
            seg_start = bounds[seg];
            seg += 1;
        }
        let s = &schedule.segments[seg];
        let c = s.controls_at(((t - seg_start) / s.duration).clamp(0.0, 1.0));
        stepper.step(&mut v.amplitudes, c.delta_a, -sqrt_kd * c.alpha_d);
        v.refresh_norm();
        if v.norm_sq < v.r_threshold {
            // psi -> a psi, renormalized.
            for n in 0..dim - 1 {
                scratch[n] = v.amplitudes[n + 1] * ((n + 1) as f64).sqrt();
            }
            scratch[dim - 1] = Complex64::new(0.0, 0.0);
            v.amplitudes.copy_from_slice(&scratch);
            v.normalize();
            v.r_threshold = draw_threshold(rng);
            jumps += 1;
        }
        if i % 200 == 0 {
            v.check_truncation()?;
        }
    }
    v.check_truncation()?;
    Ok(MCWFTrajectory {
        final_n: v.mean_photons(),
        mean_n,
        mean_a,
        jumps,
    })
}

/// The Kerr resonator alone: cavity couplings removed.
pub fn isolated(p: &SystemParams) -> SystemParams {
    let mut q = *p;
    q.cavity.kappa_b = 0.0;
    q.cavity.kappa_p = 0.0;
    q.rederive().expect("removing the cavity keeps parameters valid");
    q
}

/// Linear drive ramp to `plateau` (units of sqrt(kappa_d)) over `ramp`,
/// then hold, at the configured Kerr detuning.
pub fn drive_ramp_schedule(p: &SystemParams, plateau: f64, ramp: f64, hold: f64) -> Schedule {
    let z = Complex64::new(0.0, 0.0);
    let amp = plateau * p.kerr.kappa_d.sqrt();
    let seg = |name: &str, duration: f64, drive: Ramp<f64>| ControlSegment {
        name: name.into(),
        duration,
        drive_amplitude: drive,
        drive_phase: Ramp::constant(0.0),
        delta_a: Ramp::constant(p.kerr.delta_a0),
        delta_b: Ramp::constant(0.0),
        alpha_in: Ramp::constant(z),
        alpha_p: Ramp::constant(z),
        omega_d: Ramp::constant(z),
        project_qubit: false,
    };
    Schedule::new(vec![
        seg("ramp", ramp, Ramp::linear(0.0, amp)),
        seg("hold", hold, Ramp::constant(amp)),
    ])
    .expect("ramp schedule is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub dim: usize,
    pub dt: f64,
    pub ramp: f64,
    pub hold: f64,
    pub record_interval: f64,
    pub seed: u64,
    pub latch_threshold: f64,
    pub workers: Option<usize>,
}

impl OracleOptions {
    /// Ramp over 20/kappa and hold for 40/kappa, as in the drive-ramp
    /// bifurcation scenario.
    pub fn for_params(p: &SystemParams, latch_threshold: f64) -> Self {
        let kappa = p.kerr.kappa_total();
        Self {
            dim: 180,
            dt: p.noise.dt,
            ramp: 20.0 / kappa,
            hold: 40.0 / kappa,
            record_interval: 1e-9,
            seed: p.noise.master_seed,
            latch_threshold,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveComparison {
    /// Drive plateau in units of sqrt(kappa_d).
    pub drive: f64,
    pub time_grid: Vec<f64>,
    pub n_mcwf: Vec<f64>,
    pub n_semiclassical: Vec<f64>,
    /// Standard errors of the final means.
    pub sem_mcwf: f64,
    pub sem_semiclassical: f64,
    pub latch_mcwf: f64,
    pub latch_semiclassical: f64,
    pub jumps: usize,
}

impl DriveComparison {
    pub fn final_difference_sigma(&self) -> f64 {
        let d = self.n_mcwf.last().unwrap() - self.n_semiclassical.last().unwrap();
        let s = (self.sem_mcwf.powi(2) + self.sem_semiclassical.powi(2)).sqrt();
        if s == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d.abs() / s
        }
    }

    /// The MCWF Kerr term (K/2)(a'a)^2 sits K/2 away in detuning from the
    /// mean-field nonlinearity, so near threshold the latching fractions are
    /// expected to differ.
    pub fn latching_differs(&self) -> bool {
        self.latch_mcwf != self.latch_semiclassical
    }
}

fn mean_and_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// MCWF ensemble over the drive-ramp schedule: per recorded time the mean
/// <a'a>, plus the final values per trajectory and the total jump count.
pub fn mcwf_ensemble(
    p: &SystemParams,
    plateau: f64,
    n_traj: usize,
    opts: &OracleOptions,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, usize), OracleError> {
    let q = isolated(p);
    let schedule = drive_ramp_schedule(&q, plateau, opts.ramp, opts.hold);
    let stride = ((opts.record_interval / opts.dt).round() as usize).max(1);
    let run = |i: usize| -> Result<MCWFTrajectory, OracleError> {
        let mut rng = trajectory_rng(opts.seed, i as u64);
        let mut v = FockVector::vacuum(opts.dim, &mut rng)?;
        mcwf_evolve(&mut v, &schedule, &q, opts.dt, stride, &mut rng)
    };
    let runs: Vec<Result<MCWFTrajectory, OracleError>> = match opts.workers {
        Some(1) => (0..n_traj).map(run).collect(),
        _ => (0..n_traj).into_par_iter().map(run).collect(),
    };
    let runs: Vec<MCWFTrajectory> = runs.into_iter().collect::<Result<_, _>>()?;
    let len = runs[0].mean_n.len();
    let mut mean = vec![0.0; len];
    for r in &runs {
        for (m, x) in mean.iter_mut().zip(&r.mean_n) {
            *m += x / n_traj as f64;
        }
    }
    let time_grid = (0..len).map(|k| (k * stride) as f64 * opts.dt).collect();
    let finals = runs.iter().map(|r| r.final_n).collect();
    let jumps = runs.iter().map(|r| r.jumps).sum();
    Ok((time_grid, mean, finals, jumps))
}

/// Semiclassical ensemble of the isolated resonator on the same schedule:
/// mean |alpha|^2 - 1/2 per recorded time and final |alpha|^2 - 1/2 per
/// trajectory.
pub fn semiclassical_ensemble(
    p: &SystemParams,
    plateau: f64,
    n_traj: usize,
    opts: &OracleOptions,
) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
    let mut q = isolated(p);
    q.noise.dt = opts.dt;
    let schedule = drive_ramp_schedule(&q, plateau, opts.ramp, opts.hold);
    let eopts = EnsembleOptions {
        trajectory: TrajectoryOptions {
            fixed_sz: Some(-1.0),
            ..TrajectoryOptions::default()
        },
        record_interval: opts.record_interval,
        workers: opts.workers,
        // Keep semiclassical streams apart from the MCWF ones.
        seed_offset: 1 << 40,
        latch_threshold: opts.latch_threshold + 0.5,
        probe_times: Vec::new(),
    };
    let r = run_ensemble(&schedule, &q, InitialQubit::Ground, n_traj, opts.seed, &eopts)?;
    let mean = r.mean_na.iter().map(|n| n - 0.5).collect();
    let finals = r.finals.iter().map(|f| f.na_final - 0.5).collect();
    Ok((mean, finals))
}

/// Paired MCWF and semiclassical runs for each drive.
pub fn compare_with_semiclassical(
    p: &SystemParams,
    drives: &[f64],
    n_traj: usize,
    opts: &OracleOptions,
) -> Result<Vec<DriveComparison>, OracleError> {
    let mut out = Vec::with_capacity(drives.len());
    for &drive in drives {
        let (time_grid, n_mcwf, finals_q, jumps) = mcwf_ensemble(p, drive, n_traj, opts)?;
        let (n_sc, finals_c) = semiclassical_ensemble(p, drive, n_traj, opts)?;
        let frac = |v: &[f64]| v.iter().filter(|&&n| n > opts.latch_threshold).count() as f64 / v.len() as f64;
        out.push(DriveComparison {
            drive,
            time_grid,
            sem_mcwf: mean_and_sem(&finals_q).1,
            sem_semiclassical: mean_and_sem(&finals_c).1,
            latch_mcwf: frac(&finals_q),
            latch_semiclassical: frac(&finals_c),
            n_mcwf,
            n_semiclassical: n_sc,
            jumps,
        });
    }
    Ok(out)
}

/// Drive (units of sqrt(kappa_d)) at which the semiclassical latching
/// fraction crosses `target`, by bisection inside the isolated hysteresis
/// window using a separate block of seeds.
pub fn calibrate_near_threshold_drive(
    p: &SystemParams,
    target: f64,
    n_traj: usize,
    opts: &OracleOptions,
) -> Result<f64, OracleError> {
    let k = &p.kerr;
    let (lo, hi) = match crate::bifurcation::critical_photon_numbers(k.delta_a0, k.kerr, k.kappa_a, k.kappa_d) {
        Ok(cp) => (cp.jump_down_power().sqrt() / k.kappa_d, 1.2 * cp.jump_up_power().sqrt() / k.kappa_d),
        Err(_) => return Ok(0.0),
    };
    let calib = OracleOptions {
        seed: opts.seed ^ 0x5eed_ca1b,
        ..opts.clone()
    };
    let fraction = |x: f64| -> Result<f64, OracleError> {
        let (_, finals) = semiclassical_ensemble(p, x, n_traj, &calib)?;
        Ok(finals.iter().filter(|&&n| n > opts.latch_threshold).count() as f64 / n_traj as f64)
    };
    let (mut a, mut b) = (lo, hi);
    for _ in 0..14 {
        let mid = 0.5 * (a + b);
        if fraction(mid)? < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}
