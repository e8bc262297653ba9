//! Many independent trajectories over one schedule, with deterministic
//! per-trajectory seeding and an ordered reduction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::SystemParams;
use crate::protocol::Schedule;
use crate::sde::NumericalBlowup;
use crate::trajectory::{run_trajectory, step_count, TrajectoryOptions, TrajectoryOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("at least one trajectory is required")]
    NoTrajectories,
    #[error("time {0} s is outside the recorded range")]
    IndexError(f64),
    #[error("every trajectory failed")]
    AllFailed,
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialQubit {
    Ground,
    Excited,
    /// Populations (P0, P1); the first round(P0 n_traj) trajectories start
    /// in |0>, the rest in |1>.
    Mixed(f64, f64),
}

impl InitialQubit {
    fn excited(&self, index: usize, n_traj: usize) -> bool {
        match *self {
            InitialQubit::Ground => false,
            InitialQubit::Excited => true,
            InitialQubit::Mixed(p0, p1) => {
                let n0 = (p0 / (p0 + p1) * n_traj as f64).round() as usize;
                index >= n0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Ground,
    Excited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub trajectory: TrajectoryOptions,
    /// Spacing of the recorded means (s).
    pub record_interval: f64,
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
    /// Added to the trajectory index before seeding.
    pub seed_offset: u64,
    /// Photon number above which a final Kerr field counts as latched.
    pub latch_threshold: f64,
    /// Times (s) at which sz is additionally sampled, e.g. protocol ends.
    pub probe_times: Vec<f64>,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryOptions::default(),
            record_interval: 1e-9,
            workers: None,
            seed_offset: 0,
            latch_threshold: f64::INFINITY,
            probe_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFinal {
    pub traj_id: usize,
    pub sz_final: f64,
    pub na_final: f64,
    pub jumped: bool,
    pub latched: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    /// Seconds.
    pub time_grid: Vec<f64>,
    pub mean_sz: Vec<f64>,
    pub mean_na: Vec<f64>,
    pub mean_nb: Vec<f64>,
    pub finals: Vec<TrajectoryFinal>,
    pub probe_times: Vec<f64>,
    pub probe_mean_sz: Vec<f64>,
    pub n_traj: usize,
    pub n_failed: usize,
    pub failures: Vec<(usize, NumericalBlowup)>,
    pub master_seed: u64,
}

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trajectory `index`: two splitmix64 rounds over the master seed
/// and the index.
pub fn trajectory_seed(master_seed: u64, index: u64) -> u64 {
    mix64(mix64(master_seed.wrapping_add(0x9e37_79b9_7f4a_7c15)) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(trajectory_seed(master_seed, index))
}

pub fn run_ensemble(
    schedule: &Schedule,
    p: &SystemParams,
    initial: InitialQubit,
    n_traj: usize,
    master_seed: u64,
    opts: &EnsembleOptions,
) -> Result<EnsembleResult, EnsembleError> {
    if n_traj == 0 {
        return Err(EnsembleError::NoTrajectories);
    }
    let dt = p.noise.dt;
    let n_steps = step_count(schedule, dt);
    let stride = ((opts.record_interval / dt).round() as usize).max(1);
    let mut probes: Vec<(f64, usize)> = opts
        .probe_times
        .iter()
        .map(|&t| (t, ((t / dt).round() as usize).min(n_steps)))
        .collect();
    probes.sort_by(|a, b| a.1.cmp(&b.1));
    let mut topts = opts.trajectory.clone();
    topts.record_stride = stride;
    topts.probe_steps = probes.iter().map(|x| x.1).collect();

    let run_one = |i: usize| -> Result<TrajectoryOutcome, NumericalBlowup> {
        let mut rng = trajectory_rng(master_seed, i as u64 + opts.seed_offset);
        run_trajectory(schedule, p, initial.excited(i, n_traj), &topts, &mut rng)
    };
    let outcomes: Vec<Result<TrajectoryOutcome, NumericalBlowup>> = match opts.workers {
        Some(1) => (0..n_traj).map(run_one).collect(),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| EnsembleError::Pool(e.to_string()))?
            .install(|| (0..n_traj).into_par_iter().map(run_one).collect()),
        None => (0..n_traj).into_par_iter().map(run_one).collect(),
    };

    let n_samples = n_steps / stride + 1;
    let mut sums = vec![[0.0f64; 3]; n_samples];
    let mut probe_sums = vec![0.0; probes.len()];
    let mut finals = Vec::with_capacity(n_traj);
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => {
                for (acc, s) in sums.iter_mut().zip(&o.samples) {
                    acc[0] += s[0];
                    acc[1] += s[1];
                    acc[2] += s[2];
                }
                for (acc, s) in probe_sums.iter_mut().zip(&o.probe_sz) {
                    *acc += s;
                }
                let na = o.field.n_a();
                finals.push(TrajectoryFinal {
                    traj_id: i,
                    sz_final: o.final_sz,
                    na_final: na,
                    jumped: o.jumped,
                    latched: na > opts.latch_threshold,
                });
            }
            Err(e) => failures.push((i, e)),
        }
    }
    let ok = finals.len();
    if ok == 0 {
        return Err(EnsembleError::AllFailed);
    }
    let norm = 1.0 / ok as f64;
    Ok(EnsembleResult {
        time_grid: (0..n_samples).map(|k| (k * stride) as f64 * dt).collect(),
        mean_sz: sums.iter().map(|s| s[0] * norm).collect(),
        mean_na: sums.iter().map(|s| s[1] * norm).collect(),
        mean_nb: sums.iter().map(|s| s[2] * norm).collect(),
        finals,
        probe_times: probes.iter().map(|x| x.0).collect(),
        probe_mean_sz: probe_sums.iter().map(|s| s * norm).collect(),
        n_traj,
        n_failed: failures.len(),
        failures,
        master_seed,
    })
}

pub fn population(mean_sz: f64, target: Target) -> f64 {
    match target {
        Target::Excited => 0.5 * (1.0 + mean_sz),
        Target::Ground => 0.5 * (1.0 - mean_sz),
    }
}

impl EnsembleResult {
    /// Mean of the final sz over successful trajectories.
    pub fn final_mean_sz(&self) -> f64 {
        self.finals.iter().map(|f| f.sz_final).sum::<f64>() / self.finals.len() as f64
    }

    /// Target population at the end of the run.
    pub fn final_fidelity(&self, target: Target) -> f64 {
        population(self.final_mean_sz(), target)
    }

    /// Target population at the recorded time nearest to `t`.
    pub fn fidelity_at(&self, t: f64, target: Target) -> Result<f64, EnsembleError> {
        let first = self.time_grid[0];
        let last = *self.time_grid.last().unwrap();
        let step = if self.time_grid.len() > 1 {
            self.time_grid[1] - self.time_grid[0]
        } else {
            0.0
        };
        if !(t >= first - 0.5 * step && t <= last + 0.5 * step) {
            return Err(EnsembleError::IndexError(t));
        }
        let k = if step > 0.0 {
            (((t - first) / step).round() as usize).min(self.time_grid.len() - 1)
        } else {
            0
        };
        Ok(population(self.mean_sz[k], target))
    }

    /// Target population averaged over the whole run (trapezoidal).
    pub fn time_averaged_fidelity(&self, target: Target) -> f64 {
        let n = self.mean_sz.len();
        if n == 1 {
            return population(self.mean_sz[0], target);
        }
        let mut acc = 0.0;
        for k in 0..n - 1 {
            let dt = self.time_grid[k + 1] - self.time_grid[k];
            acc += 0.5 * dt * (population(self.mean_sz[k], target) + population(self.mean_sz[k + 1], target));
        }
        acc / (self.time_grid[n - 1] - self.time_grid[0])
    }

    /// Target population averaged over the probe instants.
    pub fn probe_fidelity(&self, target: Target) -> Option<f64> {
        if self.probe_mean_sz.is_empty() {
            return None;
        }
        let sum: f64 = self.probe_mean_sz.iter().map(|&s| population(s, target)).sum();
        Some(sum / self.probe_mean_sz.len() as f64)
    }

    pub fn latching_fraction(&self, threshold_n: f64) -> f64 {
        let hits = self.finals.iter().filter(|f| f.na_final > threshold_n).count();
        hits as f64 / self.finals.len() as f64
    }

    pub fn means_csv(&self) -> String {
        let mut out = String::from("t_ns,mean_sz,mean_na,mean_nb\n");
        for k in 0..self.time_grid.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.time_grid[k] * 1e9,
                self.mean_sz[k],
                self.mean_na[k],
                self.mean_nb[k]
            ));
        }
        out
    }

    pub fn finals_csv(&self) -> String {
        let mut out = String::from("traj_id,sz_final,na_final,jumped,latched\n");
        for f in &self.finals {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                f.traj_id, f.sz_final, f.na_final, f.jumped, f.latched
            ));
        }
        out
    }
}
