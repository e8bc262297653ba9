//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 config
//! error, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;

use crate::bifurcation::{critical_photon_numbers, hysteresis_sweep};
use crate::ensemble::{run_ensemble, trajectory_rng, EnsembleError, EnsembleOptions, InitialQubit, Target};
use crate::manifest::{InitialState, RunManifest, RunSettings};
use crate::oracle::{self, OracleError, OracleOptions};
use crate::params::{mhz_to_rad_s, ns_to_s, ConfigError, ParamConfig, SystemParams};
use crate::protocol::{self, Calibration, ProtocolError, ProtocolParams, Schedule, ScheduleError};
use crate::sde::trace_to_csv;
use crate::trajectory::{run_trajectory, TrajectoryOptions};

/// Environment variable selecting the number of worker threads.
pub const WORKERS_ENV: &str = "CRYOLOOP_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "cryoloop", version, about = "Kerr-resonator readout, memory and feedback simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Steady-state hysteresis sweep of the isolated Kerr resonator.
    Bifurcation {
        #[command(flatten)]
        common: Common,
        /// Number of drive-power points.
        #[arg(long, default_value_t = 400)]
        points: usize,
        /// Top of the sweep relative to the upper critical drive power.
        #[arg(long, default_value_t = 1.5)]
        max_power_factor: f64,
    },
    /// One state-preparation trajectory with the full field time series.
    Trajectory {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        proto: ProtocolFlags,
        #[arg(long, value_enum, default_value_t = Initial::Ground)]
        initial: Initial,
    },
    /// Ensemble of single measurement / feedback cycles.
    StatePrep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        proto: ProtocolFlags,
        #[arg(long, value_enum, default_value_t = Initial::Ground)]
        initial: Initial,
    },
    /// Repeated cycles stabilizing the excited state.
    Stabilize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        proto: ProtocolFlags,
        #[arg(long, default_value_t = 20)]
        cycles: usize,
        #[arg(long, value_enum, default_value_t = Initial::Excited)]
        initial: Initial,
    },
    /// Long wait followed by recovery of the stored measurement result.
    Memory {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        proto: ProtocolFlags,
        /// Wait before the recovery pulse (us); default retunes at 78 us.
        #[arg(long)]
        twait_us: Option<f64>,
        #[arg(long, value_enum, default_value_t = Initial::Excited)]
        initial: Initial,
    },
    /// Full-quantum versus semiclassical comparison for the isolated resonator.
    OracleCompare {
        #[command(flatten)]
        common: Common,
        /// Drive plateaus in units of sqrt(kappa_d), comma separated.
        #[arg(long, value_delimiter = ',')]
        drives: Vec<f64>,
        #[arg(long, default_value_t = 180)]
        dim: usize,
    },
    /// Calibrate the measurement drive window and the cancellation drive.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        proto: ProtocolFlags,
    },
    /// Repeat a run from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Initial {
    Ground,
    Excited,
    Mixed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Args)]
struct Common {
    /// Parameter file; defaults to the built-in reference parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dt_ns: Option<f64>,
    #[arg(long, default_value_t = 200)]
    traj: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t1_us: Option<f64>,
    #[arg(long, value_enum)]
    chi_correction: Option<OnOff>,
    /// Switch qubit relaxation off.
    #[arg(long)]
    no_decay: bool,
    /// Spacing of recorded means (ns).
    #[arg(long, default_value_t = 1.0)]
    record_ns: f64,
}

/// Overrides for protocol parameters. Complex values are given as RE,IM.
#[derive(Debug, Args, Default)]
struct ProtocolFlags {
    #[arg(long)]
    t_measure_ns: Option<f64>,
    #[arg(long)]
    ramp_up_ns: Option<f64>,
    #[arg(long)]
    t_stabilize_ns: Option<f64>,
    #[arg(long)]
    t_delta_ns: Option<f64>,
    #[arg(long)]
    t_wait_ns: Option<f64>,
    #[arg(long)]
    t_dwell_ns: Option<f64>,
    #[arg(long)]
    t_pi_ns: Option<f64>,
    #[arg(long)]
    t_reset_ns: Option<f64>,
    /// Measurement drive plateau in units of sqrt(kappa_d).
    #[arg(long)]
    plateau: Option<f64>,
    #[arg(long)]
    plateau_fraction: Option<f64>,
    #[arg(long)]
    drive_phase: Option<f64>,
    #[arg(long)]
    stab_detuning_factor: Option<f64>,
    #[arg(long)]
    stab_drive_factor: Option<f64>,
    #[arg(long)]
    delta_t_mhz: Option<f64>,
    #[arg(long)]
    omega_pi_mhz: Option<f64>,
    /// sqrt(kappa_p) alpha_p in MHz as RE,IM.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    purcell_drive_mhz: Option<Vec<f64>>,
    /// Cancellation drive as RE,IM in sqrt(photons/s).
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    alpha_in: Option<Vec<f64>>,
    #[arg(long)]
    rate_multiplier: Option<f64>,
    #[arg(long)]
    pre_pi: bool,
}

impl ProtocolFlags {
    fn apply(&self, pp: &mut ProtocolParams) {
        let set_ns = |field: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *field = ns_to_s(v);
            }
        };
        set_ns(&mut pp.t_measure, self.t_measure_ns);
        set_ns(&mut pp.ramp_up, self.ramp_up_ns);
        set_ns(&mut pp.t_stabilize, self.t_stabilize_ns);
        set_ns(&mut pp.t_delta, self.t_delta_ns);
        set_ns(&mut pp.t_wait, self.t_wait_ns);
        set_ns(&mut pp.t_dwell, self.t_dwell_ns);
        set_ns(&mut pp.t_reset, self.t_reset_ns);
        if let Some(w) = self.omega_pi_mhz {
            pp.omega_pi = mhz_to_rad_s(w);
            pp.t_pi = std::f64::consts::PI / (2.0 * pp.omega_pi);
        }
        set_ns(&mut pp.t_pi, self.t_pi_ns);
        if self.plateau.is_some() {
            pp.drive_plateau = self.plateau;
        }
        if let Some(v) = self.plateau_fraction {
            pp.plateau_fraction = v;
        }
        if let Some(v) = self.drive_phase {
            pp.drive_phase = v;
        }
        if let Some(v) = self.stab_detuning_factor {
            pp.stab_detuning_factor = v;
        }
        if let Some(v) = self.stab_drive_factor {
            pp.stab_drive_factor = v;
        }
        if let Some(v) = self.delta_t_mhz {
            pp.delta_t = mhz_to_rad_s(v);
        }
        if let Some(v) = &self.purcell_drive_mhz {
            pp.purcell_drive = Complex64::new(mhz_to_rad_s(v[0]), mhz_to_rad_s(v[1]));
        }
        if let Some(v) = &self.alpha_in {
            pp.alpha_in = Some(Complex64::new(v[0], v[1]));
        }
        if let Some(v) = self.rate_multiplier {
            pp.rate_multiplier = v;
        }
        if self.pre_pi {
            pp.pre_pi = true;
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Schedule(s) => s.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let (settings, out) = match resolve(cli.command) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return e.code();
        }
    };
    match execute(settings, &out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ParamConfig, CliError> {
    match path {
        None => Ok(ParamConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            Ok(ParamConfig::from_toml_str(&text)?)
        }
    }
}

fn base_settings(subcommand: &str, common: &Common) -> Result<RunSettings, CliError> {
    let mut params = load_config(common.config.as_deref())?;
    if let Some(dt) = common.dt_ns {
        params.dt_ns = dt;
    }
    if let Some(seed) = common.seed {
        params.master_seed = seed;
    }
    if let Some(t1) = common.t1_us {
        params.t1_us = Some(t1);
    }
    if let Some(c) = common.chi_correction {
        params.chi_correction = matches!(c, OnOff::On);
    }
    if common.traj == 0 {
        return Err(CliError::Config("--traj must be at least 1".into()));
    }
    if !(common.record_ns > 0.0) {
        return Err(CliError::Config("--record-ns must be positive".into()));
    }
    Ok(RunSettings {
        subcommand: subcommand.into(),
        seed: params.master_seed,
        traj: common.traj,
        initial: InitialState::Ground,
        no_decay: common.no_decay,
        record_interval_ns: common.record_ns,
        cycles: 1,
        twait_us: None,
        points: 0,
        max_power_factor: 0.0,
        drives: Vec::new(),
        dim: 0,
        params,
        protocol: ProtocolParams::default(),
    })
}

fn initial_state(i: Initial) -> InitialState {
    match i {
        Initial::Ground => InitialState::Ground,
        Initial::Excited => InitialState::Excited,
        Initial::Mixed => InitialState::Mixed,
    }
}

fn resolve(cmd: Command) -> Result<(RunSettings, PathBuf), CliError> {
    let with_proto = |name: &str, common: &Common, proto: &ProtocolFlags| -> Result<RunSettings, CliError> {
        let mut s = base_settings(name, common)?;
        proto.apply(&mut s.protocol);
        Ok(s)
    };
    Ok(match cmd {
        Command::Bifurcation {
            common,
            points,
            max_power_factor,
        } => {
            let mut s = base_settings("bifurcation", &common)?;
            s.points = points.max(2);
            s.max_power_factor = max_power_factor;
            (s, common.out)
        }
        Command::Trajectory { common, proto, initial } => {
            let mut s = with_proto("trajectory", &common, &proto)?;
            s.traj = 1;
            s.initial = initial_state(initial);
            (s, common.out)
        }
        Command::StatePrep { common, proto, initial } => {
            let mut s = with_proto("state-prep", &common, &proto)?;
            s.initial = initial_state(initial);
            (s, common.out)
        }
        Command::Stabilize {
            common,
            proto,
            cycles,
            initial,
        } => {
            let mut s = with_proto("stabilize", &common, &proto)?;
            s.cycles = cycles;
            s.protocol.n_cycles = cycles.max(1);
            if cycles == 0 {
                return Err(ScheduleError::NoCycles.into());
            }
            s.initial = initial_state(initial);
            (s, common.out)
        }
        Command::Memory {
            common,
            proto,
            twait_us,
            initial,
        } => {
            let mut s = with_proto("memory", &common, &proto)?;
            s.protocol.pre_pi = true;
            s.twait_us = Some(twait_us.unwrap_or_else(|| s.protocol.wait_for_retune_at(78e-6) * 1e6));
            s.initial = initial_state(initial);
            (s, common.out)
        }
        Command::OracleCompare { common, drives, dim } => {
            let mut s = base_settings("oracle-compare", &common)?;
            s.drives = drives;
            s.dim = dim;
            (s, common.out)
        }
        Command::Calibrate { common, proto } => (with_proto("calibrate", &common, &proto)?, common.out),
        Command::Rerun { manifest, out } => {
            let m = RunManifest::read(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
            (m.settings, out)
        }
    })
}

fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0)
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn execute(mut settings: RunSettings, out: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    fs::create_dir_all(out)?;
    let params = SystemParams::from_config(&settings.params)?;
    let mut outputs = Outputs {
        dir: out.to_path_buf(),
        files: Vec::new(),
    };
    let mut calibration = None;
    let mut schedule_hash = None;
    let result = run_subcommand(&mut settings, &params, &mut outputs, &mut calibration, &mut schedule_hash);
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        status: match &result {
            Ok(()) => "ok".into(),
            Err(e) => e.to_string(),
        },
        wall_time_s: start.elapsed().as_secs_f64(),
        schedule_hash,
        outputs: outputs.files.clone(),
        calibration,
        settings,
    };
    fs::write(out.join("manifest.toml"), manifest.to_toml())?;
    result
}

fn ensure_calibrated(
    settings: &mut RunSettings,
    params: &SystemParams,
    calibration: &mut Option<Calibration>,
) -> Result<(), CliError> {
    let (pp, cal) = protocol::calibrate(params, &settings.protocol)?;
    settings.protocol = pp;
    *calibration = Some(cal);
    Ok(())
}

fn ensemble_options(
    settings: &RunSettings,
    params: &SystemParams,
    probe_times: Vec<f64>,
) -> Result<EnsembleOptions, CliError> {
    let plateau = settings.protocol.drive_plateau.unwrap_or(0.0);
    Ok(EnsembleOptions {
        trajectory: TrajectoryOptions {
            qubit_decay: !settings.no_decay,
            ..TrajectoryOptions::default()
        },
        record_interval: ns_to_s(settings.record_interval_ns),
        workers: workers_from_env(),
        seed_offset: 0,
        latch_threshold: protocol::latch_threshold_photons(params, plateau)?,
        probe_times,
    })
}

fn initial_qubit(i: InitialState) -> InitialQubit {
    match i {
        InitialState::Ground => InitialQubit::Ground,
        InitialState::Excited => InitialQubit::Excited,
        InitialState::Mixed => InitialQubit::Mixed(0.5, 0.5),
    }
}

fn run_subcommand(
    settings: &mut RunSettings,
    params: &SystemParams,
    outputs: &mut Outputs,
    calibration: &mut Option<Calibration>,
    schedule_hash: &mut Option<String>,
) -> Result<(), CliError> {
    match settings.subcommand.as_str() {
        "bifurcation" => {
            let k = &params.kerr;
            let cp = critical_photon_numbers(k.delta_a0, k.kerr, k.kappa_a, k.kappa_d)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let top = settings.max_power_factor * cp.jump_up_power();
            let n = settings.points;
            let grid: Vec<f64> = (0..n).map(|i| top * i as f64 / (n - 1) as f64).collect();
            let curves = hysteresis_sweep(k.delta_a0, k.kerr, k.kappa_a, k.kappa_d, &grid);
            outputs.write("bifurcation.csv", &curves.to_csv())?;
        }
        "calibrate" => {
            ensure_calibrated(settings, params, calibration)?;
            let cal = calibration.expect("set by calibration");
            let mut text = String::new();
            if let Some(w) = cal.window {
                text.push_str(&format!("window_low = {}\nwindow_high = {}\n", w.low, w.high));
            }
            text.push_str(&format!(
                "drive_plateau = {}\nalpha_in = [{}, {}]\n",
                cal.drive_plateau, cal.alpha_in.re, cal.alpha_in.im
            ));
            outputs.write("calibration.toml", &text)?;
            print!("{text}");
        }
        "trajectory" => {
            ensure_calibrated(settings, params, calibration)?;
            let schedule = protocol::build_state_prep(params, &settings.protocol)?;
            *schedule_hash = Some(schedule.hash());
            outputs.write("schedule.toml", &schedule.to_toml())?;
            let opts = TrajectoryOptions {
                qubit_decay: !settings.no_decay,
                record_stride: ((ns_to_s(settings.record_interval_ns) / params.noise.dt).round() as usize).max(1),
                trace: true,
                ..TrajectoryOptions::default()
            };
            let excited = matches!(settings.initial, InitialState::Excited);
            let mut rng = trajectory_rng(settings.seed, 0);
            let o = run_trajectory(&schedule, params, excited, &opts, &mut rng)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            outputs.write("trajectory.csv", &trace_to_csv(&o.trace))?;
        }
        "state-prep" | "stabilize" | "memory" => {
            ensure_calibrated(settings, params, calibration)?;
            let pp = &settings.protocol;
            let schedule: Schedule = match settings.subcommand.as_str() {
                "state-prep" => protocol::build_state_prep(params, pp)?,
                "stabilize" => protocol::build_stabilization(params, pp, settings.cycles)?,
                _ => protocol::build_memory(params, pp, settings.twait_us.unwrap_or(0.0) * 1e-6)?,
            };
            *schedule_hash = Some(schedule.hash());
            outputs.write("schedule.toml", &schedule.to_toml())?;
            let probes = schedule.ends_of("pi_pulse");
            let opts = ensemble_options(settings, params, probes)?;
            let r = run_ensemble(
                &schedule,
                params,
                initial_qubit(settings.initial),
                settings.traj,
                settings.seed,
                &opts,
            )?;
            outputs.write("means.csv", &r.means_csv())?;
            outputs.write("finals.csv", &r.finals_csv())?;
            let summary = format!(
                "n_traj = {}\nn_failed = {}\nfinal_p1 = {}\ntime_averaged_p1 = {}\nprotocol_end_p1 = {}\n",
                r.n_traj,
                r.n_failed,
                r.final_fidelity(Target::Excited),
                r.time_averaged_fidelity(Target::Excited),
                r.probe_fidelity(Target::Excited).unwrap_or(f64::NAN),
            );
            outputs.write("summary.toml", &summary)?;
            print!("{summary}");
        }
        "oracle-compare" => {
            let q = oracle::isolated(params);
            let separator = protocol::branch_separator(&q)?;
            let mut opts = OracleOptions::for_params(&q, separator);
            opts.dim = settings.dim;
            opts.seed = settings.seed;
            opts.record_interval = ns_to_s(settings.record_interval_ns);
            opts.workers = workers_from_env();
            if settings.drives.is_empty() {
                let k = &q.kerr;
                let cp = critical_photon_numbers(k.delta_a0, k.kerr, k.kappa_a, k.kappa_d)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                let down = cp.jump_down_power().sqrt() / k.kappa_d;
                let up = cp.jump_up_power().sqrt() / k.kappa_d;
                let near = oracle::calibrate_near_threshold_drive(&q, 0.22, settings.traj, &opts)?;
                settings.drives = vec![0.5 * down, near, 1.3 * up];
            }
            let report = oracle::compare_with_semiclassical(&q, &settings.drives, settings.traj, &opts)?;
            let mut summary = String::from(
                "drive,latch_mcwf,latch_semiclassical,n_final_mcwf,n_final_semiclassical,sem_mcwf,sem_semiclassical,jumps\n",
            );
            for (i, c) in report.iter().enumerate() {
                let mut csv = String::from("t_ns,n_mcwf,n_semiclassical\n");
                for k in 0..c.time_grid.len() {
                    csv.push_str(&format!("{},{},{}\n", c.time_grid[k] * 1e9, c.n_mcwf[k], c.n_semiclassical[k]));
                }
                outputs.write(&format!("oracle_drive_{i}.csv"), &csv)?;
                summary.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    c.drive,
                    c.latch_mcwf,
                    c.latch_semiclassical,
                    c.n_mcwf.last().unwrap(),
                    c.n_semiclassical.last().unwrap(),
                    c.sem_mcwf,
                    c.sem_semiclassical,
                    c.jumps
                ));
            }
            outputs.write("latching.csv", &summary)?;
        }
        other => return Err(CliError::Config(format!("unknown subcommand '{other}'"))),
    }
    Ok(())
}
