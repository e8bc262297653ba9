//! One trajectory of the coupled field + qubit system driven through a
//! schedule.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::SystemParams;
use crate::protocol::Schedule;
use crate::qubit::{expectation_sz, maybe_jump, qubit_step, QubitState};
use crate::sde::{sample_initial_state, FieldCoefficients, FieldState, NumericalBlowup, TracePoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOptions {
    /// Vacuum-fluctuation initial state and Langevin noise.
    pub noise: bool,
    /// Qubit relaxation at the configured rate.
    pub qubit_decay: bool,
    /// Freeze the qubit at this sigma_z and skip its dynamics.
    pub fixed_sz: Option<f64>,
    /// Record (sz, n_a, n_b) every this many steps.
    pub record_stride: usize,
    /// Also keep full field snapshots at the recording stride.
    pub trace: bool,
    /// Extra step indices at which sz is sampled.
    pub probe_steps: Vec<usize>,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            noise: true,
            qubit_decay: true,
            fixed_sz: None,
            record_stride: 20,
            trace: false,
            probe_steps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    /// (sz, n_a, n_b) at step indices 0, stride, 2 stride, ...
    pub samples: Vec<[f64; 3]>,
    pub trace: Vec<TracePoint>,
    pub probe_sz: Vec<f64>,
    pub field: FieldState,
    pub qubit: QubitState,
    pub final_sz: f64,
    pub jumped: bool,
}

pub fn step_count(schedule: &Schedule, dt: f64) -> usize {
    (schedule.total_duration / dt).round() as usize
}

/// Cavity photon number entering the Stark shift. With noise on the field
/// is a Wigner sample whose |beta|^2 carries the symmetric-ordering 1/2.
#[inline]
fn stark_photons(beta_sq: f64, offset: bool) -> f64 {
    if offset {
        beta_sq - 0.5
    } else {
        beta_sq
    }
}

pub fn run_trajectory<R: Rng + ?Sized>(
    schedule: &Schedule,
    p: &SystemParams,
    excited: bool,
    opts: &TrajectoryOptions,
    rng: &mut R,
) -> Result<TrajectoryOutcome, NumericalBlowup> {
    let dt = p.noise.dt;
    let n_steps = step_count(schedule, dt);
    let coeffs = FieldCoefficients::new(p);
    let gamma = if opts.qubit_decay { p.derived.gamma_total } else { 0.0 };
    let offset = opts.noise && p.options.stark_vacuum_offset;
    let stride = opts.record_stride.max(1);

    let mut field = if opts.noise {
        sample_initial_state(rng)
    } else {
        FieldState::vacuum()
    };
    let mut qubit = QubitState::basis(excited, rng);
    let mut jumped = false;

    let mut samples = Vec::with_capacity(n_steps / stride + 1);
    let mut trace = Vec::new();
    let mut probe_sz = Vec::with_capacity(opts.probe_steps.len());
    let mut next_probe = 0;

    let mut seg = 0usize;
    let mut seg_start = 0.0;
    let mut entered = usize::MAX;
    let bounds = schedule.segment_ends();
    let slack = 1e-6 * dt;

    for i in 0..=n_steps {
        let t = i as f64 * dt;
        if i < n_steps {
            while seg + 1 < bounds.len() && t + slack >= bounds[seg] {
                seg_start = bounds[seg];
                seg += 1;
            }
            if entered != seg {
                entered = seg;
                if schedule.segments[seg].project_qubit && opts.fixed_sz.is_none() {
                    qubit.project(rng).expect("qubit norm is positive");
                }
            }
        }
        let sz = match opts.fixed_sz {
            Some(s) => s,
            None => expectation_sz(&qubit).unwrap_or(-1.0),
        };
        if i % stride == 0 {
            samples.push([sz, field.n_a(), field.n_b()]);
            if opts.trace {
                trace.push(TracePoint {
                    t,
                    alpha: field.alpha,
                    beta: field.beta,
                    sz,
                });
            }
        }
        while next_probe < opts.probe_steps.len() && opts.probe_steps[next_probe] <= i {
            if opts.probe_steps[next_probe] == i {
                probe_sz.push(sz);
            }
            next_probe += 1;
        }
        if i == n_steps {
            break;
        }

        let segment = &schedule.segments[seg];
        let c = segment.controls_at(((t - seg_start) / segment.duration).clamp(0.0, 1.0));

        let n_b = stark_photons(field.n_b(), offset);
        let chi = p.chi_eff(n_b);
        coeffs.step(&mut field, &c, sz, chi, dt, if opts.noise { Some(&mut *rng) } else { None })?;
        if opts.fixed_sz.is_none() {
            qubit = qubit_step(&qubit, 2.0 * chi * n_b, c.omega_d, gamma, dt);
            jumped |= maybe_jump(&mut qubit, rng);
        }
    }
    field.t = n_steps as f64 * dt;
    let final_sz = match opts.fixed_sz {
        Some(s) => s,
        None => expectation_sz(&qubit).unwrap_or(-1.0),
    };
    Ok(TrajectoryOutcome {
        samples,
        trace,
        probe_sz,
        field,
        qubit,
        final_sz,
        jumped,
    })
}
