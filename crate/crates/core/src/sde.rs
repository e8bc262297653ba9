//! Stochastic mean-field integrator for the Kerr resonator (alpha) coupled
//! to the readout cavity (beta).
//!
//! Fields are complex amplitudes in the instantaneous drive frame. Noise is
//! additive, so plain Euler-Maruyama is first order.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::SystemParams;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub alpha: Complex64,
    pub beta: Complex64,
    /// Seconds.
    pub t: f64,
}

impl FieldState {
    pub fn vacuum() -> Self {
        Self {
            alpha: Complex64::new(0.0, 0.0),
            beta: Complex64::new(0.0, 0.0),
            t: 0.0,
        }
    }

    pub fn n_a(&self) -> f64 {
        self.alpha.norm_sqr()
    }

    pub fn n_b(&self) -> f64 {
        self.beta.norm_sqr()
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.re.is_finite()
            && self.alpha.im.is_finite()
            && self.beta.re.is_finite()
            && self.beta.im.is_finite()
    }
}

/// External controls at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Controls {
    /// Drive at the Kerr resonator's dedicated port, sqrt(photons/s).
    pub alpha_d: Complex64,
    /// Drive entering through the tee, reaching both resonators.
    pub alpha_in: Complex64,
    /// Drive at the Purcell port of the cavity.
    pub alpha_p: Complex64,
    /// Kerr resonator detuning from the drive (rad/s).
    pub delta_a: f64,
    /// Cavity detuning from the drive (rad/s).
    pub delta_b: f64,
    /// Qubit Rabi drive (rad/s).
    pub omega_d: Complex64,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("state became non-finite at t = {t} s (alpha = {alpha}, beta = {beta})")]
pub struct NumericalBlowup {
    pub t: f64,
    pub alpha: Complex64,
    pub beta: Complex64,
}

/// Deterministic right-hand sides (d alpha/dt, d beta/dt).
pub fn drift(state: &FieldState, c: &Controls, sz: f64, p: &SystemParams) -> (Complex64, Complex64) {
    FieldCoefficients::new(p).drift(state, c, sz, p.chi_eff(state.n_b()))
}

/// One complex noise increment for a channel with total loss `rate_sum`.
pub fn noise_increment<R: Rng + ?Sized>(rng: &mut R, rate_sum: f64, n_bar: f64, dt: f64) -> Complex64 {
    let amp = (0.5 * rate_sum * (n_bar + 0.5)).sqrt() * dt.sqrt();
    let w1: f64 = rng.sample(StandardNormal);
    let w2: f64 = rng.sample(StandardNormal);
    Complex64::new(amp * w1, amp * w2)
}

/// Vacuum Wigner sample: each quadrature Gaussian with variance 1/4.
pub fn sample_initial_state<R: Rng + ?Sized>(rng: &mut R) -> FieldState {
    let mut draw = || {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(0.5 * re, 0.5 * im)
    };
    let alpha = draw();
    let beta = draw();
    FieldState { alpha, beta, t: 0.0 }
}

/// Parameter combinations that stay fixed over a run, precomputed once.
#[derive(Debug, Clone, Copy)]
pub struct FieldCoefficients {
    kerr: f64,
    half_loss_a: f64,
    half_loss_b: f64,
    coupling_into_a: Complex64,
    coupling_into_b: Complex64,
    tee_into_a: Complex64,
    tee_into_b: Complex64,
    sqrt_kappa_d: f64,
    sqrt_kappa_p: f64,
    noise_a: f64,
    noise_b: f64,
}

impl FieldCoefficients {
    pub fn new(p: &SystemParams) -> Self {
        let k = &p.kerr;
        let c = &p.cavity;
        let hop = (k.kappa_a * c.kappa_b).sqrt();
        let dt = p.noise.dt;
        let thermal = p.noise.n_bar + 0.5;
        Self {
            kerr: k.kerr,
            half_loss_a: 0.5 * (k.kappa_a + k.kappa_d),
            half_loss_b: 0.5 * (c.kappa_b + c.kappa_p),
            coupling_into_a: hop * Complex64::from_polar(1.0, c.theta_b - k.theta_a),
            coupling_into_b: hop * Complex64::from_polar(1.0, k.theta_a - c.theta_b),
            tee_into_a: k.kappa_a.sqrt() * Complex64::from_polar(1.0, -k.theta_a),
            tee_into_b: c.kappa_b.sqrt() * Complex64::from_polar(1.0, -c.theta_b),
            sqrt_kappa_d: k.kappa_d.sqrt(),
            sqrt_kappa_p: c.kappa_p.sqrt(),
            noise_a: (0.5 * (k.kappa_a + k.kappa_d) * thermal * dt).sqrt(),
            noise_b: (0.5 * (c.kappa_b + c.kappa_p) * thermal * dt).sqrt(),
        }
    }

    #[inline]
    pub fn drift(&self, s: &FieldState, c: &Controls, sz: f64, chi: f64) -> (Complex64, Complex64) {
        let a = s.alpha;
        let b = s.beta;
        let da = -I * (c.delta_a + self.kerr * a.norm_sqr()) * a - self.half_loss_a * a
            + self.coupling_into_a * b
            - self.tee_into_a * c.alpha_in
            - self.sqrt_kappa_d * c.alpha_d;
        let db = -I * (c.delta_b + chi * sz) * b - self.half_loss_b * b + self.coupling_into_b * a
            - self.tee_into_b * c.alpha_in
            - self.sqrt_kappa_p * c.alpha_p;
        (da, db)
    }

    /// Euler-Maruyama step. `chi` is the dispersive shift to use this step;
    /// noise amplitudes assume the step equals the configured `dt`.
    #[inline]
    pub fn step<R: Rng + ?Sized>(
        &self,
        s: &mut FieldState,
        c: &Controls,
        sz: f64,
        chi: f64,
        dt: f64,
        rng: Option<&mut R>,
    ) -> Result<(), NumericalBlowup> {
        let (da, db) = self.drift(s, c, sz, chi);
        s.alpha += da * dt;
        s.beta += db * dt;
        if let Some(rng) = rng {
            let w: [f64; 4] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            s.alpha += Complex64::new(self.noise_a * w[0], self.noise_a * w[1]);
            s.beta += Complex64::new(self.noise_b * w[2], self.noise_b * w[3]);
        }
        s.t += dt;
        if s.is_finite() {
            Ok(())
        } else {
            Err(NumericalBlowup {
                t: s.t,
                alpha: s.alpha,
                beta: s.beta,
            })
        }
    }
}

/// Single Euler-Maruyama step using the configured `dt`; `rng = None` turns
/// the noise off.
pub fn step<R: Rng + ?Sized>(
    state: &FieldState,
    c: &Controls,
    sz: f64,
    p: &SystemParams,
    rng: Option<&mut R>,
) -> Result<FieldState, NumericalBlowup> {
    let mut next = *state;
    FieldCoefficients::new(p).step(&mut next, c, sz, p.chi_eff(state.n_b()), p.noise.dt, rng)?;
    Ok(next)
}

/// Time-series rows for a single trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub alpha: Complex64,
    pub beta: Complex64,
    pub sz: f64,
}

pub const TRACE_HEADER: &str = "t_ns,re_alpha,im_alpha,re_beta,im_beta,n_a,n_b,sz";

pub fn trace_to_csv(points: &[TracePoint]) -> String {
    let mut out = String::with_capacity(64 * (points.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for q in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            q.t * 1e9,
            q.alpha.re,
            q.alpha.im,
            q.beta.re,
            q.beta.im,
            q.alpha.norm_sqr(),
            q.beta.norm_sqr(),
            q.sz
        ));
    }
    out
}
