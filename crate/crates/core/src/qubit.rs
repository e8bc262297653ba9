//! Two-level qubit as a Monte-Carlo wavefunction: non-Hermitian evolution,
//! decay jumps when the norm drops below a uniform threshold, Stark shift
//! from the cavity photon number and a square Rabi drive.
//!
//! The frame rotates at the bare qubit frequency, so a pulse is resonant
//! unless the cavity Stark-shifts the qubit. Basis order is (|0>, |1>) and
//! sigma_z |1> = +|1>.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("qubit state has zero norm")]
pub struct InvalidState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitState {
    pub c0: Complex64,
    pub c1: Complex64,
    pub norm_sq: f64,
    pub r_threshold: f64,
}

/// Uniform draw in the open interval (0, 1).
fn draw_threshold<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let r: f64 = rng.random();
        if r > 0.0 {
            return r;
        }
    }
}

impl QubitState {
    pub fn ground<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::basis(false, rng)
    }

    pub fn excited<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::basis(true, rng)
    }

    pub fn basis<R: Rng + ?Sized>(excited: bool, rng: &mut R) -> Self {
        let (c0, c1) = if excited { (0.0, 1.0) } else { (1.0, 0.0) };
        Self {
            c0: Complex64::new(c0, 0.0),
            c1: Complex64::new(c1, 0.0),
            norm_sq: 1.0,
            r_threshold: draw_threshold(rng),
        }
    }

    /// Normalized excited-state population.
    pub fn excited_population(&self) -> Result<f64, InvalidState> {
        if self.norm_sq > 0.0 {
            Ok(self.c1.norm_sqr() / self.norm_sq)
        } else {
            Err(InvalidState)
        }
    }

    /// Measure sigma_z: collapse onto an eigenstate with Born probabilities
    /// and start a fresh jump threshold.
    pub fn project<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<bool, InvalidState> {
        let p1 = self.excited_population()?;
        let u: f64 = rng.random();
        let excited = u < p1;
        *self = Self::basis(excited, rng);
        Ok(excited)
    }
}

/// (|c1|^2 - |c0|^2) / norm.
pub fn expectation_sz(q: &QubitState) -> Result<f64, InvalidState> {
    if q.norm_sq > 0.0 {
        Ok((q.c1.norm_sqr() - q.c0.norm_sqr()) / q.norm_sq)
    } else {
        Err(InvalidState)
    }
}

/// Advance by `dt` under the effective Hamiltonian
/// (stark/2) sigma_z + omega sigma_+ + conj(omega) sigma_- with damping
/// -(gamma/2)|1><1|, where `stark` = 2 chi n_b. The 2x2 propagator is
/// exact for constant coefficients over the step.
pub fn qubit_step(q: &QubitState, stark: f64, omega: Complex64, gamma: f64, dt: f64) -> QubitState {
    let half = 0.5 * stark;
    let (c0, c1) = if omega == Complex64::new(0.0, 0.0) {
        (
            q.c0 * Complex64::cis(half * dt),
            q.c1 * Complex64::cis(-half * dt) * (-0.5 * gamma * dt).exp(),
        )
    } else {
        let i = Complex64::i();
        let m00 = i * half;
        let m11 = -i * half - 0.5 * gamma;
        let m01 = -i * omega.conj();
        let m10 = -i * omega;
        let m0 = 0.5 * (m00 + m11);
        let d = 0.5 * (m00 - m11);
        let s = (d * d + m01 * m10).sqrt();
        let x = s * dt;
        let cosh = x.cosh();
        // sinh(x)/s, with the series near zero.
        let sinh_over_s = if x.norm() > 1e-6 {
            x.sinh() / s
        } else {
            dt * (1.0 + x * x / 6.0)
        };
        let e = (m0 * dt).exp();
        (
            e * (cosh * q.c0 + sinh_over_s * (d * q.c0 + m01 * q.c1)),
            e * (cosh * q.c1 + sinh_over_s * (m10 * q.c0 - d * q.c1)),
        )
    };
    QubitState {
        c0,
        c1,
        norm_sq: c0.norm_sqr() + c1.norm_sqr(),
        r_threshold: q.r_threshold,
    }
}

/// Apply the decay jump if the norm has dropped below the pending threshold.
/// Returns whether a jump happened.
pub fn maybe_jump<R: Rng + ?Sized>(q: &mut QubitState, rng: &mut R) -> bool {
    if q.norm_sq < q.r_threshold {
        *q = QubitState::ground(rng);
        true
    } else {
        false
    }
}

/// Flip probability of a square pulse of Rabi rate `omega` detuned by
/// `detuning`, after time `t`, starting from an eigenstate.
pub fn rabi_flip_probability(omega: f64, detuning: f64, t: f64) -> f64 {
    let w2 = 4.0 * omega * omega + detuning * detuning;
    if w2 == 0.0 {
        return 0.0;
    }
    4.0 * omega * omega / w2 * (0.5 * w2.sqrt() * t).sin().powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{mhz_to_rad_s, khz_to_rad_s};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DT: f64 = 5e-11;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    fn evolve(mut q: QubitState, stark: f64, omega: f64, gamma: f64, t: f64) -> QubitState {
        let n = (t / DT).round() as usize;
        for _ in 0..n {
            q = qubit_step(&q, stark, Complex64::new(omega, 0.0), gamma, DT);
        }
        q
    }

    #[test]
    fn ground_state_is_dark() {
        let q = QubitState::ground(&mut rng());
        let out = evolve(q, mhz_to_rad_s(3.0), 0.0, khz_to_rad_s(100.0), 1e-6);
        // 20000 unit-modulus products: only rounding drift is allowed.
        assert!((out.norm_sq - 1.0).abs() < 1e-10);
        assert!((out.c0.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn excited_norm_decays_exponentially() {
        let gamma = khz_to_rad_s(15.3);
        let q = QubitState::excited(&mut rng());
        let t = 5e-6;
        let out = evolve(q, 0.0, 0.0, gamma, t);
        let expect = (-gamma * t).exp();
        assert!(((out.norm_sq - expect) / expect).abs() < 1e-6);
    }

    #[test]
    fn resonant_pi_pulse_flips() {
        let omega = mhz_to_rad_s(7.0);
        let t_pi = std::f64::consts::PI / (2.0 * omega);
        assert!((t_pi * 1e9 - 35.714).abs() < 1e-3);
        let mut q = QubitState::ground(&mut rng());
        // Whole steps plus one partial step landing exactly on t_pi.
        let n = (t_pi / DT).floor() as usize;
        for _ in 0..n {
            q = qubit_step(&q, 0.0, Complex64::new(omega, 0.0), 0.0, DT);
        }
        q = qubit_step(&q, 0.0, Complex64::new(omega, 0.0), 0.0, t_pi - n as f64 * DT);
        assert!((q.c1.norm_sqr() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn detuned_pulse_matches_rabi_formula() {
        let omega = mhz_to_rad_s(7.0);
        let chi = mhz_to_rad_s(-2.5);
        for n_b in [0.0, 2.0, 5.0, 12.0] {
            let stark = 2.0 * chi * n_b;
            let t = 700.0 * DT;
            let q = evolve(QubitState::ground(&mut rng()), stark, omega, 0.0, t);
            let expect = rabi_flip_probability(omega, stark, t);
            assert!((q.c1.norm_sqr() - expect).abs() < 1e-3, "n_b {n_b}");
        }
        // Strong Stark shift suppresses the flip.
        let t_pi = std::f64::consts::PI / (2.0 * omega);
        assert!(rabi_flip_probability(omega, 2.0 * chi * 12.0, t_pi) <= 0.06);
    }

    #[test]
    fn sz_values() {
        let mut r = rng();
        assert_eq!(expectation_sz(&QubitState::ground(&mut r)).unwrap(), -1.0);
        assert_eq!(expectation_sz(&QubitState::excited(&mut r)).unwrap(), 1.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let q = QubitState {
            c0: Complex64::new(h, 0.0),
            c1: Complex64::new(h, 0.0),
            norm_sq: 1.0,
            r_threshold: 0.5,
        };
        assert!(expectation_sz(&q).unwrap().abs() < 1e-15);
        let zero = QubitState {
            c0: Complex64::new(0.0, 0.0),
            c1: Complex64::new(0.0, 0.0),
            norm_sq: 0.0,
            r_threshold: 0.5,
        };
        assert_eq!(expectation_sz(&zero), Err(InvalidState));
    }

    #[test]
    fn jump_rules() {
        let mut r = rng();
        let mut q = QubitState::ground(&mut r);
        assert!(!maybe_jump(&mut q, &mut r));
        let mut q = QubitState {
            c0: Complex64::new(0.0, 0.0),
            c1: Complex64::new(0.1, 0.0),
            norm_sq: 0.01,
            r_threshold: 0.5,
        };
        assert!(maybe_jump(&mut q, &mut r));
        assert_eq!(q.c0, Complex64::new(1.0, 0.0));
        assert_eq!(q.c1, Complex64::new(0.0, 0.0));
        assert_eq!(q.norm_sq, 1.0);
        assert!(q.r_threshold > 0.0 && q.r_threshold < 1.0);
    }

    #[test]
    fn projection_follows_born_rule() {
        let mut r = rng();
        let n = 20_000;
        let p1: f64 = 0.3;
        let mut hits = 0;
        for _ in 0..n {
            let mut q = QubitState {
                c0: Complex64::new((1.0 - p1).sqrt(), 0.0),
                c1: Complex64::new(0.0, p1.sqrt()),
                norm_sq: 1.0,
                r_threshold: 0.5,
            };
            if q.project(&mut r).unwrap() {
                hits += 1;
                assert_eq!(q.c1, Complex64::new(1.0, 0.0));
            }
        }
        let frac = hits as f64 / n as f64;
        let sigma = (p1 * (1.0 - p1) / n as f64).sqrt();
        assert!((frac - p1).abs() < 3.0 * sigma);
    }

    proptest! {
        #[test]
        fn norm_never_grows_without_drive(
            re0 in -1.0f64..1.0, im0 in -1.0f64..1.0, re1 in -1.0f64..1.0, im1 in -1.0f64..1.0,
            stark in -1e9f64..1e9, gamma in 0.0f64..1e6
        ) {
            let c0 = Complex64::new(re0, im0);
            let c1 = Complex64::new(re1, im1);
            let q = QubitState { c0, c1, norm_sq: c0.norm_sqr() + c1.norm_sqr(), r_threshold: 0.5 };
            let out = qubit_step(&q, stark, Complex64::new(0.0, 0.0), gamma, DT);
            prop_assert!(out.norm_sq <= q.norm_sq * (1.0 + 1e-14));
        }

        #[test]
        fn drive_without_decay_preserves_norm(
            omega in 0.0f64..1e8, stark in -1e9f64..1e9, phase in -3.0f64..3.0
        ) {
            let q = QubitState { c0: Complex64::new(1.0, 0.0), c1: Complex64::new(0.0, 0.0), norm_sq: 1.0, r_threshold: 0.5 };
            let out = qubit_step(&q, stark, Complex64::from_polar(omega, phase), 0.0, DT);
            prop_assert!((out.norm_sq - 1.0).abs() < 1e-12);
        }
    }
}
