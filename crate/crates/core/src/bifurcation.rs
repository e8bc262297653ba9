//! Steady states of the isolated driven Kerr resonator.
//!
//! Setting the time derivative of the mean-field equation to zero and taking
//! the modulus squared gives a cubic in the photon number n = |alpha|^2:
//!
//! ```text
//! K^2 n^3 + 2 delta K n^2 + (delta^2 + kappa^2 / 4) n = kappa_d |alpha_d|^2
//! ```
//!
//! with kappa = kappa_a + kappa_d. The left hand side is the "drive power" as
//! a function of the intracavity photon number. When it is non-monotone the
//! resonator is bistable between the two turning points n_c- < n_c+.
//!
//! All functions here are unit-agnostic: any consistent frequency unit works.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum BifurcationError {
    #[error("no bistability: {0}")]
    NoBistability(&'static str),
    /// Detuning sits exactly at the critical value; both turning points
    /// coincide at `n`.
    #[error("inflection point at n = {n}")]
    Inflection { n: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    MonostableLow,
    Bistable,
    MonostableHigh,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::MonostableLow => "monostable-low",
            Regime::Bistable => "bistable",
            Regime::MonostableHigh => "monostable-high",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateSolution {
    /// Photon numbers, ascending.
    pub roots: Vec<f64>,
    pub stability: Vec<Stability>,
    pub regime: Regime,
}

impl SteadyStateSolution {
    pub fn lowest(&self) -> f64 {
        self.roots[0]
    }

    pub fn highest(&self) -> f64 {
        *self.roots.last().expect("at least one root")
    }

    pub fn stable_roots(&self) -> impl Iterator<Item = f64> + '_ {
        self.roots
            .iter()
            .zip(&self.stability)
            .filter(|(_, s)| **s == Stability::Stable)
            .map(|(n, _)| *n)
    }
}

/// Turning points of the drive-power curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub n_c_minus: f64,
    pub n_c_plus: f64,
    /// Drive power evaluated at n_c-: the low branch ends here, so this is
    /// the upper (switch-on) critical drive.
    pub drive_power_minus: f64,
    /// Drive power evaluated at n_c+: the high branch ends here, so this is
    /// the lower (switch-off) critical drive.
    pub drive_power_plus: f64,
}

impl CriticalPoint {
    pub fn jump_up_power(&self) -> f64 {
        self.drive_power_minus
    }

    pub fn jump_down_power(&self) -> f64 {
        self.drive_power_plus
    }
}

/// Detuning at which the drive-power curve first develops an inflection
/// point, sqrt(3/4) (kappa_a + kappa_d).
pub fn critical_detuning(kappa_a: f64, kappa_d: f64) -> f64 {
    (0.75f64).sqrt() * (kappa_a + kappa_d)
}

/// kappa_d |alpha_d|^2 required to sustain `n` photons.
#[inline]
pub fn drive_power(n: f64, delta_a: f64, kerr: f64, kappa_a: f64, kappa_d: f64) -> f64 {
    let kappa = kappa_a + kappa_d;
    let shifted = delta_a + kerr * n;
    n * (shifted * shifted + 0.25 * kappa * kappa)
}

/// d(drive power)/dn.
#[inline]
pub fn drive_power_slope(n: f64, delta_a: f64, kerr: f64, kappa_a: f64, kappa_d: f64) -> f64 {
    let kappa = kappa_a + kappa_d;
    3.0 * kerr * kerr * n * n + 4.0 * delta_a * kerr * n + delta_a * delta_a + 0.25 * kappa * kappa
}

pub fn critical_photon_numbers(
    delta_a: f64,
    kerr: f64,
    kappa_a: f64,
    kappa_d: f64,
) -> Result<CriticalPoint, BifurcationError> {
    if kerr == 0.0 {
        return Err(BifurcationError::NoBistability("linear resonator"));
    }
    if delta_a * kerr >= 0.0 {
        return Err(BifurcationError::NoBistability(
            "detuning has the same sign as the nonlinearity",
        ));
    }
    let kappa = kappa_a + kappa_d;
    let disc = 1.0 - 3.0 * (delta_a * delta_a + 0.25 * kappa * kappa) / (4.0 * delta_a * delta_a);
    let prefactor = -2.0 * delta_a / (3.0 * kerr);
    if disc.abs() <= 1e-12 {
        return Err(BifurcationError::Inflection { n: prefactor });
    }
    if disc < 0.0 {
        return Err(BifurcationError::NoBistability(
            "detuning below the critical detuning",
        ));
    }
    let root = disc.sqrt();
    let n_c_minus = prefactor * (1.0 - root);
    let n_c_plus = prefactor * (1.0 + root);
    Ok(CriticalPoint {
        n_c_minus,
        n_c_plus,
        drive_power_minus: drive_power(n_c_minus, delta_a, kerr, kappa_a, kappa_d),
        drive_power_plus: drive_power(n_c_plus, delta_a, kerr, kappa_a, kappa_d),
    })
}

/// Root of the drive-power cubic inside `[lo, hi]`, where the cubic minus
/// `power` changes sign. Bisection-safeguarded Newton, polished until the
/// relative residual stops improving.
fn bracketed_root(power: f64, lo: f64, hi: f64, delta_a: f64, kerr: f64, ka: f64, kd: f64) -> f64 {
    let f = |n: f64| drive_power(n, delta_a, kerr, ka, kd) - power;
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a);
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if (fx < 0.0) == (fa < 0.0) {
            a = x;
            fa = fx;
        } else {
            b = x;
        }
        let slope = drive_power_slope(x, delta_a, kerr, ka, kd);
        let newton = x - fx / slope;
        let next = if slope != 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) {
            x = next;
            break;
        }
        x = next;
    }
    x
}

/// All physical (non-negative, real) steady-state photon numbers for a given
/// drive power kappa_d |alpha_d|^2.
pub fn steady_states(
    power: f64,
    delta_a: f64,
    kerr: f64,
    kappa_a: f64,
    kappa_d: f64,
) -> SteadyStateSolution {
    let power = power.max(0.0);
    let kappa = kappa_a + kappa_d;
    let single = |n: f64, regime| SteadyStateSolution {
        roots: vec![n],
        stability: vec![Stability::Stable],
        regime,
    };
    if power == 0.0 {
        return single(0.0, Regime::MonostableLow);
    }
    if kerr == 0.0 {
        let n = power / (delta_a * delta_a + 0.25 * kappa * kappa);
        return single(n, Regime::MonostableLow);
    }

    // Upper bracket: the cubic grows at least like K^2 n^3 and like (kappa/2)^2 n.
    let mut upper = (power / (0.25 * kappa * kappa)).min((power / (kerr * kerr)).cbrt() + 2.0 * (delta_a / kerr).abs());
    upper = upper.max(1e-300);
    while drive_power(upper, delta_a, kerr, kappa_a, kappa_d) < power {
        upper *= 2.0;
    }
    let root_in = |lo: f64, hi: f64| bracketed_root(power, lo, hi, delta_a, kerr, kappa_a, kappa_d);

    match critical_photon_numbers(delta_a, kerr, kappa_a, kappa_d) {
        Ok(cp) => {
            let p_up = cp.drive_power_minus;
            let p_down = cp.drive_power_plus;
            if power > p_down && power < p_up {
                let low = root_in(0.0, cp.n_c_minus);
                let mid = root_in(cp.n_c_minus, cp.n_c_plus);
                let high = root_in(cp.n_c_plus, upper.max(cp.n_c_plus));
                SteadyStateSolution {
                    roots: vec![low, mid, high],
                    stability: vec![Stability::Stable, Stability::Unstable, Stability::Stable],
                    regime: Regime::Bistable,
                }
            } else if power <= p_down {
                single(root_in(0.0, cp.n_c_minus), Regime::MonostableLow)
            } else {
                single(root_in(cp.n_c_plus, upper.max(cp.n_c_plus)), Regime::MonostableHigh)
            }
        }
        Err(_) => {
            let n = root_in(0.0, upper);
            let regime = if delta_a * kerr < 0.0 && n > -2.0 * delta_a / (3.0 * kerr) {
                Regime::MonostableHigh
            } else {
                Regime::MonostableLow
            };
            single(n, regime)
        }
    }
}

/// Quasi-static up and down sweeps of the drive power.
#[derive(Debug, Clone, PartialEq)]
pub struct HysteresisCurves {
    pub drive_power: Vec<f64>,
    pub n_up: Vec<f64>,
    pub n_down: Vec<f64>,
    pub n_roots: Vec<usize>,
    pub regime: Vec<Regime>,
}

impl HysteresisCurves {
    /// CSV with columns drive_power, n_up, n_down, n_roots, regime.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("drive_power,n_up,n_down,n_roots,regime\n");
        for i in 0..self.drive_power.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.drive_power[i], self.n_up[i], self.n_down[i], self.n_roots[i], self.regime[i]
            ));
        }
        out
    }
}

/// Follow the current branch through a monotone drive grid, switching branch
/// only when the branch being followed ceases to exist.
pub fn hysteresis_sweep(
    delta_a: f64,
    kerr: f64,
    kappa_a: f64,
    kappa_d: f64,
    drive_grid: &[f64],
) -> HysteresisCurves {
    let solutions: Vec<SteadyStateSolution> = drive_grid
        .iter()
        .map(|&p| steady_states(p, delta_a, kerr, kappa_a, kappa_d))
        .collect();
    let increasing = drive_grid.windows(2).all(|w| w[0] <= w[1]);

    // Walk one direction, carrying "am I on the high branch".
    let walk = |order: &mut dyn Iterator<Item = usize>, start_high: bool| {
        let mut out = vec![0.0; drive_grid.len()];
        let mut high = start_high;
        for i in order {
            let s = &solutions[i];
            out[i] = match s.regime {
                Regime::Bistable => {
                    if high {
                        s.highest()
                    } else {
                        s.lowest()
                    }
                }
                Regime::MonostableHigh => {
                    high = true;
                    s.roots[0]
                }
                Regime::MonostableLow => {
                    high = false;
                    s.roots[0]
                }
            };
        }
        out
    };
    let n = drive_grid.len();
    let (n_up, n_down) = if increasing {
        (walk(&mut (0..n), false), walk(&mut (0..n).rev(), true))
    } else {
        (walk(&mut (0..n).rev(), false), walk(&mut (0..n), true))
    };
    HysteresisCurves {
        drive_power: drive_grid.to_vec(),
        n_up,
        n_down,
        n_roots: solutions.iter().map(|s| s.roots.len()).collect(),
        regime: solutions.iter().map(|s| s.regime).collect(),
    }
}

/// Edges of the hysteresis window located purely from root counting: the
/// largest drive power with three roots on each side, refined by bisection.
/// Returns `(jump_down, jump_up)`, or `None` when no grid point is bistable.
pub fn hysteresis_window(
    curves: &HysteresisCurves,
    delta_a: f64,
    kerr: f64,
    kappa_a: f64,
    kappa_d: f64,
) -> Option<(f64, f64)> {
    let first = curves.n_roots.iter().position(|&r| r == 3)?;
    let last = curves.n_roots.iter().rposition(|&r| r == 3)?;
    let count = |p: f64| steady_states(p, delta_a, kerr, kappa_a, kappa_d).roots.len();
    let refine = |mut inside: f64, mut outside: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if mid == inside || mid == outside {
                break;
            }
            if count(mid) == 3 {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        0.5 * (inside + outside)
    };
    let dp = &curves.drive_power;
    let lower = if first == 0 { dp[0] } else { refine(dp[first], dp[first - 1]) };
    let upper = if last + 1 == dp.len() { dp[last] } else { refine(dp[last], dp[last + 1]) };
    Some((lower.min(upper), lower.max(upper)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_scenario() -> (f64, f64) {
        let delta = 1.75 * critical_detuning(0.5, 0.5);
        (delta, -0.012 * delta)
    }

    #[test]
    fn critical_detuning_examples() {
        assert!((critical_detuning(5.0, 0.3) - 4.5899).abs() < 1e-4);
        assert_eq!(critical_detuning(0.0, 0.0), 0.0);
        assert!((critical_detuning(1.0, 1.0) - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn critical_numbers_example() {
        let cp = critical_photon_numbers(2.0, -0.05, 0.5, 0.5).unwrap();
        assert!((cp.n_c_minus - 14.65).abs() < 0.01, "{cp:?}");
        assert!((cp.n_c_plus - 38.69).abs() < 0.01, "{cp:?}");
        // Slope of the drive-power curve vanishes at both, by finite differences.
        for n in [cp.n_c_minus, cp.n_c_plus] {
            let h = 1e-4 * n;
            let d = (drive_power(n + h, 2.0, -0.05, 0.5, 0.5) - drive_power(n - h, 2.0, -0.05, 0.5, 0.5))
                / (2.0 * h);
            let scale = drive_power(n, 2.0, -0.05, 0.5, 0.5) / n;
            assert!((d / scale).abs() < 1e-6, "{d}");
        }
    }

    #[test]
    fn critical_numbers_ramp_scenario_setting() {
        let (delta, kerr) = ramp_scenario();
        let cp = critical_photon_numbers(delta, kerr, 0.5, 0.5).unwrap();
        assert!((cp.n_c_minus - 32.8).abs() < 0.05, "{cp:?}");
        assert!((cp.n_c_plus - 78.3).abs() < 0.1, "{cp:?}");
        assert!((cp.jump_up_power() - 35.9).abs() < 0.05, "{cp:?}");
        assert!(cp.n_c_minus <= cp.n_c_plus && cp.n_c_minus > 0.0);
    }

    #[test]
    fn critical_numbers_errors() {
        let dac = critical_detuning(0.5, 0.5);
        match critical_photon_numbers(dac, -0.05, 0.5, 0.5) {
            Err(BifurcationError::Inflection { n }) => {
                assert!((n - (-2.0 * dac / (3.0 * -0.05))).abs() < 1e-9)
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            critical_photon_numbers(0.5 * dac, -0.05, 0.5, 0.5),
            Err(BifurcationError::NoBistability(_))
        ));
        assert!(matches!(
            critical_photon_numbers(2.0, 0.05, 0.5, 0.5),
            Err(BifurcationError::NoBistability(_))
        ));
    }

    #[test]
    fn linear_and_zero_drive() {
        let s = steady_states(3.0, 2.0, 0.0, 0.5, 0.5);
        assert_eq!(s.roots.len(), 1);
        assert!((s.roots[0] - 3.0 / (4.0 + 0.25)).abs() < 1e-15);
        let s = steady_states(0.0, 2.0, -0.05, 0.5, 0.5);
        assert_eq!(s.roots, vec![0.0]);
    }

    #[test]
    fn ramp_scenario_drive_above_upper_critical_gives_high_root() {
        let (delta, kerr) = ramp_scenario();
        let cp = critical_photon_numbers(delta, kerr, 0.5, 0.5).unwrap();
        let s = steady_states(1.02 * cp.jump_up_power(), delta, kerr, 0.5, 0.5);
        assert_eq!(s.regime, Regime::MonostableHigh);
        assert!((s.roots[0] - 110.0).abs() < 0.15 * 110.0, "{s:?}");
    }

    #[test]
    fn bistable_roots_and_stability() {
        let cp = critical_photon_numbers(2.0, -0.05, 0.5, 0.5).unwrap();
        let p = 0.5 * (cp.jump_up_power() + cp.jump_down_power());
        let s = steady_states(p, 2.0, -0.05, 0.5, 0.5);
        assert_eq!(s.regime, Regime::Bistable);
        assert_eq!(s.stability, vec![Stability::Stable, Stability::Unstable, Stability::Stable]);
        assert!(s.roots.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.stable_roots().count(), 2);
    }

    #[test]
    fn hysteresis_linear_has_identical_sweeps() {
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let c = hysteresis_sweep(2.0, 0.0, 0.5, 0.5, &grid);
        assert_eq!(c.n_up, c.n_down);
        assert!(hysteresis_window(&c, 2.0, 0.0, 0.5, 0.5).is_none());
    }

    #[test]
    fn hysteresis_window_matches_critical_drives() {
        for (delta, kerr) in [ramp_scenario(), (2.0, -0.05)] {
            let cp = critical_photon_numbers(delta, kerr, 0.5, 0.5).unwrap();
            let top = 1.5 * cp.jump_up_power();
            let grid: Vec<f64> = (0..=300).map(|i| top * i as f64 / 300.0).collect();
            let c = hysteresis_sweep(delta, kerr, 0.5, 0.5, &grid);
            let (lo, hi) = hysteresis_window(&c, delta, kerr, 0.5, 0.5).unwrap();
            assert!(((lo - cp.jump_down_power()) / cp.jump_down_power()).abs() < 1e-6);
            assert!(((hi - cp.jump_up_power()) / cp.jump_up_power()).abs() < 1e-6);
            // The up sweep jumps only after the upper critical drive, the down
            // sweep only below the lower one.
            let near = |x: f64, y: f64| ((x - y) / y).abs() < 1e-9;
            for i in 0..grid.len() {
                if near(grid[i], cp.jump_up_power()) || near(grid[i], cp.jump_down_power()) {
                    continue;
                }
                let up_high = c.n_up[i] > cp.n_c_plus * 0.999;
                assert_eq!(up_high, grid[i] > cp.jump_up_power(), "up at {}", grid[i]);
                let down_high = c.n_down[i] > cp.n_c_plus * 0.999;
                assert_eq!(down_high, grid[i] > cp.jump_down_power(), "down at {}", grid[i]);
            }
            let csv = c.to_csv();
            assert!(csv.starts_with("drive_power,n_up,n_down,n_roots,regime\n"));
            assert!(csv.contains(",bistable\n"));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn roots_satisfy_cubic(
            kappa in 0.1f64..5.0, ratio in 1.01f64..6.0, kfrac in 0.001f64..0.1, pfrac in 0.0f64..2.0
        ) {
            let delta = ratio * critical_detuning(0.5 * kappa, 0.5 * kappa);
            let kerr = -kfrac * delta;
            let cp = critical_photon_numbers(delta, kerr, 0.5 * kappa, 0.5 * kappa).unwrap();
            let p = pfrac * cp.jump_up_power();
            let s = steady_states(p, delta, kerr, 0.5 * kappa, 0.5 * kappa);
            for n in &s.roots {
                let r = drive_power(*n, delta, kerr, 0.5 * kappa, 0.5 * kappa) - p;
                prop_assert!(r.abs() <= 1e-9 * p.max(1e-12), "residual {}", r);
            }
            let inside = p > cp.jump_down_power() && p < cp.jump_up_power();
            prop_assert_eq!(s.roots.len(), if inside { 3 } else { 1 });
        }
    }
}
