//! Physical parameters of the Kerr-resonator / cavity / qubit network.
//!
//! Everything inside the simulator is expressed in angular frequency (rad/s)
//! and seconds. Config files and the CLI speak ordinary frequency (MHz, kHz)
//! and nanoseconds; the conversions live here and nowhere else.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ordinary frequency in MHz to angular frequency in rad/s.
pub fn mhz_to_rad_s(mhz: f64) -> f64 {
    2.0 * PI * mhz * 1e6
}

/// Angular frequency in rad/s to ordinary frequency in MHz.
pub fn rad_s_to_mhz(w: f64) -> f64 {
    w / (2.0 * PI * 1e6)
}

pub fn khz_to_rad_s(khz: f64) -> f64 {
    2.0 * PI * khz * 1e3
}

pub fn rad_s_to_khz(w: f64) -> f64 {
    w / (2.0 * PI * 1e3)
}

pub fn ns_to_s(ns: f64) -> f64 {
    ns * 1e-9
}

pub fn s_to_ns(s: f64) -> f64 {
    s * 1e9
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("degenerate detuning: {0}")]
    DegenerateDetuning(&'static str),
    #[error("degenerate coupling: g = 0")]
    DegenerateCoupling,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("missing config keys: {}", .0.join(", "))]
    MissingKeys(Vec<String>),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
}

impl ConfigError {
    fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

/// Kerr resonator ("a" mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KerrParams {
    /// Kerr nonlinearity K (rad/s); negative for a SQUID-array resonator.
    pub kerr: f64,
    pub kappa_a: f64,
    pub kappa_d: f64,
    /// Kerr-to-drive detuning used during the measurement (rad/s).
    pub delta_a0: f64,
    pub theta_a: f64,
}

impl KerrParams {
    pub fn kappa_total(&self) -> f64 {
        self.kappa_a + self.kappa_d
    }
}

/// 3d-cavity ("b" mode) and the qubit inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityQubitParams {
    pub kappa_b: f64,
    pub kappa_p: f64,
    pub chi: f64,
    pub g: f64,
    pub delta_qb: f64,
    pub e_c: f64,
    pub gamma_qb: f64,
    pub theta_b: f64,
}

impl CavityQubitParams {
    pub fn kappa_total(&self) -> f64 {
        self.kappa_b + self.kappa_p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Thermal occupation of the baths.
    pub n_bar: f64,
    /// Integration step (s).
    pub dt: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    /// Qubit decay rate used by the trajectories (1/s).
    pub gamma_total: f64,
    pub n_crit: f64,
    pub delta_ac: f64,
}

/// Model switches that are not physical constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Reduce the dispersive shift at high cavity occupation,
    /// chi_eff = chi / (1 + n_b / (2 n_crit)).
    pub chi_correction: bool,
    /// Feed the qubit Stark shift with |beta|^2 - 1/2 (normally ordered photon
    /// number of a Wigner sample) instead of the raw |beta|^2.
    pub stark_vacuum_offset: bool,
    /// Replace gamma_qb + gamma_p by 1/T1 (s).
    pub t1_override: Option<f64>,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            chi_correction: false,
            stark_vacuum_offset: true,
            t1_override: None,
        }
    }
}

/// Immutable parameter set shared by every trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub kerr: KerrParams,
    pub cavity: CavityQubitParams,
    pub noise: NoiseParams,
    pub derived: DerivedParams,
    pub options: ModelOptions,
}

/// Dispersive shift of a transmon, g^2 E_c / (delta (delta - E_c)).
///
/// Note: at the default parameter set this evaluates to +2pi x 4.13 MHz while
/// the simulations use chi = -2pi x 2.5 MHz; `chi` is therefore a direct
/// input and this helper is only used for exploration.
pub fn derive_dispersive_shift(g: f64, delta_qb: f64, e_c: f64) -> Result<f64, ParamError> {
    if delta_qb == 0.0 {
        return Err(ParamError::DegenerateDetuning("delta_qb = 0"));
    }
    if delta_qb == e_c {
        return Err(ParamError::DegenerateDetuning("delta_qb = E_c"));
    }
    Ok(g * g * e_c / (delta_qb * (delta_qb - e_c)))
}

/// The dispersive shift every simulated result depends on: -2pi x 2.5 MHz.
pub fn quoted_dispersive_shift() -> f64 {
    mhz_to_rad_s(-2.5)
}

/// Purcell decay through the cavity's unfiltered port.
pub fn derive_purcell_rate(kappa_b: f64, g: f64, delta_qb: f64) -> Result<f64, ParamError> {
    if delta_qb == 0.0 {
        return Err(ParamError::DegenerateDetuning("delta_qb = 0"));
    }
    Ok(kappa_b * g * g / (delta_qb * delta_qb))
}

/// Photon number at which the dispersive approximation breaks down.
pub fn derive_ncrit(delta_qb: f64, g: f64) -> Result<f64, ParamError> {
    if g == 0.0 {
        return Err(ParamError::DegenerateCoupling);
    }
    Ok(delta_qb * delta_qb / (4.0 * g * g))
}

/// Every key a config file must define, in canonical order.
pub const CONFIG_KEYS: [&str; 15] = [
    "K_MHz",
    "kappa_a_MHz",
    "kappa_d_MHz",
    "kappa_b_MHz",
    "kappa_p_MHz",
    "chi_MHz",
    "g_MHz",
    "delta_qb_MHz",
    "Ec_MHz",
    "gamma_qb_kHz",
    "n_bar",
    "theta_a_rad",
    "theta_b_rad",
    "dt_ns",
    "master_seed",
];

/// Optional keys. `delta_a0_MHz` defaults to 3.5 (kappa_a + kappa_d).
pub const OPTIONAL_CONFIG_KEYS: [&str; 4] = [
    "delta_a0_MHz",
    "t1_us",
    "chi_correction",
    "stark_vacuum_offset",
];

/// The flat key/value form of a parameter set, in external units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ParamConfig {
    pub K_MHz: f64,
    pub kappa_a_MHz: f64,
    pub kappa_d_MHz: f64,
    pub kappa_b_MHz: f64,
    pub kappa_p_MHz: f64,
    pub chi_MHz: f64,
    pub g_MHz: f64,
    pub delta_qb_MHz: f64,
    pub Ec_MHz: f64,
    pub gamma_qb_kHz: f64,
    pub n_bar: f64,
    pub theta_a_rad: f64,
    pub theta_b_rad: f64,
    pub dt_ns: f64,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_a0_MHz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1_us: Option<f64>,
    #[serde(default)]
    pub chi_correction: bool,
    #[serde(default = "default_true")]
    pub stark_vacuum_offset: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ParamConfig {
    fn default() -> Self {
        Self {
            K_MHz: -0.4,
            kappa_a_MHz: 5.0,
            kappa_d_MHz: 0.3,
            kappa_b_MHz: 1.0,
            kappa_p_MHz: 4.0,
            chi_MHz: -2.5,
            g_MHz: 122.0,
            delta_qb_MHz: 1200.0,
            Ec_MHz: 300.0,
            gamma_qb_kHz: 5.0,
            n_bar: 0.0,
            theta_a_rad: 0.0,
            theta_b_rad: 0.0,
            dt_ns: 0.05,
            master_seed: 7,
            delta_a0_MHz: None,
            t1_us: None,
            chi_correction: false,
            stark_vacuum_offset: true,
        }
    }
}

impl ParamConfig {
    /// Parse a flat structured-text (TOML) document. All of [`CONFIG_KEYS`]
    /// are required; every missing key is reported at once.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        Self::from_table(&table)
    }

    pub fn from_table(table: &toml::Table) -> Result<Self, ConfigError> {
        for key in table.keys() {
            if !CONFIG_KEYS.contains(&key.as_str()) && !OPTIONAL_CONFIG_KEYS.contains(&key.as_str())
            {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
        }
        let missing: Vec<String> = CONFIG_KEYS
            .iter()
            .filter(|k| !table.contains_key(**k))
            .map(|k| k.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(ConfigError::MissingKeys(missing));
        }

        let num = |key: &str| -> Result<f64, ConfigError> {
            let v = match &table[key] {
                toml::Value::Float(f) => *f,
                toml::Value::Integer(i) => *i as f64,
                other => {
                    return Err(ConfigError::invalid(
                        key,
                        format!("expected a number, got {}", other.type_str()),
                    ))
                }
            };
            if !v.is_finite() {
                return Err(ConfigError::invalid(key, "must be finite"));
            }
            Ok(v)
        };
        let opt_num = |key: &str| -> Result<Option<f64>, ConfigError> {
            if table.contains_key(key) {
                num(key).map(Some)
            } else {
                Ok(None)
            }
        };
        let opt_bool = |key: &str, default: bool| -> Result<bool, ConfigError> {
            match table.get(key) {
                None => Ok(default),
                Some(toml::Value::Boolean(b)) => Ok(*b),
                Some(_) => Err(ConfigError::invalid(key, "expected a boolean")),
            }
        };
        let master_seed = match &table["master_seed"] {
            toml::Value::Integer(i) if *i >= 0 => *i as u64,
            _ => {
                return Err(ConfigError::invalid(
                    "master_seed",
                    "expected a non-negative integer",
                ))
            }
        };

        Ok(Self {
            K_MHz: num("K_MHz")?,
            kappa_a_MHz: num("kappa_a_MHz")?,
            kappa_d_MHz: num("kappa_d_MHz")?,
            kappa_b_MHz: num("kappa_b_MHz")?,
            kappa_p_MHz: num("kappa_p_MHz")?,
            chi_MHz: num("chi_MHz")?,
            g_MHz: num("g_MHz")?,
            delta_qb_MHz: num("delta_qb_MHz")?,
            Ec_MHz: num("Ec_MHz")?,
            gamma_qb_kHz: num("gamma_qb_kHz")?,
            n_bar: num("n_bar")?,
            theta_a_rad: num("theta_a_rad")?,
            theta_b_rad: num("theta_b_rad")?,
            dt_ns: num("dt_ns")?,
            master_seed,
            delta_a0_MHz: opt_num("delta_a0_MHz")?,
            t1_us: opt_num("t1_us")?,
            chi_correction: opt_bool("chi_correction", false)?,
            stark_vacuum_offset: opt_bool("stark_vacuum_offset", true)?,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }
}

/// Parse, convert and validate a config document.
pub fn load_and_validate(text: &str) -> Result<SystemParams, ConfigError> {
    SystemParams::from_config(&ParamConfig::from_toml_str(text)?)
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams::from_config(&ParamConfig::default()).expect("default parameters are valid")
    }
}

impl SystemParams {
    pub fn from_config(c: &ParamConfig) -> Result<Self, ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, format!("{key} must be positive")))
            }
        };
        let non_negative = |key: &str, v: f64| {
            if v >= 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, format!("{key} must be non-negative")))
            }
        };
        positive("kappa_a_MHz", c.kappa_a_MHz)?;
        positive("kappa_d_MHz", c.kappa_d_MHz)?;
        non_negative("kappa_b_MHz", c.kappa_b_MHz)?;
        non_negative("kappa_p_MHz", c.kappa_p_MHz)?;
        non_negative("gamma_qb_kHz", c.gamma_qb_kHz)?;
        non_negative("n_bar", c.n_bar)?;
        positive("dt_ns", c.dt_ns)?;
        if let Some(t1) = c.t1_us {
            positive("t1_us", t1)?;
        }
        for (key, v) in [
            ("K_MHz", c.K_MHz),
            ("chi_MHz", c.chi_MHz),
            ("g_MHz", c.g_MHz),
            ("delta_qb_MHz", c.delta_qb_MHz),
            ("Ec_MHz", c.Ec_MHz),
            ("theta_a_rad", c.theta_a_rad),
            ("theta_b_rad", c.theta_b_rad),
            ("delta_a0_MHz", c.delta_a0_MHz.unwrap_or(0.0)),
        ] {
            if !v.is_finite() {
                return Err(ConfigError::invalid(key, "must be finite"));
            }
        }

        let kappa_a = mhz_to_rad_s(c.kappa_a_MHz);
        let kappa_d = mhz_to_rad_s(c.kappa_d_MHz);
        let kerr = KerrParams {
            kerr: mhz_to_rad_s(c.K_MHz),
            kappa_a,
            kappa_d,
            delta_a0: c
                .delta_a0_MHz
                .map(mhz_to_rad_s)
                .unwrap_or(3.5 * (kappa_a + kappa_d)),
            theta_a: c.theta_a_rad,
        };
        let cavity = CavityQubitParams {
            kappa_b: mhz_to_rad_s(c.kappa_b_MHz),
            kappa_p: mhz_to_rad_s(c.kappa_p_MHz),
            chi: mhz_to_rad_s(c.chi_MHz),
            g: mhz_to_rad_s(c.g_MHz),
            delta_qb: mhz_to_rad_s(c.delta_qb_MHz),
            e_c: mhz_to_rad_s(c.Ec_MHz),
            gamma_qb: khz_to_rad_s(c.gamma_qb_kHz),
            theta_b: c.theta_b_rad,
        };
        let noise = NoiseParams {
            n_bar: c.n_bar,
            dt: ns_to_s(c.dt_ns),
            master_seed: c.master_seed,
        };
        let options = ModelOptions {
            chi_correction: c.chi_correction,
            stark_vacuum_offset: c.stark_vacuum_offset,
            t1_override: c.t1_us.map(|t| t * 1e-6),
        };
        let derived = derive(&kerr, &cavity, &options)?;
        Ok(Self {
            kerr,
            cavity,
            noise,
            derived,
            options,
        })
    }

    /// Back to the external key/value form.
    pub fn to_config(&self) -> ParamConfig {
        ParamConfig {
            K_MHz: rad_s_to_mhz(self.kerr.kerr),
            kappa_a_MHz: rad_s_to_mhz(self.kerr.kappa_a),
            kappa_d_MHz: rad_s_to_mhz(self.kerr.kappa_d),
            kappa_b_MHz: rad_s_to_mhz(self.cavity.kappa_b),
            kappa_p_MHz: rad_s_to_mhz(self.cavity.kappa_p),
            chi_MHz: rad_s_to_mhz(self.cavity.chi),
            g_MHz: rad_s_to_mhz(self.cavity.g),
            delta_qb_MHz: rad_s_to_mhz(self.cavity.delta_qb),
            Ec_MHz: rad_s_to_mhz(self.cavity.e_c),
            gamma_qb_kHz: rad_s_to_khz(self.cavity.gamma_qb),
            n_bar: self.noise.n_bar,
            theta_a_rad: self.kerr.theta_a,
            theta_b_rad: self.cavity.theta_b,
            dt_ns: s_to_ns(self.noise.dt),
            master_seed: self.noise.master_seed,
            delta_a0_MHz: Some(rad_s_to_mhz(self.kerr.delta_a0)),
            t1_us: self.options.t1_override.map(|t| t * 1e6),
            chi_correction: self.options.chi_correction,
            stark_vacuum_offset: self.options.stark_vacuum_offset,
        }
    }

    /// Recompute derived quantities after editing a field in place.
    pub fn rederive(&mut self) -> Result<(), ConfigError> {
        self.derived = derive(&self.kerr, &self.cavity, &self.options)?;
        Ok(())
    }

    pub fn with_t1(mut self, t1_s: Option<f64>) -> Result<Self, ConfigError> {
        self.options.t1_override = t1_s;
        self.rederive()?;
        Ok(self)
    }

    /// Dispersive shift at cavity occupation `n_b`, honouring `chi_correction`.
    #[inline]
    pub fn chi_eff(&self, n_b: f64) -> f64 {
        if self.options.chi_correction {
            self.cavity.chi / (1.0 + n_b.max(0.0) / (2.0 * self.derived.n_crit))
        } else {
            self.cavity.chi
        }
    }
}

fn derive(
    kerr: &KerrParams,
    cavity: &CavityQubitParams,
    options: &ModelOptions,
) -> Result<DerivedParams, ConfigError> {
    let gamma_p = derive_purcell_rate(cavity.kappa_b, cavity.g, cavity.delta_qb)
        .map_err(|e| ConfigError::invalid("delta_qb_MHz", e.to_string()))?;
    let n_crit = derive_ncrit(cavity.delta_qb, cavity.g)
        .map_err(|e| ConfigError::invalid("g_MHz", e.to_string()))?;
    let gamma_total = match options.t1_override {
        Some(t1) => 1.0 / t1,
        None => cavity.gamma_qb + gamma_p,
    };
    if gamma_total < cavity.gamma_qb {
        return Err(ConfigError::invalid(
            "t1_us",
            "1/T1 is smaller than the intrinsic qubit decay rate",
        ));
    }
    Ok(DerivedParams {
        gamma_total,
        n_crit,
        delta_ac: crate::bifurcation::critical_detuning(kerr.kappa_a, kerr.kappa_d),
    })
}
