//! Scenario files: flat TOML with one key per simulation parameter.
//!
//! Every key has a default, so an empty file describes the reference
//! scenario. Powers are given in dBm and converted to watts exactly once, in
//! [`ScenarioConfig::resolve`]. Any key can be overridden from the
//! environment as `SWAN_<KEY>` (upper case), e.g. `SWAN_N_RF=8`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dbm_to_watts, GeometryConfig, RadioConfig};
use crate::metrics::EnergyModel;

pub const ENV_PREFIX: &str = "SWAN_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SwanFcWmmse,
    SwanFcZf,
    SwanPcWmmse,
    MmimoFcWmmse,
    ConvPass,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::SwanFcWmmse,
        Method::SwanFcZf,
        Method::SwanPcWmmse,
        Method::MmimoFcWmmse,
        Method::ConvPass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SwanFcWmmse => "swan_fc_wmmse",
            Method::SwanFcZf => "swan_fc_zf",
            Method::SwanPcWmmse => "swan_pc_wmmse",
            Method::MmimoFcWmmse => "mmimo_fc_wmmse",
            Method::ConvPass => "conv_pass",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub f_c: f64,
    pub n_eff: f64,
    /// dB/m
    pub kappa: f64,
    #[serde(rename = "P_dBm")]
    pub p_dbm: f64,
    #[serde(rename = "sigma2_dBm")]
    pub sigma2_dbm: f64,
    #[serde(rename = "D_x")]
    pub d_x: f64,
    #[serde(rename = "D_y")]
    pub d_y: f64,
    #[serde(rename = "H")]
    pub height: f64,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "N_RF")]
    pub n_rf: usize,
    #[serde(rename = "M")]
    pub segments: usize,
    pub grid_resolution: f64,
    /// Defaults to half the carrier wavelength.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_min: Option<f64>,
    pub bcd_tolerance: f64,
    pub max_outer: usize,
    pub cg_max_iter: usize,
    pub search_max_pass: usize,
    pub method: Method,
    pub trials: usize,
    pub seed: u64,
    #[serde(rename = "P_PA")]
    pub p_pa: f64,
    #[serde(rename = "P_PS")]
    pub p_ps: f64,
    #[serde(rename = "P_RF")]
    pub p_rf: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            f_c: 28e9,
            n_eff: 1.4,
            kappa: 0.08,
            p_dbm: 10.0,
            sigma2_dbm: -80.0,
            d_x: 80.0,
            d_y: 20.0,
            height: 3.0,
            users: 4,
            n_rf: 25,
            segments: 50,
            grid_resolution: 0.01,
            delta_min: None,
            bcd_tolerance: 1e-8,
            max_outer: 50,
            cg_max_iter: 200,
            search_max_pass: 100,
            method: Method::SwanFcWmmse,
            trials: 1,
            seed: 0,
            p_pa: 0.1,
            p_ps: 0.01,
            p_rf: 0.1,
            sweep: None,
        }
    }
}

/// Keys accepted in scenario files, in file order.
pub const KEYS: [&str; 24] = [
    "f_c",
    "n_eff",
    "kappa",
    "P_dBm",
    "sigma2_dBm",
    "D_x",
    "D_y",
    "H",
    "K",
    "N_RF",
    "M",
    "grid_resolution",
    "delta_min",
    "bcd_tolerance",
    "max_outer",
    "cg_max_iter",
    "search_max_pass",
    "method",
    "trials",
    "seed",
    "P_PA",
    "P_PS",
    "P_RF",
    "sweep",
];

const INTEGER_KEYS: [&str; 8] = ["K", "N_RF", "M", "max_outer", "cg_max_iter", "search_max_pass", "trials", "seed"];

fn is_numeric_key(key: &str) -> bool {
    KEYS.contains(&key) && !matches!(key, "method" | "sweep")
}

fn parse_env_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Environment variable name overriding `key`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase())
}

fn numeric_value(key: &str, value: f64) -> Result<toml::Value> {
    if !is_numeric_key(key) {
        return Err(Error::InvalidConfig(format!("`{key}` is not a numeric setting")));
    }
    if INTEGER_KEYS.contains(&key) {
        if value.fract() != 0.0 || value < 0.0 || value > i64::MAX as f64 {
            return Err(Error::InvalidConfig(format!("`{key}` needs a non-negative integer, got {value}")));
        }
        Ok(toml::Value::Integer(value as i64))
    } else {
        Ok(toml::Value::Float(value))
    }
}

impl ScenarioConfig {
    /// Parses a scenario, applying overrides from `env` (name, value pairs).
    pub fn from_toml_with_env<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("malformed scenario: {e}")))?;
        for (name, raw) in env {
            if let Some(key) = KEYS.iter().find(|k| env_name(k) == name) {
                table.insert(key.to_string(), parse_env_value(&raw));
            }
        }
        let cfg: ScenarioConfig = table
            .try_into()
            .map_err(|e| Error::InvalidConfig(format!("malformed scenario: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_env(text, std::iter::empty())
    }

    /// Reads a scenario file with overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(e).context(format!("reading {}", path.display())))?;
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Copy with one numeric key replaced.
    pub fn with_value(&self, key: &str, value: f64) -> Result<Self> {
        let mut table = toml::Table::try_from(self).expect("scenario serializes");
        table.insert(key.to_string(), numeric_value(key, value)?);
        let cfg: ScenarioConfig = table
            .try_into()
            .map_err(|e| Error::InvalidConfig(format!("cannot set `{key}` to {value}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(sweep) = &self.sweep {
            if !is_numeric_key(&sweep.key) {
                return Err(Error::InvalidConfig(format!(
                    "sweep key `{}` does not name a numeric setting",
                    sweep.key
                )));
            }
        }
        if self.users == 0 {
            return Err(Error::InvalidConfig("at least one user is required".into()));
        }
        if self.n_rf == 0 {
            return Err(Error::InvalidConfig("at least one RF chain is required".into()));
        }
        if !(self.bcd_tolerance >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be non-negative, got {}",
                self.bcd_tolerance
            )));
        }
        self.resolve().map(|_| ())
    }

    /// Converts to SI units and builds the model objects.
    pub fn resolve(&self) -> Result<Scenario> {
        let radio = RadioConfig::new(
            self.f_c,
            self.n_eff,
            self.kappa,
            dbm_to_watts(self.p_dbm),
            dbm_to_watts(self.sigma2_dbm),
        )?;
        let delta_min = self.delta_min.unwrap_or(radio.wavelength() / 2.0);
        let geometry = GeometryConfig::new(self.d_x, self.d_y, self.height, self.segments, delta_min)?;
        let energy = EnergyModel::new(self.p_pa, self.p_ps, self.p_rf)?;
        if !(self.grid_resolution > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grid resolution must be positive, got {}",
                self.grid_resolution
            )));
        }
        Ok(Scenario {
            config: self.clone(),
            radio,
            geometry,
            energy,
        })
    }
}

/// A scenario in SI units, ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub radio: RadioConfig,
    pub geometry: GeometryConfig,
    pub energy: EnergyModel,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_scenario() {
        let cfg = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        let s = cfg.resolve().unwrap();
        assert!((s.radio.power() - 0.01).abs() < 1e-15);
        assert!((s.radio.noise() - 1e-11).abs() < 1e-24);
        assert!((s.geometry.delta_min() - s.radio.wavelength() / 2.0).abs() < 1e-15);
        assert_eq!(s.geometry.segments(), 50);
        assert!((s.geometry.segment_len() - 1.6).abs() < 1e-12);
    }

    #[test]
    fn keys_parse_with_integer_or_float_values() {
        let text = "D_x = 16\nM = 16\nN_RF = 8\nkappa = 0\nmethod = \"swan_pc_wmmse\"\n[sweep]\nkey = \"N_RF\"\nvalues = [4, 8]\n";
        let cfg = ScenarioConfig::from_toml(text).unwrap();
        assert_eq!(cfg.d_x, 16.0);
        assert_eq!(cfg.n_rf, 8);
        assert_eq!(cfg.method, Method::SwanPcWmmse);
        assert_eq!(cfg.sweep.as_ref().unwrap().values, vec![4.0, 8.0]);
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_and_bad_keys_are_rejected() {
        assert!(ScenarioConfig::from_toml("bogus = 1").is_err());
        assert!(ScenarioConfig::from_toml("method = \"fastest\"").is_err());
        assert!(ScenarioConfig::from_toml("K = 0").is_err());
        assert!(ScenarioConfig::from_toml("[sweep]\nkey = \"method\"\nvalues = [1]").is_err());
    }

    #[test]
    fn environment_overrides_file() {
        let env = vec![
            ("SWAN_N_RF".to_string(), "8".to_string()),
            ("SWAN_P_DBM".to_string(), "-10".to_string()),
            ("SWAN_METHOD".to_string(), "conv_pass".to_string()),
            ("UNRELATED".to_string(), "1".to_string()),
        ];
        let cfg = ScenarioConfig::from_toml_with_env("N_RF = 4\n", env).unwrap();
        assert_eq!(cfg.n_rf, 8);
        assert_eq!(cfg.p_dbm, -10.0);
        assert_eq!(cfg.method, Method::ConvPass);
    }

    #[test]
    fn with_value_respects_types() {
        let cfg = ScenarioConfig::default();
        assert_eq!(cfg.with_value("N_RF", 4.0).unwrap().n_rf, 4);
        assert_eq!(cfg.with_value("P_dBm", -3.5).unwrap().p_dbm, -3.5);
        assert_eq!(cfg.with_value("delta_min", 0.01).unwrap().delta_min, Some(0.01));
        assert!(cfg.with_value("N_RF", 4.5).is_err());
        assert!(cfg.with_value("method", 1.0).is_err());
        assert!(cfg.with_value("nonsense", 1.0).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }
}
