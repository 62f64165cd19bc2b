//! TOML configuration files and the shipped presets.
//!
//! Angular quantities may be written either as plain numbers in rad/µs or as
//! `{ mhz = 11.0 }`, which is converted with ω = 2π·f.

use std::path::Path;

use serde::{Deserialize, Deserializer};

use crate::dynamics::SchemeConfig;
use crate::operators::Scheme;
use crate::sweep::SweepSpec;
use crate::{mhz, Error, Result};

pub const SD_PRESET: &str = include_str!("../presets/sd_paper.toml");
pub const DD_PRESET: &str = include_str!("../presets/dd_paper.toml");

#[derive(Deserialize)]
#[serde(untagged)]
enum AngularRepr {
    RadPerUs(f64),
    Mhz { mhz: f64 },
}

/// Deserializes an angular frequency from `x` (rad/µs) or `{ mhz = x }`.
pub fn angular<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(match AngularRepr::deserialize(d)? {
        AngularRepr::RadPerUs(v) => v,
        AngularRepr::Mhz { mhz: f } => mhz(f),
    })
}

fn config_error(e: toml::de::Error) -> Error {
    Error::Config(e.to_string().trim_end().to_string())
}

/// Parses and validates a scheme configuration.
pub fn parse_scheme_config(text: &str) -> Result<SchemeConfig> {
    let cfg: SchemeConfig = toml::from_str(text).map_err(config_error)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scheme_config(path: &Path) -> Result<SchemeConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_scheme_config(&text)
}

pub fn preset(scheme: Scheme) -> SchemeConfig {
    let text = match scheme {
        Scheme::SD => SD_PRESET,
        Scheme::DD => DD_PRESET,
    };
    parse_scheme_config(text).expect("shipped presets are valid")
}

/// Serializes a configuration back to TOML (angular values in rad/µs).
pub fn to_toml(cfg: &SchemeConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))
}

pub fn parse_sweep_spec(text: &str) -> Result<SweepSpec> {
    let spec: SweepSpec = toml::from_str(text).map_err(config_error)?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_sweep_spec(path: &Path) -> Result<SweepSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_sweep_spec(&text)
}
