//! Microcontroller profile registry stored as TOML.
//!
//! ```toml
//! [overhead]
//! flash_bytes = 262144
//! ram_bytes = 65536
//!
//! [latency]
//! int8_cycles_per_mac = 1.0
//! float_penalty = 8.0
//!
//! [[profile]]
//! name = "nRF52840"
//! clock_mhz = 64.0
//! flash_bytes = 1048576
//! sram_bytes = 262144
//! power_float_w = 0.1
//! power_int8_w = 0.1
//! core_factor = 0.25
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thar_core::benchlab::{
    builtin_profiles, find_profile, LatencyModel, McuProfile, RuntimeOverhead,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("profile registry not found: {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("profile `{0}` has a missing, zero or negative field")]
    InvalidProfile(String),
    #[error("duplicate profile `{0}`")]
    Duplicate(String),
    #[error("registry lists no profiles")]
    Empty,
    #[error("unknown profile `{name}` (known: {known})")]
    Unknown { name: String, known: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    #[serde(default)]
    pub overhead: RuntimeOverhead,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(rename = "profile")]
    pub profiles: Vec<McuProfile>,
}

impl Default for Registry {
    fn default() -> Self {
        Self {
            overhead: RuntimeOverhead::default(),
            latency: LatencyModel::default(),
            profiles: builtin_profiles(),
        }
    }
}

impl Registry {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("registry serializes")
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        if !path.is_file() {
            return Err(RegistryError::Missing(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let reg = Self::from_toml(&text).map_err(|source| RegistryError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        if self.profiles.is_empty() {
            return Err(RegistryError::Empty);
        }
        for (i, p) in self.profiles.iter().enumerate() {
            if !p.is_valid() {
                return Err(RegistryError::InvalidProfile(p.name.clone()));
            }
            if self.profiles[..i]
                .iter()
                .any(|q| q.name.eq_ignore_ascii_case(&p.name))
            {
                return Err(RegistryError::Duplicate(p.name.clone()));
            }
        }
        let l = self.latency;
        if !(l.int8_cycles_per_mac > 0.0 && l.float_penalty > 0.0) {
            return Err(RegistryError::InvalidProfile("latency".into()));
        }
        Ok(())
    }

    pub fn find(&self, name: &str) -> Result<&McuProfile, RegistryError> {
        find_profile(&self.profiles, name).ok_or_else(|| RegistryError::Unknown {
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.profiles.iter().map(|p| p.name.clone()).collect()
    }

    /// Keeps only the named profiles, in the order given. Empty keeps all.
    pub fn select(&self, names: &[String]) -> Result<Registry, RegistryError> {
        if names.is_empty() {
            return Ok(self.clone());
        }
        let profiles = names
            .iter()
            .map(|n| self.find(n).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Registry {
            profiles,
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_round_trips_through_toml() {
        let reg = Registry::default();
        let back = Registry::from_toml(&reg.to_toml()).unwrap();
        assert_eq!(back, reg);
        back.validate().unwrap();
    }

    #[test]
    fn sections_are_optional() {
        let reg = Registry::from_toml(
            "[[profile]]\nname = \"tiny\"\nclock_mhz = 16.0\nflash_bytes = 65536\nsram_bytes = 8192\n\
             power_float_w = 0.01\npower_int8_w = 0.01\ncore_factor = 0.25\n",
        )
        .unwrap();
        assert_eq!(reg.overhead, RuntimeOverhead::default());
        assert_eq!(reg.profiles.len(), 1);
    }

    #[test]
    fn rejects_bad_entries() {
        let mut reg = Registry::default();
        reg.profiles[0].clock_mhz = 0.0;
        assert!(matches!(
            reg.validate(),
            Err(RegistryError::InvalidProfile(_))
        ));
        let mut reg = Registry::default();
        reg.profiles.push(reg.profiles[0].clone());
        assert!(matches!(reg.validate(), Err(RegistryError::Duplicate(_))));
        assert!(Registry::default().find("esp32").is_err());
    }

    #[test]
    fn select_keeps_order() {
        let reg = Registry::default();
        let s = reg
            .select(&["stm32f767".into(), "nrf52840".into()])
            .unwrap();
        assert_eq!(s.names(), ["STM32F767", "nRF52840"]);
    }
}
