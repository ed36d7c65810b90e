use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read machine config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed machine config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid machine config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplacementPolicy {
    Lru,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct L1Config {
    pub capacity: u64,
    pub line: u64,
    pub ways: u64,
    pub hit_cycles: u64,
    pub policy: ReplacementPolicy,
}

impl Default for L1Config {
    fn default() -> Self {
        L1Config { capacity: 32768, line: 64, ways: 8, hit_cycles: 4, policy: ReplacementPolicy::Lru }
    }
}

impl L1Config {
    pub fn sets(&self) -> u64 {
        self.capacity / (self.line * self.ways)
    }
}

/// Voltage as a linear function of frequency, normalised to V(f_max) = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoltageCurve {
    /// V(f_min) / V(f_max).
    pub v_min_ratio: f64,
}

impl Default for VoltageCurve {
    fn default() -> Self {
        VoltageCurve { v_min_ratio: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerConfig {
    pub p_static: f64,
    pub c_dyn: f64,
    pub alpha: f64,
    pub beta: f64,
    pub v_of_f: VoltageCurve,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig { p_static: 1.0, c_dyn: 3.0, alpha: 0.3, beta: 0.7, v_of_f: VoltageCurve::default() }
    }
}

/// Machine parameters. Frequencies are in GHz, times in ns; power is in
/// normalised units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MachineConfig {
    pub f_max: f64,
    pub f_min: f64,
    pub l1: L1Config,
    pub mem_latency_ns: f64,
    pub mshr_count: u32,
    pub dvfs_switch_ns: f64,
    pub jit_ns_per_instr: f64,
    pub power: PowerConfig,
    pub ipc_max: f64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            f_max: 3.4,
            f_min: 1.6,
            l1: L1Config::default(),
            mem_latency_ns: 60.0,
            mshr_count: 10,
            dvfs_switch_ns: 100.0,
            jit_ns_per_instr: 50.0,
            power: PowerConfig::default(),
            ipc_max: 1.0,
        }
    }
}

/// Converts GHz to whole MHz, rejecting fractional MHz.
pub fn ghz_to_mhz(f: f64) -> Option<u64> {
    let mhz = f * 1000.0;
    let r = mhz.round();
    ((mhz - r).abs() < 1e-6 && r >= 1.0).then_some(r as u64)
}

/// Converts ns to whole ps (rounded).
pub fn ns_to_ps(ns: f64) -> u64 {
    (ns * 1000.0).round().max(0.0) as u64
}

impl MachineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let m: MachineConfig = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let (Some(lo), Some(hi)) = (ghz_to_mhz(self.f_min), ghz_to_mhz(self.f_max)) else {
            return bad("frequencies must be positive whole MHz values");
        };
        if lo > hi {
            return bad("f_min exceeds f_max");
        }
        let l1 = &self.l1;
        if l1.line == 0 || l1.ways == 0 || l1.capacity == 0 {
            return bad("cache geometry must be non-zero");
        }
        if l1.capacity % l1.line != 0 {
            return bad("line size does not divide capacity");
        }
        if l1.capacity % (l1.line * l1.ways) != 0 {
            return bad("capacity is not a whole number of sets");
        }
        if !l1.line.is_power_of_two() {
            return bad("line size must be a power of two");
        }
        if l1.hit_cycles == 0 {
            return bad("hit_cycles must be positive");
        }
        if !(self.mem_latency_ns > 0.0) {
            return bad("mem_latency_ns must be positive");
        }
        if self.mshr_count == 0 {
            return bad("mshr_count must be at least 1");
        }
        if !(self.dvfs_switch_ns >= 0.0) || !(self.jit_ns_per_instr >= 0.0) {
            return bad("overhead charges must be non-negative");
        }
        let p = &self.power;
        if (p.alpha + p.beta - 1.0).abs() > 1e-9 {
            return bad("power.alpha + power.beta must equal 1");
        }
        if p.p_static < 0.0 || p.c_dyn < 0.0 || p.alpha < 0.0 || p.beta < 0.0 {
            return bad("power coefficients must be non-negative");
        }
        if !(p.v_of_f.v_min_ratio > 0.0 && p.v_of_f.v_min_ratio <= 1.0) {
            return bad("v_min_ratio must lie in (0, 1]");
        }
        if !(self.ipc_max > 0.0) {
            return bad("ipc_max must be positive");
        }
        Ok(())
    }

    pub fn f_max_mhz(&self) -> u64 {
        ghz_to_mhz(self.f_max).expect("validated")
    }

    pub fn f_min_mhz(&self) -> u64 {
        ghz_to_mhz(self.f_min).expect("validated")
    }

    /// Memory latency in core cycles at `mhz`, rounded up.
    pub fn mem_latency_cycles(&self, mhz: u64) -> u64 {
        (ns_to_ps(self.mem_latency_ns) as u128 * mhz as u128).div_ceil(1_000_000) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let m = MachineConfig::default();
        m.validate().unwrap();
        assert_eq!(m.mem_latency_cycles(3400), 204);
        assert_eq!(m.mem_latency_cycles(1600), 96);
        assert_eq!(m.l1.sets(), 64);
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let m = MachineConfig::default();
        assert_eq!(MachineConfig::from_json(&m.to_json()).unwrap(), m);
        let partial = MachineConfig::from_json(r#"{"mshr_count": 2}"#).unwrap();
        assert_eq!(partial.mshr_count, 2);
        assert!(MachineConfig::from_json(r#"{"mshrs": 2}"#).is_err());
        assert!(MachineConfig::from_json(r#"{"l1": {"size": 1}}"#).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let mut m = MachineConfig { f_min: 4.0, ..Default::default() };
        assert!(m.validate().is_err());
        m = MachineConfig::default();
        m.power.alpha = 0.5;
        assert!(m.validate().is_err());
        m = MachineConfig { f_max: 3.4001, ..Default::default() };
        assert!(m.validate().is_err());
    }
}
