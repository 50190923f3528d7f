//! JSON experiment configuration: hardware profiles, sweeps and run-wide
//! settings. Every key carries its unit in its name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiments::{SweepKind, SweepSpec, DEFAULT_MAX_ROUTERS};
use crate::hardware::{BsmSpec, HardwareProfile, MemorySpec};
use crate::network::BiasPolicy;
use crate::sim::SimTime;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    #[serde(default = "default_slots")]
    pub slots: usize,
    pub tau_coh_s: f64,
    #[serde(default = "one")]
    pub f_init: f64,
    #[serde(default = "default_emit_hz")]
    pub emit_frequency_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumChannelConfig {
    pub attenuation_db_per_km: f64,
    #[serde(default = "default_light_speed")]
    pub light_speed_km_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ClassicalChannelConfig {
    #[serde(default)]
    pub extra_delay_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsmConfig {
    #[serde(default = "half")]
    pub intrinsic_success: f64,
    #[serde(default = "one")]
    pub detector_efficiency: f64,
    /// Station position along each hop, from the left router.
    #[serde(default = "half")]
    pub position_fraction: f64,
}

impl Default for BsmConfig {
    fn default() -> Self {
        BsmConfig {
            intrinsic_success: 0.5,
            detector_efficiency: 1.0,
            position_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub memory: MemoryConfig,
    pub quantum_channel: QuantumChannelConfig,
    #[serde(default)]
    pub classical_channel: ClassicalChannelConfig,
    #[serde(default)]
    pub bsm: BsmConfig,
    #[serde(default = "one")]
    pub swap_success: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RouterSpec {
    Range { min: usize, max: usize },
    List(Vec<usize>),
}

impl RouterSpec {
    pub fn counts(&self) -> Vec<usize> {
        match self {
            RouterSpec::Range { min, max } => (*min..=*max).collect(),
            RouterSpec::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub profile: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_distance_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances_km: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routers: Option<RouterSpec>,
    #[serde(default = "default_attempts")]
    pub attempts: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_budget: Option<u32>,
    #[serde(default)]
    pub auto_step: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RootAlternation {
    #[default]
    PerRouterCount,
    PerRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_t_sim")]
    pub t_sim_s: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default = "half")]
    pub f_threshold: f64,
    #[serde(default = "default_retry_budget")]
    pub retry_budget: u32,
    #[serde(default)]
    pub root_alternation: RootAlternation,
    #[serde(default = "default_max_routers")]
    pub max_routers: usize,
    #[serde(default)]
    pub profiles: BTreeMap<String, ProfileConfig>,
    #[serde(default)]
    pub sweeps: BTreeMap<String, SweepConfig>,
}

fn default_slots() -> usize {
    50
}
fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn default_emit_hz() -> f64 {
    1.0e6
}
fn default_light_speed() -> f64 {
    2.0e5
}
fn default_attempts() -> usize {
    20
}
fn default_replicates() -> usize {
    1
}
fn default_t_sim() -> f64 {
    3600.0
}
fn default_output_dir() -> String {
    "results".into()
}
fn default_retry_budget() -> u32 {
    10
}
fn default_max_routers() -> usize {
    DEFAULT_MAX_ROUTERS
}

/// Profiles available to every config without being declared.
pub fn builtin_profiles() -> BTreeMap<String, ProfileConfig> {
    let profile = |alpha: f64, tau: f64, f_init: f64| ProfileConfig {
        memory: MemoryConfig {
            slots: 50,
            tau_coh_s: tau,
            f_init,
            emit_frequency_hz: 1.0e6,
        },
        quantum_channel: QuantumChannelConfig {
            attenuation_db_per_km: alpha,
            light_speed_km_per_s: 2.0e5,
        },
        classical_channel: ClassicalChannelConfig::default(),
        bsm: BsmConfig::default(),
        swap_success: 1.0,
    };
    BTreeMap::from([
        ("idealized".to_string(), profile(0.002, 5.0, 1.0)),
        ("swap-limited".to_string(), profile(0.01, 0.1, 0.99)),
        ("loss-limited".to_string(), profile(0.005, 5.0, 0.99)),
    ])
}

fn check(cond: bool, key: &str, constraint: &str) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(invalid(format!("{key} must be {constraint}")))
    }
}

fn check_prob(p: f64, key: &str, allow_zero: bool) -> Result<(), ConfigError> {
    if allow_zero {
        check((0.0..=1.0).contains(&p), key, "in [0, 1]")
    } else {
        check(p > 0.0 && p <= 1.0, key, "in (0, 1]")
    }
}

impl ProfileConfig {
    pub fn validate(&self, name: &str) -> Result<(), ConfigError> {
        let k = |field: &str| format!("profiles.{name}.{field}");
        check(self.memory.slots >= 2, &k("memory.slots"), ">= 2")?;
        check(
            self.memory.tau_coh_s > 0.0 && self.memory.tau_coh_s.is_finite(),
            &k("memory.tau_coh_s"),
            "> 0",
        )?;
        check(
            (0.25..=1.0).contains(&self.memory.f_init),
            &k("memory.f_init"),
            "in [0.25, 1]",
        )?;
        check(
            self.memory.emit_frequency_hz > 0.0 && self.memory.emit_frequency_hz <= 1.0e12,
            &k("memory.emit_frequency_hz"),
            "in (0, 1e12]",
        )?;
        check(
            self.quantum_channel.attenuation_db_per_km >= 0.0,
            &k("quantum_channel.attenuation_db_per_km"),
            ">= 0",
        )?;
        check(
            self.quantum_channel.light_speed_km_per_s > 0.0,
            &k("quantum_channel.light_speed_km_per_s"),
            "> 0",
        )?;
        check(
            self.classical_channel.extra_delay_s >= 0.0,
            &k("classical_channel.extra_delay_s"),
            ">= 0",
        )?;
        check_prob(self.bsm.intrinsic_success, &k("bsm.intrinsic_success"), false)?;
        check_prob(
            self.bsm.detector_efficiency,
            &k("bsm.detector_efficiency"),
            false,
        )?;
        check_prob(self.bsm.position_fraction, &k("bsm.position_fraction"), true)?;
        check_prob(self.swap_success, &k("swap_success"), true)?;
        Ok(())
    }

    pub fn hardware(&self) -> HardwareProfile {
        HardwareProfile {
            memory: MemorySpec {
                slots: self.memory.slots,
                tau_coh: SimTime::from_secs_f64(self.memory.tau_coh_s).unwrap_or(SimTime(1)),
                f_init: self.memory.f_init,
                emit_frequency_hz: self.memory.emit_frequency_hz,
            },
            attenuation_db_per_km: self.quantum_channel.attenuation_db_per_km,
            light_speed_km_per_s: self.quantum_channel.light_speed_km_per_s,
            classical_extra_delay: SimTime::from_secs_f64(self.classical_channel.extra_delay_s)
                .unwrap_or(SimTime::ZERO),
            bsm: BsmSpec {
                intrinsic_success: self.bsm.intrinsic_success,
                detector_efficiency: self.bsm.detector_efficiency,
            },
            bsm_fraction: self.bsm.position_fraction,
            swap_success: self.swap_success,
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ConfigFile = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Declared profile, falling back to the built-in set.
    pub fn profile(&self, name: &str) -> Option<ProfileConfig> {
        self.profiles
            .get(name)
            .cloned()
            .or_else(|| builtin_profiles().remove(name))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check(
            self.t_sim_s > 0.0 && SimTime::from_secs_f64(self.t_sim_s).is_some(),
            "t_sim_s",
            "> 0 and representable in picoseconds",
        )?;
        check_prob(self.f_threshold, "f_threshold", true)?;
        check(self.retry_budget >= 1, "retry_budget", ">= 1")?;
        check(self.max_routers >= 2, "max_routers", ">= 2")?;
        check(!self.output_dir.is_empty(), "output_dir", "non-empty")?;
        for (name, p) in &self.profiles {
            p.validate(name)?;
        }
        for name in self.sweeps.keys() {
            self.sweep(name, None)?;
        }
        Ok(())
    }

    pub fn sweep_names(&self) -> impl Iterator<Item = &str> {
        self.sweeps.keys().map(String::as_str)
    }

    /// Resolves a named sweep against its profile and the global settings.
    /// `seed_override` replaces both the global and the per-sweep seed.
    pub fn sweep(&self, name: &str, seed_override: Option<u64>) -> Result<SweepSpec, ConfigError> {
        let sc = self
            .sweeps
            .get(name)
            .ok_or_else(|| invalid(format!("unknown sweep '{name}'")))?;
        let k = |field: &str| format!("sweeps.{name}.{field}");
        let profile = self.profile(&sc.profile).ok_or_else(|| {
            invalid(format!("{}: unknown profile '{}'", k("profile"), sc.profile))
        })?;
        profile.validate(&sc.profile)?;
        check(sc.attempts >= 1, &k("attempts"), ">= 1")?;
        check(sc.replicates >= 1, &k("replicates"), ">= 1")?;
        let f_threshold = sc.f_threshold.unwrap_or(self.f_threshold);
        check_prob(f_threshold, &k("f_threshold"), true)?;
        let retry_budget = sc.retry_budget.unwrap_or(self.retry_budget);
        check(retry_budget >= 1, &k("retry_budget"), ">= 1")?;

        let mut distances: Vec<f64> = sc.distances_km.clone().unwrap_or_default();
        if let Some(d) = sc.total_distance_km {
            distances.insert(0, d);
        }
        let mut spec = SweepSpec::new(sc.kind, &sc.profile, profile.hardware());
        spec.name = name.to_string();
        spec.distances_km = distances;
        spec.routers = sc.routers.as_ref().map(RouterSpec::counts).unwrap_or_default();
        spec.hop_km = sc.hop_km;
        spec.attempts = sc.attempts;
        spec.replicates = sc.replicates;
        spec.base_seed = seed_override.or(sc.seed).unwrap_or(self.seed);
        spec.f_threshold = f_threshold;
        spec.retry_budget = retry_budget;
        spec.horizon = SimTime::from_secs_f64(self.t_sim_s)
            .ok_or_else(|| invalid("t_sim_s is not representable"))?;
        spec.bias = match self.root_alternation {
            RootAlternation::PerRouterCount => BiasPolicy::PerRouterCount,
            RootAlternation::PerRequest => BiasPolicy::PerRequest,
        };
        spec.auto_step = sc.auto_step;
        spec.max_routers = self.max_routers;
        spec.validate()
            .map_err(|e| invalid(format!("sweeps.{name}: {e}")))?;
        if sc.auto_step && sc.kind != SweepKind::FixedNodesDistanceSweep {
            return Err(invalid(format!(
                "{} only applies to FixedNodesDistanceSweep",
                k("auto_step")
            )));
        }
        Ok(spec)
    }
}

pub fn load_config(path: &Path) -> Result<ConfigFile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ConfigFile::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "profiles": {
            "lab": {
                "memory": {"tau_coh_s": 1.0},
                "quantum_channel": {"attenuation_db_per_km": 0.2}
            }
        },
        "sweeps": {
            "short": {
                "kind": "FixedDistanceNodeSweep",
                "profile": "lab",
                "total_distance_km": 50,
                "routers": {"min": 2, "max": 4}
            }
        }
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ConfigFile::parse(MINIMAL).unwrap();
        assert_eq!(cfg.retry_budget, 10);
        assert_eq!(cfg.f_threshold, 0.5);
        let s = &cfg.sweeps["short"];
        assert_eq!(s.attempts, 20);
        assert_eq!(s.replicates, 1);
        let p = &cfg.profiles["lab"];
        assert_eq!(p.bsm.intrinsic_success, 0.5);
        assert_eq!(p.memory.slots, 50);
        let spec = cfg.sweep("short", None).unwrap();
        assert_eq!(spec.routers, vec![2, 3, 4]);
        assert_eq!(spec.distances_km, vec![50.0]);
    }

    #[test]
    fn negative_coherence_time_is_named() {
        let text = MINIMAL.replace("\"tau_coh_s\": 1.0", "\"tau_coh_s\": -1.0");
        let err = ConfigFile::parse(&text).unwrap_err().to_string();
        assert!(err.contains("tau_coh_s must be > 0"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("\"tau_coh_s\"", "\"tau_s\": 2, \"tau_coh_s\"");
        let err = ConfigFile::parse(&text).unwrap_err().to_string();
        assert!(err.contains("unknown field"), "{err}");
        let text = MINIMAL.replacen('{', "{\"colour\": 1,", 1);
        assert!(ConfigFile::parse(&text).is_err());
    }

    #[test]
    fn unknown_profile_is_reported() {
        let text = MINIMAL.replace("\"profile\": \"lab\"", "\"profile\": \"nope\"");
        let err = ConfigFile::parse(&text).unwrap_err().to_string();
        assert!(err.contains("unknown profile 'nope'"), "{err}");
    }

    #[test]
    fn builtin_profiles_resolve() {
        let text = MINIMAL.replace("\"profile\": \"lab\"", "\"profile\": \"swap-limited\"");
        let cfg = ConfigFile::parse(&text).unwrap();
        let spec = cfg.sweep("short", None).unwrap();
        assert_eq!(spec.hardware.attenuation_db_per_km, 0.01);
        for (name, p) in builtin_profiles() {
            p.validate(&name).unwrap();
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = ConfigFile::parse(MINIMAL).unwrap();
        let again = ConfigFile::parse(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn seed_override_wins() {
        let cfg = ConfigFile::parse(MINIMAL).unwrap();
        assert_eq!(cfg.sweep("short", Some(99)).unwrap().base_seed, 99);
        assert_eq!(cfg.sweep("short", None).unwrap().base_seed, 0);
    }

    #[test]
    fn range_violations_name_the_key() {
        let text = MINIMAL.replace("\"min\": 2", "\"min\": 1");
        let err = ConfigFile::parse(&text).unwrap_err().to_string();
        assert!(err.contains("sweeps.short") && err.contains("router count 1"), "{err}");
        let text = MINIMAL.replace("\"attenuation_db_per_km\": 0.2", "\"attenuation_db_per_km\": -0.2");
        let err = ConfigFile::parse(&text).unwrap_err().to_string();
        assert!(err.contains("attenuation_db_per_km must be >= 0"), "{err}");
    }
}
