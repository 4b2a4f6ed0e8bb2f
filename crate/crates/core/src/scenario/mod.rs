//! Scenario configuration: every physical, radar, communication, compute and
//! learning parameter of the system, plus geometry helpers and validation.
//!
//! All fields are stored in SI units (watts, hertz, seconds, meters, bits).
//! Decibel values only appear at the JSON boundary through `*_dbm` keys.

mod decision;
mod init;

pub use decision::DecisionVector;
pub use init::{initial_feasible_point, sensing_matching, straight_line_trajectory};

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Errors raised while loading a configuration or building a starting point.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("unknown config key(s): {0}")]
    UnknownKeys(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("no feasible initial point: {0} constraint cannot be met")]
    Infeasible(String),
}

/// Converts a power level in dBm to watts.
pub fn dbm_to_watts(level: f64) -> f64 {
    10f64.powf((level - 30.0) / 10.0)
}

/// Converts a dB power ratio to a linear ratio.
pub fn db_to_linear(level: f64) -> f64 {
    10f64.powf(level / 10.0)
}

/// Full system configuration. Serialized as a flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_uavs: usize,
    pub num_targets: usize,
    pub num_modalities: usize,
    pub num_rounds: usize,
    pub local_iters: usize,
    pub server_iters: usize,
    pub time_slots: usize,

    pub flight_time: f64,
    pub altitude: f64,
    pub v_max: f64,
    /// Formation center of the UAV start positions (meters).
    pub start_pos: [f64; 2],
    /// Lateral (y) spacing between consecutive UAV start positions; 0 puts
    /// every UAV at `start_pos`.
    pub uav_spacing: f64,
    pub end_pos: [f64; 2],
    pub target_positions: Vec<[f64; 3]>,
    /// Horizontal radius around a UAV's hover point inside which a target can be sensed.
    pub coverage_radius: f64,
    /// Every UAV must sense at least one target per round (its training data
    /// comes from sensing).
    pub require_sensing: bool,

    pub bandwidth_uav: f64,
    pub bandwidth_bs: f64,
    pub ref_channel_gain: f64,
    pub noise_power: f64,

    pub duty_ratio: f64,
    pub pulse_duration: f64,
    pub waveform_const: f64,
    pub pred_var: f64,
    pub target_reflectivity: f64,
    pub pathloss_const: f64,
    pub rate_threshold: f64,

    pub samples_per_uav: Vec<usize>,
    pub cycles_per_sample: Vec<f64>,
    pub cycles_per_sample_bs: f64,
    pub switched_capacitance: f64,
    pub embed_payload: f64,
    pub model_payload: f64,
    pub global_payload: f64,

    pub p_se_max: f64,
    pub p_cm_max: f64,
    pub p_bs_max: f64,
    pub f_u_max: f64,
    pub f_bs_max: f64,
    pub e_max: f64,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub dirichlet_alpha: f64,
    pub non_iid: bool,
    pub probe_set_size: usize,
    pub test_set_size: usize,
    /// Distance between class prototypes in the synthetic feature space.
    pub class_separation: f64,
    /// Standard deviation of the synthetic per-feature noise.
    pub feature_noise: f64,
    /// CSV table to train on instead of the synthetic generator.
    #[serde(default)]
    pub dataset: Option<DatasetSource>,

    pub seed: u64,
}

/// A labeled CSV table and the columns each modality reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub path: String,
    pub modality_columns: Vec<Vec<String>>,
    pub label_column: String,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::seeded(DEFAULT_SEED)
    }
}

pub const DEFAULT_SEED: u64 = 7;

impl ScenarioConfig {
    /// The default 20-UAV, two-modality scenario with target layout, sample
    /// counts and per-sample cycle costs drawn from `seed`.
    pub fn seeded(seed: u64) -> Self {
        let num_uavs = 20;
        let mut cfg = Self {
            num_uavs,
            num_targets: num_uavs,
            num_modalities: 2,
            num_rounds: 10,
            local_iters: 15,
            server_iters: 10,
            time_slots: 5,
            flight_time: 100.0,
            altitude: 100.0,
            v_max: 30.0,
            start_pos: [1800.0, 0.0],
            uav_spacing: 50.0,
            end_pos: [0.0, 0.0],
            target_positions: Vec::new(),
            coverage_radius: 70.0,
            require_sensing: true,
            bandwidth_uav: 20e6,
            bandwidth_bs: 20e6,
            ref_channel_gain: db_to_linear(-40.0),
            noise_power: dbm_to_watts(-80.0),
            duty_ratio: 0.02,
            pulse_duration: 1e-4,
            waveform_const: 1e-7,
            pred_var: 2e-5,
            target_reflectivity: 1.0,
            pathloss_const: 1.0,
            rate_threshold: 100.0,
            samples_per_uav: Vec::new(),
            cycles_per_sample: Vec::new(),
            cycles_per_sample_bs: 1e6,
            switched_capacitance: 1e-28,
            embed_payload: 1e6,
            model_payload: 5e6,
            global_payload: 2e7,
            p_se_max: dbm_to_watts(20.0),
            p_cm_max: dbm_to_watts(20.0),
            p_bs_max: dbm_to_watts(30.0),
            f_u_max: 2e9,
            f_bs_max: 10e9,
            e_max: 8.0,
            learning_rate: 0.01,
            batch_size: 32,
            input_dim: 12,
            embed_dim: 8,
            hidden_dim: 16,
            num_classes: 6,
            dirichlet_alpha: 0.3,
            non_iid: false,
            probe_set_size: 200,
            test_set_size: 1200,
            class_separation: 2.0,
            feature_noise: 1.0,
            dataset: None,
            seed,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let starts = cfg.uav_start_positions();
        cfg.target_positions = (0..cfg.num_targets)
            .map(|c| {
                let home = starts[c % num_uavs];
                let r = 40.0 * rng.gen::<f64>().sqrt();
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                [home[0] + r * theta.cos(), home[1] + r * theta.sin(), 0.0]
            })
            .collect();
        cfg.samples_per_uav = (0..num_uavs).map(|_| rng.gen_range(150..=250)).collect();
        cfg.cycles_per_sample = (0..num_uavs).map(|_| rng.gen_range(0.8e6..1.2e6)).collect();
        cfg
    }

    /// Reads a flat JSON config. Missing keys fall back to the default
    /// scenario; `*_dbm` keys are converted to watts; unknown keys are rejected.
    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let Value::Object(overrides) = value else {
            return Err(ScenarioError::Parse("top level must be an object".into()));
        };
        let seed = match overrides.get("seed") {
            Some(v) => v
                .as_u64()
                .ok_or_else(|| ScenarioError::Parse("seed must be an unsigned integer".into()))?,
            None => DEFAULT_SEED,
        };
        let base = serde_json::to_value(Self::seeded(seed)).expect("config serializes");
        let Value::Object(mut merged) = base else {
            unreachable!()
        };
        let known: BTreeSet<String> = merged.keys().cloned().collect();
        let mut unknown = Vec::new();
        for (key, val) in overrides {
            let (name, val) = match key.strip_suffix("_dbm") {
                Some(stem) => {
                    let dbm = val.as_f64().ok_or_else(|| {
                        ScenarioError::Parse(format!("{key} must be a number"))
                    })?;
                    (stem.to_string(), Value::from(dbm_to_watts(dbm)))
                }
                None => (key, val),
            };
            if known.contains(&name) {
                merged.insert(name, val);
            } else {
                unknown.push(name);
            }
        }
        if !unknown.is_empty() {
            return Err(ScenarioError::UnknownKeys(unknown.join(", ")));
        }
        serde_json::from_value(Value::Object(merged)).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self).expect("config serializes") {
            Value::Object(map) => map,
            _ => unreachable!(),
        }
    }

    /// Sets a single scalar field by name, as used by parameter sweeps and
    /// command-line overrides. `bandwidth` sets both link bandwidths.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<(), ScenarioError> {
        if name == "bandwidth" {
            self.bandwidth_uav = value;
            self.bandwidth_bs = value;
            return Ok(());
        }
        let (name, value) = match name.strip_suffix("_dbm") {
            Some(stem) => (stem, dbm_to_watts(value)),
            None => (name, value),
        };
        let mut map = self.to_json_map();
        match map.get(name) {
            Some(Value::Number(_)) => {}
            Some(_) => return Err(ScenarioError::Invalid(format!("{name} is not a scalar parameter"))),
            None => return Err(ScenarioError::UnknownKeys(name.to_string())),
        }
        let is_integer = map[name].is_u64();
        let json = if is_integer {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(ScenarioError::Invalid(format!("{name} must be a non-negative integer")));
            }
            Value::from(value as u64)
        } else {
            Value::from(value)
        };
        map.insert(name.to_string(), json);
        *self = serde_json::from_value(Value::Object(map)).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Ok(())
    }

    pub fn ref_snr(&self) -> f64 {
        self.ref_channel_gain / self.noise_power
    }

    pub fn slot_duration(&self) -> f64 {
        self.flight_time / self.time_slots as f64
    }

    pub fn max_step(&self) -> f64 {
        self.v_max * self.slot_duration()
    }

    /// Horizontal start position of every UAV.
    pub fn uav_start_positions(&self) -> Vec<[f64; 2]> {
        let mid = (self.num_uavs as f64 - 1.0) / 2.0;
        (0..self.num_uavs)
            .map(|u| [self.start_pos[0], self.start_pos[1] + (u as f64 - mid) * self.uav_spacing])
            .collect()
    }

    /// Hover point used for radar sensing: the UAV's start position at altitude H.
    pub fn hover_point(&self, uav: usize) -> [f64; 3] {
        let s = self.uav_start_positions()[uav];
        [s[0], s[1], self.altitude]
    }

    /// Modality held by a UAV: contiguous, equally sized groups.
    pub fn modality_of(&self, uav: usize) -> usize {
        uav * self.num_modalities / self.num_uavs
    }

    /// Targets inside each UAV's coverage radius, ordered by target index.
    pub fn coverage(&self) -> Vec<Vec<usize>> {
        let starts = self.uav_start_positions();
        starts
            .iter()
            .map(|s| {
                self.target_positions
                    .iter()
                    .enumerate()
                    .filter(|(_, q)| (q[0] - s[0]).hypot(q[1] - s[1]) <= self.coverage_radius)
                    .map(|(c, _)| c)
                    .collect()
            })
            .collect()
    }

    /// Radar SNR per watt of sensing power for UAV `uav` looking at target `target`.
    pub fn radar_snr_per_watt(&self, uav: usize, target: usize) -> f64 {
        let gain = crate::channel::target_response(
            self.hover_point(uav),
            self.target_positions[target],
            self.pathloss_const,
            self.target_reflectivity,
        );
        crate::channel::radar_snr(1.0, gain, &self.radar_params())
    }

    pub fn radar_params(&self) -> crate::channel::RadarParams {
        crate::channel::RadarParams {
            duty_ratio: self.duty_ratio,
            pulse_duration: self.pulse_duration,
            waveform_const: self.waveform_const,
            pred_var: self.pred_var,
            bandwidth: self.bandwidth_uav,
            noise_power: self.noise_power,
        }
    }

    /// Lists every violated invariant. An empty report means the config is usable.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let counts = [
            ("num_uavs", self.num_uavs),
            ("num_targets", self.num_targets),
            ("num_modalities", self.num_modalities),
            ("local_iters", self.local_iters),
            ("server_iters", self.server_iters),
            ("time_slots", self.time_slots),
            ("batch_size", self.batch_size),
            ("input_dim", self.input_dim),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_classes", self.num_classes),
            ("probe_set_size", self.probe_set_size),
        ];
        for (name, n) in counts {
            if n == 0 {
                report.push(name, format!("{name} must be at least 1"));
            }
        }
        if self.num_modalities > self.num_uavs {
            report.push("M ≤ U", format!("{} modalities but only {} UAVs", self.num_modalities, self.num_uavs));
        }
        let positives = [
            ("flight_time", self.flight_time),
            ("altitude", self.altitude),
            ("v_max", self.v_max),
            ("coverage_radius", self.coverage_radius),
            ("bandwidth_uav", self.bandwidth_uav),
            ("bandwidth_bs", self.bandwidth_bs),
            ("ref_channel_gain", self.ref_channel_gain),
            ("noise_power", self.noise_power),
            ("pulse_duration", self.pulse_duration),
            ("waveform_const", self.waveform_const),
            ("pred_var", self.pred_var),
            ("target_reflectivity", self.target_reflectivity),
            ("pathloss_const", self.pathloss_const),
            ("rate_threshold", self.rate_threshold),
            ("cycles_per_sample_bs", self.cycles_per_sample_bs),
            ("switched_capacitance", self.switched_capacitance),
            ("embed_payload", self.embed_payload),
            ("model_payload", self.model_payload),
            ("global_payload", self.global_payload),
            ("p_se_max", self.p_se_max),
            ("p_cm_max", self.p_cm_max),
            ("p_bs_max", self.p_bs_max),
            ("f_u_max", self.f_u_max),
            ("f_bs_max", self.f_bs_max),
            ("learning_rate", self.learning_rate),
            ("class_separation", self.class_separation),
            ("feature_noise", self.feature_noise),
        ];
        for (name, v) in positives {
            if !(v.is_finite() && v > 0.0) {
                report.push(name, format!("{name} must be finite and positive, got {v}"));
            }
        }
        // A zero budget is a valid scenario without a feasible point.
        if !(self.e_max.is_finite() && self.e_max >= 0.0) {
            report.push("e_max", format!("e_max must be finite and non-negative, got {}", self.e_max));
        }
        if self.uav_spacing < 0.0 || !self.uav_spacing.is_finite() {
            report.push("uav_spacing", "uav_spacing must be non-negative".to_string());
        }
        if !(self.duty_ratio > 0.0 && self.duty_ratio <= 1.0) {
            report.push("duty_ratio", format!("duty ratio must lie in (0, 1], got {}", self.duty_ratio));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            report.push("dirichlet_alpha", "dirichlet_alpha must be positive".to_string());
        }
        if let Some(src) = &self.dataset {
            if src.modality_columns.len() != self.num_modalities {
                report.push("dataset", format!("{} modality column groups for {} modalities", src.modality_columns.len(), self.num_modalities));
            }
        }
        if self.samples_per_uav.len() != self.num_uavs {
            report.push("samples_per_uav", format!("expected {} entries", self.num_uavs));
        } else if self.samples_per_uav.iter().any(|&d| d == 0) {
            report.push("samples_per_uav", "every UAV needs at least one sample".to_string());
        } else if self.samples_per_uav.iter().any(|&d| d < self.batch_size) {
            report.push("batch_size", "batch size exceeds a UAV's sample count".to_string());
        }
        if self.cycles_per_sample.len() != self.num_uavs {
            report.push("cycles_per_sample", format!("expected {} entries", self.num_uavs));
        } else if self.cycles_per_sample.iter().any(|&c| !(c > 0.0)) {
            report.push("cycles_per_sample", "cycle counts must be positive".to_string());
        }
        if self.target_positions.len() != self.num_targets {
            report.push("target_positions", format!("expected {} targets", self.num_targets));
        }
        if self.time_slots >= 1 && self.v_max > 0.0 {
            let budget = self.max_step() * (self.time_slots.saturating_sub(1)) as f64;
            for (u, s) in self.uav_start_positions().iter().enumerate() {
                let dist = (s[0] - self.end_pos[0]).hypot(s[1] - self.end_pos[1]);
                if dist > budget * (1.0 + 1e-12) {
                    report.push(
                        "reachability",
                        format!("UAV {u} needs {dist:.1} m but can cover {budget:.1} m"),
                    );
                    break;
                }
            }
        }
        if self.require_sensing
            && self.target_positions.len() == self.num_targets
            && self.num_uavs > 0
            && sensing_matching(&self.coverage(), self.num_targets, None).is_none()
        {
            report.push(
                "sensing coverage",
                "targets in coverage cannot give every UAV its own target".to_string(),
            );
        }
        report
    }
}

/// One violated configuration invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub name: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, name: &str, message: String) {
        self.violations.push(Violation { name: name.to_string(), message });
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.name.as_str()).collect()
    }

    pub fn into_result(self) -> Result<(), ScenarioError> {
        if self.is_empty() {
            Ok(())
        } else {
            let msg = self
                .violations
                .iter()
                .map(|v| format!("{}: {}", v.name, v.message))
                .collect::<Vec<_>>()
                .join("; ");
            Err(ScenarioError::Invalid(msg))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dbm_conversion() {
        assert_relative_eq!(dbm_to_watts(0.0), 1e-3, max_relative = 1e-15);
        assert_relative_eq!(dbm_to_watts(30.0), 1.0, max_relative = 1e-15);
        assert_relative_eq!(dbm_to_watts(-80.0), 1e-11, max_relative = 1e-14);
    }

    #[test]
    fn default_is_valid() {
        let report = ScenarioConfig::default().validate();
        assert!(report.is_empty(), "{report:?}");
        for seed in 0..20 {
            assert!(ScenarioConfig::seeded(seed).validate().is_empty(), "seed {seed}");
        }
    }

    #[test]
    fn unreachable_end_is_reported_once() {
        let cfg = ScenarioConfig { v_max: 1.0, ..Default::default() };
        assert_eq!(cfg.validate().names(), vec!["reachability"]);
    }

    #[test]
    fn too_many_modalities() {
        let mut cfg = ScenarioConfig::default();
        cfg.num_modalities = cfg.num_uavs + 1;
        assert!(cfg.validate().names().contains(&"M ≤ U"));
    }

    #[test]
    fn json_overlay_and_dbm_keys() {
        let cfg = ScenarioConfig::from_json_str(r#"{"noise_power_dbm": -90, "num_rounds": 3}"#).unwrap();
        assert_relative_eq!(cfg.noise_power, 1e-12, max_relative = 1e-12);
        assert_eq!(cfg.num_rounds, 3);
        assert_eq!(cfg.num_uavs, 20);
    }

    #[test]
    fn json_rejects_typos() {
        let err = ScenarioConfig::from_json_str(r#"{"num_uav": 3}"#).unwrap_err();
        assert!(matches!(err, ScenarioError::UnknownKeys(k) if k == "num_uav"));
    }

    #[test]
    fn json_round_trip() {
        let cfg = ScenarioConfig::seeded(3);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ScenarioConfig::from_json_str(&text).unwrap(), cfg);
    }

    #[test]
    fn set_param_by_name() {
        let mut cfg = ScenarioConfig::default();
        cfg.set_param("p_se_max_dbm", 30.0).unwrap();
        assert_relative_eq!(cfg.p_se_max, 1.0, max_relative = 1e-12);
        cfg.set_param("bandwidth", 1e6).unwrap();
        assert_eq!(cfg.bandwidth_bs, 1e6);
        cfg.set_param("num_rounds", 4.0).unwrap();
        assert_eq!(cfg.num_rounds, 4);
        assert!(cfg.set_param("nope", 1.0).is_err());
        assert!(cfg.set_param("num_rounds", 1.5).is_err());
    }

    #[test]
    fn default_radar_snr_is_order_ten() {
        let cfg = ScenarioConfig::default();
        for u in 0..cfg.num_uavs {
            for &c in &cfg.coverage()[u] {
                let snr = cfg.radar_snr_per_watt(u, c) * 0.5 * cfg.p_se_max;
                assert!((1.0..100.0).contains(&snr), "snr {snr}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn dbm_is_decade_per_ten_db(x in -120.0f64..60.0) {
            let a = dbm_to_watts(x);
            let b = dbm_to_watts(x + 10.0);
            proptest::prop_assert!(b > a);
            proptest::prop_assert!((b / a - 10.0).abs() < 1e-9);
        }
    }
}
