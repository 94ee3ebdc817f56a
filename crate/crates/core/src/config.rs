//! The run configuration document.
//!
//! ```toml
//! [[stations]]
//! station_id = "C"
//! frame_rate = 0.3            # frames per second
//! image_size = [1280, 720]
//! roi = [[0, 0], [1280, 0], [1280, 720], [0, 720]]   # optional
//!
//! [calendar]
//! shift_start = "07:00:00"
//! shift_end = "15:30:00"
//! breaks = [["09:00:00", "09:25:00"], ["11:30:00", "11:55:00"], ["13:30:00", "13:55:00"]]
//! workdays = ["Mon", "Tue", "Wed", "Thu", "Fri"]   # default: every day
//! timezone = "America/Toronto"
//!
//! [tracker]                   # every key optional
//! iou_gate = 0.3
//! max_misses = 5
//! min_hits = 3
//! pos_std_factor = 0.05
//! vel_std_factor = 0.00625
//! max_dt_frames = 10.0
//!
//! [analytics]                 # every key optional
//! min_cycle_seconds = 120.0
//! debounce_window = 3         # odd; 1 disables debouncing
//!
//! [io]                        # every key optional
//! inputs = ["stream.jsonl"]
//! out_dir = "out"
//! max_malformed_fraction = 0.01
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::analytics::DEFAULT_MIN_CYCLE_SECONDS;
use crate::ingest::{ShiftCalendar, StationConfig, DEFAULT_MAX_MALFORMED};
use crate::tracker::TrackerParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsParams {
    pub min_cycle_seconds: f64,
    pub debounce_window: usize,
}

impl Default for AnalyticsParams {
    fn default() -> Self {
        AnalyticsParams {
            min_cycle_seconds: DEFAULT_MIN_CYCLE_SECONDS,
            debounce_window: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub inputs: Vec<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub max_malformed_fraction: f64,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            inputs: Vec::new(),
            out_dir: None,
            max_malformed_fraction: DEFAULT_MAX_MALFORMED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub stations: Vec<StationConfig>,
    pub calendar: ShiftCalendar,
    #[serde(default)]
    pub tracker: TrackerParams,
    #[serde(default)]
    pub analytics: AnalyticsParams,
    #[serde(default)]
    pub io: IoConfig,
}

impl RunConfig {
    pub fn new(stations: Vec<StationConfig>, calendar: ShiftCalendar) -> Self {
        RunConfig {
            stations,
            calendar,
            tracker: TrackerParams::default(),
            analytics: AnalyticsParams::default(),
            io: IoConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; relative `io` paths resolve against its directory.
    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            for p in &mut cfg.io.inputs {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if let Some(o) = &mut cfg.io.out_dir {
                if o.is_relative() {
                    *o = base.join(&*o);
                }
            }
        }
        Ok((cfg, config_hash(&text)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.stations.is_empty() {
            return bad("no stations configured".into());
        }
        let mut ids = HashSet::new();
        for s in &self.stations {
            s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !ids.insert(s.station_id.as_str()) {
                return bad(format!("duplicate station_id {:?}", s.station_id));
            }
        }
        self.calendar
            .resolve()
            .map_err(|e| ConfigError::Invalid(format!("calendar: {e}")))?;
        self.tracker
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let w = self.analytics.debounce_window;
        if w == 0 || w % 2 == 0 {
            return bad(format!("analytics.debounce_window must be odd, got {w}"));
        }
        if !(self.analytics.min_cycle_seconds >= 0.0) {
            return bad("analytics.min_cycle_seconds must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.io.max_malformed_fraction) {
            return bad("io.max_malformed_fraction must lie in [0, 1]".into());
        }
        let mut paths = HashSet::new();
        for p in self.io.inputs.iter().chain(&self.io.out_dir) {
            if !paths.insert(p) {
                return bad(format!("path {} is listed twice", p.display()));
            }
        }
        Ok(())
    }

    pub fn station(&self, id: &str) -> Option<&StationConfig> {
        self.stations.iter().find(|s| s.station_id == id)
    }
}

/// Hex SHA-256 of the config text, recorded in run manifests.
pub fn config_hash(text: &str) -> String {
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"
[[stations]]
station_id = "C"

[[stations]]
station_id = "D"
frame_rate = 1.0
roi = [[0, 0], [640, 0], [640, 720], [0, 720]]

[calendar]
shift_start = "07:00:00"
shift_end = "15:30:00"
breaks = [["09:00:00", "09:25:00"]]
timezone = "America/Toronto"

[analytics]
debounce_window = 5

[io]
inputs = ["a.jsonl", "b.jsonl"]
"#;

    #[test]
    fn parses_with_defaults() {
        let c = RunConfig::from_toml_str(DOC).unwrap();
        assert_eq!(c.stations.len(), 2);
        assert_eq!(c.stations[0].frame_rate, 0.3);
        assert_eq!(c.analytics.min_cycle_seconds, 120.0);
        assert_eq!(c.analytics.debounce_window, 5);
        assert_eq!(c.tracker, TrackerParams::default());
        assert_eq!(RunConfig::from_toml_str(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn duplicate_station_rejected() {
        let doc = DOC.replace("station_id = \"D\"", "station_id = \"C\"");
        assert!(matches!(RunConfig::from_toml_str(&doc), Err(ConfigError::Invalid(m)) if m.contains("duplicate")));
    }

    #[test]
    fn repeated_path_rejected() {
        let doc = DOC.replace("b.jsonl", "a.jsonl");
        assert!(matches!(RunConfig::from_toml_str(&doc), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn even_window_and_unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str(&DOC.replace("debounce_window = 5", "debounce_window = 4")).is_err());
        assert!(matches!(
            RunConfig::from_toml_str(&DOC.replace("[analytics]", "[analytics]\nbogus = 1")),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
