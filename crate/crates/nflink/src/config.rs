//! Scenario configuration files.
//!
//! Every key is optional; omitted keys take the reference setup (16-element
//! subarrays at 60 GHz, four RF chains, a 20 cm AP, stations 0.8 m away in a
//! 5 m x 5 m x 3 m room). `m_pilots` and `snr_db` accept a scalar or a list.

use std::fs;
use std::path::{Path, PathBuf};

use nflink_core::channel::RoomSpec;
use nflink_core::link_eval::{Method, Scenario};
use nflink_core::C64;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoomConfig {
    pub width_m: f64,
    pub depth_m: f64,
    pub height_m: f64,
    pub ap_height_m: f64,
    /// Real reflection coefficients per surface.
    pub ceiling: f64,
    pub wall_x0: f64,
    pub wall_x1: f64,
    pub floor: f64,
    pub floor_reflections: bool,
}

impl Default for RoomConfig {
    fn default() -> Self {
        RoomConfig {
            width_m: 5.0,
            depth_m: 5.0,
            height_m: 3.0,
            ap_height_m: 1.5,
            ceiling: -0.6,
            wall_x0: -0.6,
            wall_x1: -0.6,
            floor: -0.6,
            floor_reflections: false,
        }
    }
}

impl RoomConfig {
    pub fn to_room(&self) -> RoomSpec {
        let c = |v: f64| C64::new(v, 0.0);
        RoomSpec {
            width: self.width_m,
            depth: self.depth_m,
            height: self.height_m,
            ap_center: [self.width_m / 2.0, self.depth_m, self.ap_height_m],
            ceiling: c(self.ceiling),
            wall_x0: c(self.wall_x0),
            wall_x1: c(self.wall_x1),
            floor: c(self.floor),
            floor_reflections_enabled: self.floor_reflections,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n: usize,
    pub n_rf: usize,
    pub wavelength_m: f64,
    pub l_ap_m: f64,
    pub l_sta_m: f64,
    pub d_m: f64,
    pub q_bits: u32,
    pub zc_root: usize,
    pub m_pilots: OneOrMany<usize>,
    pub snr_db: OneOrMany<f64>,
    pub trials: usize,
    pub d_min_m: f64,
    pub d_max_m: f64,
    pub grid_deg: f64,
    pub delta_e: f64,
    pub dcs_passes: usize,
    /// Distance samples per geometry-factor row.
    pub factor_samples: usize,
    pub room: RoomConfig,
    pub methods: Vec<String>,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Distance sweep of the energy-metric experiment.
    pub energy_d_min_m: f64,
    pub energy_d_max_m: f64,
    pub energy_points: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n: 16,
            n_rf: 4,
            wavelength_m: 0.005,
            l_ap_m: 0.20,
            l_sta_m: 0.04,
            d_m: 0.8,
            q_bits: 2,
            zc_root: 9,
            m_pilots: OneOrMany::One(16),
            snr_db: OneOrMany::One(10.0),
            trials: 500,
            d_min_m: 0.3,
            d_max_m: 1.3,
            grid_deg: 1.0,
            delta_e: 0.9,
            dcs_passes: 12,
            factor_samples: 2000,
            room: RoomConfig::default(),
            methods: Method::ALL.iter().map(|m| m.as_str().to_string()).collect(),
            master_seed: 1,
            output_dir: PathBuf::from("out"),
            energy_d_min_m: 0.2,
            energy_d_max_m: 3.0,
            energy_points: 30,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.methods
            .iter()
            .map(|m| m.parse().map_err(|_| CliError::invalid("methods", format!("unknown method `{m}`"))))
            .collect()
    }

    pub fn m_values(&self) -> Vec<usize> {
        self.m_pilots.values()
    }

    pub fn snr_values(&self) -> Vec<f64> {
        self.snr_db.values()
    }

    pub fn validate(&self) -> Result<()> {
        let positive: [(&'static str, f64); 12] = [
            ("wavelength_m", self.wavelength_m),
            ("l_ap_m", self.l_ap_m),
            ("l_sta_m", self.l_sta_m),
            ("d_m", self.d_m),
            ("d_min_m", self.d_min_m),
            ("d_max_m", self.d_max_m),
            ("grid_deg", self.grid_deg),
            ("energy_d_min_m", self.energy_d_min_m),
            ("energy_d_max_m", self.energy_d_max_m),
            ("room.width_m", self.room.width_m),
            ("room.depth_m", self.room.depth_m),
            ("room.height_m", self.room.height_m),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::invalid(field, format!("must be positive, got {v}")));
            }
        }
        if self.n < 2 {
            return Err(CliError::invalid("n", "need at least two antennas per subarray"));
        }
        if self.n_rf < 2 {
            return Err(CliError::invalid("n_rf", "need at least two RF chains"));
        }
        if self.q_bits == 0 || self.q_bits > 16 {
            return Err(CliError::invalid("q_bits", "must lie in 1..=16"));
        }
        let ms = self.m_values();
        if ms.is_empty() {
            return Err(CliError::invalid("m_pilots", "needs at least one value"));
        }
        if let Some(m) = ms.iter().find(|&&m| m == 0 || m > self.n * self.n) {
            return Err(CliError::invalid("m_pilots", format!("{m} outside [1, n^2 = {}]", self.n * self.n)));
        }
        let snrs = self.snr_values();
        if snrs.is_empty() || snrs.iter().any(|s| !s.is_finite()) {
            return Err(CliError::invalid("snr_db", "needs finite values"));
        }
        if self.d_min_m >= self.d_max_m {
            return Err(CliError::invalid("d_min_m", "must be below d_max_m"));
        }
        if self.energy_d_min_m > self.energy_d_max_m || self.energy_points == 0 {
            return Err(CliError::invalid("energy_points", "sweep needs a nonempty increasing range"));
        }
        if !(self.delta_e > 0.0 && self.delta_e <= 1.0) {
            return Err(CliError::invalid("delta_e", "must lie in (0, 1]"));
        }
        if self.dcs_passes == 0 {
            return Err(CliError::invalid("dcs_passes", "must be positive"));
        }
        if self.factor_samples == 0 {
            return Err(CliError::invalid("factor_samples", "must be positive"));
        }
        if self.n_rf > 9 {
            return Err(CliError::invalid("n_rf", "only nine distinct station bearings are available"));
        }
        let room = self.room.to_room();
        room.validate().map_err(|e| CliError::invalid("room", e.to_string()))?;
        if self.methods.is_empty() {
            return Err(CliError::invalid("methods", "needs at least one method"));
        }
        self.methods()?;
        Ok(())
    }

    /// Core scenario at one operating point.
    pub fn scenario(&self, m_pilots: usize, snr_db: f64) -> Scenario {
        Scenario {
            n: self.n,
            n_rf: self.n_rf,
            wavelength: self.wavelength_m,
            l_ap: self.l_ap_m,
            l_sta: self.l_sta_m,
            d: self.d_m,
            q_bits: self.q_bits,
            zc_root: self.zc_root,
            m_pilots,
            snr_db,
            d_min: self.d_min_m,
            d_max: self.d_max_m,
            grid_deg: self.grid_deg,
            delta_e: self.delta_e,
            dcs_passes: self.dcs_passes,
            factor_samples: self.factor_samples,
            room: self.room.to_room(),
            ..Scenario::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_setup() {
        let cfg = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        let s = cfg.scenario(16, 10.0);
        assert_eq!(s, Scenario::default());
    }

    #[test]
    fn rejects_too_many_pilots_and_unknown_keys() {
        let err = ScenarioConfig::from_toml("m_pilots = 300").unwrap_err();
        assert!(err.to_string().contains("m_pilots"), "{err}");
        let err = ScenarioConfig::from_toml("bogus_key = 1").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
        let err = ScenarioConfig::from_toml("[room]\nwidht_m = 4").unwrap_err();
        assert!(err.to_string().contains("widht_m"), "{err}");
        let err = ScenarioConfig::from_toml("methods = []").unwrap_err();
        assert!(err.to_string().contains("methods"), "{err}");
        let err = ScenarioConfig::from_toml("l_ap_m = -1.0").unwrap_err();
        assert!(err.to_string().contains("l_ap_m"), "{err}");
    }

    #[test]
    fn scalar_or_list_sweeps() {
        let cfg = ScenarioConfig::from_toml("snr_db = [0, 5, 10, 15, 20]\nm_pilots = 24").unwrap();
        assert_eq!(cfg.snr_values(), vec![0.0, 5.0, 10.0, 15.0, 20.0]);
        assert_eq!(cfg.m_values(), vec![24]);
    }

    #[test]
    fn echo_parses_back_to_the_same_config() {
        let cfg = ScenarioConfig::from_toml("snr_db = [0.0, 15.0]\nmethods = [\"gmp\", \"amp\"]\n[room]\nfloor_reflections = true").unwrap();
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
