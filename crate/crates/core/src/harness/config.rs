//! Scenario configuration, read from TOML.
//!
//! ```toml
//! id = "leo600"
//! seeds = [1]
//! snr_db = 10.0          # omit for a noiseless run
//! duration_s = 60.0      # omit to simulate the whole visible pass
//!
//! [orbit]
//! altitude_m = 600e3
//! max_elevation_rad = 1.3962634015954636
//! min_elevation_rad = 0.17453292519943295
//!
//! [ssb]
//! scs_hz = 15e3
//! fft_size = 256
//! periodicity_ms = 20.0
//!
//! [sib19]
//! cadence_ms = 160.0
//! truthful = true
//!
//! [payload]
//! mode = "transparent"
//! chain = [{ name = "BUC", gain_db = 55.0 }]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::orbit::{GroundStation, OrbitGeometry, Pass, EARTH_MU_M3S2, EARTH_RADIUS_M};
use crate::payload::{validate_plan, FrequencyPlan, GainStage, PayloadMode};
use crate::ue_sync::DEFAULT_THRESHOLD;
use crate::waveform::SsbConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_id")]
    pub id: String,
    pub orbit: OrbitSection,
    #[serde(default)]
    pub ssb: SsbConfig,
    #[serde(default)]
    pub sib19: Sib19Section,
    #[serde(default)]
    pub plan: FrequencyPlan,
    #[serde(default)]
    pub payload: PayloadSection,
    #[serde(default)]
    pub ue: UeSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    /// Spacing of the sampled pass profile.
    #[serde(default = "default_profile_dt")]
    pub profile_dt_s: f64,
    #[serde(default)]
    pub acquire: AcquireSection,
}

fn default_id() -> String {
    "scenario".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_profile_dt() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSection {
    pub altitude_m: f64,
    pub max_elevation_rad: f64,
    #[serde(default = "default_min_elevation")]
    pub min_elevation_rad: f64,
}

fn default_min_elevation() -> f64 {
    10f64.to_radians()
}

impl OrbitSection {
    pub fn geometry(&self) -> OrbitGeometry {
        OrbitGeometry {
            altitude_m: self.altitude_m,
            max_elevation_rad: self.max_elevation_rad,
            earth_radius_m: EARTH_RADIUS_M,
            mu_m3s2: EARTH_MU_M3S2,
        }
    }

    pub fn pass(&self) -> Result<Pass> {
        Pass::new(self.geometry(), GroundStation::reference(EARTH_RADIUS_M))
    }
}

/// SIB19 broadcast. With `truthful = false` the error terms are added to the
/// values the network advertises.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sib19Section {
    pub cadence_ms: f64,
    /// Defaults to the largest round trip of the simulated span, rounded up
    /// to whole milliseconds, plus 1 ms.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_offset_ms: Option<f64>,
    pub truthful: bool,
    pub dl_doppler_error_hz: f64,
    pub ul_doppler_error_hz: f64,
    pub delay_error_s: f64,
}

impl Default for Sib19Section {
    fn default() -> Self {
        Self {
            cadence_ms: 160.0,
            k_offset_ms: None,
            truthful: true,
            dl_doppler_error_hz: 0.0,
            ul_doppler_error_hz: 0.0,
            delay_error_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PayloadSection {
    pub mode: PayloadMode,
    pub chain: Vec<GainStage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct UeSection {
    /// UE oscillator error. Raises received frequencies and lowers
    /// transmitted ones by this amount.
    pub lo_offset_hz: f64,
}

/// Defaults for the `acquire` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquireSection {
    pub cfo_grid_hz: Vec<f64>,
    pub snr_grid_db: Vec<f64>,
    pub trials_per_point: usize,
    /// Half-width of the full bank. Defaults to 2.5 subcarrier spacings.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bank_max_cfo_hz: Option<f64>,
    pub threshold: f64,
}

impl Default for AcquireSection {
    fn default() -> Self {
        Self {
            cfo_grid_hz: vec![0.0, 15e3, 30e3],
            snr_grid_db: vec![0.0, 20.0],
            trials_per_point: 50,
            bank_max_cfo_hz: None,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl ScenarioConfig {
    /// Minimal valid scenario around the given orbit.
    pub fn new(orbit: OrbitSection) -> Self {
        Self {
            id: default_id(),
            orbit,
            ssb: SsbConfig::default(),
            sib19: Sib19Section::default(),
            plan: FrequencyPlan::default(),
            payload: PayloadSection::default(),
            ue: UeSection::default(),
            snr_db: None,
            seeds: default_seeds(),
            duration_s: None,
            profile_dt_s: default_profile_dt(),
            acquire: AcquireSection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn periodicity_s(&self) -> f64 {
        self.ssb.periodicity_ms * 1e-3
    }

    /// SSB periods between SIB19 broadcasts.
    pub fn sib19_every(&self) -> usize {
        (self.sib19.cadence_ms / self.ssb.periodicity_ms).round() as usize
    }

    pub fn bank_max_cfo_hz(&self) -> f64 {
        self.acquire
            .bank_max_cfo_hz
            .unwrap_or(2.5 * self.ssb.scs_hz)
    }

    pub fn first_seed(&self) -> u64 {
        self.seeds.first().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.orbit
            .geometry()
            .validate()
            .map_err(|e| Error::Config(format!("orbit: {e}")))?;
        let o = &self.orbit;
        if !(o.min_elevation_rad >= 0.0 && o.min_elevation_rad < o.max_elevation_rad) {
            return bad(format!(
                "orbit.min_elevation_rad must lie in [0, max_elevation_rad), got {}",
                o.min_elevation_rad
            ));
        }
        self.ssb
            .validate()
            .map_err(|e| Error::Config(format!("ssb: {e}")))?;
        if let Err(v) = validate_plan(&self.plan, false) {
            let list: Vec<String> = v.iter().map(|v| v.to_string()).collect();
            return bad(format!("plan: {}", list.join("; ")));
        }
        let s = &self.sib19;
        let ratio = s.cadence_ms / self.ssb.periodicity_ms;
        if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
            return bad(format!(
                "sib19.cadence_ms ({}) must be a positive multiple of ssb.periodicity_ms ({})",
                s.cadence_ms, self.ssb.periodicity_ms
            ));
        }
        if let Some(k) = s.k_offset_ms {
            if !(k.is_finite() && k > 0.0) {
                return bad(format!("sib19.k_offset_ms must be positive, got {k}"));
            }
        }
        let errors = [
            s.dl_doppler_error_hz,
            s.ul_doppler_error_hz,
            s.delay_error_s,
        ];
        if errors.iter().any(|v| !v.is_finite()) {
            return bad("sib19 error terms must be finite".into());
        }
        if s.truthful && errors.iter().any(|&v| v != 0.0) {
            return bad("sib19 error terms require truthful = false".into());
        }
        if let Some(g) = self.payload.chain.iter().find(|g| !g.gain_db.is_finite()) {
            return bad(format!("payload gain stage {:?} is not finite", g.name));
        }
        if !self.ue.lo_offset_hz.is_finite() {
            return bad("ue.lo_offset_hz must be finite".into());
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return bad(format!("snr_db must be finite, got {snr}"));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if let Some(d) = self.duration_s {
            if !(d.is_finite() && d > 0.0) {
                return bad(format!("duration_s must be positive, got {d}"));
            }
        }
        if !(self.profile_dt_s.is_finite() && self.profile_dt_s > 0.0) {
            return bad("profile_dt_s must be positive".into());
        }
        let a = &self.acquire;
        if a.trials_per_point == 0 {
            return bad("acquire.trials_per_point must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&a.threshold) {
            return bad(format!(
                "acquire.threshold must lie in [0, 1], got {}",
                a.threshold
            ));
        }
        if !(self.bank_max_cfo_hz().is_finite() && self.bank_max_cfo_hz() >= 0.0) {
            return bad("acquire.bank_max_cfo_hz must be >= 0".into());
        }
        if a.cfo_grid_hz
            .iter()
            .chain(&a.snr_grid_db)
            .any(|v| !v.is_finite())
        {
            return bad("acquire grids must be finite".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [orbit]
        altitude_m = 600e3
        max_elevation_rad = 1.2
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.ssb.periodicity_ms, 20.0);
        assert_eq!(cfg.sib19.cadence_ms, 160.0);
        assert_eq!(cfg.sib19_every(), 8);
        assert_eq!(cfg.plan, FrequencyPlan::default());
        assert_eq!(cfg.payload.mode, PayloadMode::Transparent);
        assert_eq!(cfg.snr_db, None);
        assert_eq!(cfg.bank_max_cfo_hz(), 37.5e3);
        assert!((cfg.orbit.min_elevation_rad - 10f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        cfg.payload.chain = vec![GainStage::new("BUC", 55.0), GainStage::new("pad", -30.0)];
        cfg.snr_db = Some(3.5);
        cfg.sib19.k_offset_ms = Some(14.0);
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        let cases = [
            "[orbit]\naltitude_m = -1.0\nmax_elevation_rad = 1.0\n",
            "[orbit]\naltitude_m = 6e5\nmax_elevation_rad = 1.0\nmin_elevation_rad = 1.1\n",
            "seeds = []\n[orbit]\naltitude_m = 6e5\nmax_elevation_rad = 1.0\n",
            "[orbit]\naltitude_m = 6e5\nmax_elevation_rad = 1.0\n[sib19]\ncadence_ms = 30.0\n",
            "[orbit]\naltitude_m = 6e5\nmax_elevation_rad = 1.0\n[sib19]\ndl_doppler_error_hz = 5.0\n",
            "[orbit]\naltitude_m = 6e5\nmax_elevation_rad = 1.0\n[plan]\nsample_rate_hz = 10e6\n",
            "[orbit]\naltitude_m = 6e5\nmax_elevation_rad = 1.0\nunknown_key = 1\n",
        ];
        for text in cases {
            let err = ScenarioConfig::from_toml_str(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
    }

    #[test]
    fn untruthful_errors_accepted() {
        let text = format!("{MINIMAL}\n[sib19]\ntruthful = false\nul_doppler_error_hz = 50.0\n");
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.sib19.ul_doppler_error_hz, 50.0);
    }
}
