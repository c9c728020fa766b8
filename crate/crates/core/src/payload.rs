//! Emulated satellite payload: relay modes, frequency plan and gain chain.
//!
//! Everything runs at complex baseband. Up/down conversion between L band and
//! Ka band is bookkeeping on the plan; it never touches samples. Doppler is
//! still computed at the physical Ka carrier.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::orbit::PassProfile;
use crate::ue_sync::{CfoHypothesisBank, Correlator, DEFAULT_THRESHOLD};
use crate::waveform::{apply_dynamic_impairments_window, synthesize_pss, IqBuffer};
use crate::{Error, Result};

/// Subcarrier spacing assumed by the regenerative detector unless overridden.
pub const DEFAULT_SCS_HZ: f64 = 15e3;

const BUC_OUTPUT_HZ: (f64, f64) = (29e9, 31e9);
const LNB_INPUT_HZ: (f64, f64) = (19.2e9, 20.2e9);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencyPlan {
    pub l_band_center_hz: f64,
    pub ka_up_center_hz: f64,
    pub ka_down_center_hz: f64,
    pub dl_slot_hz: f64,
    pub ul_slot_hz: f64,
    pub guard_hz: f64,
    pub sample_rate_hz: f64,
    /// Slot centre offsets from the plan centre. `None` places the two slots
    /// symmetrically with the guard band between them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dl_offset_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ul_offset_hz: Option<f64>,
}

impl Default for FrequencyPlan {
    fn default() -> Self {
        Self {
            l_band_center_hz: 1.48826e9,
            ka_up_center_hz: 29.48826e9,
            ka_down_center_hz: 19.73826e9,
            dl_slot_hz: 5e6,
            ul_slot_hz: 5e6,
            guard_hz: 1e6,
            sample_rate_hz: 11e6,
            dl_offset_hz: None,
            ul_offset_hz: None,
        }
    }
}

impl FrequencyPlan {
    pub fn occupancy_hz(&self) -> f64 {
        self.dl_slot_hz + self.guard_hz + self.ul_slot_hz
    }

    /// Distance between the two slot centres when placed edge to edge around
    /// the guard band.
    pub fn slot_separation_hz(&self) -> f64 {
        (self.dl_slot_hz + self.ul_slot_hz) / 2.0 + self.guard_hz
    }

    pub fn dl_offset_hz(&self) -> f64 {
        self.dl_offset_hz
            .unwrap_or(-self.slot_separation_hz() / 2.0)
    }

    pub fn ul_offset_hz(&self) -> f64 {
        self.ul_offset_hz.unwrap_or(self.slot_separation_hz() / 2.0)
    }

    /// Ka-band centre of the downlink slot (satellite to UE).
    pub fn dl_carrier_hz(&self) -> f64 {
        self.ka_down_center_hz + self.dl_offset_hz()
    }

    /// Ka-band centre of the uplink slot (UE to satellite).
    pub fn ul_carrier_hz(&self) -> f64 {
        self.ka_up_center_hz + self.ul_offset_hz()
    }

    pub fn validate(&self, range_check: bool) -> std::result::Result<(), Vec<PlanViolation>> {
        validate_plan(self, range_check)
    }
}

/// One failed plan check, suitable for machine consumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanViolation {
    pub code: ViolationCode,
    pub field: String,
    pub limit: String,
    pub actual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    NonPositive,
    OccupancyExceedsSampleRate,
    SlotOutsideBand,
    BucOutputOutOfRange,
    LnbInputOutOfRange,
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}: {} = {} (limit {})",
            self.code, self.field, self.actual, self.limit
        )
    }
}

/// Checks positivity and occupancy, and with `range_check` also that the Ka
/// centres fall within the converters' ranges (BUC output 29-31 GHz, LNB input
/// 19.2-20.2 GHz). Returns every violation found.
pub fn validate_plan(
    plan: &FrequencyPlan,
    range_check: bool,
) -> std::result::Result<(), Vec<PlanViolation>> {
    let mut out = Vec::new();
    let positive = [
        ("l_band_center_hz", plan.l_band_center_hz),
        ("ka_up_center_hz", plan.ka_up_center_hz),
        ("ka_down_center_hz", plan.ka_down_center_hz),
        ("dl_slot_hz", plan.dl_slot_hz),
        ("ul_slot_hz", plan.ul_slot_hz),
        ("guard_hz", plan.guard_hz),
        ("sample_rate_hz", plan.sample_rate_hz),
    ];
    for (field, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            out.push(PlanViolation {
                code: ViolationCode::NonPositive,
                field: field.into(),
                limit: "> 0".into(),
                actual: v,
            });
        }
    }
    if plan.occupancy_hz() > plan.sample_rate_hz {
        out.push(PlanViolation {
            code: ViolationCode::OccupancyExceedsSampleRate,
            field: "sample_rate_hz".into(),
            limit: format!(">= {}", plan.occupancy_hz()),
            actual: plan.sample_rate_hz,
        });
    }
    let nyquist = plan.sample_rate_hz / 2.0;
    let slots = [
        ("dl_offset_hz", plan.dl_offset_hz(), plan.dl_slot_hz),
        ("ul_offset_hz", plan.ul_offset_hz(), plan.ul_slot_hz),
    ];
    for (field, offset, width) in slots {
        let edge = offset.abs() + width / 2.0;
        if !(edge <= nyquist * (1.0 + 1e-12)) {
            out.push(PlanViolation {
                code: ViolationCode::SlotOutsideBand,
                field: field.into(),
                limit: format!("|offset| + slot/2 <= {nyquist}"),
                actual: offset,
            });
        }
    }
    if range_check {
        let ranges = [
            (
                ViolationCode::BucOutputOutOfRange,
                "ka_up_center_hz",
                plan.ka_up_center_hz,
                BUC_OUTPUT_HZ,
            ),
            (
                ViolationCode::LnbInputOutOfRange,
                "ka_down_center_hz",
                plan.ka_down_center_hz,
                LNB_INPUT_HZ,
            ),
        ];
        for (code, field, v, (lo, hi)) in ranges {
            if !(lo..=hi).contains(&v) {
                out.push(PlanViolation {
                    code,
                    field: field.into(),
                    limit: format!("[{lo}, {hi}]"),
                    actual: v,
                });
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PayloadMode {
    #[default]
    Transparent,
    Regenerative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainStage {
    pub name: String,
    pub gain_db: f64,
}

impl GainStage {
    pub fn new(name: impl Into<String>, gain_db: f64) -> Self {
        Self {
            name: name.into(),
            gain_db,
        }
    }
}

pub fn compose_gain_chain(stages: &[GainStage]) -> f64 {
    stages.iter().map(|s| s.gain_db).sum()
}

fn chain_amplitude(stages: &[GainStage]) -> Result<f64> {
    if let Some(bad) = stages.iter().find(|s| !s.gain_db.is_finite()) {
        return Err(Error::domain(format!(
            "gain stage {:?} has non-finite gain",
            bad.name
        )));
    }
    Ok(10f64.powf(compose_gain_chain(stages) / 20.0))
}

/// A configured payload. Holds no state that depends on earlier relays; the
/// regenerative references are memoised per sample rate.
#[derive(Debug)]
pub struct Payload {
    mode: PayloadMode,
    plan: FrequencyPlan,
    chain: Vec<GainStage>,
    scs_hz: f64,
    references: Mutex<HashMap<u64, Arc<Vec<IqBuffer>>>>,
}

impl Payload {
    pub fn new(mode: PayloadMode, plan: FrequencyPlan, chain: Vec<GainStage>) -> Result<Self> {
        if let Err(v) = validate_plan(&plan, false) {
            let list: Vec<String> = v.iter().map(|v| v.to_string()).collect();
            return Err(Error::Config(format!(
                "invalid frequency plan: {}",
                list.join("; ")
            )));
        }
        chain_amplitude(&chain)?;
        Ok(Self {
            mode,
            plan,
            chain,
            scs_hz: DEFAULT_SCS_HZ,
            references: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_scs(mut self, scs_hz: f64) -> Self {
        self.scs_hz = scs_hz;
        self
    }

    pub fn mode(&self) -> PayloadMode {
        self.mode
    }

    pub fn plan(&self) -> &FrequencyPlan {
        &self.plan
    }

    pub fn chain(&self) -> &[GainStage] {
        &self.chain
    }

    pub fn total_gain_db(&self) -> f64 {
        compose_gain_chain(&self.chain)
    }

    fn references(&self, sample_rate_hz: f64) -> Result<Arc<Vec<IqBuffer>>> {
        let mut cache = self.references.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(r) = cache.get(&sample_rate_hz.to_bits()) {
            return Ok(r.clone());
        }
        let refs = (0..3)
            .map(|nid2| synthesize_pss(nid2, self.scs_hz, sample_rate_hz))
            .collect::<Result<Vec<_>>>()?;
        let refs = Arc::new(refs);
        cache.insert(sample_rate_hz.to_bits(), refs.clone());
        Ok(refs)
    }

    /// Regenerated frame: a clean, unit-scale PSS of the detected identity at
    /// the detected position, zeros elsewhere.
    pub fn regenerate(&self, buf: &IqBuffer) -> Result<IqBuffer> {
        let refs = self.references(buf.sample_rate_hz())?;
        let views: Vec<&[Complex64]> = refs.iter().map(|r| r.samples()).collect();
        let bank = CfoHypothesisBank::zero_only(self.scs_hz);
        let peak = Correlator::new()
            .search(buf, &views, &bank)
            .map_err(|e| Error::RelayFailure(e.to_string()))?;
        if peak.metric < DEFAULT_THRESHOLD {
            return Err(Error::RelayFailure(format!(
                "no PSS found (best metric {:.4})",
                peak.metric
            )));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); buf.len()];
        out[peak.lag..peak.lag + views[peak.reference].len()]
            .copy_from_slice(views[peak.reference]);
        Ok(IqBuffer::from_parts(out, buf.sample_rate_hz()))
    }

    /// Relay over the input's own time span (input and output start at `t0`).
    pub fn relay(
        &self,
        buf: &IqBuffer,
        profile: &PassProfile,
        carrier_hz: f64,
        t0: f64,
    ) -> Result<IqBuffer> {
        self.relay_window(buf, t0, profile, carrier_hz, t0, buf.len())
    }

    /// Relay with an output window `[output_start, output_start + len/fs)`,
    /// which lets the caller observe the delayed signal without padding the
    /// input.
    pub fn relay_window(
        &self,
        buf: &IqBuffer,
        input_start_s: f64,
        profile: &PassProfile,
        carrier_hz: f64,
        output_start_s: f64,
        output_len: usize,
    ) -> Result<IqBuffer> {
        let amplitude = chain_amplitude(&self.chain)?;
        let regenerated;
        let source = match self.mode {
            PayloadMode::Transparent => buf,
            PayloadMode::Regenerative => {
                regenerated = self.regenerate(buf)?;
                &regenerated
            }
        };
        let out = apply_dynamic_impairments_window(
            source,
            input_start_s,
            profile,
            carrier_hz,
            output_start_s,
            output_len,
        )?;
        Ok(if amplitude == 1.0 {
            out
        } else {
            out.scaled(amplitude)
        })
    }
}

/// One-shot relay. The regenerative detector assumes [`DEFAULT_SCS_HZ`]; use
/// [`Payload::with_scs`] for other numerologies.
pub fn relay(
    buf: &IqBuffer,
    mode: PayloadMode,
    plan: &FrequencyPlan,
    profile: &PassProfile,
    carrier_hz: f64,
    t0: f64,
    chain: &[GainStage],
) -> Result<IqBuffer> {
    Payload::new(mode, *plan, chain.to_vec())?.relay(buf, profile, carrier_hz, t0)
}
