//! UE-side compensation state.
//!
//! Two independent procedures share one state record:
//!
//! * Delay: the UE always pre-compensates a fixed `k_offset` (the largest
//!   round-trip delay in the cell). On every SIB19 it sets an uplink buffer of
//!   `k_offset - d`, so that buffer plus actual round trip `d` lands every
//!   uplink burst `k_offset` after the downlink reference at the gNB.
//! * Doppler: each SSB refreshes the downlink CFO estimate (satellite Doppler
//!   plus local-oscillator error). Each SIB19 supplies the network's view of
//!   the downlink and uplink satellite Doppler, and the uplink correction is
//!   `f_ul = f_dl_ssb - f_dl_sib19 - f_ul_sib19`.

use serde::{Deserialize, Serialize};

use crate::ue_sync::DetectionResult;
use crate::waveform::{apply_cfo, IqBuffer};
use crate::{Error, Result};

/// Delays are held on a dyadic grid of 2^-40 s (about 0.9 ps). On that grid
/// the subtraction `k_offset - d` and the sum `buffer + d` are exact.
const TIME_QUANTUM_INV: f64 = (1u64 << 40) as f64;

/// Rounds a time to the grid used for buffer arithmetic.
pub fn quantize_time(t: f64) -> f64 {
    (t * TIME_QUANTUM_INV).round() / TIME_QUANTUM_INV
}

/// NTN system information relevant to compensation. Doppler values are
/// positive when the received frequency is raised (satellite approaching).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sib19 {
    pub k_offset_s: f64,
    pub dl_doppler_hz: f64,
    pub ul_doppler_hz: f64,
    pub issued_at_s: f64,
}

impl Sib19 {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_offset_s.is_finite() && self.k_offset_s > 0.0) {
            return Err(Error::domain(format!(
                "k_offset must be positive, got {}",
                self.k_offset_s
            )));
        }
        if !(self.dl_doppler_hz.is_finite() && self.ul_doppler_hz.is_finite()) {
            return Err(Error::domain("SIB19 Doppler values must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompensationState {
    pub buffer_delay_s: f64,
    pub k_offset_s: f64,
    /// Round-trip delay used at the last SIB19.
    pub delay_d_s: f64,
    pub dl_doppler_ssb_hz: f64,
    pub dl_doppler_sib19_hz: f64,
    pub ul_doppler_sib19_hz: f64,
    /// Uplink correction derived at the last update.
    pub ul_doppler_hz: f64,
    pub last_ssb_at_s: Option<f64>,
    pub last_sib19_at_s: Option<f64>,
}

impl CompensationState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_ready(&self) -> bool {
        self.last_ssb_at_s.is_some() && self.last_sib19_at_s.is_some()
    }

    /// Records the SSB-derived downlink CFO. Touches nothing else.
    pub fn on_ssb(&mut self, det: &DetectionResult, now_s: f64) {
        self.dl_doppler_ssb_hz = det.total_cfo_hz;
        self.last_ssb_at_s = Some(now_s);
        self.refresh_ul_doppler();
    }

    /// Accepts a SIB19 and resizes the uplink buffer for the round-trip delay
    /// `current_delay_d_s`. On error the state is left untouched.
    pub fn on_sib19(&mut self, sib: &Sib19, current_delay_d_s: f64, now_s: f64) -> Result<()> {
        sib.validate()?;
        if !(current_delay_d_s.is_finite() && current_delay_d_s >= 0.0) {
            return Err(Error::domain(format!(
                "round-trip delay must be >= 0, got {current_delay_d_s}"
            )));
        }
        let k = quantize_time(sib.k_offset_s);
        let d = quantize_time(current_delay_d_s);
        if d > k {
            return Err(Error::CompensationInfeasible {
                delay_s: current_delay_d_s,
                k_offset_s: sib.k_offset_s,
            });
        }
        self.k_offset_s = k;
        self.delay_d_s = d;
        self.buffer_delay_s = k - d;
        self.dl_doppler_sib19_hz = sib.dl_doppler_hz;
        self.ul_doppler_sib19_hz = sib.ul_doppler_hz;
        self.last_sib19_at_s = Some(now_s);
        self.refresh_ul_doppler();
        Ok(())
    }

    fn refresh_ul_doppler(&mut self) {
        if self.is_ready() {
            self.ul_doppler_hz = combine_doppler(
                self.dl_doppler_ssb_hz,
                self.dl_doppler_sib19_hz,
                self.ul_doppler_sib19_hz,
            );
        }
    }

    /// Total uplink Doppler correction from the stored terms.
    pub fn uplink_doppler(&self) -> Result<f64> {
        if self.last_ssb_at_s.is_none() {
            return Err(Error::NotReady("no SSB processed yet"));
        }
        if self.last_sib19_at_s.is_none() {
            return Err(Error::NotReady("no SIB19 processed yet"));
        }
        Ok(combine_doppler(
            self.dl_doppler_ssb_hz,
            self.dl_doppler_sib19_hz,
            self.ul_doppler_sib19_hz,
        ))
    }

    /// Buffer delay in whole samples at `sample_rate_hz`.
    pub fn buffer_delay_samples(&self, sample_rate_hz: f64) -> usize {
        (self.buffer_delay_s * sample_rate_hz).round() as usize
    }

    /// The pre-compensated uplink burst without materialising the leading
    /// zeros.
    pub fn uplink_burst(&self, buf: &IqBuffer) -> Result<UplinkBurst> {
        let f_ul = self.uplink_doppler()?;
        let fs = buf.sample_rate_hz();
        let lead = self.buffer_delay_samples(fs);
        // phase continues from the first (zero) sample of the padded stream
        let phase0 = std::f64::consts::TAU * (f_ul / fs * lead as f64).fract();
        Ok(UplinkBurst {
            lead_samples: lead,
            samples: apply_cfo(buf, f_ul, phase0),
        })
    }
}

/// `f_ul = f_dl_ssb - f_dl_sib19 - f_ul_sib19`. The local-oscillator error is
/// part of the SSB estimate and cancels against the network's Doppler terms.
pub fn combine_doppler(dl_ssb_hz: f64, dl_sib19_hz: f64, ul_sib19_hz: f64) -> f64 {
    dl_ssb_hz - dl_sib19_hz - ul_sib19_hz
}

pub fn on_ssb(state: &CompensationState, det: &DetectionResult, now_s: f64) -> CompensationState {
    let mut next = *state;
    next.on_ssb(det, now_s);
    next
}

pub fn on_sib19(
    state: &CompensationState,
    sib: &Sib19,
    current_delay_d_s: f64,
    now_s: f64,
) -> Result<CompensationState> {
    let mut next = *state;
    next.on_sib19(sib, current_delay_d_s, now_s)?;
    Ok(next)
}

pub fn uplink_doppler(state: &CompensationState) -> Result<f64> {
    state.uplink_doppler()
}

/// Uplink samples delayed by the compensation buffer (zero-padded at the
/// front) and shifted by `+uplink_doppler`.
pub fn precompensate_uplink(buf: &IqBuffer, state: &CompensationState) -> Result<IqBuffer> {
    Ok(state.uplink_burst(buf)?.materialize())
}

/// A pre-compensated burst: `lead_samples` zeros followed by `samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkBurst {
    pub lead_samples: usize,
    pub samples: IqBuffer,
}

impl UplinkBurst {
    pub fn materialize(&self) -> IqBuffer {
        let mut out = vec![num_complex::Complex64::new(0.0, 0.0); self.lead_samples];
        out.extend_from_slice(self.samples.samples());
        IqBuffer::from_parts(out, self.samples.sample_rate_hz())
    }

    /// Start time of the first non-padding sample, given the stream origin.
    pub fn payload_start_s(&self, origin_s: f64) -> f64 {
        origin_s + self.lead_samples as f64 / self.samples.sample_rate_hz()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn det(total: f64) -> DetectionResult {
        DetectionResult {
            timing_offset_samples: 0,
            fractional_timing_samples: 0.0,
            branch_cfo_hz: total,
            fine_cfo_hz: 0.0,
            total_cfo_hz: total,
            nid2: 0,
            peak_metric: 1.0,
        }
    }

    fn sib(k_ms: f64, dl: f64, ul: f64) -> Sib19 {
        Sib19 {
            k_offset_s: k_ms * 1e-3,
            dl_doppler_hz: dl,
            ul_doppler_hz: ul,
            issued_at_s: 0.0,
        }
    }

    #[test]
    fn ssb_updates_only_dl_estimate() {
        let mut s = CompensationState::new();
        s.on_sib19(&sib(6.0, 0.0, 0.0), 4e-3, 0.0).unwrap();
        let before = s;
        s.on_ssb(&det(12_345.0), 1.0);
        assert_eq!(s.dl_doppler_ssb_hz, 12_345.0);
        assert_eq!(s.last_ssb_at_s, Some(1.0));
        assert_eq!(s.buffer_delay_s, before.buffer_delay_s);
        assert_eq!(s.k_offset_s, before.k_offset_s);
        s.on_ssb(&det(-7.0), 1.02);
        assert_eq!(s.dl_doppler_ssb_hz, -7.0);
    }

    #[test]
    fn sib19_buffer_arithmetic() {
        let s = on_sib19(&CompensationState::new(), &sib(6.0, 0.0, 0.0), 4e-3, 0.0).unwrap();
        assert!((s.buffer_delay_s - 2e-3).abs() < 1e-12);
        let s = on_sib19(&s, &sib(6.0, 0.0, 0.0), 6e-3, 0.1).unwrap();
        assert_eq!(s.buffer_delay_s, 0.0);
        let err = on_sib19(&s, &sib(6.0, 0.0, 0.0), 7e-3, 0.2).unwrap_err();
        assert!(matches!(err, Error::CompensationInfeasible { .. }));
    }

    #[test]
    fn infeasible_sib19_leaves_state_untouched() {
        let mut s = CompensationState::new();
        s.on_sib19(&sib(6.0, 1.0, 2.0), 4e-3, 0.0).unwrap();
        let before = s;
        assert!(s.on_sib19(&sib(6.0, 5.0, 5.0), 7e-3, 1.0).is_err());
        assert_eq!(s, before);
        assert!(s.on_sib19(&sib(-1.0, 5.0, 5.0), 0.0, 1.0).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn uplink_doppler_requires_both_inputs() {
        let mut s = CompensationState::new();
        assert!(matches!(s.uplink_doppler(), Err(Error::NotReady(_))));
        s.on_ssb(&det(1.0), 0.0);
        assert!(matches!(s.uplink_doppler(), Err(Error::NotReady(_))));
        let mut s = CompensationState::new();
        s.on_sib19(&sib(6.0, 0.0, 0.0), 1e-3, 0.0).unwrap();
        assert!(matches!(s.uplink_doppler(), Err(Error::NotReady(_))));
    }

    #[test]
    fn uplink_doppler_examples() {
        let mut s = CompensationState::new();
        s.on_ssb(&det(0.0), 0.0);
        s.on_sib19(&sib(6.0, 0.0, 0.0), 1e-3, 0.0).unwrap();
        assert_eq!(s.uplink_doppler().unwrap(), 0.0);

        s.on_ssb(&det(10e3), 0.02);
        s.on_sib19(&sib(6.0, 8e3, 12e3), 1e-3, 0.02).unwrap();
        assert_eq!(s.uplink_doppler().unwrap(), -10e3);
        assert_eq!(s.ul_doppler_hz, -10e3);

        // no local-oscillator error: the SSB estimate equals the network's value
        s.on_ssb(&det(8e3), 0.04);
        assert_eq!(s.uplink_doppler().unwrap(), -12e3);
    }

    #[test]
    fn precompensation_identity_and_shift() {
        let fs = 11e6;
        let tone: Vec<_> = (0..64)
            .map(|i| Complex64::from_polar(1.0, 0.1 * i as f64))
            .collect();
        let buf = IqBuffer::new(tone, fs).unwrap();

        let mut s = CompensationState::new();
        s.on_ssb(&det(0.0), 0.0);
        s.on_sib19(&sib(6.0, 0.0, 0.0), 6e-3, 0.0).unwrap();
        assert_eq!(precompensate_uplink(&buf, &s).unwrap(), buf);

        s.on_sib19(&sib(6.0, 0.0, 0.0), 4e-3, 0.0).unwrap();
        let out = precompensate_uplink(&buf, &s).unwrap();
        assert_eq!(out.len(), 22_000 + 64);
        assert!(out.samples()[..22_000].iter().all(|v| v.norm() == 0.0));
        assert_eq!(&out.samples()[22_000..], buf.samples());

        // the frequency shift continues across the padding
        s.on_ssb(&det(1_000.0), 0.0);
        let out = precompensate_uplink(&buf, &s).unwrap();
        let mut padded = vec![Complex64::new(0.0, 0.0); 22_000];
        padded.extend_from_slice(buf.samples());
        let expected = apply_cfo(&IqBuffer::new(padded, fs).unwrap(), 1_000.0, 0.0);
        for (a, b) in out.samples().iter().zip(expected.samples()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn precompensation_requires_ready_state() {
        let buf = IqBuffer::zeros(4, 1e6).unwrap();
        assert!(precompensate_uplink(&buf, &CompensationState::new()).is_err());
    }
}
