//! Full-chain pass simulation.
//!
//! Each SSB period `T`:
//!
//! 1. the gNB emits the SSB at `T`; the payload relays it over the service
//!    link (delay and Doppler at the downlink Ka carrier);
//! 2. the UE adds its oscillator offset and noise, then detects: a wide bank
//!    over a long window while unlocked, a narrow bank around the previous
//!    estimate in a short window once locked;
//! 3. on SIB19 periods the UE resizes its buffer for the current round trip;
//! 4. the UE sends the uplink reference `buffer` after its SSB timing,
//!    shifted by its uplink Doppler correction and its own oscillator error;
//! 5. the gNB looks for it around `T + k_offset` and records timing and
//!    frequency residuals.
//!
//! The feeder link is ideal. The uplink always takes the transparent path, so
//! that the gNB sees the UE's residual rather than a regenerated copy.

use std::f64::consts::TAU;

use super::acquisition::trial_seed;
use super::config::ScenarioConfig;
use super::metrics::{Metrics, MetricsRow};
use crate::orbit::{Pass, PassProfile, SPEED_OF_LIGHT};
use crate::payload::{compose_gain_chain, Payload, PayloadMode};
use crate::ue_comp::{quantize_time, CompensationState, Sib19};
use crate::ue_sync::{
    build_hypothesis_bank, fine_sync, CfoHypothesisBank, Correlator, PssDetector,
};
use crate::waveform::{add_awgn_with_power, apply_cfo, modulate_ssb_symbol, IqBuffer, PssWaveform};
use crate::{Error, Result};

/// Samples searched on each side of the predicted SSB position while locked.
const TRACK_MARGIN_SAMPLES: usize = 32;
/// Extra uplink search margin on top of the worst-case drift.
const UL_EXTRA_MARGIN_SAMPLES: usize = 64;
/// Profile padding around the simulated span, s.
const PROFILE_PAD_S: f64 = 0.5;

const STREAM_DL_NOISE: usize = 0;
const STREAM_UL_NOISE: usize = 1;

/// Geometry and timing derived from a configuration before the loop runs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub pass: Pass,
    pub profile: PassProfile,
    pub t_start_s: f64,
    pub t_end_s: f64,
    /// On the UE's 2^-40 s grid.
    pub k_offset_s: f64,
    pub iterations: usize,
}

impl Scenario {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let pass = cfg.orbit.pass()?;
        let (rise, set) = pass.visibility_window(cfg.orbit.min_elevation_rad)?;
        let t_start_s = rise;
        let t_end_s = match cfg.duration_s {
            None => set,
            Some(d) if rise + d <= set + 1e-9 => rise + d,
            Some(d) => {
                return Err(Error::Config(format!(
                    "duration {d} s exceeds the visible pass of {} s",
                    set - rise
                )))
            }
        };
        let k_offset_s = match cfg.sib19.k_offset_ms {
            Some(ms) => ms * 1e-3,
            None => {
                // range is largest at the ends of the span
                let p = cfg.periodicity_s();
                let r0 = pass.slant_range_and_elevation(t_start_s)?.0;
                let r1 = pass.slant_range_and_elevation(t_end_s + p)?.0;
                let rtt_ms = 2.0 * r0.max(r1) / SPEED_OF_LIGHT * 1e3;
                (rtt_ms.ceil() + 1.0) * 1e-3
            }
        };
        let k_offset_s = quantize_time(k_offset_s);
        let profile = pass.generate_pass_profile(
            t_start_s - PROFILE_PAD_S,
            t_end_s + k_offset_s + PROFILE_PAD_S,
            cfg.profile_dt_s,
        )?;
        let iterations = ((t_end_s - t_start_s) / cfg.periodicity_s() + 1e-9).floor() as usize;
        Ok(Self {
            pass,
            profile,
            t_start_s,
            t_end_s,
            k_offset_s,
            iterations,
        })
    }

    /// Largest |d(round-trip delay)/dt| over the profile.
    pub fn max_round_trip_rate(&self) -> f64 {
        2.0 * self.profile.max_abs_radial_velocity_ms() / SPEED_OF_LIGHT
    }

    /// SSB transmit time of iteration `n`.
    pub fn ssb_time(&self, n: usize, cfg: &ScenarioConfig) -> f64 {
        self.t_start_s + n as f64 * cfg.periodicity_s()
    }
}

/// Everything an end-to-end run produces.
#[derive(Debug, Clone)]
pub struct EndToEndRun {
    pub metrics: Metrics,
    pub scenario: Scenario,
    /// The first downlink window the UE searched, as received.
    pub dl_capture: Option<IqBuffer>,
    /// Half-width of the gNB's uplink search window, in uplink samples.
    pub ul_margin_samples: usize,
}

pub fn run_end_to_end(cfg: &ScenarioConfig) -> Result<Metrics> {
    Ok(simulate(cfg)?.metrics)
}

struct Lock {
    t_hat_s: f64,
    cfo_hz: f64,
}

pub fn simulate(cfg: &ScenarioConfig) -> Result<EndToEndRun> {
    let scenario = Scenario::new(cfg)?;
    let profile = &scenario.profile;
    let k = scenario.k_offset_s;
    let period = cfg.periodicity_s();
    let scs = cfg.ssb.scs_hz;
    let nid2 = cfg.ssb.nid2;
    let fs_dl = cfg.ssb.sample_rate_hz();
    let fs_ul = cfg.plan.sample_rate_hz;
    let dl_carrier = cfg.plan.dl_carrier_hz();
    let ul_carrier = cfg.plan.ul_carrier_hz();
    let lo = cfg.ue.lo_offset_hz;
    let threshold = cfg.acquire.threshold;
    let base_seed = cfg.first_seed();
    let sib19_every = cfg.sib19_every();
    let sib = &cfg.sib19;

    let chain = cfg.payload.chain.clone();
    let dl_payload = Payload::new(cfg.payload.mode, cfg.plan, chain.clone())?.with_scs(scs);
    let ul_payload = Payload::new(PayloadMode::Transparent, cfg.plan, chain)?.with_scs(scs);
    let amplitude2 = 10f64.powf(compose_gain_chain(&cfg.payload.chain) / 10.0);

    let ssb = modulate_ssb_symbol(&cfg.ssb)?;
    let n_dl = ssb.len();
    let ul_wave = PssWaveform::new(nid2, scs, fs_ul)?;
    let ul_ref = IqBuffer::new(ul_wave.sample(0.0), fs_ul)?;
    let n_ul = ul_ref.len();
    let dl_power = ssb.power() * amplitude2;
    let ul_power = ul_ref.power() * amplitude2;

    let mut detector = PssDetector::new(cfg.ssb)?;
    let mut correlator = Correlator::new();
    let zero_bank = CfoHypothesisBank::zero_only(scs);
    let max_dl_doppler = profile.max_abs_radial_velocity_ms() / SPEED_OF_LIGHT * dl_carrier;
    let acq_bank = build_hypothesis_bank(max_dl_doppler + lo.abs() + scs / 2.0, scs)?;
    let acq_len = ((profile.max_delay_s() * fs_dl).ceil() as usize) + n_dl + 64;
    let track_len = n_dl + 2 * TRACK_MARGIN_SAMPLES + 1;
    let cadence_s = sib.cadence_ms * 1e-3;
    let ul_margin = (scenario.max_round_trip_rate() * cadence_s * fs_ul).ceil() as usize
        + UL_EXTRA_MARGIN_SAMPLES;

    let mut state = CompensationState::new();
    let mut lock: Option<Lock> = None;
    let mut metrics = Metrics::new();
    let mut dl_capture = None;
    let mut ever_detected = false;

    for n in 0..scenario.iterations {
        let t = scenario.ssb_time(n, cfg);

        // downlink
        let (win_start, win_len, bank) = match &lock {
            None => (t, acq_len, acq_bank.clone()),
            Some(l) => (
                l.t_hat_s + period - TRACK_MARGIN_SAMPLES as f64 / fs_dl,
                track_len,
                CfoHypothesisBank::centered(l.cfo_hz, scs, scs)?,
            ),
        };
        let relayed = dl_payload.relay_window(&ssb, t, profile, dl_carrier, win_start, win_len)?;
        let mut rx = apply_cfo(&relayed, lo, TAU * (lo * win_start).fract());
        if let Some(snr) = cfg.snr_db {
            let seed = trial_seed(base_seed, n, STREAM_DL_NOISE, 0);
            rx = add_awgn_with_power(&rx, snr, dl_power, seed)?;
        }
        if dl_capture.is_none() {
            dl_capture = Some(rx.clone());
        }
        let detection = match detector.detect(&rx, &bank, threshold) {
            Ok(d) if d.nid2 == nid2 => Some(d),
            Ok(_) | Err(Error::NotDetected { .. }) => None,
            Err(e) => return Err(e),
        };

        let t_arrive = profile.arrival_time(t);
        let dl_mid = t_arrive + n_dl as f64 / (2.0 * fs_dl);
        let true_cfo = profile.doppler_at(dl_mid, dl_carrier) + lo;
        let rtt = profile.delay_at(t_arrive) + profile.delay_at(t + k);

        let mut row = MetricsRow {
            t_s: t,
            detection: detection.is_some() as u8,
            branch_cfo_hz: detection.map(|d| d.branch_cfo_hz),
            total_cfo_hz: detection.map(|d| d.total_cfo_hz),
            true_cfo_hz: true_cfo,
            residual_ul_cfo_hz: None,
            ul_timing_error_samples: None,
            buffer_delay_s: state.buffer_delay_s,
            sib19: 0,
            rtt_s: quantize_time(rtt),
            k_offset_s: k,
        };

        let Some(det) = detection else {
            lock = None;
            metrics.push(row)?;
            continue;
        };
        ever_detected = true;
        let t_hat =
            win_start + (det.timing_offset_samples as f64 + det.fractional_timing_samples) / fs_dl;
        state.on_ssb(&det, t_hat);
        lock = Some(Lock {
            t_hat_s: t_hat,
            cfo_hz: det.total_cfo_hz,
        });

        if n % sib19_every == 0 {
            let ul_mid = t + k + n_ul as f64 / (2.0 * fs_ul);
            let (dl_err, ul_err, d_err) = if sib.truthful {
                (0.0, 0.0, 0.0)
            } else {
                (
                    sib.dl_doppler_error_hz,
                    sib.ul_doppler_error_hz,
                    sib.delay_error_s,
                )
            };
            let msg = Sib19 {
                k_offset_s: k,
                dl_doppler_hz: profile.doppler_at(dl_mid, dl_carrier) + dl_err,
                ul_doppler_hz: profile.precompensation_doppler_at(ul_mid, ul_carrier) + ul_err,
                issued_at_s: t,
            };
            if let Err(e) = state.on_sib19(&msg, rtt + d_err, t_hat) {
                metrics.push(row)?;
                return Err(Error::ScenarioFailure {
                    reason: format!("SIB19 at t = {t} s: {e}"),
                    partial: Box::new(metrics),
                });
            }
            row.sib19 = 1;
            row.buffer_delay_s = state.buffer_delay_s;
        }

        // uplink
        if state.is_ready() {
            let burst = state.uplink_burst(&ul_ref)?;
            let tx = apply_cfo(&burst.samples, -lo, 0.0);
            let t_tx = burst.payload_start_s(t_hat);
            let out_start = t + k - ul_margin as f64 / fs_ul;
            let mut rx_gnb = ul_payload.relay_window(
                &tx,
                t_tx,
                profile,
                ul_carrier,
                out_start,
                n_ul + 2 * ul_margin,
            )?;
            if let Some(snr) = cfg.snr_db {
                let seed = trial_seed(base_seed, n, STREAM_UL_NOISE, 0);
                rx_gnb = add_awgn_with_power(&rx_gnb, snr, ul_power, seed)?;
            }
            let peak = correlator.search(&rx_gnb, &[ul_ref.samples()], &zero_bank)?;
            if peak.metric >= threshold {
                let sync = fine_sync(&rx_gnb, &ul_wave, peak.lag, 0.0)?;
                row.residual_ul_cfo_hz = Some(sync.cfo_hz);
                row.ul_timing_error_samples =
                    Some(peak.lag as f64 + sync.fractional_timing_samples - ul_margin as f64);
            }
        }
        metrics.push(row)?;
    }

    if !ever_detected {
        return Err(Error::ScenarioFailure {
            reason: "downlink acquisition never succeeded".into(),
            partial: Box::new(metrics),
        });
    }
    Ok(EndToEndRun {
        metrics,
        scenario,
        dl_capture,
        ul_margin_samples: ul_margin,
    })
}
