//! Downlink acquisition under large carrier frequency offsets.
//!
//! A bank of correlators, each matched to the PSS shifted by one CFO
//! hypothesis, searches jointly over timing and frequency. The branch with the
//! highest normalised peak gives the coarse CFO; a half-symbol phase
//! estimator then refines it.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::waveform::{modulate_ssb_symbol, IqBuffer, PssWaveform, SsbConfig};
use crate::{Error, Result};

/// Detection threshold on the normalised correlation metric. A noise-only
/// window of N samples exceeds `x` with probability `(1 - x)^(N - 1)` per
/// lag, about 1e-12 for N = 256.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Relative margin under which two metrics are treated as a tie.
const TIE_EPSILON: f64 = 1e-9;

/// Maximum refinement passes of the fine CFO estimator.
const FINE_ITERATIONS: usize = 8;
const SYNC_ROUNDS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CfoHypothesisBank {
    candidates_hz: Vec<f64>,
    scs_hz: f64,
}

impl CfoHypothesisBank {
    /// Grid with step `scs / 2` covering `center +/- f_max`, always containing `center`.
    pub fn centered(center_hz: f64, f_max_hz: f64, scs_hz: f64) -> Result<Self> {
        if !(f_max_hz.is_finite() && f_max_hz >= 0.0) {
            return Err(Error::domain(format!(
                "CFO range must be >= 0, got {f_max_hz}"
            )));
        }
        if !(scs_hz.is_finite() && scs_hz > 0.0) || !center_hz.is_finite() {
            return Err(Error::domain(format!(
                "subcarrier spacing must be > 0, got {scs_hz}"
            )));
        }
        let step = scs_hz / 2.0;
        let k = (f_max_hz / step).ceil() as i64;
        let candidates_hz = (-k..=k).map(|i| center_hz + i as f64 * step).collect();
        Ok(Self {
            candidates_hz,
            scs_hz,
        })
    }

    /// The single-correlator receiver of a terrestrial UE.
    pub fn zero_only(scs_hz: f64) -> Self {
        Self {
            candidates_hz: vec![0.0],
            scs_hz,
        }
    }

    pub fn candidates_hz(&self) -> &[f64] {
        &self.candidates_hz
    }

    pub fn scs_hz(&self) -> f64 {
        self.scs_hz
    }

    pub fn len(&self) -> usize {
        self.candidates_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates_hz.is_empty()
    }

    pub fn contains(&self, f_hz: f64) -> bool {
        self.candidates_hz.contains(&f_hz)
    }
}

pub fn build_hypothesis_bank(f_max_hz: f64, scs_hz: f64) -> Result<CfoHypothesisBank> {
    CfoHypothesisBank::centered(0.0, f_max_hz, scs_hz)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionResult {
    pub timing_offset_samples: usize,
    /// Sub-sample correction: the symbol starts at
    /// `timing_offset_samples + fractional_timing_samples`.
    pub fractional_timing_samples: f64,
    pub branch_cfo_hz: f64,
    pub fine_cfo_hz: f64,
    /// `branch_cfo_hz + fine_cfo_hz`.
    pub total_cfo_hz: f64,
    pub nid2: u8,
    pub peak_metric: f64,
}

/// Best correlation peak over a bank, before fine estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationPeak {
    pub lag: usize,
    pub branch_cfo_hz: f64,
    /// Index into the reference list passed to [`Correlator::search`].
    pub reference: usize,
    pub metric: f64,
}

/// FFT correlation engine with cached plans. Reusable across calls; results
/// do not depend on cache state.
pub struct Correlator {
    planner: FftPlanner<f64>,
    plans: HashMap<(usize, bool), Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for Correlator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Correlator")
            .field("cached_plans", &self.plans.len())
            .finish()
    }
}

impl Default for Correlator {
    fn default() -> Self {
        Self {
            planner: FftPlanner::new(),
            plans: HashMap::new(),
        }
    }
}

impl Correlator {
    pub fn new() -> Self {
        Self::default()
    }

    fn plan(&mut self, len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
        let planner = &mut self.planner;
        self.plans
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    }

    /// Joint timing/frequency search of `buf` against equal-length
    /// `references` shifted by every bank candidate.
    ///
    /// The metric is `|c|^2 / (E_ref * E_window)`. Ties (within a relative
    /// 1e-9) resolve to the lowest frequency, then lowest reference index,
    /// then earliest lag.
    pub fn search(
        &mut self,
        buf: &IqBuffer,
        references: &[&[Complex64]],
        bank: &CfoHypothesisBank,
    ) -> Result<CorrelationPeak> {
        let ref_len = references.first().map(|r| r.len()).unwrap_or(0);
        if ref_len == 0 || references.iter().any(|r| r.len() != ref_len) {
            return Err(Error::domain(
                "references must be non-empty and of equal length",
            ));
        }
        let samples = buf.samples();
        if samples.len() < ref_len {
            return Err(Error::domain(format!(
                "buffer of {} samples is shorter than the {ref_len}-sample reference",
                samples.len()
            )));
        }
        let fs = buf.sample_rate_hz();
        let n_lags = samples.len() - ref_len + 1;
        let m = samples.len().next_power_of_two();
        let fwd = self.plan(m, false);
        let inv = self.plan(m, true);

        let mut prefix = Vec::with_capacity(samples.len() + 1);
        prefix.push(0.0);
        for s in samples {
            prefix.push(prefix[prefix.len() - 1] + s.norm_sqr());
        }
        let window_energy = |lag: usize| prefix[lag + ref_len] - prefix[lag];
        // windows holding only rounding residue would give meaningless ratios
        let min_energy = 1e-10 * prefix[samples.len()];

        let ref_spectra: Vec<(Vec<Complex64>, f64)> = references
            .iter()
            .map(|r| {
                let mut spec = r.to_vec();
                spec.resize(m, Complex64::new(0.0, 0.0));
                fwd.process(&mut spec);
                spec.iter_mut().for_each(|v| *v = v.conj());
                (spec, r.iter().map(|v| v.norm_sqr()).sum())
            })
            .collect();

        let mut best: Option<CorrelationPeak> = None;
        let mut work = vec![Complex64::new(0.0, 0.0); m];
        let mut prod = vec![Complex64::new(0.0, 0.0); m];
        let scale = 1.0 / m as f64;
        for &f in bank.candidates_hz() {
            // correlating against a reference shifted by +f equals correlating
            // the buffer derotated by -f, up to a per-lag phase
            let step = -f / fs;
            for (n, (w, s)) in work.iter_mut().zip(samples).enumerate() {
                *w = s * Complex64::from_polar(1.0, TAU * (step * n as f64).fract());
            }
            work[samples.len()..].fill(Complex64::new(0.0, 0.0));
            fwd.process(&mut work);
            for (ri, (spec, e_ref)) in ref_spectra.iter().enumerate() {
                for ((p, a), b) in prod.iter_mut().zip(&work).zip(spec) {
                    *p = a * b;
                }
                inv.process(&mut prod);
                for (lag, c) in prod.iter().take(n_lags).enumerate() {
                    let e_win = window_energy(lag);
                    if e_win <= min_energy {
                        continue;
                    }
                    let metric = ((c * scale).norm_sqr() / (e_ref * e_win)).min(1.0);
                    let better = match &best {
                        None => true,
                        Some(b) => metric > b.metric * (1.0 + TIE_EPSILON),
                    };
                    if better {
                        best = Some(CorrelationPeak {
                            lag,
                            branch_cfo_hz: f,
                            reference: ri,
                            metric,
                        });
                    }
                }
            }
        }
        best.ok_or(Error::NotDetected {
            best_metric: 0.0,
            threshold: 0.0,
        })
    }
}

/// PSS acquisition over all three identities and every bank branch.
pub fn detect_pss(
    buf: &IqBuffer,
    cfg: &SsbConfig,
    bank: &CfoHypothesisBank,
    threshold: f64,
) -> Result<DetectionResult> {
    PssDetector::new(*cfg)?.detect(buf, bank, threshold)
}

/// Reusable detector holding the three local PSS references.
#[derive(Debug)]
pub struct PssDetector {
    cfg: SsbConfig,
    references: Vec<IqBuffer>,
    waveforms: Vec<PssWaveform>,
    correlator: Correlator,
}

impl PssDetector {
    pub fn new(cfg: SsbConfig) -> Result<Self> {
        cfg.validate()?;
        let references = (0..3)
            .map(|nid2| modulate_ssb_symbol(&cfg.with_nid2(nid2)))
            .collect::<Result<Vec<_>>>()?;
        let waveforms = (0..3)
            .map(|nid2| PssWaveform::new(nid2, cfg.scs_hz, cfg.sample_rate_hz()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            references,
            waveforms,
            correlator: Correlator::new(),
        })
    }

    pub fn config(&self) -> &SsbConfig {
        &self.cfg
    }

    pub fn reference(&self, nid2: u8) -> &IqBuffer {
        &self.references[nid2 as usize]
    }

    pub fn waveform(&self, nid2: u8) -> &PssWaveform {
        &self.waveforms[nid2 as usize]
    }

    pub fn detect(
        &mut self,
        buf: &IqBuffer,
        bank: &CfoHypothesisBank,
        threshold: f64,
    ) -> Result<DetectionResult> {
        if (buf.sample_rate_hz() - self.cfg.sample_rate_hz()).abs() > 1e-6 {
            return Err(Error::domain(format!(
                "buffer rate {} differs from SSB rate {}",
                buf.sample_rate_hz(),
                self.cfg.sample_rate_hz()
            )));
        }
        if buf.len() <= self.cfg.fft_size {
            return Err(Error::domain("buffer must be longer than one PSS symbol"));
        }
        let refs: Vec<&[Complex64]> = self.references.iter().map(|r| r.samples()).collect();
        let peak = self.correlator.search(buf, &refs, bank)?;
        if peak.metric < threshold {
            return Err(Error::NotDetected {
                best_metric: peak.metric,
                threshold,
            });
        }
        let nid2 = peak.reference as u8;
        let fine = fine_sync(
            buf,
            &self.waveforms[peak.reference],
            peak.lag,
            peak.branch_cfo_hz,
        )?;
        Ok(DetectionResult {
            timing_offset_samples: peak.lag,
            fractional_timing_samples: fine.fractional_timing_samples,
            branch_cfo_hz: peak.branch_cfo_hz,
            fine_cfo_hz: fine.cfo_hz,
            total_cfo_hz: peak.branch_cfo_hz + fine.cfo_hz,
            nid2,
            peak_metric: peak.metric,
        })
    }
}

/// Residual CFO after removing `branch_cfo_hz`, from the phase between the
/// two halves of the PSS symbol at `timing`, with the local reference aligned
/// to the symbol's fractional timing. Unambiguous within +/- one subcarrier
/// spacing.
pub fn estimate_fine_cfo(
    buf: &IqBuffer,
    cfg: &SsbConfig,
    timing: usize,
    branch_cfo_hz: f64,
) -> Result<f64> {
    cfg.validate()?;
    let wave = PssWaveform::new(cfg.nid2, cfg.scs_hz, cfg.sample_rate_hz())?;
    Ok(fine_sync(buf, &wave, timing, branch_cfo_hz)?.cfo_hz)
}

/// Half-symbol estimator against an arbitrary, sample-aligned reference.
pub fn fine_cfo(
    buf: &IqBuffer,
    reference: &[Complex64],
    timing: usize,
    branch_cfo_hz: f64,
) -> Result<f64> {
    let n = reference.len();
    check_fits(buf, timing, n)?;
    let z: Vec<Complex64> = buf.samples()[timing..timing + n]
        .iter()
        .zip(reference)
        .map(|(s, r)| s * r.conj())
        .collect();
    Ok(half_symbol_cfo(&z, buf.sample_rate_hz(), branch_cfo_hz))
}

fn check_fits(buf: &IqBuffer, timing: usize, n: usize) -> Result<()> {
    if n < 4 || timing + n > buf.len() {
        return Err(Error::domain(format!(
            "symbol at {timing}..{} does not fit in {} samples",
            timing + n,
            buf.len()
        )));
    }
    Ok(())
}

/// Frequency of `z = r * conj(ref)` from the phase advance between its two
/// halves. The raw estimate is biased by the uneven energy of the halves, so
/// it is iterated on the derotated product until the correction vanishes; for
/// a pure tone the fixed point is the exact offset.
fn half_symbol_cfo(z: &[Complex64], fs: f64, branch_cfo_hz: f64) -> f64 {
    let half = z.len() / 2;
    let mut estimate = 0.0;
    for _ in 0..FINE_ITERATIONS {
        let cycles = -(branch_cfo_hz + estimate) / fs;
        let step = Complex64::from_polar(1.0, TAU * cycles);
        let mut ph = Complex64::new(1.0, 0.0);
        let (mut p1, mut p2) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for v in &z[..half] {
            p1 += v * ph;
            ph *= step;
        }
        for v in &z[half..2 * half] {
            p2 += v * ph;
            ph *= step;
        }
        let correction = (p2 * p1.conj()).arg() * fs / (2.0 * PI * half as f64);
        estimate += correction;
        if correction.abs() < 1e-9 {
            break;
        }
    }
    estimate
}

/// Sub-sample timing and residual CFO of a detected symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineSync {
    /// In [-1, 1] samples relative to the integer timing.
    pub fractional_timing_samples: f64,
    /// Relative to the branch frequency.
    pub cfo_hz: f64,
}

/// Joint refinement of timing and frequency around an integer-lag detection.
///
/// Timing maximises the correlation with the tone-sum reference delayed by a
/// fraction of a sample, evaluated per tone so that each trial delay costs
/// one pass over the 127 tones. The half-symbol estimator then runs against
/// the reference at that delay; a misaligned reference would bias it by
/// several hertz per tenth of a sample. Two rounds let timing and frequency
/// settle together.
pub fn fine_sync(
    buf: &IqBuffer,
    wave: &PssWaveform,
    timing: usize,
    branch_cfo_hz: f64,
) -> Result<FineSync> {
    let n = wave.len();
    check_fits(buf, timing, n)?;
    let fs = buf.sample_rate_hz();
    if (fs - wave.sample_rate_hz()).abs() > 1e-6 * fs {
        return Err(Error::domain(format!(
            "buffer rate {fs} differs from reference rate {}",
            wave.sample_rate_hz()
        )));
    }
    let window = &buf.samples()[timing..timing + n];
    let mut cfo = fine_cfo(buf, &wave.sample(0.0), timing, branch_cfo_hz)?;
    let mut mu = 0.0;
    for _ in 0..SYNC_ROUNDS {
        let total = branch_cfo_hz + cfo;
        // samples 1..n-1 stay inside the symbol for any delay in [-1, 1];
        // sample 0 is zeroed rather than dropped to keep the phase origin
        let mut interior = window[..n - 1].to_vec();
        interior[0] = Complex64::new(0.0, 0.0);
        let per_tone = wave.tone_correlations(&interior, total);
        // |C|^2 / E_ref: the plain magnitude would drift towards delays that
        // pull more reference energy into the window
        let score = |delay: f64| -> f64 {
            // tone phases e^{j w_i delay} form a geometric sequence in i
            let first = wave.tone_hz(0) * delay / fs;
            let step = Complex64::from_polar(1.0, TAU * wave.tone_hz(1) * delay / fs - TAU * first);
            let mut ph = Complex64::from_polar(1.0, TAU * first.fract());
            let mut c = Complex64::new(0.0, 0.0);
            for (&d, r) in wave.sequence().iter().zip(&per_tone) {
                c += r * ph * d;
                ph *= step;
            }
            c.norm_sqr() / wave.interior_energy(delay)
        };
        mu = golden_max(score, -1.0, 1.0);
        let reference = wave.sample(mu);
        let z: Vec<Complex64> = window[1..n - 1]
            .iter()
            .zip(&reference[1..n - 1])
            .map(|(s, r)| s * r.conj())
            .collect();
        // z starts one sample into the window; the phase origin is irrelevant
        cfo = half_symbol_cfo(&z, fs, branch_cfo_hz);
    }
    Ok(FineSync {
        fractional_timing_samples: mu,
        cfo_hz: cfo,
    })
}

/// Maximiser of a unimodal `f` on `[a, b]` by golden-section search.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-5 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
