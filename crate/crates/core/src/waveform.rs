//! Baseband signal primitives: IQ buffers, the NR primary synchronization
//! signal and the channel impairments applied by the emulated satellite.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::orbit::{PassProfile, SPEED_OF_LIGHT};
use crate::{Error, Result};

pub const PSS_LENGTH: usize = 127;

/// Complex baseband samples at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct IqBuffer {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
}

impl IqBuffer {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::domain(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples
            .iter()
            .any(|s| !(s.re.is_finite() && s.im.is_finite()))
        {
            return Err(Error::domain("IQ buffer contains non-finite samples"));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn zeros(len: usize, sample_rate_hz: f64) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); len], sample_rate_hz)
    }

    /// Construction for internal transforms that cannot introduce non-finite values.
    pub(crate) fn from_parts(samples: Vec<Complex64>, sample_rate_hz: f64) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Mean power per sample.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    pub fn scaled(&self, gain: f64) -> IqBuffer {
        let samples = self.samples.iter().map(|s| s * gain).collect();
        IqBuffer::from_parts(samples, self.sample_rate_hz)
    }

    /// Writes interleaved little-endian `f32` (I, Q) pairs with no header.
    pub fn write_raw_f32(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.samples.len() * 8);
        for s in &self.samples {
            bytes.extend_from_slice(&(s.re as f32).to_le_bytes());
            bytes.extend_from_slice(&(s.im as f32).to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_raw_f32(path: &Path, sample_rate_hz: f64) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Format {
                path: path.into(),
                message: format!("{} bytes is not a whole number of IQ pairs", bytes.len()),
            });
        }
        let samples = bytes
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                Complex64::new(re as f64, im as f64)
            })
            .collect();
        Self::new(samples, sample_rate_hz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsbConfig {
    pub scs_hz: f64,
    pub fft_size: usize,
    #[serde(default = "default_periodicity_ms")]
    pub periodicity_ms: f64,
    #[serde(default)]
    pub nid2: u8,
}

fn default_periodicity_ms() -> f64 {
    20.0
}

impl Default for SsbConfig {
    fn default() -> Self {
        Self {
            scs_hz: 15e3,
            fft_size: 256,
            periodicity_ms: 20.0,
            nid2: 0,
        }
    }
}

impl SsbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scs_hz != 15e3 && self.scs_hz != 30e3 {
            return Err(Error::domain(format!(
                "subcarrier spacing must be 15 or 30 kHz, got {}",
                self.scs_hz
            )));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < 256 {
            return Err(Error::domain(format!(
                "FFT size must be a power of two >= 256, got {}",
                self.fft_size
            )));
        }
        if !(self.periodicity_ms.is_finite() && self.periodicity_ms > 0.0) {
            return Err(Error::domain("SSB periodicity must be positive"));
        }
        check_nid2(self.nid2)
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.scs_hz * self.fft_size as f64
    }

    pub fn with_nid2(self, nid2: u8) -> Self {
        Self { nid2, ..self }
    }
}

fn check_nid2(nid2: u8) -> Result<()> {
    if nid2 > 2 {
        return Err(Error::domain(format!("nid2 must be 0, 1 or 2, got {nid2}")));
    }
    Ok(())
}

/// NR primary synchronization sequence for `nid2`, as +/-1 values.
pub fn generate_pss(nid2: u8) -> Result<Vec<f64>> {
    check_nid2(nid2)?;
    let mut x = [0u8; PSS_LENGTH];
    // [x(6) .. x(0)] = 1110110
    x[..7].copy_from_slice(&[0, 1, 1, 0, 1, 1, 1]);
    for i in 0..PSS_LENGTH - 7 {
        x[i + 7] = (x[i + 4] + x[i]) % 2;
    }
    Ok((0..PSS_LENGTH)
        .map(|n| 1.0 - 2.0 * x[(n + 43 * nid2 as usize) % PSS_LENGTH] as f64)
        .collect())
}

/// FFT bin of PSS element `n`, with the 127 elements centred on DC.
fn pss_bin(n: usize, fft_size: usize) -> usize {
    let k = n as isize - (PSS_LENGTH as isize / 2);
    k.rem_euclid(fft_size as isize) as usize
}

/// Time-domain PSS symbol without cyclic prefix. Unitary inverse DFT, so the
/// symbol energy equals 127.
pub fn modulate_ssb_symbol(cfg: &SsbConfig) -> Result<IqBuffer> {
    cfg.validate()?;
    let n = cfg.fft_size;
    let mut bins = vec![Complex64::new(0.0, 0.0); n];
    for (i, d) in generate_pss(cfg.nid2)?.into_iter().enumerate() {
        bins[pss_bin(i, n)] = Complex64::new(d, 0.0);
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut bins);
    let norm = 1.0 / (n as f64).sqrt();
    bins.iter_mut().for_each(|s| *s *= norm);
    Ok(IqBuffer::from_parts(bins, cfg.sample_rate_hz()))
}

/// PSS-like reference at an arbitrary sample rate: the 127 tones spaced by
/// `scs_hz`, synthesised directly over `round(sample_rate / scs)` samples.
/// Coincides with [`modulate_ssb_symbol`] when the rate is `scs * fft_size`.
pub fn synthesize_pss(nid2: u8, scs_hz: f64, sample_rate_hz: f64) -> Result<IqBuffer> {
    let wave = PssWaveform::new(nid2, scs_hz, sample_rate_hz)?;
    Ok(IqBuffer::from_parts(wave.sample(0.0), sample_rate_hz))
}

/// The PSS symbol as a sum of tones, which can be sampled at any fractional
/// delay. The symbol spans `[0, len)` samples and is zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct PssWaveform {
    nid2: u8,
    sequence: Vec<f64>,
    scs_hz: f64,
    sample_rate_hz: f64,
    len: usize,
    /// `(w_m, c_m)` with interior energy `sum_m Re(c_m e^{-j w_m delay})`.
    energy_terms: Vec<(f64, Complex64)>,
    grid: Option<ToneGrid>,
}

/// A DFT size on which every tone falls on a bin: tone `i` sits at bin
/// `(i - 63) * stride mod size`.
#[derive(Clone)]
struct ToneGrid {
    size: usize,
    stride: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl ToneGrid {
    fn find(scs_hz: f64, sample_rate_hz: f64, len: usize) -> Option<Self> {
        let ratio = sample_rate_hz / scs_hz;
        let stride = (1..=16).find(|&q| {
            let l = ratio * q as f64;
            (l - l.round()).abs() < 1e-9 * l
        })?;
        let size = (ratio * stride as f64).round() as usize;
        if size < len || size > 1 << 16 {
            return None;
        }
        let mut planner = FftPlanner::new();
        Some(Self {
            size,
            stride,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        })
    }

    fn bin(&self, tone: usize) -> usize {
        let k = (tone as isize - (PSS_LENGTH / 2) as isize) * self.stride as isize;
        k.rem_euclid(self.size as isize) as usize
    }
}

impl fmt::Debug for ToneGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToneGrid")
            .field("size", &self.size)
            .field("stride", &self.stride)
            .finish()
    }
}

impl PartialEq for ToneGrid {
    fn eq(&self, other: &Self) -> bool {
        (self.size, self.stride) == (other.size, other.stride)
    }
}

impl PssWaveform {
    pub fn new(nid2: u8, scs_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        let sequence = generate_pss(nid2)?;
        if !(scs_hz > 0.0 && sample_rate_hz > scs_hz * PSS_LENGTH as f64) {
            return Err(Error::domain(format!(
                "sample rate {sample_rate_hz} too low for 127 tones at {scs_hz} Hz"
            )));
        }
        let len = (sample_rate_hz / scs_hz).round() as usize;
        Ok(Self {
            nid2,
            energy_terms: Self::energy_terms(&sequence, scs_hz, sample_rate_hz, len),
            grid: ToneGrid::find(scs_hz, sample_rate_hz, len),
            sequence,
            scs_hz,
            sample_rate_hz,
            len,
        })
    }

    pub fn nid2(&self) -> u8 {
        self.nid2
    }

    pub fn sequence(&self) -> &[f64] {
        &self.sequence
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Energy of [`Self::sample`]`(delay)` over samples `1..len-1`, which
    /// lie inside the symbol for any delay in [-1, 1].
    ///
    /// Expanding `|sum_k d_k e^{j w_k (n - delay)}|^2` over tone pairs turns the
    /// sum over `n` into one geometric series per tone spacing `m`, so each
    /// evaluation costs 253 terms.
    pub fn interior_energy(&self, delay_samples: f64) -> f64 {
        // w_m = m * w_1 for m = -126..=126, so the rotations are geometric
        let (w_first, _) = self.energy_terms[0];
        let w1 = self.energy_terms[1].0 - w_first;
        let step = Complex64::from_polar(1.0, -w1 * delay_samples);
        let mut ph = Complex64::from_polar(1.0, -w_first * delay_samples);
        let mut total = 0.0;
        for &(_, c) in &self.energy_terms {
            total += (c * ph).re;
            ph *= step;
        }
        total
    }

    fn energy_terms(
        sequence: &[f64],
        scs_hz: f64,
        sample_rate_hz: f64,
        len: usize,
    ) -> Vec<(f64, Complex64)> {
        let p = PSS_LENGTH as isize;
        let count = len.saturating_sub(2) as f64;
        (-(p - 1)..p)
            .map(|m| {
                let a: f64 = (0..p)
                    .filter(|&k| (0..p).contains(&(k - m)))
                    .map(|k| sequence[k as usize] * sequence[(k - m) as usize])
                    .sum();
                let w = TAU * m as f64 * scs_hz / sample_rate_hz;
                // sum over n = 1..=count of e^{j w n}
                let series = if m == 0 {
                    Complex64::new(count, 0.0)
                } else {
                    let e = Complex64::from_polar(1.0, w);
                    e * (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, w * count))
                        / (Complex64::new(1.0, 0.0) - e)
                };
                (w, series * a / len as f64)
            })
            .collect()
    }

    /// Baseband frequency of tone `i`.
    pub fn tone_hz(&self, i: usize) -> f64 {
        (i as f64 - (PSS_LENGTH / 2) as f64) * self.scs_hz
    }

    fn norm(&self) -> f64 {
        1.0 / (self.len as f64).sqrt()
    }

    /// `len` samples of the symbol delayed by `delay_samples`: sample `n`
    /// holds the waveform at `n - delay`, or zero outside the symbol.
    pub fn sample(&self, delay_samples: f64) -> Vec<Complex64> {
        let n = self.len;
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        let first = delay_samples.ceil().max(0.0) as usize;
        let end = ((n as f64 + delay_samples).ceil().max(0.0) as usize).min(n);
        if first >= end {
            return out;
        }
        let fs = self.sample_rate_hz;
        let norm = self.norm();
        if let Some(g) = &self.grid {
            let mut spec = vec![Complex64::new(0.0, 0.0); g.size];
            for (i, &d) in self.sequence.iter().enumerate() {
                let cycles = (-self.tone_hz(i) * delay_samples / fs).fract();
                spec[g.bin(i)] = Complex64::from_polar(d * norm, TAU * cycles);
            }
            g.inverse.process(&mut spec);
            out[first..end].copy_from_slice(&spec[first..end]);
            return out;
        }
        for (i, &d) in self.sequence.iter().enumerate() {
            let cycles_per_sample = self.tone_hz(i) / fs;
            let step = Complex64::from_polar(1.0, TAU * cycles_per_sample);
            let start = (first as f64 - delay_samples) * cycles_per_sample;
            let mut ph = Complex64::from_polar(d * norm, TAU * start.fract());
            for v in &mut out[first..end] {
                *v += ph;
                ph *= step;
            }
        }
        out
    }

    /// Correlation of `samples` with each tone shifted by `cfo_hz`:
    /// `R_i = sum_m s[m] e^{-j 2 pi (f_i + cfo) m / fs}`.
    pub fn tone_correlations(&self, samples: &[Complex64], cfo_hz: f64) -> Vec<Complex64> {
        let fs = self.sample_rate_hz;
        match &self.grid {
            Some(g) if samples.len() <= g.size => {
                let step = -cfo_hz / fs;
                let mut work = vec![Complex64::new(0.0, 0.0); g.size];
                for (m, (w, s)) in work.iter_mut().zip(samples).enumerate() {
                    *w = s * Complex64::from_polar(1.0, TAU * (step * m as f64).fract());
                }
                g.forward.process(&mut work);
                (0..self.sequence.len()).map(|i| work[g.bin(i)]).collect()
            }
            _ => (0..self.sequence.len())
                .map(|i| {
                    let cycles = -(self.tone_hz(i) + cfo_hz) / fs;
                    let step = Complex64::from_polar(1.0, TAU * cycles);
                    let mut ph = Complex64::new(1.0, 0.0);
                    let mut acc = Complex64::new(0.0, 0.0);
                    for s in samples {
                        acc += s * ph;
                        ph *= step;
                    }
                    acc
                })
                .collect(),
        }
    }
}

/// Multiplies sample `n` by `exp(j(2 pi cfo n / fs + phase0))`.
pub fn apply_cfo(buf: &IqBuffer, cfo_hz: f64, initial_phase_rad: f64) -> IqBuffer {
    let fs = buf.sample_rate_hz;
    let cycles_per_sample = cfo_hz / fs;
    let samples = buf
        .samples
        .iter()
        .enumerate()
        .map(|(n, s)| {
            // keep the argument small before scaling by 2 pi
            let cycles = (cycles_per_sample * n as f64).fract();
            s * Complex64::from_polar(1.0, TAU * cycles + initial_phase_rad)
        })
        .collect();
    IqBuffer::from_parts(samples, fs)
}

/// Applies the profile's time-varying delay and Doppler, with input and
/// output sharing the time origin `t0`.
pub fn apply_dynamic_impairments(
    buf: &IqBuffer,
    profile: &PassProfile,
    carrier_hz: f64,
    t0: f64,
) -> Result<IqBuffer> {
    apply_dynamic_impairments_window(buf, t0, profile, carrier_hz, t0, buf.len())
}

/// Channel emulation over an output window that may start at a different
/// time than the input.
///
/// Output sample `n` sits at `t = output_start + n / fs` and takes the input
/// at `t - delay(t)` (band-limited interpolation, zero outside the input),
/// rotated by the Doppler phase accumulated since `output_start`. Delay and
/// Doppler are interpolated linearly from the profile.
pub fn apply_dynamic_impairments_window(
    buf: &IqBuffer,
    input_start_s: f64,
    profile: &PassProfile,
    carrier_hz: f64,
    output_start_s: f64,
    output_len: usize,
) -> Result<IqBuffer> {
    let fs = buf.sample_rate_hz;
    let output_end = output_start_s + output_len as f64 / fs;
    if !profile.contains(output_start_s) || !profile.contains(output_end) {
        return Err(Error::domain(format!(
            "window [{output_start_s}, {output_end}] s outside profile span [{}, {}] s",
            profile.start_s(),
            profile.end_s()
        )));
    }
    let input = &buf.samples;
    let origin_offset = (output_start_s - input_start_s) * fs;
    let phase_per_metre = -carrier_hz / SPEED_OF_LIGHT;
    let integral0 = profile.range_integral_at(output_start_s);
    let samples = (0..output_len)
        .map(|n| {
            let t = output_start_s + n as f64 / fs;
            let pos = origin_offset + n as f64 - profile.delay_at(t) * fs;
            let x = interpolate(input, pos);
            let cycles = phase_per_metre * (profile.range_integral_at(t) - integral0);
            x * Complex64::from_polar(1.0, TAU * cycles.fract())
        })
        .collect();
    Ok(IqBuffer::from_parts(samples, fs))
}

/// Half-width of the interpolation kernel, in samples.
const INTERP_HALF_WIDTH: usize = 8;
const INTERP_PHASES: usize = 1024;
const KAISER_BETA: f64 = 8.0;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let (mut term, mut sum, mut k) = (1.0, 1.0, 1.0);
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Kaiser-windowed sinc taps for fractional offsets `p / INTERP_PHASES`,
/// `p = 0..=INTERP_PHASES`. Row `p`, tap `j` weights input `i + j + 1 - L`.
fn interp_table() -> &'static [[f64; 2 * INTERP_HALF_WIDTH]] {
    static TABLE: OnceLock<Vec<[f64; 2 * INTERP_HALF_WIDTH]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let l = INTERP_HALF_WIDTH as f64;
        let norm = bessel_i0(KAISER_BETA);
        (0..=INTERP_PHASES)
            .map(|p| {
                let mu = p as f64 / INTERP_PHASES as f64;
                let mut row = [0.0; 2 * INTERP_HALF_WIDTH];
                for (j, w) in row.iter_mut().enumerate() {
                    let x = mu - (j as f64 + 1.0 - l);
                    let sinc = if x == 0.0 {
                        1.0
                    } else {
                        (PI * x).sin() / (PI * x)
                    };
                    let r = (1.0 - (x / l).powi(2)).max(0.0);
                    *w = sinc * bessel_i0(KAISER_BETA * r.sqrt()) / norm;
                }
                row
            })
            .collect()
    })
}

/// Band-limited value of `input` at fractional index `pos`, with zeros
/// outside the buffer.
fn interpolate(input: &[Complex64], pos: f64) -> Complex64 {
    let base = pos.floor();
    let i = base as isize;
    let l = INTERP_HALF_WIDTH as isize;
    if i + l < 0 || i - l >= input.len() as isize {
        return Complex64::new(0.0, 0.0);
    }
    let table = interp_table();
    let phase = (pos - base) * INTERP_PHASES as f64;
    let p = (phase.floor() as usize).min(INTERP_PHASES - 1);
    let a = phase - p as f64;
    let (lo, hi) = (&table[p], &table[p + 1]);
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..2 * INTERP_HALF_WIDTH {
        let idx = i + j as isize + 1 - l;
        if idx >= 0 && (idx as usize) < input.len() {
            acc += input[idx as usize] * (lo[j] + a * (hi[j] - lo[j]));
        }
    }
    acc
}

/// Adds complex white Gaussian noise at `snr_db` relative to the buffer's
/// mean power.
pub fn add_awgn(buf: &IqBuffer, snr_db: f64, seed: u64) -> Result<IqBuffer> {
    let power = buf.power();
    if buf.is_empty() || power <= 0.0 {
        return Err(Error::domain("cannot set an SNR on a zero-power buffer"));
    }
    add_awgn_with_power(buf, snr_db, power, seed)
}

/// As [`add_awgn`], with the signal power given explicitly (e.g. the power of
/// a burst embedded in a longer, mostly empty window).
pub fn add_awgn_with_power(
    buf: &IqBuffer,
    snr_db: f64,
    signal_power: f64,
    seed: u64,
) -> Result<IqBuffer> {
    if !(signal_power.is_finite() && signal_power > 0.0) {
        return Err(Error::domain("signal power must be positive"));
    }
    if snr_db.is_nan() {
        return Err(Error::domain("SNR must not be NaN"));
    }
    let variance = signal_power / 10f64.powf(snr_db / 10.0);
    let sigma = (variance / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = buf
        .samples
        .iter()
        .map(|s| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            s + Complex64::new(re, im) * sigma
        })
        .collect();
    Ok(IqBuffer::from_parts(samples, buf.sample_rate_hz))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cyclic_xcorr(a: &[f64], b: &[f64], lag: usize) -> f64 {
        (0..a.len()).map(|n| a[n] * b[(n + lag) % b.len()]).sum()
    }

    #[test]
    fn pss_shape_and_energy() {
        for nid2 in 0..3 {
            let d = generate_pss(nid2).unwrap();
            assert_eq!(d.len(), 127);
            assert!(d.iter().all(|&v| v == 1.0 || v == -1.0));
            assert_eq!(cyclic_xcorr(&d, &d, 0), 127.0);
        }
        assert!(generate_pss(3).is_err());
    }

    #[test]
    fn pss_matches_known_prefix() {
        // x(0..7) = 0,1,1,0,1,1,1 -> d(n) = 1 - 2x(n) for nid2 = 0
        let d = generate_pss(0).unwrap();
        assert_eq!(&d[..7], &[1.0, -1.0, -1.0, 1.0, -1.0, -1.0, -1.0]);
        // nid2 selects a cyclic shift of 43 elements
        let d1 = generate_pss(1).unwrap();
        assert!((0..127).all(|n| d1[n] == d[(n + 43) % 127]));
    }

    #[test]
    fn pss_cross_correlation_regression() {
        // m-sequence: cyclic autocorrelation is -1 off-peak, and distinct
        // nid2 values are cyclic shifts of each other. Computed over all
        // 127 lags for each pair.
        let seqs: Vec<_> = (0..3).map(|n| generate_pss(n).unwrap()).collect();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let values: Vec<f64> = (0..127)
                .map(|l| cyclic_xcorr(&seqs[a], &seqs[b], l))
                .collect();
            let max_abs = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert_eq!(
                max_abs, 127.0,
                "pair {a},{b}: cyclic shift aligns at one lag"
            );
            assert_eq!(values.iter().filter(|&&v| v == 127.0).count(), 1);
            assert!(values.iter().filter(|&&v| v != 127.0).all(|&v| v == -1.0));
            // at zero lag (the alignment a detector actually sees) they are nearly orthogonal
            assert_eq!(values[0], -1.0);
        }
    }

    #[test]
    fn ssb_symbol_rate_energy_and_roundtrip() {
        let cfg = SsbConfig::default().with_nid2(2);
        let sym = modulate_ssb_symbol(&cfg).unwrap();
        assert_eq!(sym.len(), 256);
        assert_eq!(sym.sample_rate_hz(), 3.84e6);
        assert!((sym.energy() - 127.0).abs() < 1e-9);

        let mut spec = sym.samples().to_vec();
        FftPlanner::new().plan_fft_forward(256).process(&mut spec);
        let norm = 1.0 / 16.0;
        let d = generate_pss(2).unwrap();
        for (i, v) in d.iter().enumerate() {
            let b = spec[pss_bin(i, 256)] * norm;
            assert!((b - Complex64::new(*v, 0.0)).norm() < 1e-9);
        }
        let occupied: Vec<_> = (0..127).map(|i| pss_bin(i, 256)).collect();
        for (k, b) in spec.iter().enumerate() {
            if !occupied.contains(&k) {
                assert!(b.norm() * norm < 1e-9);
            }
        }
    }

    #[test]
    fn direct_synthesis_matches_ifft() {
        let cfg = SsbConfig::default().with_nid2(1);
        let a = modulate_ssb_symbol(&cfg).unwrap();
        let b = synthesize_pss(1, 15e3, 3.84e6).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert!((x - y).norm() < 1e-9);
        }
        let ul = synthesize_pss(0, 15e3, 11e6).unwrap();
        assert_eq!(ul.len(), 733);
    }

    #[test]
    fn delayed_waveform_is_shifted_and_masked() {
        let wave = PssWaveform::new(2, 15e3, 11e6).unwrap();
        let base = wave.sample(0.0);
        let shifted = wave.sample(3.0);
        assert!(shifted[..3].iter().all(|v| v.norm() == 0.0));
        for n in 3..wave.len() {
            assert!((shifted[n] - base[n - 3]).norm() < 1e-9);
        }
        let early = wave.sample(-2.0);
        assert!(early[wave.len() - 2..].iter().all(|v| v.norm() == 0.0));
        // the tone sum at a half-sample offset, evaluated independently
        let d = generate_pss(2).unwrap();
        let n = 100;
        let t = (n as f64 - 0.5) / 11e6;
        let direct: Complex64 = d
            .iter()
            .enumerate()
            .map(|(i, &v)| Complex64::from_polar(v, TAU * (i as f64 - 63.0) * 15e3 * t))
            .sum::<Complex64>()
            / (733f64).sqrt();
        assert!((wave.sample(0.5)[n] - direct).norm() < 1e-9);
    }

    #[test]
    fn interior_energy_matches_samples() {
        for (fs, delay) in [(3.84e6, 0.0), (3.84e6, 0.3), (11e6, -0.8), (11e6, 1.0)] {
            let wave = PssWaveform::new(1, 15e3, fs).unwrap();
            let v = wave.sample(delay);
            let direct: f64 = v[1..wave.len() - 1].iter().map(|x| x.norm_sqr()).sum();
            let closed = wave.interior_energy(delay);
            assert!(
                (direct - closed).abs() < 1e-9 * direct,
                "{direct} vs {closed}"
            );
        }
    }

    #[test]
    fn tone_correlations_match_direct_sums() {
        // 11 Msps sits on a 2200-point grid; 2.0137 Msps has no small grid
        for fs in [3.84e6, 11e6, 2.0137e6] {
            let wave = PssWaveform::new(2, 15e3, fs).unwrap();
            assert_eq!(wave.grid.is_some(), fs != 2.0137e6);
            let x: Vec<Complex64> = (0..wave.len() - 3)
                .map(|n| Complex64::new((0.37 * n as f64).sin(), (n % 11) as f64 * 0.1))
                .collect();
            let cfo = 812.5;
            let got = wave.tone_correlations(&x, cfo);
            for (i, g) in got.iter().enumerate() {
                let f = wave.tone_hz(i) + cfo;
                let want: Complex64 = x
                    .iter()
                    .enumerate()
                    .map(|(m, s)| s * Complex64::from_polar(1.0, -TAU * f * m as f64 / fs))
                    .sum();
                assert!(
                    (g - want).norm() < 1e-8 * (1.0 + want.norm()),
                    "{fs} tone {i}"
                );
            }
            let direct = PssWaveform {
                grid: None,
                ..wave.clone()
            };
            for (a, b) in wave.sample(0.4).iter().zip(direct.sample(0.4)) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn interpolator_reproduces_integer_shifts() {
        let x: Vec<Complex64> = (0..40)
            .map(|i| Complex64::new(i as f64, -(i as f64)))
            .collect();
        for i in 0..40 {
            assert!((interpolate(&x, i as f64) - x[i]).norm() < 1e-12);
        }
        assert_eq!(interpolate(&x, -20.0), Complex64::new(0.0, 0.0));
        assert_eq!(interpolate(&x, 60.0), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn invalid_ssb_config() {
        for fft_size in [128, 300] {
            let cfg = SsbConfig {
                fft_size,
                ..SsbConfig::default()
            };
            assert!(cfg.validate().is_err());
        }
        let cfg = SsbConfig {
            scs_hz: 60e3,
            ..SsbConfig::default()
        };
        assert!(modulate_ssb_symbol(&cfg).is_err());
    }

    #[test]
    fn cfo_identity_inverse_and_magnitude() {
        let sym = modulate_ssb_symbol(&SsbConfig::default()).unwrap();
        assert_eq!(apply_cfo(&sym, 0.0, 0.0), sym);
        let shifted = apply_cfo(&sym, 12_345.0, 0.0);
        let back = apply_cfo(&shifted, -12_345.0, 0.0);
        for ((a, b), c) in sym
            .samples()
            .iter()
            .zip(back.samples())
            .zip(shifted.samples())
        {
            assert!((a - b).norm() < 1e-9);
            assert!((a.norm() - c.norm()).abs() < 1e-12);
        }
        assert_eq!(shifted.sample_rate_hz(), sym.sample_rate_hz());
    }

    #[test]
    fn awgn_determinism_and_vanishing_noise() {
        let sym = modulate_ssb_symbol(&SsbConfig::default()).unwrap();
        let a = add_awgn(&sym, 3.0, 7).unwrap();
        let b = add_awgn(&sym, 3.0, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, add_awgn(&sym, 3.0, 8).unwrap());
        let quiet = add_awgn(&sym, 300.0, 7).unwrap();
        for (x, y) in quiet.samples().iter().zip(sym.samples()) {
            assert!((x - y).norm() < 1e-9);
        }
        let zero = IqBuffer::zeros(16, 1e6).unwrap();
        assert!(add_awgn(&zero, 10.0, 1).is_err());
    }

    #[test]
    fn awgn_measured_snr() {
        let n = 100_000;
        let tone: Vec<_> = (0..n)
            .map(|i| Complex64::from_polar(1.0, 0.01 * i as f64))
            .collect();
        let buf = IqBuffer::new(tone, 1e6).unwrap();
        let noisy = add_awgn(&buf, 10.0, 42).unwrap();
        let noise_power: f64 = noisy
            .samples()
            .iter()
            .zip(buf.samples())
            .map(|(y, x)| (y - x).norm_sqr())
            .sum::<f64>()
            / n as f64;
        let snr = 10.0 * (buf.power() / noise_power).log10();
        assert!((snr - 10.0).abs() < 0.1, "{snr}");
    }

    fn flat_profile(delay_s: f64, velocity: f64) -> PassProfile {
        let t = vec![-1.0, 0.0, 1.0];
        PassProfile::from_samples(
            t,
            vec![delay_s * SPEED_OF_LIGHT; 3],
            vec![1.0; 3],
            vec![velocity; 3],
        )
        .unwrap()
    }

    #[test]
    fn static_impairments() {
        let sym = modulate_ssb_symbol(&SsbConfig::default()).unwrap();
        let mut padded = sym.samples().to_vec();
        padded.resize(400, Complex64::new(0.0, 0.0));
        let buf = IqBuffer::new(padded, sym.sample_rate_hz()).unwrap();

        let out = apply_dynamic_impairments(&buf, &flat_profile(0.0, 0.0), 20e9, 0.0).unwrap();
        for (a, b) in out.samples().iter().zip(buf.samples()) {
            assert!((a - b).norm() < 1e-9);
        }

        // 40 samples exactly at 3.84 Msps
        let d = 40.0 / 3.84e6;
        let out = apply_dynamic_impairments(&buf, &flat_profile(d, 0.0), 20e9, 0.0).unwrap();
        for n in 0..400 {
            let expected = if n >= 40 {
                buf.samples()[n - 40]
            } else {
                Complex64::new(0.0, 0.0)
            };
            assert!((out.samples()[n] - expected).norm() < 1e-6, "n={n}");
        }

        // fractional delays match the tone sum sampled at shifted times
        let wave = PssWaveform::new(0, 15e3, 3.84e6).unwrap();
        for frac in [0.25, 0.5, 0.9] {
            let d = (10.0 + frac) / 3.84e6;
            let out = apply_dynamic_impairments(&buf, &flat_profile(d, 0.0), 20e9, 0.0).unwrap();
            let expected = wave.sample(10.0 + frac);
            // away from the symbol edges, where the truncated symbol rings
            for (n, (o, e)) in out
                .samples()
                .iter()
                .zip(&expected)
                .enumerate()
                .take(230)
                .skip(40)
            {
                assert!((o - e).norm() < 2e-3, "frac {frac} n={n}");
            }
        }
    }

    #[test]
    fn constant_velocity_is_a_cfo() {
        let sym = modulate_ssb_symbol(&SsbConfig::default()).unwrap();
        let v = -3_500.0;
        let fc = 19.7e9;
        let out = apply_dynamic_impairments(&sym, &flat_profile(0.0, v), fc, -0.2).unwrap();
        let expected = apply_cfo(&sym, -v / SPEED_OF_LIGHT * fc, 0.0);
        for (a, b) in out.samples().iter().zip(expected.samples()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn impairments_outside_profile_rejected() {
        let sym = modulate_ssb_symbol(&SsbConfig::default()).unwrap();
        assert!(apply_dynamic_impairments(&sym, &flat_profile(0.0, 0.0), 1e9, 0.99999).is_err());
        assert!(apply_dynamic_impairments(&sym, &flat_profile(0.0, 0.0), 1e9, -2.0).is_err());
    }

    #[test]
    fn raw_iq_roundtrip() {
        let sym = modulate_ssb_symbol(&SsbConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ssb.iq");
        sym.write_raw_f32(&path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 256 * 8);
        let back = IqBuffer::read_raw_f32(&path, sym.sample_rate_hz()).unwrap();
        for (a, b) in sym.samples().iter().zip(back.samples()) {
            assert!((a - b).norm() < 1e-6);
        }
    }
}
