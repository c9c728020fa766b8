//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p ntn-cli --test acceptance`.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ntn_core::harness::acquisition::{trial_seed, TrialRunner};
use ntn_core::harness::config::OrbitSection;
use ntn_core::harness::{run_acquisition_sweep, simulate, ScenarioConfig};
use ntn_core::orbit::{Pass, EARTH_MU_M3S2, EARTH_RADIUS_M, SPEED_OF_LIGHT};
use ntn_core::payload::{validate_plan, FrequencyPlan, ViolationCode};
use ntn_core::ue_sync::estimate_fine_cfo;
use ntn_core::waveform::{apply_cfo, modulate_ssb_symbol, IqBuffer, SsbConfig};
use ntn_core::Complex64;

type Check = Result<String, String>;

/// Name, runtime limit in seconds, check.
type Criterion = (&'static str, f64, fn() -> Check);

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn leo600() -> ScenarioConfig {
    ScenarioConfig::from_path(&configs_dir().join("leo600.toml")).expect("configs/leo600.toml")
}

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// 100 random orbits with the pass's peak elevation, altitude and a random
/// instant above 10 degrees.
fn random_orbits() -> Vec<(OrbitSection, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..100)
        .map(|_| {
            let orbit = OrbitSection {
                altitude_m: rng.random_range(400e3..1500e3),
                max_elevation_rad: rng.random_range(15f64..90.0).to_radians(),
                min_elevation_rad: 10f64.to_radians(),
            };
            (orbit, rng.random_range(0.0..1.0))
        })
        .collect()
}

/// Slant range by the law of cosines on the great circle through the
/// sub-satellite track, written independently of the library geometry.
fn oracle_range(o: &OrbitSection, t: f64) -> f64 {
    let re = EARTH_RADIUS_M;
    let rs = re + o.altitude_m;
    let e = o.max_elevation_rad;
    let psi0 = (re * e.cos() / rs).acos() - e;
    let w = (EARTH_MU_M3S2 / rs.powi(3)).sqrt();
    let cos_psi = psi0.cos() * (w * t).cos();
    (re * re + rs * rs - 2.0 * re * rs * cos_psi).sqrt()
}

fn doppler_oracle() -> Check {
    let mut worst: f64 = 0.0;
    for (i, (o, u)) in random_orbits().iter().enumerate() {
        let pass = o.pass().map_err(|e| e.to_string())?;
        let (rise, set) = pass
            .visibility_window(o.min_elevation_rad)
            .map_err(|e| e.to_string())?;
        let t = rise + u * (set - rise);
        let fc = 1e9 + 39e9 * ((i * 37) % 100) as f64 / 100.0;
        let h = 1e-3;
        let rate = (oracle_range(o, t + h) - oracle_range(o, t - h)) / (2.0 * h);
        let oracle = -rate / SPEED_OF_LIGHT * fc;
        let got = pass.doppler_shift(t, fc).map_err(|e| e.to_string())?;
        let tol = (1e-3 * oracle.abs()).max(1.0);
        worst = worst.max((got - oracle).abs() / tol);
        if (got - oracle).abs() > tol {
            return Err(format!(
                "orbit {i}: {got} Hz vs oracle {oracle} Hz (tolerance {tol} Hz)"
            ));
        }
    }
    Ok(format!("100 orbits, worst error {worst:.2e} of tolerance"))
}

fn profile_shape() -> Check {
    for (i, (o, _)) in random_orbits().iter().enumerate() {
        let pass: Pass = o.pass().map_err(|e| e.to_string())?;
        let (rise, set) = pass
            .visibility_window(o.min_elevation_rad)
            .map_err(|e| e.to_string())?;
        let p = pass
            .generate_pass_profile(rise, set, 0.5)
            .map_err(|e| e.to_string())?;
        let r = p.slant_range_m();
        let dop: Vec<f64> = p.t_s().iter().map(|&t| p.doppler_at(t, 20e9)).collect();
        let k_min = (0..r.len()).min_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
        let unimodal = r[..=k_min].windows(2).all(|w| w[1] < w[0])
            && r[k_min..].windows(2).all(|w| w[1] > w[0]);
        let non_increasing = dop.windows(2).all(|w| w[1] <= w[0]);
        let crossings = dop.windows(2).filter(|w| w[0] > 0.0 && w[1] <= 0.0).count();
        let k_zero = dop.iter().position(|&d| d <= 0.0).unwrap_or(dop.len());
        // the crossing lies between k_zero - 1 and k_zero
        let near = k_zero.abs_diff(k_min) <= 1 || (k_zero - 1).abs_diff(k_min) <= 1;
        if !(unimodal && non_increasing && crossings == 1 && near) {
            return Err(format!(
                "orbit {i}: unimodal {unimodal}, non-increasing {non_increasing}, \
                 {crossings} crossings, zero at {k_zero} vs min range at {k_min}"
            ));
        }
    }
    Ok("100 passes".into())
}

fn detector_cfg() -> ScenarioConfig {
    ScenarioConfig::new(OrbitSection {
        altitude_m: 600e3,
        max_elevation_rad: 1.2,
        min_elevation_rad: 0.2,
    })
}

fn sub_scs() -> Check {
    let cfg = detector_cfg();
    let scs = cfg.ssb.scs_hz;
    let mut runner = TrialRunner::new(&cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut hits = 0;
    for trial in 0..200 {
        let cfo = rng.random_range(-0.5 * scs..0.5 * scs);
        let o = runner
            .run_trial(cfo, 0.0, trial_seed(3, 0, 0, trial))
            .map_err(|e| e.to_string())?;
        hits += o.zero_bank as usize;
    }
    let p = hits as f64 / 200.0;
    ensure(p >= 0.99, format!("P(detect, {{0}} bank) = {p:.3}"))
}

fn high_cfo() -> Check {
    let cfg = detector_cfg();
    let scs = cfg.ssb.scs_hz;
    let rows = run_acquisition_sweep(&cfg, &[2.0 * scs], &[0.0], 200).map_err(|e| e.to_string())?;
    let r = rows[0];
    ensure(
        r.p_detect_zero_bank <= 0.5 && r.p_detect_full_bank >= 0.99,
        format!(
            "P(detect) {{0}} bank {:.3}, full bank {:.3}",
            r.p_detect_zero_bank, r.p_detect_full_bank
        ),
    )
}

fn fine_cfo() -> Check {
    let cfg = SsbConfig::default();
    let scs = cfg.scs_hz;
    let symbol = modulate_ssb_symbol(&cfg).map_err(|e| e.to_string())?;
    let fs = symbol.sample_rate_hz();
    let lead = 100;
    let mut s = vec![Complex64::new(0.0, 0.0); lead];
    s.extend_from_slice(symbol.samples());
    s.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), 100));
    let framed = IqBuffer::new(s, fs).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let residual = -0.5 * scs + scs * (i as f64 + 0.5) / 20.0;
        let rx = apply_cfo(&framed, residual, 0.7);
        let est = estimate_fine_cfo(&rx, &cfg, lead, 0.0).map_err(|e| e.to_string())?;
        worst = worst.max((est - residual).abs());
    }
    ensure(
        worst <= 0.01 * scs,
        format!("worst error {worst:.3e} Hz over 20 residuals"),
    )
}

fn uplink_doppler_end_to_end() -> Check {
    let mut cfg = leo600();
    // an update every SSB, so every row is measured right after one
    cfg.sib19.cadence_ms = cfg.ssb.periodicity_ms;
    let run = simulate(&cfg).map_err(|e| e.to_string())?;
    let rows = run.metrics.rows();
    let mut worst: f64 = 0.0;
    for r in rows {
        let Some(res) = r.residual_ul_cfo_hz else {
            return Err(format!("no uplink measurement at t = {} s", r.t_s));
        };
        worst = worst.max(res.abs());
    }
    ensure(
        worst < 1.0,
        format!("{} instants, max |residual| {worst:.4} Hz", rows.len()),
    )
}

fn delay_alignment() -> Check {
    let cfg = leo600();
    let run = simulate(&cfg).map_err(|e| e.to_string())?;
    let fs_ul = cfg.plan.sample_rate_hz;
    let bound = run.scenario.max_round_trip_rate() * cfg.sib19.cadence_ms * 1e-3 * fs_ul;
    let (mut events, mut worst_after, mut worst) = (0, 0.0f64, 0.0f64);
    for r in run.metrics.rows() {
        let Some(err) = r.ul_timing_error_samples else {
            if r.detection == 1 && r.sib19 == 1 {
                return Err(format!("no uplink measurement at t = {} s", r.t_s));
            }
            continue;
        };
        worst = worst.max(err.abs());
        if r.sib19 == 1 {
            events += 1;
            worst_after = worst_after.max(err.abs());
            if r.buffer_delay_s + r.rtt_s != r.k_offset_s {
                return Err(format!(
                    "t = {} s: {} + {} != {}",
                    r.t_s, r.buffer_delay_s, r.rtt_s, r.k_offset_s
                ));
            }
        }
    }
    ensure(
        events > 0 && worst_after <= 1.0 && worst <= bound,
        format!(
            "{events} SIB19 events, error after update {worst_after:.3}, \
             overall {worst:.2} <= bound {bound:.2} samples"
        ),
    )
}

fn frequency_plan() -> Check {
    let p = FrequencyPlan::default();
    if validate_plan(&p, true).is_err() || p.occupancy_hz() != 11e6 || p.sample_rate_hz != 11e6 {
        return Err("default plan rejected or occupancy not 11 MHz".into());
    }
    let slow = FrequencyPlan {
        sample_rate_hz: 10e6,
        ..p
    };
    let v = validate_plan(&slow, true).err().unwrap_or_default();
    if !v
        .iter()
        .any(|v| v.code == ViolationCode::OccupancyExceedsSampleRate)
    {
        return Err(format!("10 Msps plan: {v:?}"));
    }
    let high = FrequencyPlan {
        ka_down_center_hz: 21e9,
        ..p
    };
    let v = validate_plan(&high, true).err().unwrap_or_default();
    if !v
        .iter()
        .any(|v| v.code == ViolationCode::LnbInputOutOfRange && v.field == "ka_down_center_hz")
    {
        return Err(format!("21 GHz plan: {v:?}"));
    }
    Ok("default valid at 11 MHz; 10 Msps and 21 GHz rejected".into())
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = configs_dir().join("leo600_noisy.toml");
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("run{i}.csv"));
        let run = Command::new(env!("CARGO_BIN_EXE_ntnsim"))
            .arg("e2e")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !run.status.success() {
            return Err(format!(
                "e2e exited with {}: {}",
                run.status,
                String::from_utf8_lossy(&run.stderr)
            ));
        }
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure(
        outputs[0] == outputs[1] && !outputs[0].is_empty(),
        format!(
            "{} bytes, identical: {}",
            outputs[0].len(),
            outputs[0] == outputs[1]
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("doppler oracle", 5.0, doppler_oracle),
        ("profile shape", 1.0, profile_shape),
        ("detector, sub-SCS", 30.0, sub_scs),
        ("detector, high CFO", 60.0, high_cfo),
        ("fine CFO", 5.0, fine_cfo),
        ("uplink Doppler end to end", 60.0, uplink_doppler_end_to_end),
        ("delay alignment", 60.0, delay_alignment),
        ("frequency plan", 1.0, frequency_plan),
        ("determinism", 0.0, determinism),
    ];
    let mut failed = 0;
    let mut elapsed = Vec::new();
    for (i, (name, limit_s, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        elapsed.push(took);
        // the last limit is relative to criterion 6's runtime
        let limit = if i == 8 {
            2 * elapsed[5]
        } else {
            Duration::from_secs_f64(*limit_s)
        };
        let (ok, detail) = match result {
            Ok(d) if took < limit => (true, d),
            Ok(d) => (false, format!("{d}; too slow")),
            Err(d) => (false, d),
        };
        failed += !ok as usize;
        println!(
            "{} {}. {name}: {detail} ({:.2} s, limit {:.2} s)",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            took.as_secs_f64(),
            limit.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
