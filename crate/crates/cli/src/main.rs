use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use ntn_core::harness::acquisition::SWEEP_HEADER;
use ntn_core::harness::metrics::{export_profile, write_table};
use ntn_core::harness::{export_metrics, run_acquisition_sweep, simulate, Format, ScenarioConfig};
use ntn_core::payload::{validate_plan, FrequencyPlan, PlanViolation};
use ntn_core::Error;

#[derive(Parser, Debug)]
#[command(name = "ntnsim", version, about = "LEO NTN link-level scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the sampled pass profile over the visibility window.
    Pass {
        #[command(flatten)]
        common: Common,
        /// Profile spacing in seconds.
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
    },
    /// Validate the frequency plan of a config (defaults when no config is given).
    Plan {
        #[command(flatten)]
        common: Common,
        /// Skip the BUC/LNB range checks.
        #[arg(long)]
        no_range_check: bool,
    },
    /// Detection-probability sweep over the config's CFO and SNR grids.
    Acquire {
        #[command(flatten)]
        common: Common,
        /// Overrides `acquire.trials_per_point`.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Full-chain pass simulation.
    E2e {
        #[command(flatten)]
        common: Common,
        /// Dump the first downlink capture as raw interleaved f32, with a JSON
        /// sidecar next to it.
        #[arg(long)]
        iq_dump: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file. `plan` prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to json for a `.json` output path, csv otherwise.
    #[arg(long)]
    format: Option<Format>,
    /// Replaces the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn scenario(&self) -> anyhow::Result<ScenarioConfig> {
        let path = self.config.as_deref().context("--config is required")?;
        let mut cfg = ScenarioConfig::from_path(path)?;
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        Ok(cfg)
    }

    fn out(&self) -> anyhow::Result<&Path> {
        self.out.as_deref().context("--out is required")
    }

    fn format(&self) -> Format {
        self.format.unwrap_or_else(|| match &self.out {
            Some(p)
                if p.extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("json")) =>
            {
                Format::Json
            }
            _ => Format::Csv,
        })
    }
}

/// Only the plan table is read, so that an invalid plan is reported as
/// violations rather than rejected at load time.
#[derive(Deserialize, Default)]
struct PlanFile {
    #[serde(default)]
    plan: FrequencyPlan,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Pass { common, dt } => {
            let cfg = common.scenario()?;
            let pass = cfg.orbit.pass()?;
            let (rise, set) = pass.visibility_window(cfg.orbit.min_elevation_rad)?;
            let profile = pass.generate_pass_profile(rise, set, dt)?;
            export_profile(&profile, common.format(), common.out()?)?;
            eprintln!(
                "pass {:.1} s to {:.1} s, {} samples",
                rise,
                set,
                profile.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Plan {
            common,
            no_range_check,
        } => plan(&common, !no_range_check),
        Command::Acquire { common, trials } => {
            let cfg = common.scenario()?;
            let a = &cfg.acquire;
            let trials = trials.unwrap_or(a.trials_per_point);
            let rows = run_acquisition_sweep(&cfg, &a.cfo_grid_hz, &a.snr_grid_db, trials)?;
            write_table(&rows, &SWEEP_HEADER, common.format(), common.out()?)?;
            eprintln!("{} grid points, {trials} trials each", rows.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::E2e { common, iq_dump } => e2e(&common, iq_dump.as_deref()),
    }
}

fn plan(common: &Common, range_check: bool) -> anyhow::Result<ExitCode> {
    let plan = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<PlanFile>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
                .plan
        }
        None => FrequencyPlan::default(),
    };
    let violations = validate_plan(&plan, range_check).err().unwrap_or_default();
    let report = serde_json::json!({
        "valid": violations.is_empty(),
        "occupancy_hz": plan.occupancy_hz(),
        "sample_rate_hz": plan.sample_rate_hz,
        "dl_carrier_hz": plan.dl_carrier_hz(),
        "ul_carrier_hz": plan.ul_carrier_hz(),
        "violations": violations,
    });
    match (&common.out, common.format()) {
        (Some(path), Format::Csv) => write_table(
            &violations,
            &["code", "field", "limit", "actual"],
            Format::Csv,
            path,
        )?,
        (Some(path), Format::Json) => std::fs::write(path, format!("{report:#}\n"))
            .with_context(|| format!("writing {}", path.display()))?,
        (None, Format::Json) => println!("{report:#}"),
        (None, Format::Csv) => print_plan(&plan, &violations),
    }
    Ok(if violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn print_plan(plan: &FrequencyPlan, violations: &[PlanViolation]) {
    println!(
        "occupancy {} Hz of {} Hz; DL {} Hz, UL {} Hz",
        plan.occupancy_hz(),
        plan.sample_rate_hz,
        plan.dl_carrier_hz(),
        plan.ul_carrier_hz()
    );
    if violations.is_empty() {
        println!("ok");
    }
    for v in violations {
        println!("violation {v}");
    }
}

fn e2e(common: &Common, iq_dump: Option<&Path>) -> anyhow::Result<ExitCode> {
    let cfg = common.scenario()?;
    let out = common.out()?;
    let format = common.format();
    let run = match simulate(&cfg) {
        Ok(run) => run,
        Err(Error::ScenarioFailure { reason, partial }) => {
            export_metrics(&partial, format, out)?;
            eprintln!("scenario failed after {} rows: {reason}", partial.len());
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e.into()),
    };
    export_metrics(&run.metrics, format, out)?;

    if let Some(path) = iq_dump {
        let Some(capture) = &run.dl_capture else {
            bail!("no downlink capture to dump");
        };
        capture.write_raw_f32(path)?;
        let sidecar = sidecar_path(path);
        let meta = serde_json::json!({
            "scenario_id": cfg.id,
            "sample_rate_hz": capture.sample_rate_hz(),
            "carrier_hz": cfg.plan.dl_carrier_hz(),
            "samples": capture.len(),
            "format": "cf32_le",
        });
        std::fs::write(&sidecar, format!("{meta:#}\n"))
            .with_context(|| format!("writing {}", sidecar.display()))?;
    }

    let rows = run.metrics.rows();
    let detected = rows.iter().filter(|r| r.detection == 1).count();
    let max_residual = rows
        .iter()
        .filter_map(|r| r.residual_ul_cfo_hz)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    eprintln!(
        "{} rows, {detected} detected, max |UL residual| {max_residual:.3} Hz, k_offset {:.3} ms",
        rows.len(),
        run.scenario.k_offset_s * 1e3
    );
    Ok(ExitCode::SUCCESS)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}
