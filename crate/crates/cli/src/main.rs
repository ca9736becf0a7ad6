use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use critwave::diagnostics::{lemma7_scan_at, virial_residuals};
use critwave::experiments::{
    effective_parallelism, load_geometry, report_thresholds, run_scenario, run_sweep,
    ExperimentError, ScenarioConfig,
};
use critwave::geometry::{check_assumptions, GeometryError};
use critwave::harmonic_map::{solve_q, DEFAULT_DS, DEFAULT_S_RANGE};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "critwave",
    version,
    about = "Radial wave map / Yang-Mills threshold laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario configuration (JSON); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value by dotted path, e.g. `grid.n_cells=8192`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the standing assumptions on the configured geometry.
    CheckGeometry {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Solve for the harmonic map Q and write its profile.
    HarmonicMap {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_DS)]
        ds: f64,
        #[arg(long, default_value_t = DEFAULT_S_RANGE.0, allow_hyphen_values = true)]
        s_min: f64,
        #[arg(long, default_value_t = DEFAULT_S_RANGE.1)]
        s_max: f64,
    },
    /// Report C*, D*, E(Q), h(0) and the sup bound K(E).
    Thresholds {
        #[command(flatten)]
        common: Common,
    },
    /// Run one scenario and write its series, snapshots and summary.
    Evolve {
        #[command(flatten)]
        common: Common,
    },
    /// Run the scenario for each value of one config parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted path of the swept parameter.
        #[arg(long)]
        param: String,
        /// Comma-separated values (each parsed as JSON, else taken as a string).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        /// Worker count (capped by CRITWAVE_THREADS).
        #[arg(long, default_value_t = default_parallelism())]
        parallelism: usize,
    },
    /// Random scan of F/E over profiles in the sub-threshold set.
    Lemma7Scan {
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario and compare the virial residuals with the tail bound.
    VirialReport {
        #[command(flatten)]
        common: Common,
    },
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load(common: &Common) -> Result<ScenarioConfig, ExperimentError> {
    ScenarioConfig::load(common.config.as_deref(), &common.set)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let text =
        serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Config(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::CheckGeometry { common, samples } => {
            let cfg = load(&common)?;
            let geo = cfg.geometry.resolve()?.build()?;
            let report = check_assumptions(&geo, samples);
            write_json(&common.out.join("geometry_report.json"), &report)?;
            println!("{report}");
            if !report.all_pass() {
                return Err(GeometryError::Assumptions(report).into());
            }
        }
        Command::HarmonicMap {
            common,
            ds,
            s_min,
            s_max,
        } => {
            let cfg = load(&common)?;
            let geo = load_geometry(&cfg)?;
            let profile = solve_q(&geo, ds, (s_min, s_max))?;
            fs::create_dir_all(&common.out)?;
            let mut w = BufWriter::new(fs::File::create(common.out.join("q.csv"))?);
            profile.write_csv(&mut w)?;
            w.flush()?;
            let summary = profile.summary();
            write_json(&common.out.join("q_summary.json"), &summary)?;
            println!(
                "C* = {}  E(Q) = {}  max ODE residual = {:e}",
                summary.c_star, summary.e_q, summary.residual_max
            );
        }
        Command::Thresholds { common } => {
            let cfg = load(&common)?;
            let geo = load_geometry(&cfg)?;
            let report = report_thresholds(&geo);
            write_json(&common.out.join("thresholds.json"), &report)?;
            print!("{report}");
        }
        Command::Evolve { common } => {
            let cfg = load(&common)?;
            let out = run_scenario(&cfg, &common.out)?;
            println!("{}", out.dir.display());
            println!(
                "{}",
                serde_json::to_string_pretty(&out.record.summary()).expect("serializable")
            );
        }
        Command::Sweep {
            common,
            param,
            values,
            parallelism,
        } => {
            let cfg = load(&common)?;
            let values: Vec<Value> = values
                .iter()
                .filter(|v| !v.trim().is_empty())
                .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.clone())))
                .collect();
            let result = run_sweep(&cfg, &param, &values, parallelism, &common.out)?;
            print!("{}", result.table());
        }
        Command::Lemma7Scan { common } => {
            let cfg = load(&common)?;
            let geo = load_geometry(&cfg)?;
            let delta = cfg.scan.delta_fraction * geo.threshold_energy();
            let result = lemma7_scan_at(
                &geo,
                delta,
                cfg.scan.n_profiles,
                cfg.seed,
                cfg.scan.energy_fraction,
            )?;
            result.write(&common.out)?;
            println!(
                "c_emp = {}  (min F/E = {}, max F/E = {}, all F > 0: {})",
                result.c_emp, result.min_ratio, result.max_ratio, result.all_f_positive
            );
        }
        Command::VirialReport { common } => {
            let cfg = load(&common)?;
            let out = run_scenario(&cfg, &common.out)?;
            let res = virial_residuals(&out.record);
            let e = out.record.e_initial();
            let max1 = res.iter().map(|p| p.r1.abs()).fold(0.0, f64::max);
            let max2 = res.iter().map(|p| p.r2.abs()).fold(0.0, f64::max);
            let exceed = res
                .iter()
                .filter(|p| p.r1.abs().max(p.r2.abs()) > p.bound + 5e-3 * e)
                .count();
            let report = json!({
                "run_dir": out.dir.file_name().map(|s| s.to_string_lossy().into_owned()),
                "energy": e,
                "samples": res.len(),
                "max_residual1": max1,
                "max_residual2": max2,
                "samples_above_bound": exceed,
            });
            write_json(&out.dir.join("virial_report.json"), &report)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("serializable")
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = effective_parallelism(default_parallelism());
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .ok();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
