//! `detect` command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;
use taser_core::hw_model::{cycle_model, ArrayGeometry};

use crate::error::{HarnessError, Result};
use crate::sweep::{run_sweep, write_csv_file, ArithmeticMode, Modulation, SweepConfig, SystemMode};

/// Environment variable overriding the worker-thread count.
pub const THREADS_ENV: &str = "TASER_THREADS";

#[derive(Debug, Parser)]
#[command(name = "detect", about = "Monte-Carlo error-rate sweeps for TASER and reference detectors")]
pub struct Args {
    /// System size `BxU` (coherent) or `BxK` (JED, K data slots).
    #[arg(long, value_parser = parse_system)]
    pub system: (usize, usize),
    #[arg(long = "mod", value_enum, default_value = "bpsk")]
    pub modulation: Modulation,
    #[arg(long, value_enum, default_value = "coherent")]
    pub mode: SystemMode,
    /// SNR points in dB: `start:step:stop` (inclusive) or a comma list.
    #[arg(long, value_parser = parse_snr, allow_hyphen_values = true)]
    pub snr: SnrList,
    /// TASER iteration budgets, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    pub tmax: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    /// Comma-separated detector names.
    #[arg(long, value_delimiter = ',', default_value = "taser,mmse")]
    pub detectors: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.99)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "float")]
    pub arithmetic: ArithmeticMode,
    /// Output CSV; metadata goes to `<out>.meta.json` alongside.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrList(pub Vec<f64>);

fn parse_system(s: &str) -> std::result::Result<(usize, usize), String> {
    let (b, u) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected BxU, got `{s}`"))?;
    let b = b.trim().parse().map_err(|e| format!("bad B: {e}"))?;
    let u = u.trim().parse().map_err(|e| format!("bad U: {e}"))?;
    Ok((b, u))
}

fn parse_snr(s: &str) -> std::result::Result<SnrList, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad number `{t}`: {e}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, step, stop] => {
            let (start, step, stop) = (num(start)?, num(step)?, num(stop)?);
            if !(start.is_finite() && stop.is_finite() && step.is_finite()) || step <= 0.0 || stop < start {
                return Err("range needs finite values, step > 0 and stop >= start".into());
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            // Rounded to 1e-9 dB so grids such as 0:0.1:1 print cleanly.
            Ok(SnrList(
                (0..count)
                    .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
                    .collect(),
            ))
        }
        [list] => Ok(SnrList(list.split(',').map(num).collect::<std::result::Result<_, _>>()?)),
        _ => Err(format!("expected start:step:stop or a comma list, got `{s}`")),
    }
}

impl Args {
    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            mode: self.mode,
            bs_antennas: self.system.0,
            users_or_slots: self.system.1,
            modulation: self.modulation,
            snr_db_list: self.snr.0.clone(),
            t_max_list: self.tmax.clone(),
            alpha: self.alpha,
            trials: self.trials,
            seed: self.seed,
            detectors: self.detectors.clone(),
            arithmetic: self.arithmetic,
        }
    }
}

#[derive(Debug, Serialize)]
struct CostEntry {
    t_max: usize,
    cycles_per_iteration: u64,
    total_latency_cycles: u64,
    real_multiplications: u64,
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    config: &'a SweepConfig,
    git_describe: &'static str,
    harness_version: &'static str,
    snr_definition: &'static str,
    qpsk_bit_mapping: &'static str,
    problem_dim: usize,
    array_pe_count: usize,
    cost_model: Vec<CostEntry>,
}

pub fn git_describe() -> &'static str {
    option_env!("TASER_GIT_DESCRIBE").unwrap_or("unknown")
}

/// Path of the JSON sidecar for a CSV output path.
pub fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn metadata(cfg: &SweepConfig) -> Metadata<'_> {
    let n = cfg.problem_dim();
    let mut ts = cfg.t_max_list.clone();
    ts.sort_unstable();
    ts.dedup();
    let cost_model = if n >= 2 {
        ts.iter()
            .filter(|&&t| t >= 1)
            .map(|&t| {
                let r = cycle_model(n, t as u64);
                CostEntry {
                    t_max: t,
                    cycles_per_iteration: r.cycles_per_iteration,
                    total_latency_cycles: r.total_latency_cycles,
                    real_multiplications: r.real_multiplications,
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    Metadata {
        config: cfg,
        git_describe: git_describe(),
        harness_version: env!("CARGO_PKG_VERSION"),
        snr_definition: match cfg.mode {
            SystemMode::Coherent => "per receive antenna: U/N0 with unit-variance channel taps and unit-energy symbols",
            SystemMode::Jed => "per receive antenna: 1/N0 with unit-variance channel taps and unit-energy symbols",
        },
        qpsk_bit_mapping: "Gray: real part -> bit 0, imaginary part -> bit 1, negative -> 1",
        problem_dim: n,
        array_pe_count: ArrayGeometry::new(n).pe_count,
        cost_model,
    }
}

/// Validates, runs the sweep and writes CSV plus metadata. Nothing is
/// written if validation fails.
pub fn execute(args: &Args) -> Result<()> {
    let cfg = args.sweep_config();
    cfg.validate()?;
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| HarnessError::InvalidConfig(format!("{THREADS_ENV}={v} is not a positive integer")))?,
        ),
        Err(_) => None,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| HarnessError::InvalidConfig(format!("thread pool: {e}")))?;
    let rows = pool.install(|| run_sweep(&cfg))?;
    write_csv_file(&rows, &args.out)?;
    let meta = serde_json::to_string_pretty(&metadata(&cfg))?;
    std::fs::write(meta_path(&args.out), meta + "\n")?;
    Ok(())
}

/// Entry point returning the process exit code: 0 success, 1 runtime
/// error, 2 usage error.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}
