//! `ita-sim` command line.
//!
//! Exit status is 0 on success, 2 for usage, configuration or validation
//! errors (reported before any output file is written) and 1 for failures
//! while running.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::attention::{multi_head_attention, AttentionDims, AttentionOptions};
use crate::config::load_toml;
use crate::error::{ItaError, Result};
use crate::harness::{
    generate_fixture, run_attention_error, run_equivalence_suite, run_softmax_sweep, thread_pool, ExperimentSpec,
    Fixture, InputDistribution, SuiteOptions,
};
use crate::manifest::{load_problem, write_problem};
use crate::perf::{compare_dataflow, simulate_perf, AcceleratorConfig};
use crate::schedule::{build_schedule, ScheduleOptions, SoftmaxTiming};
use crate::tensor_io::{write_tensor, Tensor};

#[derive(Debug, Parser)]
#[command(name = "ita-sim", version, about = "Integer transformer-attention accelerator simulator")]
pub struct Cli {
    /// TOML file with an `[accelerator]` table and run defaults; flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = all cores). Overrides ITA_SIM_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct HwArgs {
    /// Processing elements.
    #[arg(long)]
    pub n: Option<u32>,
    /// PE dot-product width / tile edge.
    #[arg(long)]
    pub m: Option<u32>,
    /// Accumulator bits.
    #[arg(long)]
    pub d: Option<u32>,
    /// Clock in Hz.
    #[arg(long)]
    pub freq: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Error of the integer softmax against the real softmax on synthetic rows.
    SoftmaxEval {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long, default_value_t = 64)]
        len: usize,
        /// uniform | gaussian:MEAN,SIGMA | peaked:FRACTION
        #[arg(long, default_value = "gaussian:0,40")]
        dist: InputDistribution,
        #[command(flatten)]
        hw: HwArgs,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an attention layer from a manifest or a seeded synthetic fixture.
    AttentionRun {
        #[arg(long, conflicts_with_all = ["dims", "seed"])]
        manifest: Option<PathBuf>,
        /// SxExPxH
        #[arg(long, required_unless_present = "manifest")]
        dims: Option<AttentionDims>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write per-head probability tensors.
        #[arg(long)]
        probs: bool,
        /// Put the divider on the critical path in the performance report.
        #[arg(long)]
        no_softmax_overlap: bool,
        /// Run the three-pass order instead of the fused one.
        #[arg(long)]
        unfused: bool,
        #[command(flatten)]
        hw: HwArgs,
    },
    /// Cycle, bandwidth and throughput report for a workload shape.
    PerfReport {
        /// SxExPxH
        #[arg(long)]
        dims: AttentionDims,
        #[arg(long)]
        no_softmax_overlap: bool,
        /// Append a weight- vs output-stationary table for N in 4, 8, 16, 32.
        #[arg(long)]
        compare_dataflow: bool,
        #[command(flatten)]
        hw: HwArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded property suite over the softmax and matmul datapaths.
    Verify {
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        hw: HwArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a calibrated synthetic layer as a manifest plus tensors.
    GenFixture {
        #[arg(long)]
        dims: AttentionDims,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Contents of `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub accelerator: AcceleratorConfig,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

const DEFAULT_SEED: u64 = 42;

struct Ctx {
    file: FileConfig,
}

impl Ctx {
    fn accelerator(&self, hw: &HwArgs) -> Result<AcceleratorConfig> {
        let mut cfg = self.file.accelerator.clone();
        if let Some(n) = hw.n {
            cfg.n = n;
        }
        if let Some(m) = hw.m {
            cfg.m = m;
        }
        if let Some(d) = hw.d {
            cfg.d = d;
        }
        if let Some(f) = hw.freq {
            cfg.freq_hz = f;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.file.seed).unwrap_or(DEFAULT_SEED)
    }
}

fn emit(out: Option<&Path>, json: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, format!("{json}\n")).map_err(|e| ItaError::io(p, e)),
        None => {
            use std::io::Write;
            match writeln!(std::io::stdout().lock(), "{json}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn timing(no_overlap: bool) -> ScheduleOptions {
    ScheduleOptions { softmax: if no_overlap { SoftmaxTiming::Serialized } else { SoftmaxTiming::Overlapped } }
}

/// Parses `args`, runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let file: FileConfig = match &cli.config {
        Some(p) => load_toml(p)?,
        None => FileConfig::default(),
    };
    if let Some(t) = cli.threads.or(file.threads) {
        std::env::set_var("ITA_SIM_THREADS", t.to_string());
    }
    let ctx = Ctx { file };
    match cli.command {
        Command::SoftmaxEval { seed, rows, len, dist, hw, out } => {
            let mut spec = ExperimentSpec::softmax_sweep(ctx.seed(seed), rows, len, dist)?;
            spec.cfg = ctx.accelerator(&hw)?;
            emit(out.as_deref(), &run_softmax_sweep(&spec)?.to_json())
        }
        Command::AttentionRun { manifest, dims, seed, out_dir, probs, no_softmax_overlap, unfused, hw } => {
            let cfg = ctx.accelerator(&hw)?;
            cfg.validate_functional()?;
            let fx: Fixture = match (manifest, dims) {
                (Some(path), _) => load_problem(path)?,
                (None, Some(dims)) => generate_fixture(&dims, ctx.seed(seed))?,
                (None, None) => return Err(ItaError::InvalidArgument("need --manifest or --dims".into())),
            };
            let schedule = build_schedule(&fx.dims, &cfg, &timing(no_softmax_overlap))?;
            let opts = AttentionOptions { fused: !unfused, ..Default::default() };
            let out = thread_pool().install(|| multi_head_attention(&fx.x, &fx.weights, &cfg, &fx.dims, &opts))?;
            let perf = simulate_perf(&schedule, &cfg)?;
            let error = run_attention_error(&fx, &cfg)?;

            fs::create_dir_all(&out_dir).map_err(|e| ItaError::io(&out_dir, e))?;
            write_tensor(out_dir.join("output.ita"), &Tensor::from(&out.output))?;
            if probs {
                for (i, p) in out.attention_probs().enumerate() {
                    write_tensor(out_dir.join(format!("probs_h{i}.ita")), &Tensor::from(p))?;
                }
            }
            let perf_path = out_dir.join("perf.json");
            fs::write(&perf_path, perf.to_json()).map_err(|e| ItaError::io(&perf_path, e))?;
            let err_path = out_dir.join("error.json");
            fs::write(&err_path, error.to_json()).map_err(|e| ItaError::io(&err_path, e))?;
            println!(
                "{}: {} cycles, {:.3} TOPS, utilization {:.3}, softmax MAE {:.3e}",
                fx.dims, perf.total_cycles, perf.throughput_tops, perf.mac_utilization, error.softmax_mae
            );
            Ok(())
        }
        Command::PerfReport { dims, no_softmax_overlap, compare_dataflow: cmp, hw, out } => {
            let cfg = ctx.accelerator(&hw)?;
            let report = simulate_perf(&build_schedule(&dims, &cfg, &timing(no_softmax_overlap))?, &cfg)?;
            let json = if cmp {
                let table = compare_dataflow(&cfg, &[4, 8, 16, 32]);
                to_json(&serde_json::json!({ "report": report, "dataflow": table }))
            } else {
                report.to_json()
            };
            emit(out.as_deref(), &json)
        }
        Command::Verify { cases, seed, hw, out } => {
            let cfg = ctx.accelerator(&hw)?;
            if cases == 0 {
                return Err(ItaError::InvalidArgument("cases must be >= 1".into()));
            }
            let opts = SuiteOptions { seed: ctx.seed(seed), cases, ..Default::default() };
            let summary = run_equivalence_suite(&cfg, &opts)?;
            emit(out.as_deref(), &to_json(&summary))?;
            match summary.total_failures() {
                0 => Ok(()),
                n => Err(ItaError::InvariantViolation(format!("{n} property cases failed"))),
            }
        }
        Command::GenFixture { dims, seed, out_dir } => {
            let fx = generate_fixture(&dims, ctx.seed(seed))?;
            let path = write_problem(&out_dir, &fx)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 7\n[accelerator]\nn = 8\nm = 32\n").unwrap();
        let file: FileConfig = load_toml(&path).unwrap();
        let ctx = Ctx { file };
        let cfg = ctx.accelerator(&HwArgs { n: Some(4), ..Default::default() }).unwrap();
        assert_eq!((cfg.n, cfg.m, cfg.d), (4, 32, 24));
        assert_eq!(ctx.seed(None), 7);
        assert_eq!(ctx.seed(Some(1)), 1);
    }

    #[test]
    fn unknown_config_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[accelerator]\npe_count = 8\n").unwrap();
        let code = run(["ita-sim", "--config", path.to_str().unwrap(), "perf-report", "--dims", "64x64x64x1"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn bad_dims_are_usage_errors() {
        assert_eq!(run(["ita-sim", "perf-report", "--dims", "64x64"]), 2);
        assert_eq!(run(["ita-sim", "perf-report", "--dims", "0x64x64x1"]), 2);
    }
}
