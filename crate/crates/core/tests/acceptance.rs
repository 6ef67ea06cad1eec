//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::fs;
use std::time::{Duration, Instant};

use num_rational::Ratio;

use common::{fixtures_dir, run_reference, GOLDEN};
use ita_core::attention::{multi_head_attention, AttentionOptions};
use ita_core::harness::{run_equivalence_suite, run_softmax_sweep, ExperimentSpec, InputDistribution, SuiteOptions};
use ita_core::manifest::load_problem;
use ita_core::perf::simulate_perf;
use ita_core::rng::SplitMix64;
use ita_core::schedule::{build_schedule, ScheduleOptions, SoftmaxTiming};
use ita_core::softmax::{softmax_row_integer_oracle, softmax_row_partitioned, softmax_row_streaming};
use ita_core::tensor_io::Tensor;
use ita_core::{AcceleratorConfig, AttentionDims, QuantizedMatrix, SoftmaxConstants};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    match out {
        Ok(msg) if took <= limit => Ok(format!("{msg}; {:.2} s", took.as_secs_f64())),
        Ok(msg) => Err(format!("{msg}; took {:.2} s, limit {} s", took.as_secs_f64(), limit.as_secs())),
        Err(e) => Err(e),
    }
}

fn ensure(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn softmax_mae() -> Outcome {
    let dist = InputDistribution::GaussianLogit { mean: 0.0, sigma: 40.0 };
    let spec = ExperimentSpec::softmax_sweep(42, 1000, 64, dist).map_err(|e| e.to_string())?;
    let rep = run_softmax_sweep(&spec).map_err(|e| e.to_string())?;
    let msg = format!("MAE {:.3e} over {} elements (bound 1.0e-2)", rep.softmax_mae, rep.elements);
    ensure(rep.softmax_mae <= 1e-2, msg.clone())?;
    Ok(msg)
}

fn default_report() -> Result<ita_core::PerfReport, String> {
    let cfg = AcceleratorConfig::default();
    let dims = AttentionDims::new(64, 64, 64, 1).unwrap();
    let sched = build_schedule(&dims, &cfg, &ScheduleOptions::default()).map_err(|e| e.to_string())?;
    simulate_perf(&sched, &cfg).map_err(|e| e.to_string())
}

fn bandwidth() -> Outcome {
    let r = default_report()?;
    let msg = format!(
        "weight-stationary {} bits/cycle, output-stationary {} bits/cycle",
        r.bandwidth_ws_bits, r.bandwidth_os_bits
    );
    ensure(r.bandwidth_ws_bits == 1664 && r.bandwidth_os_bits == 9344, msg.clone())?;
    Ok(msg)
}

fn throughput() -> Outcome {
    let r = default_report()?;
    let msg = format!("{:.4} TOPS at utilization {:.3}", r.throughput_tops, r.mac_utilization);
    ensure(
        r.mac_utilization == 1.0
            && (r.throughput_tops - 1.024).abs() < 1e-9
            && (r.throughput_tops - 1.02).abs() / 1.02 < 0.01,
        msg.clone(),
    )?;
    Ok(msg)
}

fn zero_latency_softmax() -> Outcome {
    let cfg = AcceleratorConfig::default();
    let mut lines = Vec::new();
    for (_, dims, _) in GOLDEN {
        let dims: AttentionDims = dims.parse().unwrap();
        let cycles = |softmax| -> Result<ita_core::PerfReport, String> {
            let sched = build_schedule(&dims, &cfg, &ScheduleOptions { softmax }).map_err(|e| e.to_string())?;
            simulate_perf(&sched, &cfg).map_err(|e| e.to_string())
        };
        let on = cycles(SoftmaxTiming::Overlapped)?;
        let free = cycles(SoftmaxTiming::Free)?;
        let sched = build_schedule(&dims, &cfg, &ScheduleOptions::default()).map_err(|e| e.to_string())?;
        let worst = sched.inversions().map(|i| (i.demand_cycles, i.window_cycles)).max().unwrap_or((0, 0));
        let line =
            format!("{dims}: {} vs {} cycles, divider {} <= {}", on.total_cycles, free.total_cycles, worst.0, worst.1);
        ensure(
            on.total_cycles == free.total_cycles
                && on.cycles_per_phase.softmax_stall == 0
                && on.divider_violations.is_empty()
                && worst.0 <= worst.1,
            line.clone(),
        )?;
        lines.push(line);
    }
    Ok(lines.join("; "))
}

/// Exact rational evaluation of the shift softmax for a row.
fn rational_softmax(row: &[i8]) -> Vec<u8> {
    let max = i32::from(*row.iter().max().unwrap());
    let k = |x: i8| ((max - i32::from(x)) >> 5) as u32;
    let weight = |x: i8| Ratio::new(128i64, 1i64 << k(x));
    let sum: Ratio<i64> = row.iter().map(|&x| weight(x)).sum();
    let inv = (Ratio::from_integer(32640i64) / sum).floor();
    row.iter().map(|&x| (inv / Ratio::from_integer(1i64 << k(x))).floor().to_integer() as u8).collect()
}

/// Every way to cut `len` elements into contiguous nonempty parts.
fn compositions(len: usize) -> Vec<Vec<usize>> {
    if len == 0 {
        return vec![vec![]];
    }
    (1..=len)
        .flat_map(|first| {
            compositions(len - first).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let consts = SoftmaxConstants::default();
    let m = AcceleratorConfig::default().tile();
    let mut rng = SplitMix64::new(2024);
    for case in 0..10_000 {
        let len = 1 + rng.below(consts.max_exact_len() as u64) as usize;
        let mut row: Vec<i8> = (0..len).map(|_| rng.next_i8()).collect();
        let argmax = (0..len).max_by_key(|&i| row[i]).unwrap();
        let dest = rng.below(len.min(m) as u64) as usize;
        row.swap(dest, argmax);
        let s = softmax_row_streaming(&row, m, consts).map_err(|e| e.to_string())?;
        let o = softmax_row_integer_oracle(&row, consts).map_err(|e| e.to_string())?;
        ensure(s == o, format!("seeded row {case} differs: {row:?}"))?;
    }

    let grid: Vec<i8> = (0..8).map(|k| (-128 + 32 * k) as i8).chain([127]).collect();
    let mut rows = 0;
    let mut checks = 0;
    for len in 1..=3usize {
        let mut idx = vec![0usize; len];
        loop {
            let row: Vec<i8> = idx.iter().map(|&i| grid[i]).collect();
            let want = rational_softmax(&row);
            for parts in compositions(len) {
                let got = softmax_row_partitioned(&row, &parts, consts).map_err(|e| e.to_string())?;
                ensure(got == want, format!("row {row:?} parts {parts:?}: {got:?} vs {want:?}"))?;
                checks += 1;
            }
            rows += 1;
            let mut d = 0;
            while d < len {
                idx[d] += 1;
                if idx[d] < grid.len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == len {
                break;
            }
        }
    }
    Ok(format!(
        "10000 seeded rows bit-exact; {rows} rows over {{-128, -96, ..., 96, 127}}, {checks} row/partition pairs exact"
    ))
}

fn invariant_suite() -> Outcome {
    let summary =
        run_equivalence_suite(&AcceleratorConfig::default(), &SuiteOptions::default()).map_err(|e| e.to_string())?;
    let parts: Vec<String> =
        summary.results.iter().map(|r| format!("{:?} {}/{}", r.property, r.cases - r.failures, r.cases)).collect();
    let msg = parts.join(", ");
    ensure(summary.total_failures() == 0 && summary.results.iter().all(|r| r.cases >= 1000), msg.clone())?;
    Ok(msg)
}

fn golden_fixtures() -> Outcome {
    let cfg = AcceleratorConfig::default();
    let mut done = Vec::new();
    for (name, _, _) in GOLDEN {
        let dir = fixtures_dir().join(name);
        let fx = load_problem(dir.join("manifest.toml")).map_err(|e| e.to_string())?;
        let golden = fs::read(dir.join("golden_output.ita")).map_err(|e| e.to_string())?;
        let reference = run_reference(&fx, cfg.tile());
        let ref_q = QuantizedMatrix::new(fx.dims.s, fx.dims.e, reference.output, fx.weights.requant.out.output_scale)
            .map_err(|e| e.to_string())?;
        ensure(Tensor::from(&ref_q).to_bytes() == golden, format!("{name}: reference oracle differs from golden"))?;
        let sim = multi_head_attention(&fx.x, &fx.weights, &cfg, &fx.dims, &AttentionOptions::default())
            .map_err(|e| e.to_string())?;
        ensure(Tensor::from(&sim.output).to_bytes() == golden, format!("{name}: simulator differs from golden"))?;
        done.push(format!("{} ({} bytes)", fx.dims, golden.len()));
    }
    Ok(format!("byte-exact: {}", done.join(", ")))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("softmax MAE vs float oracle", Duration::from_secs(5), softmax_mae),
        ("bandwidth formulas", Duration::from_secs(1), bandwidth),
        ("throughput model", Duration::from_secs(1), throughput),
        ("zero-latency softmax", Duration::from_secs(1), zero_latency_softmax),
        ("oracle equivalence", Duration::from_secs(30), oracle_equivalence),
        ("invariant suite", Duration::from_secs(60), invariant_suite),
        ("end-to-end golden fixtures", Duration::from_secs(10), golden_fixtures),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        match timed(limit, f) {
            Ok(msg) => println!("criterion {} [PRIMARY] {name}: PASS ({msg})", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {} [PRIMARY] {name}: FAIL ({msg})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
