//! Analytical bandwidth, traffic, utilization and throughput model.

use serde::{Deserialize, Serialize};

use crate::error::{ItaError, Result};
use crate::schedule::{Phase, ScheduleEntry, TileSchedule};

/// Design-time parameters of the accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcceleratorConfig {
    /// Processing elements.
    pub n: u32,
    /// Dot-product width of each PE and tile edge.
    pub m: u32,
    /// Accumulator bits.
    pub d: u32,
    /// Activation and weight bits.
    pub b: u32,
    pub freq_hz: f64,
    pub divider_latency_cycles: u32,
    pub divider_count: u32,
    /// Output FIFO capacity in bytes; `None` never back-pressures.
    pub fifo_depth_bytes: Option<u64>,
    /// Bytes per cycle the memory side drains from the output FIFO.
    pub output_drain_bytes_per_cycle: u32,
}

impl Default for AcceleratorConfig {
    fn default() -> Self {
        Self {
            n: 16,
            m: 64,
            d: 24,
            b: 8,
            freq_hz: 500e6,
            divider_latency_cycles: 16,
            divider_count: 2,
            fifo_depth_bytes: None,
            output_drain_bytes_per_cycle: 16,
        }
    }
}

impl AcceleratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n", self.n),
            ("m", self.m),
            ("d", self.d),
            ("b", self.b),
            ("divider_latency_cycles", self.divider_latency_cycles),
            ("divider_count", self.divider_count),
            ("output_drain_bytes_per_cycle", self.output_drain_bytes_per_cycle),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ItaError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.freq_hz.is_finite() && self.freq_hz > 0.0) {
            return Err(ItaError::Config(format!("freq_hz must be positive, got {}", self.freq_hz)));
        }
        if self.d > 32 {
            return Err(ItaError::Config(format!("accumulator width {} exceeds 32 bits", self.d)));
        }
        Ok(())
    }

    /// Extra checks for running the bit-accurate datapath.
    pub fn validate_functional(&self) -> Result<()> {
        self.validate()?;
        if self.b != 8 {
            return Err(ItaError::Config(format!("functional model is 8-bit only, got b = {}", self.b)));
        }
        if self.d < 2 * self.b {
            return Err(ItaError::Config(format!("d = {} too narrow for {}-bit operands", self.d, self.b)));
        }
        Ok(())
    }

    pub fn tile(&self) -> usize {
        self.m as usize
    }

    /// Longest dot product that cannot overflow the accumulator:
    /// `2^(D - 2B)` (256 for D = 24, B = 8).
    pub fn max_inner_dim(&self) -> usize {
        if self.d < 2 * self.b {
            0
        } else {
            1usize << (self.d - 2 * self.b)
        }
    }

    /// Cycles for one M x M x M tile step: M input vectors per group of N
    /// weight columns.
    pub fn cycles_per_tile_step(&self) -> u64 {
        u64::from(self.m) * u64::from(self.m.div_ceil(self.n))
    }

    pub fn macs_per_cycle(&self) -> u64 {
        u64::from(self.n) * u64::from(self.m)
    }

    pub fn peak_tops(&self) -> f64 {
        2.0 * self.macs_per_cycle() as f64 * self.freq_hz / 1e12
    }
}

/// Bits per cycle on all interfaces for the weight-stationary flow:
/// `8(M + 3N) + 2ND`.
pub fn bandwidth_weight_stationary(cfg: &AcceleratorConfig) -> u64 {
    let (n, m, d) = (u64::from(cfg.n), u64::from(cfg.m), u64::from(cfg.d));
    8 * (m + 3 * n) + 2 * n * d
}

/// Bits per cycle for an output-stationary flow: `8(NM + 3N) + 2ND`.
pub fn bandwidth_output_stationary(cfg: &AcceleratorConfig) -> u64 {
    let (n, m, d) = (u64::from(cfg.n), u64::from(cfg.m), u64::from(cfg.d));
    8 * (n * m + 3 * n) + 2 * n * d
}

/// Double-buffered weight buffer, `2NM` bytes.
pub fn weight_buffer_size(cfg: &AcceleratorConfig) -> u64 {
    2 * u64::from(cfg.n) * u64::from(cfg.m)
}

/// Per-cycle interface widths of the weight-stationary flow, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfaceWidths {
    pub input: u64,
    pub weight: u64,
    pub bias: u64,
    pub output: u64,
    pub psum_read: u64,
    pub psum_write: u64,
}

impl InterfaceWidths {
    pub fn weight_stationary(cfg: &AcceleratorConfig) -> Self {
        let (n, m, d) = (u64::from(cfg.n), u64::from(cfg.m), u64::from(cfg.d));
        Self { input: 8 * m, weight: 8 * n, bias: 8 * n, output: 8 * n, psum_read: n * d, psum_write: n * d }
    }

    pub fn total(&self) -> u64 {
        self.input + self.weight + self.bias + self.output + self.psum_read + self.psum_write
    }
}

/// Bytes moved on each interface.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Traffic {
    pub input: u64,
    pub weight: u64,
    pub bias: u64,
    pub output: u64,
    pub psum_read: u64,
    pub psum_write: u64,
}

impl Traffic {
    fn for_cycles(w: &InterfaceWidths, cycles: u64) -> Self {
        let bytes = |bits: u64| (bits * cycles).div_ceil(8);
        Self {
            input: bytes(w.input),
            weight: bytes(w.weight),
            bias: bytes(w.bias),
            output: bytes(w.output),
            psum_read: bytes(w.psum_read),
            psum_write: bytes(w.psum_write),
        }
    }

    pub fn total(&self) -> u64 {
        self.input + self.weight + self.bias + self.output + self.psum_read + self.psum_write
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseCycles {
    pub projections: u64,
    pub qk: u64,
    pub av: u64,
    pub output_projection: u64,
    /// Cycles the PEs wait for the dividers.
    pub softmax_stall: u64,
    /// Cycles the PEs wait for the output FIFO.
    pub fifo_stall: u64,
}

impl PhaseCycles {
    pub fn total(&self) -> u64 {
        self.projections + self.qk + self.av + self.output_projection + self.softmax_stall + self.fifo_stall
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTraffic {
    pub projections: Traffic,
    pub qk: Traffic,
    pub av: Traffic,
    pub output_projection: Traffic,
}

/// One block whose inversions did not fit under the overlap window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DividerViolation {
    pub head: usize,
    pub block: usize,
    pub demand_cycles: u64,
    pub window_cycles: u64,
    pub stall_cycles: u64,
}

pub const PERF_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub schema_version: u32,
    pub config: AcceleratorConfig,
    pub total_cycles: u64,
    pub cycles_per_phase: PhaseCycles,
    pub useful_macs: u64,
    pub mac_utilization: f64,
    pub peak_tops: f64,
    pub throughput_tops: f64,
    pub runtime_s: f64,
    pub interface_bits_per_cycle: InterfaceWidths,
    pub traffic: PhaseTraffic,
    pub total_traffic_bytes: u64,
    pub bandwidth_ws_bits: u64,
    pub bandwidth_os_bits: u64,
    pub weight_buffer_bytes: u64,
    /// Weight-interface bytes per cycle with double buffering.
    pub weight_interface_bytes_per_cycle: u64,
    pub divider_demand_cycles: u64,
    pub divider_violations: Vec<DividerViolation>,
    pub softmax_saturation_possible: bool,
}

impl PerfReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Aggregates a schedule into cycle, traffic and throughput figures.
pub fn simulate_perf(schedule: &TileSchedule, cfg: &AcceleratorConfig) -> Result<PerfReport> {
    cfg.validate()?;
    if schedule.entries.is_empty() {
        return Err(ItaError::InvalidArgument("schedule is empty".into()));
    }
    let widths = InterfaceWidths::weight_stationary(cfg);
    let mut cycles = PhaseCycles::default();
    let mut useful_macs = 0u64;
    let mut violations = Vec::new();
    let mut divider_demand = 0u64;
    let mut fifo = FifoModel::new(cfg);

    for entry in &schedule.entries {
        match entry {
            ScheduleEntry::Tile(t) => {
                useful_macs += t.useful_macs;
                let slot = match t.phase {
                    Phase::Projection => &mut cycles.projections,
                    Phase::QkDa => &mut cycles.qk,
                    Phase::AvEn => &mut cycles.av,
                    Phase::OutputProjection => &mut cycles.output_projection,
                };
                *slot += t.cycles;
                cycles.fifo_stall += fifo.step(t.cycles, t.writes_output);
            }
            ScheduleEntry::Inversion(inv) => {
                divider_demand += inv.demand_cycles;
                if inv.stall_cycles > 0 {
                    violations.push(DividerViolation {
                        head: inv.head,
                        block: inv.block,
                        demand_cycles: inv.demand_cycles,
                        window_cycles: inv.window_cycles,
                        stall_cycles: inv.stall_cycles,
                    });
                }
                cycles.softmax_stall += inv.stall_cycles;
                fifo.step(inv.stall_cycles, false);
            }
        }
    }

    let total = cycles.total();
    let capacity = total * cfg.macs_per_cycle();
    let utilization = if capacity == 0 { 0.0 } else { useful_macs as f64 / capacity as f64 };
    let peak = cfg.peak_tops();
    let traffic = PhaseTraffic {
        projections: Traffic::for_cycles(&widths, cycles.projections),
        qk: Traffic::for_cycles(&widths, cycles.qk),
        av: Traffic::for_cycles(&widths, cycles.av),
        output_projection: Traffic::for_cycles(&widths, cycles.output_projection),
    };
    let total_traffic =
        traffic.projections.total() + traffic.qk.total() + traffic.av.total() + traffic.output_projection.total();

    Ok(PerfReport {
        schema_version: PERF_SCHEMA_VERSION,
        config: cfg.clone(),
        total_cycles: total,
        cycles_per_phase: cycles,
        useful_macs,
        mac_utilization: utilization,
        peak_tops: peak,
        throughput_tops: peak * utilization,
        runtime_s: total as f64 / cfg.freq_hz,
        interface_bits_per_cycle: widths,
        traffic,
        total_traffic_bytes: total_traffic,
        bandwidth_ws_bits: bandwidth_weight_stationary(cfg),
        bandwidth_os_bits: bandwidth_output_stationary(cfg),
        weight_buffer_bytes: weight_buffer_size(cfg),
        weight_interface_bytes_per_cycle: u64::from(cfg.n),
        divider_demand_cycles: divider_demand,
        divider_violations: violations,
        softmax_saturation_possible: schedule.dims.s > 255,
    })
}

/// Output FIFO occupancy; finished outputs enter at N bytes per cycle
/// during the last inner-dimension step of a tile.
struct FifoModel {
    depth: Option<u64>,
    fill_rate: u64,
    drain_rate: u64,
    occupancy: u64,
}

impl FifoModel {
    fn new(cfg: &AcceleratorConfig) -> Self {
        Self {
            depth: cfg.fifo_depth_bytes,
            fill_rate: u64::from(cfg.n),
            drain_rate: u64::from(cfg.output_drain_bytes_per_cycle),
            occupancy: 0,
        }
    }

    /// Advances `cycles`; returns stall cycles spent waiting for space.
    fn step(&mut self, cycles: u64, writes: bool) -> u64 {
        let Some(depth) = self.depth else {
            return 0;
        };
        let fill = if writes { self.fill_rate * cycles } else { 0 };
        let level = (self.occupancy + fill).saturating_sub(self.drain_rate * cycles);
        if level > depth {
            let stall = (level - depth).div_ceil(self.drain_rate);
            self.occupancy = depth;
            stall
        } else {
            self.occupancy = level;
            0
        }
    }
}

/// Row of the `--compare-dataflow` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataflowRow {
    pub n: u32,
    pub m: u32,
    pub d: u32,
    pub ws_bits: u64,
    pub os_bits: u64,
    pub ratio: f64,
    pub ws_weight_buffer_bytes: u64,
    pub os_input_buffer_bytes: u64,
}

pub fn compare_dataflow(base: &AcceleratorConfig, ns: &[u32]) -> Vec<DataflowRow> {
    ns.iter()
        .map(|&n| {
            let cfg = AcceleratorConfig { n, ..base.clone() };
            let ws = bandwidth_weight_stationary(&cfg);
            let os = bandwidth_output_stationary(&cfg);
            DataflowRow {
                n,
                m: cfg.m,
                d: cfg.d,
                ws_bits: ws,
                os_bits: os,
                ratio: os as f64 / ws as f64,
                ws_weight_buffer_bytes: weight_buffer_size(&cfg),
                os_input_buffer_bytes: 2 * u64::from(cfg.m),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionDims;
    use crate::schedule::{build_schedule, ScheduleOptions};
    use proptest::prelude::*;

    fn cfg(n: u32, m: u32, d: u32) -> AcceleratorConfig {
        AcceleratorConfig { n, m, d, ..Default::default() }
    }

    #[test]
    fn bandwidth_examples() {
        let c = AcceleratorConfig::default();
        assert_eq!(bandwidth_weight_stationary(&c), 1664);
        assert_eq!(bandwidth_output_stationary(&c), 9344);
        assert_eq!(bandwidth_weight_stationary(&cfg(1, 1, 0)), 32);
        let ratio = 9344.0_f64 / 1664.0;
        assert!((ratio - 5.615).abs() < 1e-3);
        assert_eq!(InterfaceWidths::weight_stationary(&c).total(), 1664);
    }

    #[test]
    fn doubling_n_adds_linear_terms() {
        let (n, m, d) = (16u64, 64u64, 24u64);
        let a = bandwidth_weight_stationary(&cfg(16, 64, 24));
        let b = bandwidth_weight_stationary(&cfg(32, 64, 24));
        assert_eq!(b - a, 8 * 3 * n + 2 * n * d);
        let _ = m;
    }

    #[test]
    fn weight_buffer_examples() {
        assert_eq!(weight_buffer_size(&AcceleratorConfig::default()), 2048);
        assert_eq!(weight_buffer_size(&cfg(1, 1, 24)), 2);
    }

    #[test]
    fn config_validation() {
        assert!(AcceleratorConfig::default().validate().is_ok());
        let bad = AcceleratorConfig { freq_hz: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(cfg(0, 64, 24).validate().is_err());
        assert_eq!(AcceleratorConfig::default().max_inner_dim(), 256);
    }

    #[test]
    fn ideal_throughput_at_defaults() {
        let c = AcceleratorConfig::default();
        let dims = AttentionDims::new(64, 64, 64, 1).unwrap();
        let s = build_schedule(&dims, &c, &ScheduleOptions::default()).unwrap();
        let r = simulate_perf(&s, &c).unwrap();
        assert_eq!(r.mac_utilization, 1.0);
        assert!((r.throughput_tops - 1.024).abs() < 1e-12);
        assert!(r.divider_violations.is_empty());
    }

    #[test]
    fn traffic_matches_widths_times_cycles() {
        let c = AcceleratorConfig::default();
        let dims = AttentionDims::new(100, 72, 40, 2).unwrap();
        let s = build_schedule(&dims, &c, &ScheduleOptions::default()).unwrap();
        let r = simulate_perf(&s, &c).unwrap();
        let busy = r.cycles_per_phase.projections
            + r.cycles_per_phase.qk
            + r.cycles_per_phase.av
            + r.cycles_per_phase.output_projection;
        assert_eq!(r.total_traffic_bytes * 8, busy * 1664);
        assert!(r.mac_utilization < 1.0);
    }

    #[test]
    fn small_fifo_back_pressures() {
        let dims = AttentionDims::new(64, 64, 64, 1).unwrap();
        let deep = AcceleratorConfig::default();
        let shallow = AcceleratorConfig { fifo_depth_bytes: Some(64), output_drain_bytes_per_cycle: 4, ..deep.clone() };
        let opts = ScheduleOptions::default();
        let a = simulate_perf(&build_schedule(&dims, &deep, &opts).unwrap(), &deep).unwrap();
        let b = simulate_perf(&build_schedule(&dims, &shallow, &opts).unwrap(), &shallow).unwrap();
        assert_eq!(a.cycles_per_phase.fifo_stall, 0);
        assert!(b.cycles_per_phase.fifo_stall > 0);
        assert!(b.total_cycles > a.total_cycles);
    }

    #[test]
    fn dataflow_table() {
        let rows = compare_dataflow(&AcceleratorConfig::default(), &[4, 8, 16, 32]);
        assert_eq!(rows[2].ws_bits, 1664);
        assert_eq!(rows[2].os_bits, 9344);
        assert!(rows.windows(2).all(|w| w[1].ratio > w[0].ratio));
    }

    proptest! {
        #[test]
        fn output_stationary_never_cheaper(n in 1u32..256, m in 1u32..256, d in 0u32..33) {
            let c = cfg(n, m, d);
            prop_assert!(bandwidth_output_stationary(&c) >= bandwidth_weight_stationary(&c));
        }

        #[test]
        fn peak_scales_linearly(n in 1u32..64, m in 1u32..128, f in 1e6f64..2e9) {
            let a = AcceleratorConfig { n, m, freq_hz: f, ..Default::default() };
            let b = AcceleratorConfig { n: 2 * n, m, freq_hz: 3.0 * f, ..Default::default() };
            prop_assert!((b.peak_tops() / a.peak_tops() - 6.0).abs() < 1e-9);
        }
    }
}
