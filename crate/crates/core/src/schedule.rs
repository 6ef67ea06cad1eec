//! Tile schedule of one attention layer.
//!
//! Linear layers run one after another. Within a head, `Q x K^T` and
//! `A x V` are fused per block of M query rows: the block's score tiles are
//! produced (DA runs on the last inner step of every tile), the block's
//! denominators are inverted on the serial dividers (DI), and the block's
//! `A x V` tiles consume the normalized probabilities (EN).
//!
//! The dividers work alongside the PE array. A block's inversions are hidden
//! as long as the divider demand fits in the span of that block's fused
//! iteration; any excess becomes a stall on the critical path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionDims;
use crate::error::Result;
use crate::perf::AcceleratorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Projection,
    QkDa,
    AvEn,
    OutputProjection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MatrixId {
    Q,
    K,
    V,
    Qk,
    Av,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SoftmaxAction {
    Accumulate,
    Normalize,
}

/// How softmax work is accounted for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SoftmaxTiming {
    /// DA/EN ride along with the tiles, DI overlaps the fused iteration.
    #[default]
    Overlapped,
    /// DI runs on the critical path between `Q x K^T` and `A x V`.
    Serialized,
    /// Softmax costs nothing (reference for latency comparisons).
    Free,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScheduleOptions {
    pub softmax: SoftmaxTiming,
}

/// One M x M x M step of the PE array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileOp {
    pub phase: Phase,
    pub matrix: MatrixId,
    /// Head index; `None` for the shared output projection.
    pub head: Option<usize>,
    pub tile_row: usize,
    pub tile_col: usize,
    pub l_index: usize,
    pub l_tiles: usize,
    pub cycles: u64,
    pub useful_macs: u64,
    pub padded: bool,
    /// Last inner step: results leave through the requantizer.
    pub writes_output: bool,
    pub softmax: Option<SoftmaxAction>,
}

/// Denominator inversion of one block of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionOp {
    pub head: usize,
    pub block: usize,
    pub rows: usize,
    pub demand_cycles: u64,
    pub window_cycles: u64,
    pub stall_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScheduleEntry {
    Tile(TileOp),
    Inversion(InversionOp),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileSchedule {
    pub dims: AttentionDims,
    pub entries: Vec<ScheduleEntry>,
}

impl TileSchedule {
    pub fn tiles(&self) -> impl Iterator<Item = &TileOp> {
        self.entries.iter().filter_map(|e| match e {
            ScheduleEntry::Tile(t) => Some(t),
            _ => None,
        })
    }

    pub fn inversions(&self) -> impl Iterator<Item = &InversionOp> {
        self.entries.iter().filter_map(|e| match e {
            ScheduleEntry::Inversion(i) => Some(i),
            _ => None,
        })
    }

    /// Cycles along the critical path (tiles plus stalls).
    pub fn critical_path_cycles(&self) -> u64 {
        self.tiles().map(|t| t.cycles).sum::<u64>() + self.inversions().map(|i| i.stall_cycles).sum::<u64>()
    }

    /// Inner-step indices seen for each output tile.
    pub fn coverage(&self) -> BTreeMap<(MatrixId, Option<usize>, usize, usize), Vec<usize>> {
        let mut map: BTreeMap<_, Vec<usize>> = BTreeMap::new();
        for t in self.tiles() {
            map.entry((t.matrix, t.head, t.tile_row, t.tile_col)).or_default().push(t.l_index);
        }
        map
    }
}

struct Builder<'a> {
    cfg: &'a AcceleratorConfig,
    entries: Vec<ScheduleEntry>,
}

impl Builder<'_> {
    /// Emits the tile steps of one output tile `(ti, tj)` of a
    /// `rows x inner x cols` product; returns the cycles spent.
    #[allow(clippy::too_many_arguments)]
    fn output_tile(
        &mut self,
        phase: Phase,
        matrix: MatrixId,
        head: Option<usize>,
        (rows, inner, cols): (usize, usize, usize),
        ti: usize,
        tj: usize,
        softmax: Option<SoftmaxAction>,
    ) -> u64 {
        let m = self.cfg.tile();
        let l_tiles = inner.div_ceil(m);
        let extent = |total: usize, idx: usize| (total - idx * m).min(m);
        let (vr, vc) = (extent(rows, ti), extent(cols, tj));
        let step = self.cfg.cycles_per_tile_step();
        for l in 0..l_tiles {
            let vl = extent(inner, l);
            let last = l + 1 == l_tiles;
            self.entries.push(ScheduleEntry::Tile(TileOp {
                phase,
                matrix,
                head,
                tile_row: ti,
                tile_col: tj,
                l_index: l,
                l_tiles,
                cycles: step,
                useful_macs: (vr * vc * vl) as u64,
                padded: vr < m || vc < m || vl < m,
                writes_output: last,
                softmax: match softmax {
                    Some(SoftmaxAction::Accumulate) if last => softmax,
                    Some(SoftmaxAction::Normalize) => softmax,
                    _ => None,
                },
            }));
        }
        step * l_tiles as u64
    }

    fn matmul(&mut self, phase: Phase, matrix: MatrixId, head: Option<usize>, shape: (usize, usize, usize)) {
        let m = self.cfg.tile();
        for ti in 0..shape.0.div_ceil(m) {
            for tj in 0..shape.2.div_ceil(m) {
                self.output_tile(phase, matrix, head, shape, ti, tj, None);
            }
        }
    }
}

/// Builds the ordered tile schedule of a multi-head attention layer.
pub fn build_schedule(dims: &AttentionDims, cfg: &AcceleratorConfig, opts: &ScheduleOptions) -> Result<TileSchedule> {
    dims.validate()?;
    cfg.validate()?;
    let (s, e, p, h) = (dims.s, dims.e, dims.p, dims.h);
    let m = cfg.tile();
    let mut b = Builder { cfg, entries: Vec::new() };

    for head in 0..h {
        for id in [MatrixId::Q, MatrixId::K, MatrixId::V] {
            b.matmul(Phase::Projection, id, Some(head), (s, e, p));
        }
        for block in 0..s.div_ceil(m) {
            let mut window = 0;
            for tj in 0..s.div_ceil(m) {
                window += b.output_tile(
                    Phase::QkDa,
                    MatrixId::Qk,
                    Some(head),
                    (s, p, s),
                    block,
                    tj,
                    Some(SoftmaxAction::Accumulate),
                );
            }
            let inv_at = b.entries.len();
            for tj in 0..p.div_ceil(m) {
                window += b.output_tile(
                    Phase::AvEn,
                    MatrixId::Av,
                    Some(head),
                    (s, s, p),
                    block,
                    tj,
                    Some(SoftmaxAction::Normalize),
                );
            }
            if opts.softmax == SoftmaxTiming::Free {
                continue;
            }
            let rows = (s - block * m).min(m);
            let demand = rows.div_ceil(cfg.divider_count as usize) as u64 * u64::from(cfg.divider_latency_cycles);
            let (window_cycles, stall) = match opts.softmax {
                SoftmaxTiming::Overlapped => (window, demand.saturating_sub(window)),
                _ => (0, demand),
            };
            b.entries.insert(
                inv_at,
                ScheduleEntry::Inversion(InversionOp {
                    head,
                    block,
                    rows,
                    demand_cycles: demand,
                    window_cycles,
                    stall_cycles: stall,
                }),
            );
        }
    }
    b.matmul(Phase::OutputProjection, MatrixId::Out, None, (s, h * p, e));

    Ok(TileSchedule { dims: *dims, entries: b.entries })
}
