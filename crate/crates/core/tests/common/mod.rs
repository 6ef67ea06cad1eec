#![allow(dead_code)]

pub mod reference;

use std::path::PathBuf;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

use ita_core::harness::Fixture;
use ita_core::RequantParams;

/// Fixture directories with the dims and seed each was generated from.
pub const GOLDEN: [(&str, &str, u64); 2] =
    [("s64_e64_p64_h1", "64x64x64x1", 7), ("s128_e192_p64_h3", "128x192x64x3", 11)];

pub fn run_reference(fx: &Fixture, part: usize) -> reference::LayerOutput {
    let rq = |p: &RequantParams| reference::Requant { mult: i64::from(p.multiplier), shift: u32::from(p.right_shift) };
    let r = &fx.weights.requant;
    let layer = reference::Layer {
        s: fx.dims.s,
        e: fx.dims.e,
        p: fx.dims.p,
        x: fx.x.codes(),
        heads: fx
            .weights
            .heads
            .iter()
            .map(|h| reference::Head {
                wq: h.wq.codes(),
                wk: h.wk.codes(),
                wv: h.wv.codes(),
                bq: &h.bq,
                bk: &h.bk,
                bv: &h.bv,
            })
            .collect(),
        wo: fx.weights.wo.codes(),
        bo: &fx.weights.bo,
        rq: [rq(&r.q), rq(&r.k), rq(&r.v), rq(&r.qk), rq(&r.av), rq(&r.out)],
        part,
    };
    reference::attention(&layer)
}
