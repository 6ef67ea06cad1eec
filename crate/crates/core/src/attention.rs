//! Bit-accurate multi-head attention on the tiled int8 datapath.
//!
//! Every matrix product goes through [`tiled_matmul`], which walks M x M
//! output tiles, iterates over the inner dimension in M-wide steps, and lets
//! each group of N PEs hold N weight columns while M input vectors stream
//! past. Operands outside the matrix bounds are zero padding.
//!
//! Within a head, the `Q x K^T` and `A x V` products are fused per block of M
//! query rows with the streaming softmax in between; see [`attention_head`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ItaError, Result};
use crate::perf::AcceleratorConfig;
use crate::quant::{accum_range, dequantize, AccumMatrix, QuantizedMatrix, RequantParams};
use crate::softmax::{MergeMode, ProbMatrix, RowTrace, SoftmaxConstants, SoftmaxState};

/// Workload shape: sequence `s`, embedding `e`, projection `p`, heads `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionDims {
    pub s: usize,
    pub e: usize,
    pub p: usize,
    pub h: usize,
}

impl AttentionDims {
    pub fn new(s: usize, e: usize, p: usize, h: usize) -> Result<Self> {
        let d = Self { s, e, p, h };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 || self.e == 0 || self.p == 0 || self.h == 0 {
            return Err(ItaError::InvalidArgument(format!("degenerate attention dims {self}")));
        }
        Ok(())
    }
}

impl std::fmt::Display for AttentionDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.s, self.e, self.p, self.h)
    }
}

impl std::str::FromStr for AttentionDims {
    type Err = ItaError;

    /// Parses `SxExPxH`.
    fn from_str(text: &str) -> Result<Self> {
        let parts: Vec<usize> = text
            .split('x')
            .map(|v| v.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| ItaError::InvalidArgument(format!("dims must look like SxExPxH, got {text:?}")))?;
        match parts[..] {
            [s, e, p, h] => Self::new(s, e, p, h),
            _ => Err(ItaError::InvalidArgument(format!("dims must look like SxExPxH, got {text:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub wq: QuantizedMatrix,
    pub wk: QuantizedMatrix,
    pub wv: QuantizedMatrix,
    pub bq: Vec<i8>,
    pub bk: Vec<i8>,
    pub bv: Vec<i8>,
}

/// Requantization parameters for each matmul step of the layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepParams {
    pub q: RequantParams,
    pub k: RequantParams,
    pub v: RequantParams,
    pub qk: RequantParams,
    pub av: RequantParams,
    pub out: RequantParams,
}

impl StepParams {
    pub fn validate(&self) -> Result<()> {
        [self.q, self.k, self.v, self.qk, self.av, self.out].iter().try_for_each(|p| p.validate())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub heads: Vec<HeadWeights>,
    pub wo: QuantizedMatrix,
    pub bo: Vec<i8>,
    pub requant: StepParams,
}

impl WeightSet {
    pub fn validate(&self, dims: &AttentionDims) -> Result<()> {
        dims.validate()?;
        self.requant.validate()?;
        if self.heads.len() != dims.h {
            return Err(ItaError::shape("weights", format!("{} heads, dims say {}", self.heads.len(), dims.h)));
        }
        let check = |name: String, m: &QuantizedMatrix, r: usize, c: usize| {
            if (m.rows(), m.cols()) != (r, c) {
                Err(ItaError::shape(name, format!("expected {r}x{c}, got {}x{}", m.rows(), m.cols())))
            } else {
                Ok(())
            }
        };
        let check_bias = |name: String, b: &[i8], n: usize| {
            if b.len() != n {
                Err(ItaError::shape(name, format!("expected {n} entries, got {}", b.len())))
            } else {
                Ok(())
            }
        };
        for (i, hw) in self.heads.iter().enumerate() {
            check(format!("wq[{i}]"), &hw.wq, dims.e, dims.p)?;
            check(format!("wk[{i}]"), &hw.wk, dims.e, dims.p)?;
            check(format!("wv[{i}]"), &hw.wv, dims.e, dims.p)?;
            check_bias(format!("bq[{i}]"), &hw.bq, dims.p)?;
            check_bias(format!("bk[{i}]"), &hw.bk, dims.p)?;
            check_bias(format!("bv[{i}]"), &hw.bv, dims.p)?;
        }
        check("wo".into(), &self.wo, dims.h * dims.p, dims.e)?;
        check_bias("bo".into(), &self.bo, dims.e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionOptions {
    /// Run `Q x K^T`, softmax and `A x V` block by block (the hardware
    /// schedule) instead of as three whole-matrix passes.
    pub fused: bool,
    pub merge: MergeMode,
    /// Run heads on the rayon pool.
    pub parallel_heads: bool,
}

impl Default for AttentionOptions {
    fn default() -> Self {
        Self { fused: true, merge: MergeMode::Hardware, parallel_heads: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// S x P requantized head output.
    pub output: QuantizedMatrix,
    /// Requantized attention scores (the int8 `A` kept in scratch memory).
    pub scores: QuantizedMatrix,
    pub probs: ProbMatrix,
    /// One entry per query row.
    pub softmax_trace: Vec<RowTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub output: QuantizedMatrix,
    pub heads: Vec<HeadOutput>,
}

impl AttentionOutput {
    pub fn attention_probs(&self) -> impl Iterator<Item = &ProbMatrix> {
        self.heads.iter().map(|h| &h.probs)
    }
}

/// Row-major integer operand with zero padding outside its bounds.
struct Operand<'a, T> {
    rows: usize,
    cols: usize,
    data: &'a [T],
}

impl<T: Copy + Into<i32>> Operand<'_, T> {
    /// Copies the `(ti, tj)` M x M tile, zero padded.
    fn load_tile(&self, ti: usize, tj: usize, m: usize, tile: &mut [i32]) {
        tile.fill(0);
        for r in 0..m {
            let gr = ti * m + r;
            if gr >= self.rows {
                break;
            }
            for c in 0..m {
                let gc = tj * m + c;
                if gc >= self.cols {
                    break;
                }
                tile[r * m + c] = self.data[gr * self.cols + gc].into();
            }
        }
    }
}

/// One inner step of the PE array on an M x M output tile.
///
/// The weight tile stays resident; PE `k` of each group of N holds weight
/// column `g * N + k` and computes an M-wide dot product with every streamed
/// input row.
///
/// `valid` is `(rows, cols, inner)` of the non-padded region; padded lanes
/// hold zeros and are skipped.
fn pe_array_step(
    acc: &mut [i32],
    inputs: &[i32],
    weights: &[i32],
    cfg: &AcceleratorConfig,
    valid: (usize, usize, usize),
) {
    let m = cfg.tile();
    let n = cfg.n as usize;
    let (rows, cols, inner) = valid;
    let (lo, hi) = accum_range(cfg.d);
    for group in 0..m.div_ceil(n) {
        for row in 0..rows {
            let x = &inputs[row * m..row * m + inner];
            for pe in 0..n {
                let col = group * n + pe;
                if col >= cols {
                    break;
                }
                let dot: i32 = x.iter().enumerate().map(|(k, &xv)| xv * weights[k * m + col]).sum();
                let slot = &mut acc[row * m + col];
                *slot += dot;
                debug_assert!((lo..=hi).contains(&i64::from(*slot)), "accumulator overflow");
            }
        }
    }
}

fn check_inner(inner: usize, cfg: &AcceleratorConfig) -> Result<()> {
    let bound = cfg.max_inner_dim();
    if inner > bound {
        return Err(ItaError::AccumulatorOverflow { inner, bound });
    }
    Ok(())
}

/// Writes the valid part of an accumulated tile, adding the bias once.
fn store_tile(out: &mut AccumMatrix, acc: &[i32], ti: usize, tj: usize, m: usize, bias: Option<&[i8]>) {
    for r in 0..m {
        let gr = ti * m + r;
        if gr >= out.rows {
            break;
        }
        for c in 0..m {
            let gc = tj * m + c;
            if gc >= out.cols {
                break;
            }
            let b = bias.map_or(0, |b| i32::from(b[gc]));
            out.values[gr * out.cols + gc] = acc[r * m + c] + b;
        }
    }
}

fn tiled_product<T: Copy + Into<i32>>(
    a: Operand<'_, T>,
    b: &QuantizedMatrix,
    bias: Option<&[i8]>,
    cfg: &AcceleratorConfig,
) -> Result<AccumMatrix> {
    if a.cols != b.rows() {
        return Err(ItaError::shape(
            "tiled_matmul",
            format!("inner dimensions differ: {}x{} times {}x{}", a.rows, a.cols, b.rows(), b.cols()),
        ));
    }
    if let Some(bias) = bias {
        if bias.len() != b.cols() {
            return Err(ItaError::shape(
                "tiled_matmul bias",
                format!("{} entries for {} columns", bias.len(), b.cols()),
            ));
        }
    }
    check_inner(a.cols, cfg)?;
    let m = cfg.tile();
    let bw = Operand { rows: b.rows(), cols: b.cols(), data: b.codes() };
    let mut out = AccumMatrix { rows: a.rows, cols: b.cols(), values: vec![0; a.rows * b.cols()] };
    let (mut at, mut wt, mut acc) = (vec![0; m * m], vec![0; m * m], vec![0; m * m]);
    for ti in 0..a.rows.div_ceil(m) {
        for tj in 0..b.cols().div_ceil(m) {
            acc.fill(0);
            let valid_rc = ((a.rows - ti * m).min(m), (b.cols() - tj * m).min(m));
            for l in 0..a.cols.div_ceil(m) {
                a.load_tile(ti, l, m, &mut at);
                bw.load_tile(l, tj, m, &mut wt);
                pe_array_step(&mut acc, &at, &wt, cfg, (valid_rc.0, valid_rc.1, (a.cols - l * m).min(m)));
            }
            store_tile(&mut out, &acc, ti, tj, m, bias);
        }
    }
    Ok(out)
}

/// Integer matmul `a x b (+ bias)` on the tiled PE model.
pub fn tiled_matmul(
    a: &QuantizedMatrix,
    b: &QuantizedMatrix,
    bias: Option<&[i8]>,
    cfg: &AcceleratorConfig,
) -> Result<AccumMatrix> {
    tiled_product(Operand { rows: a.rows(), cols: a.cols(), data: a.codes() }, b, bias, cfg)
}

/// `probs x b` with unsigned probability codes on the input side.
pub fn tiled_matmul_probs(a: &ProbMatrix, b: &QuantizedMatrix, cfg: &AcceleratorConfig) -> Result<AccumMatrix> {
    tiled_product(Operand { rows: a.rows, cols: a.cols, data: &a.codes }, b, None, cfg)
}

/// Plain triple-loop integer matmul in 64-bit arithmetic.
pub fn naive_matmul(a: &[i32], rows: usize, inner: usize, b: &[i32], cols: usize, bias: Option<&[i8]>) -> Vec<i64> {
    let mut out = vec![0i64; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut s: i64 = bias.map_or(0, |b| i64::from(b[c]));
            for k in 0..inner {
                s += i64::from(a[r * inner + k]) * i64::from(b[k * cols + c]);
            }
            out[r * cols + c] = s;
        }
    }
    out
}

fn project(
    x: &QuantizedMatrix,
    w: &QuantizedMatrix,
    b: &[i8],
    p: &RequantParams,
    cfg: &AcceleratorConfig,
) -> Result<QuantizedMatrix> {
    Ok(tiled_matmul(x, w, Some(b), cfg)?.requantize(p))
}

/// One attention head on the fused schedule (or the three-pass reference
/// order when `opts.fused` is false).
pub fn attention_head(
    x: &QuantizedMatrix,
    hw: &HeadWeights,
    requant: &StepParams,
    cfg: &AcceleratorConfig,
    opts: &AttentionOptions,
) -> Result<HeadOutput> {
    let q = project(x, &hw.wq, &hw.bq, &requant.q, cfg)?;
    let k = project(x, &hw.wk, &hw.bk, &requant.k, cfg)?;
    let v = project(x, &hw.wv, &hw.bv, &requant.v, cfg)?;
    let kt = k.transpose();
    if opts.fused {
        fused_qk_av(&q, &kt, &v, requant, cfg, opts.merge)
    } else {
        unfused_qk_av(&q, &kt, &v, requant, cfg, opts.merge)
    }
}

fn fused_qk_av(
    q: &QuantizedMatrix,
    kt: &QuantizedMatrix,
    v: &QuantizedMatrix,
    requant: &StepParams,
    cfg: &AcceleratorConfig,
    merge: MergeMode,
) -> Result<HeadOutput> {
    let s = q.rows();
    let p = v.cols();
    check_inner(q.cols(), cfg)?;
    check_inner(s, cfg)?;
    let m = cfg.tile();
    let blocks = s.div_ceil(m);
    let consts = SoftmaxConstants::default();
    let mut state = SoftmaxState::with_merge_mode(m, consts, merge);

    // int8 scores stand in for the attention matrix in external memory.
    let mut scores = vec![0i8; s * s];
    let mut probs = vec![0u8; s * s];
    let mut av = AccumMatrix { rows: s, cols: p, values: vec![0; s * p] };
    let mut trace = Vec::with_capacity(s);

    let qo = Operand { rows: s, cols: q.cols(), data: q.codes() };
    let kto = Operand { rows: kt.rows(), cols: s, data: kt.codes() };
    let vo = Operand { rows: s, cols: p, data: v.codes() };
    let (mut at, mut wt, mut acc) = (vec![0; m * m], vec![0; m * m], vec![0; m * m]);

    for block in 0..blocks {
        state.reset();
        let rows = (s - block * m).min(m);

        // Q x K^T with DA on the last inner step of every tile.
        for tj in 0..blocks {
            acc.fill(0);
            let cols = (s - tj * m).min(m);
            for l in 0..q.cols().div_ceil(m) {
                qo.load_tile(block, l, m, &mut at);
                kto.load_tile(l, tj, m, &mut wt);
                pe_array_step(&mut acc, &at, &wt, cfg, (rows, cols, (q.cols() - l * m).min(m)));
            }
            for r in 0..rows {
                let gr = block * m + r;
                let dst = &mut scores[gr * s + tj * m..gr * s + tj * m + cols];
                for (c, code) in dst.iter_mut().enumerate() {
                    *code = crate::quant::requantize(acc[r * m + c], &requant.qk);
                }
                state.da_update(r, dst)?;
            }
        }

        for r in 0..rows {
            state.di_invert(r)?;
            trace.push(state.trace(r));
        }

        // A x V: EN turns the stored scores into probabilities as each input
        // tile is fetched.
        for tj in 0..p.div_ceil(m) {
            acc.fill(0);
            for l in 0..blocks {
                at.fill(0);
                let cols = (s - l * m).min(m);
                for r in 0..rows {
                    let gr = block * m + r;
                    for c in 0..cols {
                        let gc = l * m + c;
                        let pr = state.en_normalize(r, scores[gr * s + gc])?;
                        probs[gr * s + gc] = pr;
                        at[r * m + c] = i32::from(pr);
                    }
                }
                vo.load_tile(l, tj, m, &mut wt);
                pe_array_step(&mut acc, &at, &wt, cfg, (rows, (p - tj * m).min(m), cols));
            }
            store_tile(&mut av, &acc, block, tj, m, None);
        }
    }

    Ok(HeadOutput {
        output: av.requantize(&requant.av),
        scores: QuantizedMatrix::new(s, s, scores, requant.qk.output_scale)?,
        probs: ProbMatrix { rows: s, cols: s, codes: probs },
        softmax_trace: trace,
    })
}

fn unfused_qk_av(
    q: &QuantizedMatrix,
    kt: &QuantizedMatrix,
    v: &QuantizedMatrix,
    requant: &StepParams,
    cfg: &AcceleratorConfig,
    merge: MergeMode,
) -> Result<HeadOutput> {
    let s = q.rows();
    let m = cfg.tile();
    let scores = tiled_matmul(q, kt, None, cfg)?.requantize(&requant.qk);
    let consts = SoftmaxConstants::default();
    let mut probs = Vec::with_capacity(s * s);
    let mut trace = Vec::with_capacity(s);
    for r in 0..s {
        let row = scores.row(r);
        let mut st = SoftmaxState::with_merge_mode(1, consts, merge);
        for part in row.chunks(m) {
            st.da_update(0, part)?;
        }
        st.di_invert(0)?;
        trace.push(st.trace(0));
        for &x in row {
            probs.push(st.en_normalize(0, x)?);
        }
    }
    let probs = ProbMatrix { rows: s, cols: s, codes: probs };
    let av = tiled_matmul_probs(&probs, v, cfg)?;
    Ok(HeadOutput { output: av.requantize(&requant.av), scores, probs, softmax_trace: trace })
}

/// Full multi-head attention: heads, concatenation, output projection.
pub fn multi_head_attention(
    x: &QuantizedMatrix,
    w: &WeightSet,
    cfg: &AcceleratorConfig,
    dims: &AttentionDims,
    opts: &AttentionOptions,
) -> Result<AttentionOutput> {
    cfg.validate_functional()?;
    w.validate(dims)?;
    if (x.rows(), x.cols()) != (dims.s, dims.e) {
        return Err(ItaError::shape("input", format!("expected {}x{}, got {}x{}", dims.s, dims.e, x.rows(), x.cols())));
    }
    let run = |hw: &HeadWeights| attention_head(x, hw, &w.requant, cfg, opts);
    let heads: Vec<HeadOutput> = if opts.parallel_heads {
        w.heads.par_iter().map(run).collect::<Result<_>>()?
    } else {
        w.heads.iter().map(run).collect::<Result<_>>()?
    };

    let (s, p) = (dims.s, dims.p);
    let mut concat = vec![0i8; s * dims.h * p];
    for (hi, head) in heads.iter().enumerate() {
        for r in 0..s {
            concat[r * dims.h * p + hi * p..r * dims.h * p + (hi + 1) * p].copy_from_slice(head.output.row(r));
        }
    }
    let concat = QuantizedMatrix::new(s, dims.h * p, concat, w.requant.av.output_scale)?;
    let output = tiled_matmul(&concat, &w.wo, Some(&w.bo), cfg)?.requantize(&w.requant.out);
    Ok(AttentionOutput { output, heads })
}

/// Real-valued weights for the golden model.
#[derive(Debug, Clone)]
pub struct FloatWeights {
    pub heads: Vec<FloatHead>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FloatHead {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bq: Vec<f64>,
    pub bk: Vec<f64>,
    pub bv: Vec<f64>,
}

impl FloatWeights {
    /// Dequantizes `w`; each bias code is worth one accumulator LSB of its
    /// step, i.e. input scale times weight scale.
    pub fn from_weight_set(w: &WeightSet, input_scale: f64) -> Self {
        let bias = |b: &[i8], scale: f64| b.iter().map(|&c| f64::from(c) * scale).collect();
        let heads = w
            .heads
            .iter()
            .map(|h| FloatHead {
                wq: dequantize(&h.wq),
                wk: dequantize(&h.wk),
                wv: dequantize(&h.wv),
                bq: bias(&h.bq, input_scale * h.wq.scale()),
                bk: bias(&h.bk, input_scale * h.wk.scale()),
                bv: bias(&h.bv, input_scale * h.wv.scale()),
            })
            .collect();
        Self { heads, wo: dequantize(&w.wo), bo: bias(&w.bo, w.requant.av.output_scale * w.wo.scale()) }
    }
}

#[derive(Debug, Clone)]
pub struct GoldenOutput {
    /// S x E.
    pub output: Vec<f64>,
    /// Per head, S x S, rows summing to one.
    pub probs: Vec<Vec<f64>>,
    /// Per head `Q K^T` logits before softmax, S x S.
    pub logits: Vec<Vec<f64>>,
    /// Per head `Q`, `K`, `V` (S x P each) and head output (S x P).
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub head_out: Vec<Vec<f64>>,
}

fn fmatmul(a: &[f64], rows: usize, inner: usize, b: &[f64], cols: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut s = bias.map_or(0.0, |b| b[c]);
            for k in 0..inner {
                s += a[r * inner + k] * b[k * cols + c];
            }
            out[r * cols + c] = s;
        }
    }
    out
}

/// Real-arithmetic attention with an exact base-e softmax.
pub fn float_golden_attention(x: &[f64], w: &FloatWeights, dims: &AttentionDims) -> Result<GoldenOutput> {
    dims.validate()?;
    let (s, e, p, h) = (dims.s, dims.e, dims.p, dims.h);
    if x.len() != s * e || w.heads.len() != h {
        return Err(ItaError::shape(
            "float_golden_attention",
            format!("input {} values, {} heads", x.len(), w.heads.len()),
        ));
    }
    let mut g = GoldenOutput {
        output: Vec::new(),
        probs: vec![],
        logits: vec![],
        q: vec![],
        k: vec![],
        v: vec![],
        head_out: vec![],
    };
    let mut concat = vec![0.0; s * h * p];
    for (hi, hw) in w.heads.iter().enumerate() {
        let q = fmatmul(x, s, e, &hw.wq, p, Some(&hw.bq));
        let k = fmatmul(x, s, e, &hw.wk, p, Some(&hw.bk));
        let v = fmatmul(x, s, e, &hw.wv, p, Some(&hw.bv));
        let mut kt = vec![0.0; p * s];
        for r in 0..s {
            for c in 0..p {
                kt[c * s + r] = k[r * p + c];
            }
        }
        let logits = fmatmul(&q, s, p, &kt, s, None);
        let mut probs = vec![0.0; s * s];
        for r in 0..s {
            let row = &logits[r * s..(r + 1) * s];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (c, ex) in exps.iter().enumerate() {
                probs[r * s + c] = ex / total;
            }
        }
        let ho = fmatmul(&probs, s, s, &v, p, None);
        for r in 0..s {
            concat[r * h * p + hi * p..r * h * p + (hi + 1) * p].copy_from_slice(&ho[r * p..(r + 1) * p]);
        }
        g.q.push(q);
        g.k.push(k);
        g.v.push(v);
        g.logits.push(logits);
        g.probs.push(probs);
        g.head_out.push(ho);
    }
    g.output = fmatmul(&concat, s, h * p, &w.wo, e, Some(&w.bo));
    Ok(g)
}
