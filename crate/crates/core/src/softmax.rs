//! Integer-only streaming softmax.
//!
//! Inputs are signed B-bit codes whose scale is chosen so that the base change
//! `e^x = 2^(x_q * B / 2^B)` turns every exponentiation into a right shift by
//! `(max - x) >> (B - log2 B)`. Each row is processed in three phases:
//!
//! * **DA** (denominator accumulation): parts of a row arrive one at a time;
//!   the running maximum lives in `max_buf` and the scaled denominator in
//!   `sum_buf` (saturating at `2^(2B-1) - 1`, 15 bits for B = 8). When a new
//!   part raises the maximum, the stored sum is shifted right by the
//!   difference of the two maxima before the part's contribution is added.
//! * **DI** (denominator inversion): `inv = ((2^B - 1) * 2^(B-1)) / sum`,
//!   computed with a 2B-bit restoring serial divider.
//! * **EN** (element normalization): `out = inv >> ((max - x) >> shift)`.
//!
//! Outputs are unsigned B-bit codes with scale `1 / (2^B - 1)`.

use crate::error::{ItaError, Result};

/// Bit-width dependent constants of the shift-only softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SoftmaxConstants {
    bits: u32,
}

impl Default for SoftmaxConstants {
    fn default() -> Self {
        Self { bits: 8 }
    }
}

impl SoftmaxConstants {
    pub const EIGHT_BIT: Self = Self { bits: 8 };

    /// `bits` must be a power of two in `[4, 8]` so codes fit an `i8`.
    pub fn new(bits: u32) -> Result<Self> {
        if !(bits.is_power_of_two() && (4..=8).contains(&bits)) {
            return Err(ItaError::InvalidArgument(format!("softmax bit width must be 4 or 8, got {bits}")));
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// `B - log2(B)`; 5 for B = 8.
    pub fn shift_amount(&self) -> u32 {
        self.bits - self.bits.trailing_zeros()
    }

    /// Contribution of the row maximum to the denominator, `2^(B-1)`.
    pub fn unit(&self) -> u32 {
        1 << (self.bits - 1)
    }

    /// Largest representable denominator, `2^(2B-1) - 1`.
    pub fn sum_max(&self) -> u32 {
        (1 << (2 * self.bits - 1)) - 1
    }

    /// Largest output code, `2^B - 1`; it stands for probability 1.0.
    pub fn out_max(&self) -> u32 {
        (1 << self.bits) - 1
    }

    /// Dividend of the inversion, `(2^B - 1) * 2^(B-1)`.
    pub fn inv_numerator(&self) -> u32 {
        self.out_max() * self.unit()
    }

    /// Longest row whose denominator can never saturate.
    pub fn max_exact_len(&self) -> usize {
        self.out_max() as usize
    }

    /// Base-2 exponent scale `B / 2^B`.
    pub fn epsilon_prime(&self) -> f64 {
        f64::from(self.bits) / f64::from(1u32 << self.bits)
    }

    /// Real scale of the softmax input codes, `B / (2^B * log2 e)`.
    pub fn input_scale(&self) -> f64 {
        self.epsilon_prime() / std::f64::consts::LOG2_E
    }

    pub fn code_range(&self) -> (i32, i32) {
        let half = 1i32 << (self.bits - 1);
        (-half, half - 1)
    }

    fn exponent_shift(&self, max: i32, x: i32) -> u32 {
        debug_assert!(x <= max);
        ((max - x) as u32) >> self.shift_amount()
    }

    fn check_codes(&self, part: &[i8]) -> Result<()> {
        let (lo, hi) = self.code_range();
        match part.iter().find(|&&x| !(lo..=hi).contains(&i32::from(x))) {
            Some(x) => Err(ItaError::InvalidArgument(format!("code {x} outside the {}-bit range", self.bits))),
            None => Ok(()),
        }
    }
}

/// How the stored and incoming partial sums are merged during DA.
///
/// `Hardware` is the accumulator behaviour of the simulator. `RescaleLocal`
/// sums every part against its own maximum and rescales whichever side is
/// smaller afterwards; it exists only so test suites can prove that they
/// detect a wrong merge order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeMode {
    #[default]
    Hardware,
    RescaleLocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowPhase {
    /// No part seen since the last reset.
    Empty,
    /// DA in progress.
    Accumulating,
    /// DI done; EN may read the row.
    Inverted,
}

/// Snapshot of one softmax row after DI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowTrace {
    pub max: i8,
    pub sum: u16,
    pub inverse: u16,
    pub rescales: u32,
    pub saturated: bool,
}

/// Per-tile streaming softmax buffers, one entry per tile row.
#[derive(Debug, Clone)]
pub struct SoftmaxState {
    consts: SoftmaxConstants,
    merge: MergeMode,
    max_buf: Vec<i8>,
    sum_buf: Vec<u16>,
    inv_buf: Vec<u16>,
    phase: Vec<RowPhase>,
    rescales: Vec<u32>,
    saturated: Vec<bool>,
}

impl SoftmaxState {
    pub fn new(rows: usize, consts: SoftmaxConstants) -> Self {
        Self::with_merge_mode(rows, consts, MergeMode::Hardware)
    }

    pub fn with_merge_mode(rows: usize, consts: SoftmaxConstants, merge: MergeMode) -> Self {
        Self {
            consts,
            merge,
            max_buf: vec![0; rows],
            sum_buf: vec![0; rows],
            inv_buf: vec![0; rows],
            phase: vec![RowPhase::Empty; rows],
            rescales: vec![0; rows],
            saturated: vec![false; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.max_buf.len()
    }

    pub fn constants(&self) -> SoftmaxConstants {
        self.consts
    }

    /// Clears every row; called at the start of each row block.
    pub fn reset(&mut self) {
        self.max_buf.fill(0);
        self.sum_buf.fill(0);
        self.inv_buf.fill(0);
        self.phase.fill(RowPhase::Empty);
        self.rescales.fill(0);
        self.saturated.fill(false);
    }

    pub fn phase(&self, row: usize) -> RowPhase {
        self.phase[row]
    }

    pub fn max(&self, row: usize) -> i8 {
        self.max_buf[row]
    }

    pub fn sum(&self, row: usize) -> u16 {
        self.sum_buf[row]
    }

    pub fn inverse(&self, row: usize) -> u16 {
        self.inv_buf[row]
    }

    pub fn trace(&self, row: usize) -> RowTrace {
        RowTrace {
            max: self.max_buf[row],
            sum: self.sum_buf[row],
            inverse: self.inv_buf[row],
            rescales: self.rescales[row],
            saturated: self.saturated[row],
        }
    }

    fn check_row(&self, row: usize) -> Result<()> {
        if row >= self.rows() {
            return Err(ItaError::RowOutOfRange { row, rows: self.rows() });
        }
        Ok(())
    }

    fn partial_sum(&self, max: i32, part: &[i8]) -> u32 {
        let unit = self.consts.unit();
        part.iter().map(|&x| unit >> self.consts.exponent_shift(max, i32::from(x))).sum()
    }

    /// Denominator accumulation of one part of `row`.
    pub fn da_update(&mut self, row: usize, part: &[i8]) -> Result<()> {
        self.check_row(row)?;
        if self.phase[row] == RowPhase::Inverted {
            return Err(ItaError::Phase { row, detail: "DA after DI without reset".into() });
        }
        if part.is_empty() {
            return Err(ItaError::InvalidArgument("DA part must be nonempty".into()));
        }
        self.consts.check_codes(part)?;

        let shift = self.consts.shift_amount();
        let local_max = i32::from(*part.iter().max().unwrap());
        let (new_max, sum) = match self.phase[row] {
            RowPhase::Empty => (local_max, self.partial_sum(local_max, part)),
            _ => {
                let prev_max = i32::from(self.max_buf[row]);
                let stored = u32::from(self.sum_buf[row]);
                let max = prev_max.max(local_max);
                if local_max > prev_max {
                    self.rescales[row] += 1;
                }
                let sum = match self.merge {
                    MergeMode::Hardware => {
                        let stale = stored >> (((max - prev_max) as u32) >> shift);
                        stale + self.partial_sum(max, part)
                    }
                    MergeMode::RescaleLocal => {
                        let local = self.partial_sum(local_max, part);
                        (stored >> (((max - prev_max) as u32) >> shift))
                            + (local >> (((max - local_max) as u32) >> shift))
                    }
                };
                (max, sum)
            }
        };
        if sum > self.consts.sum_max() {
            self.saturated[row] = true;
        }
        self.max_buf[row] = new_max as i8;
        self.sum_buf[row] = sum.min(self.consts.sum_max()) as u16;
        self.phase[row] = RowPhase::Accumulating;
        Ok(())
    }

    /// Denominator inversion for `row`.
    pub fn di_invert(&mut self, row: usize) -> Result<()> {
        self.check_row(row)?;
        if self.phase[row] != RowPhase::Accumulating {
            return Err(ItaError::Phase {
                row,
                detail: format!("DI requires a row in DA, found {:?}", self.phase[row]),
            });
        }
        let sum = self.sum_buf[row];
        if u32::from(sum) < self.consts.unit() {
            return Err(ItaError::InvariantViolation(format!("row {row} denominator {sum} below one unit after DA")));
        }
        let (q, _) = serial_divide(self.consts.inv_numerator() as u16, sum);
        self.inv_buf[row] = q;
        self.phase[row] = RowPhase::Inverted;
        Ok(())
    }

    /// Element normalization of code `x` belonging to `row`.
    pub fn en_normalize(&self, row: usize, x: i8) -> Result<u8> {
        self.check_row(row)?;
        if self.phase[row] != RowPhase::Inverted {
            return Err(ItaError::Phase { row, detail: format!("EN requires DI, found {:?}", self.phase[row]) });
        }
        let max = self.max_buf[row];
        if x > max {
            return Err(ItaError::InvariantViolation(format!("row {row}: code {x} exceeds the stored maximum {max}")));
        }
        let s = self.consts.exponent_shift(i32::from(max), i32::from(x));
        Ok((u32::from(self.inv_buf[row]) >> s) as u8)
    }
}

/// Restoring serial division, one quotient bit per cycle.
///
/// Returns `(dividend / divisor, cycles)`. The divisor must be nonzero.
pub fn serial_divide(dividend: u16, divisor: u16) -> (u16, u32) {
    assert!(divisor != 0, "serial divider fed a zero divisor");
    let mut rem: u32 = 0;
    let mut quot: u16 = 0;
    for bit in (0..16).rev() {
        rem = (rem << 1) | u32::from((dividend >> bit) & 1);
        if rem >= u32::from(divisor) {
            rem -= u32::from(divisor);
            quot |= 1 << bit;
        }
    }
    (quot, 16)
}

/// Probability matrix: unsigned codes where `2^B - 1` means 1.0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbMatrix {
    pub rows: usize,
    pub cols: usize,
    pub codes: Vec<u8>,
}

impl ProbMatrix {
    pub const SCALE: f64 = 1.0 / 255.0;

    pub fn row(&self, r: usize) -> &[u8] {
        &self.codes[r * self.cols..(r + 1) * self.cols]
    }
}

/// Runs DA over `part_width`-wide parts of `row`, then DI and EN.
pub fn softmax_row_streaming(row: &[i8], part_width: usize, consts: SoftmaxConstants) -> Result<Vec<u8>> {
    softmax_row_streaming_with(row, part_width, consts, MergeMode::Hardware)
}

pub fn softmax_row_streaming_with(
    row: &[i8],
    part_width: usize,
    consts: SoftmaxConstants,
    merge: MergeMode,
) -> Result<Vec<u8>> {
    if part_width == 0 {
        return Err(ItaError::InvalidArgument("part width must be positive".into()));
    }
    let mut state = SoftmaxState::with_merge_mode(1, consts, merge);
    for part in row.chunks(part_width) {
        state.da_update(0, part)?;
    }
    state.di_invert(0)?;
    row.iter().map(|&x| state.en_normalize(0, x)).collect()
}

/// Streaming softmax over explicit part boundaries (`parts` are lengths).
pub fn softmax_row_partitioned(row: &[i8], parts: &[usize], consts: SoftmaxConstants) -> Result<Vec<u8>> {
    if parts.iter().sum::<usize>() != row.len() {
        return Err(ItaError::InvalidArgument("part lengths must cover the row".into()));
    }
    let mut state = SoftmaxState::new(1, consts);
    let mut start = 0;
    for &len in parts {
        state.da_update(0, &row[start..start + len])?;
        start += len;
    }
    state.di_invert(0)?;
    row.iter().map(|&x| state.en_normalize(0, x)).collect()
}

/// Single-pass integer reference with the row maximum known upfront.
pub fn softmax_row_integer_oracle(row: &[i8], consts: SoftmaxConstants) -> Result<Vec<u8>> {
    if row.is_empty() {
        return Err(ItaError::InvalidArgument("softmax row must be nonempty".into()));
    }
    if row.len() > consts.max_exact_len() {
        return Err(ItaError::InvalidArgument(format!(
            "row length {} exceeds {} (denominator would saturate)",
            row.len(),
            consts.max_exact_len()
        )));
    }
    consts.check_codes(row)?;
    let max = i32::from(*row.iter().max().unwrap());
    let shifts: Vec<u32> = row.iter().map(|&x| consts.exponent_shift(max, i32::from(x))).collect();
    let sum: u32 = shifts.iter().map(|&s| consts.unit() >> s).sum();
    let inv = consts.inv_numerator() / sum;
    Ok(shifts.iter().map(|&s| (inv >> s) as u8).collect())
}

/// Base-2 real softmax with exponent scale `B / 2^B`.
pub fn softmax_row_float_oracle(row: &[i8], consts: SoftmaxConstants) -> Vec<f64> {
    let Some(&max) = row.iter().max() else {
        return Vec::new();
    };
    let eps = consts.epsilon_prime();
    let exps: Vec<f64> = row.iter().map(|&x| (eps * f64::from(i32::from(x) - i32::from(max))).exp2()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Mean absolute error between integer probabilities and real ones.
pub fn mae(integer_out: &[u8], float_out: &[f64], consts: SoftmaxConstants) -> Result<f64> {
    if integer_out.len() != float_out.len() {
        return Err(ItaError::shape(
            "mae",
            format!("{} integer vs {} float elements", integer_out.len(), float_out.len()),
        ));
    }
    if integer_out.is_empty() {
        return Ok(0.0);
    }
    let scale = f64::from(consts.out_max());
    let total: f64 = integer_out.iter().zip(float_out).map(|(&q, &f)| (f64::from(q) / scale - f).abs()).sum();
    Ok(total / integer_out.len() as f64)
}
