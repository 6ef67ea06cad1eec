//! Symmetric 8-bit quantization, wide accumulators and requantization.
//!
//! A [`QuantizedMatrix`] stores signed 8-bit codes together with a positive
//! real scale so that `value = scale * code`. Matrix products are carried in
//! an [`AccumMatrix`] of D-bit signed integers and brought back to 8 bits with
//! [`requantize`], which multiplies by a small integer, divides by a power of
//! two with round-half-away-from-zero, and saturates.

use serde::{Deserialize, Serialize};

use crate::error::{ItaError, Result};

pub const CODE_MIN: i32 = i8::MIN as i32;
pub const CODE_MAX: i32 = i8::MAX as i32;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    codes: Vec<i8>,
    scale: f64,
}

impl QuantizedMatrix {
    pub fn new(rows: usize, cols: usize, codes: Vec<i8>, scale: f64) -> Result<Self> {
        if rows * cols != codes.len() {
            return Err(ItaError::shape(
                "QuantizedMatrix",
                format!("{rows}x{cols} needs {} codes, got {}", rows * cols, codes.len()),
            ));
        }
        check_scale(scale)?;
        Ok(Self { rows, cols, codes, scale })
    }

    pub fn zeros(rows: usize, cols: usize, scale: f64) -> Result<Self> {
        Self::new(rows, cols, vec![0; rows * cols], scale)
    }

    /// Square matrix with code 1 on the diagonal.
    pub fn identity(n: usize, scale: f64) -> Result<Self> {
        let mut codes = vec![0i8; n * n];
        for i in 0..n {
            codes[i * n + i] = 1;
        }
        Self::new(n, n, codes, scale)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn get(&self, r: usize, c: usize) -> i8 {
        self.codes[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[i8] {
        &self.codes[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut codes = vec![0i8; self.codes.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                codes[c * self.rows + r] = self.codes[r * self.cols + c];
            }
        }
        Self { rows: self.cols, cols: self.rows, codes, scale: self.scale }
    }

    pub fn into_codes(self) -> Vec<i8> {
        self.codes
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(ItaError::InvalidArgument(format!("scale must be positive and finite, got {scale}")));
    }
    Ok(())
}

/// Signed accumulator matrix produced by the PE array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccumMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<i32>,
}

impl AccumMatrix {
    pub fn get(&self, r: usize, c: usize) -> i32 {
        self.values[r * self.cols + c]
    }

    /// True when every value fits a signed `bits`-wide register.
    pub fn fits(&self, bits: u32) -> bool {
        let (lo, hi) = accum_range(bits);
        self.values.iter().all(|&v| (lo..=hi).contains(&(v as i64)))
    }

    pub fn requantize(&self, params: &RequantParams) -> QuantizedMatrix {
        let codes = self.values.iter().map(|&v| requantize(v, params)).collect();
        QuantizedMatrix { rows: self.rows, cols: self.cols, codes, scale: params.output_scale }
    }
}

pub fn accum_range(bits: u32) -> (i64, i64) {
    let half = 1i64 << (bits - 1);
    (-half, half - 1)
}

/// Fixed-point rescale applied between a wide accumulator and an 8-bit code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequantParams {
    pub multiplier: u8,
    pub right_shift: u8,
    pub output_scale: f64,
}

impl RequantParams {
    pub fn new(multiplier: u8, right_shift: u8, output_scale: f64) -> Result<Self> {
        let p = Self { multiplier, right_shift, output_scale };
        p.validate()?;
        Ok(p)
    }

    /// Pass-through parameters: `code = clamp(acc)`.
    pub fn unit(output_scale: f64) -> Self {
        Self { multiplier: 1, right_shift: 0, output_scale }
    }

    pub fn validate(&self) -> Result<()> {
        if self.multiplier == 0 {
            return Err(ItaError::InvalidArgument("requant multiplier must be >= 1".into()));
        }
        if self.right_shift > 31 {
            return Err(ItaError::InvalidArgument(format!("requant right_shift {} outside [0, 31]", self.right_shift)));
        }
        check_scale(self.output_scale)
    }

    /// Closest `multiplier / 2^right_shift` to `ratio` using the widest
    /// shift that keeps the multiplier in 8 bits.
    pub fn from_ratio(ratio: f64, output_scale: f64) -> Result<Self> {
        if !(ratio.is_finite() && ratio > 0.0) {
            return Err(ItaError::InvalidArgument(format!("requant ratio must be positive, got {ratio}")));
        }
        let mut best = (1u8, 31u8);
        for shift in (0..=31u8).rev() {
            let m = (ratio * f64::from(1u32 << shift)).round();
            if m <= 255.0 {
                if m >= 1.0 {
                    best = (m as u8, shift);
                }
                break;
            }
        }
        if ratio >= 255.5 {
            best = (255, 0);
        }
        Self::new(best.0, best.1, output_scale)
    }

    pub fn ratio(&self) -> f64 {
        f64::from(self.multiplier) / f64::from(1u32 << self.right_shift)
    }
}

/// Quantize real values with a symmetric scale, saturating to int8.
pub fn quantize(values: &[f64], rows: usize, cols: usize, scale: f64) -> Result<QuantizedMatrix> {
    check_scale(scale)?;
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(ItaError::NonFinite { index });
    }
    let codes = values.iter().map(|&v| quantize_value(v, scale)).collect();
    QuantizedMatrix::new(rows, cols, codes, scale)
}

pub fn quantize_value(value: f64, scale: f64) -> i8 {
    // f64::round rounds half away from zero.
    (value / scale).round().clamp(CODE_MIN as f64, CODE_MAX as f64) as i8
}

pub fn dequantize(q: &QuantizedMatrix) -> Vec<f64> {
    q.codes.iter().map(|&c| q.scale * f64::from(c)).collect()
}

/// `clamp(round_half_away((acc * multiplier) / 2^right_shift), -128, 127)`.
pub fn requantize(acc: i32, p: &RequantParams) -> i8 {
    let prod = i64::from(acc) * i64::from(p.multiplier);
    let shift = u32::from(p.right_shift);
    let mag = if shift == 0 { prod.abs() } else { (prod.abs() + (1i64 << (shift - 1))) >> shift };
    let rounded = if prod < 0 { -mag } else { mag };
    rounded.clamp(CODE_MIN as i64, CODE_MAX as i64) as i8
}
