//! Binary tensor container used for CLI inputs, outputs and fixtures.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                                      |
//! |--------|------|--------------------------------------------|
//! | 0      | 4    | magic `ITAQ`                               |
//! | 4      | 1    | version (1)                                |
//! | 5      | 1    | element type: 0 int8, 1 int32 accum, 2 uint8 |
//! | 6      | 4    | rows (u32)                                 |
//! | 10     | 4    | cols (u32)                                 |
//! | 14     | 2    | padding, zero                              |
//! | 16     | ...  | row-major payload                          |
//! | end-8  | 8    | scale (f64)                                |

use std::fs;
use std::path::Path;

use crate::error::{ItaError, Result};
use crate::quant::{AccumMatrix, QuantizedMatrix};
use crate::softmax::ProbMatrix;

pub const MAGIC: &[u8; 4] = b"ITAQ";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ElementType {
    Int8 = 0,
    Int32Accum = 1,
    UInt8 = 2,
}

impl ElementType {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Self::Int8),
            1 => Ok(Self::Int32Accum),
            2 => Ok(Self::UInt8),
            other => Err(ItaError::Format(format!("unknown element type {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Self::Int8 | Self::UInt8 => 1,
            Self::Int32Accum => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Int8(Vec<i8>),
    Int32(Vec<i32>),
    UInt8(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: TensorData,
    pub scale: f64,
}

impl Tensor {
    pub fn element_type(&self) -> ElementType {
        match self.data {
            TensorData::Int8(_) => ElementType::Int8,
            TensorData::Int32(_) => ElementType::Int32Accum,
            TensorData::UInt8(_) => ElementType::UInt8,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let et = self.element_type();
        let mut out = Vec::with_capacity(HEADER_LEN + self.rows * self.cols * et.width() + 8);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(et as u8);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&[0, 0]);
        match &self.data {
            TensorData::Int8(v) => out.extend(v.iter().map(|&c| c as u8)),
            TensorData::UInt8(v) => out.extend_from_slice(v),
            TensorData::Int32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out.extend_from_slice(&self.scale.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 8 {
            return Err(ItaError::Format(format!("{} bytes is shorter than header + scale", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(ItaError::Format("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(ItaError::Format(format!("unsupported version {}", bytes[4])));
        }
        let et = ElementType::from_u8(bytes[5])?;
        let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(et.width()))
            .ok_or_else(|| ItaError::Format("dimensions overflow".into()))?;
        let expected = HEADER_LEN + n + 8;
        if bytes.len() != expected {
            return Err(ItaError::Format(format!(
                "{rows}x{cols} {et:?} tensor needs {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        let payload = &bytes[HEADER_LEN..HEADER_LEN + n];
        let data = match et {
            ElementType::Int8 => TensorData::Int8(payload.iter().map(|&b| b as i8).collect()),
            ElementType::UInt8 => TensorData::UInt8(payload.to_vec()),
            ElementType::Int32Accum => {
                TensorData::Int32(payload.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
            }
        };
        let scale = f64::from_le_bytes(bytes[expected - 8..].try_into().unwrap());
        Ok(Self { rows, cols, data, scale })
    }

    pub fn into_quantized(self) -> Result<QuantizedMatrix> {
        match self.data {
            TensorData::Int8(codes) => QuantizedMatrix::new(self.rows, self.cols, codes, self.scale),
            _ => Err(ItaError::Format(format!("expected int8 tensor, found {:?}", self.element_type()))),
        }
    }
}

impl From<&QuantizedMatrix> for Tensor {
    fn from(q: &QuantizedMatrix) -> Self {
        Tensor { rows: q.rows(), cols: q.cols(), data: TensorData::Int8(q.codes().to_vec()), scale: q.scale() }
    }
}

impl From<&ProbMatrix> for Tensor {
    fn from(p: &ProbMatrix) -> Self {
        Tensor { rows: p.rows, cols: p.cols, data: TensorData::UInt8(p.codes.clone()), scale: ProbMatrix::SCALE }
    }
}

impl Tensor {
    pub fn from_accum(a: &AccumMatrix, scale: f64) -> Self {
        Tensor { rows: a.rows, cols: a.cols, data: TensorData::Int32(a.values.clone()), scale }
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ItaError::io(path, e))?;
    Tensor::from_bytes(&bytes).map_err(|e| ItaError::Format(format!("{}: {e}", path.display())))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, t.to_bytes()).map_err(|e| ItaError::io(path, e))
}

pub fn read_quantized(path: impl AsRef<Path>) -> Result<QuantizedMatrix> {
    let path = path.as_ref();
    read_tensor(path)?.into_quantized().map_err(|e| ItaError::Format(format!("{}: {e}", path.display())))
}
