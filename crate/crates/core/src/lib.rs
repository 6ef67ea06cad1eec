//! Functional and performance model of an integer transformer-attention
//! accelerator: int8 tiled matmuls with wide accumulation, a shift-only
//! streaming softmax fused between `Q x K^T` and `A x V`, and an analytical
//! cycle, bandwidth and throughput model of the weight-stationary schedule.

pub mod attention;
pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod manifest;
pub mod perf;
pub mod quant;
pub mod rng;
pub mod schedule;
pub mod softmax;
pub mod tensor_io;

pub use attention::{AttentionDims, AttentionOutput, HeadWeights, StepParams, WeightSet};
pub use error::{ItaError, Result};
pub use perf::{AcceleratorConfig, PerfReport};
pub use quant::{AccumMatrix, QuantizedMatrix, RequantParams};
pub use softmax::{ProbMatrix, SoftmaxConstants, SoftmaxState};
