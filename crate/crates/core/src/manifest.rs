//! Problem manifests: a TOML file naming the dimensions, the tensor files and
//! the requantization parameters of one attention layer.
//!
//! ```toml
//! dims = { s = 64, e = 64, p = 64, h = 1 }
//! input = "x.ita"
//! wo = "wo.ita"
//! bo = "bo.ita"
//!
//! [[heads]]
//! wq = "h0_wq.ita"
//! # wk, wv, bq, bk, bv likewise; biases are 1 x n int8 tensors
//!
//! [requant.q]
//! multiplier = 181
//! right_shift = 15
//! output_scale = 0.0123
//! # k, v, qk, av, out likewise
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionDims, HeadWeights, StepParams, WeightSet};
use crate::config::load_toml;
use crate::error::{ItaError, Result};
use crate::harness::Fixture;
use crate::quant::QuantizedMatrix;
use crate::tensor_io::{read_quantized, write_tensor, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadFiles {
    pub wq: PathBuf,
    pub wk: PathBuf,
    pub wv: PathBuf,
    pub bq: PathBuf,
    pub bk: PathBuf,
    pub bv: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dims: AttentionDims,
    /// Seed the tensors were generated from, if synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub input: PathBuf,
    pub wo: PathBuf,
    pub bo: PathBuf,
    pub requant: StepParams,
    pub heads: Vec<HeadFiles>,
}

fn read_bias(path: &Path, len: usize) -> Result<Vec<i8>> {
    let t = read_quantized(path)?;
    if t.rows() != 1 || t.cols() != len {
        return Err(ItaError::shape(
            path.display().to_string(),
            format!("bias must be 1x{len}, got {}x{}", t.rows(), t.cols()),
        ));
    }
    Ok(t.into_codes())
}

fn bias_tensor(b: &[i8]) -> Result<Tensor> {
    Ok(Tensor::from(&QuantizedMatrix::new(1, b.len(), b.to_vec(), 1.0)?))
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let m: Manifest = load_toml(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, base))
    }

    /// Reads every tensor and validates shapes against `dims`.
    pub fn resolve(&self, base: &Path) -> Result<Fixture> {
        self.dims.validate()?;
        self.requant.validate()?;
        if self.heads.len() != self.dims.h {
            return Err(ItaError::shape(
                "manifest",
                format!("dims say {} heads, {} listed", self.dims.h, self.heads.len()),
            ));
        }
        let p = |f: &Path| base.join(f);
        let x = read_quantized(p(&self.input))?;
        if (x.rows(), x.cols()) != (self.dims.s, self.dims.e) {
            return Err(ItaError::shape(
                "input",
                format!("expected {}x{}, got {}x{}", self.dims.s, self.dims.e, x.rows(), x.cols()),
            ));
        }
        let heads = self
            .heads
            .iter()
            .map(|h| {
                Ok(HeadWeights {
                    wq: read_quantized(p(&h.wq))?,
                    wk: read_quantized(p(&h.wk))?,
                    wv: read_quantized(p(&h.wv))?,
                    bq: read_bias(&p(&h.bq), self.dims.p)?,
                    bk: read_bias(&p(&h.bk), self.dims.p)?,
                    bv: read_bias(&p(&h.bv), self.dims.p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = WeightSet {
            heads,
            wo: read_quantized(p(&self.wo))?,
            bo: read_bias(&p(&self.bo), self.dims.e)?,
            requant: self.requant,
        };
        weights.validate(&self.dims)?;
        Ok(Fixture { dims: self.dims, seed: self.seed, x, weights })
    }
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<Fixture> {
    let (m, base) = Manifest::load(path)?;
    m.resolve(&base)
}

/// Writes tensors plus `manifest.toml` into `dir` and returns the manifest path.
pub fn write_problem(dir: impl AsRef<Path>, problem: &Fixture) -> Result<PathBuf> {
    let dir = dir.as_ref();
    problem.weights.validate(&problem.dims)?;
    fs::create_dir_all(dir).map_err(|e| ItaError::io(dir, e))?;
    let put = |name: String, t: Tensor| -> Result<PathBuf> {
        write_tensor(dir.join(&name), &t)?;
        Ok(PathBuf::from(name))
    };
    let w = &problem.weights;
    let mut heads = Vec::with_capacity(w.heads.len());
    for (i, h) in w.heads.iter().enumerate() {
        heads.push(HeadFiles {
            wq: put(format!("h{i}_wq.ita"), Tensor::from(&h.wq))?,
            wk: put(format!("h{i}_wk.ita"), Tensor::from(&h.wk))?,
            wv: put(format!("h{i}_wv.ita"), Tensor::from(&h.wv))?,
            bq: put(format!("h{i}_bq.ita"), bias_tensor(&h.bq)?)?,
            bk: put(format!("h{i}_bk.ita"), bias_tensor(&h.bk)?)?,
            bv: put(format!("h{i}_bv.ita"), bias_tensor(&h.bv)?)?,
        });
    }
    let manifest = Manifest {
        dims: problem.dims,
        seed: problem.seed,
        input: put("x.ita".into(), Tensor::from(&problem.x))?,
        wo: put("wo.ita".into(), Tensor::from(&w.wo))?,
        bo: put("bo.ita".into(), bias_tensor(&w.bo)?)?,
        requant: w.requant,
        heads,
    };
    let text = toml::to_string(&manifest).map_err(|e| ItaError::Config(e.to_string()))?;
    let path = dir.join("manifest.toml");
    fs::write(&path, text).map_err(|e| ItaError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::generate_fixture;

    #[test]
    fn roundtrip_through_disk() {
        let dims = AttentionDims::new(5, 7, 3, 2).unwrap();
        let fx = generate_fixture(&dims, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_problem(dir.path(), &fx).unwrap();
        assert_eq!(load_problem(&path).unwrap(), fx);
    }

    #[test]
    fn head_count_and_unknown_keys_are_rejected() {
        let dims = AttentionDims::new(4, 4, 4, 1).unwrap();
        let fx = generate_fixture(&dims, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_problem(dir.path(), &fx).unwrap();
        let text = fs::read_to_string(&path).unwrap();

        fs::write(&path, text.replacen("h = 1", "h = 2", 1)).unwrap();
        assert!(matches!(load_problem(&path), Err(ItaError::ShapeMismatch { .. })));

        fs::write(&path, format!("colour = 3\n{text}")).unwrap();
        assert!(matches!(load_problem(&path), Err(ItaError::Config(_))));
    }
}
