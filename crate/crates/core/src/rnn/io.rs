//! JSON tensor files.
//!
//! A tensor is stored as
//!
//! ```json
//! {"format": "rnntile.tensor", "version": 1, "shape": [2, 3], "data": [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]}
//! ```
//!
//! with `data` in row-major order (last index fastest) and
//! `product(shape) == data.len()`. Numbers are written in shortest round-trip
//! form, so f64 values survive a write/read cycle bit for bit.
//!
//! Parameter files wrap two tensors:
//!
//! ```json
//! {"format": "rnntile.params", "version": 1, "variant": "lstm", "num_heads": 1,
//!  "head_dim": 2, "recurrent": {...tensor [1, 4, 2, 2]...}, "bias": {...tensor [4, 2]...}}
//! ```

use ndarray::{ArrayD, Dimension, IxDyn};
use serde::{Deserialize, Serialize};

use super::engine::RnnParams;
use super::variant::CellVariant;
use super::RnnError;

pub const TENSOR_FORMAT: &str = "rnntile.tensor";
pub const PARAMS_FORMAT: &str = "rnntile.params";
pub const IO_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorFile {
    pub format: String,
    pub version: u32,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorFile {
    pub fn from_array<D: Dimension>(a: &ndarray::Array<f64, D>) -> Self {
        TensorFile {
            format: TENSOR_FORMAT.into(),
            version: IO_VERSION,
            shape: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<ArrayD<f64>, RnnError> {
        check_header(&self.format, TENSOR_FORMAT, self.version)?;
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.data.clone()).map_err(|_| {
            RnnError::Shape(format!(
                "shape {:?} does not hold {} values",
                self.shape,
                self.data.len()
            ))
        })
    }
}

fn check_header(format: &str, want: &str, version: u32) -> Result<(), RnnError> {
    if format != want {
        return Err(RnnError::Format(format!(
            "expected format `{want}`, found `{format}`"
        )));
    }
    if version != IO_VERSION {
        return Err(RnnError::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn tensor_to_json<D: Dimension>(a: &ndarray::Array<f64, D>) -> String {
    serde_json::to_string(&TensorFile::from_array(a)).expect("tensor serializes")
}

pub fn tensor_from_json(text: &str) -> Result<ArrayD<f64>, RnnError> {
    let f: TensorFile = serde_json::from_str(text).map_err(|e| RnnError::Format(e.to_string()))?;
    f.to_array()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    format: String,
    version: u32,
    variant: CellVariant,
    num_heads: usize,
    head_dim: usize,
    recurrent: TensorFile,
    bias: TensorFile,
}

pub fn params_to_json(variant: CellVariant, params: &RnnParams) -> String {
    let f = ParamsFile {
        format: PARAMS_FORMAT.into(),
        version: IO_VERSION,
        variant,
        num_heads: params.num_heads,
        head_dim: params.head_dim,
        recurrent: TensorFile::from_array(&params.recurrent),
        bias: TensorFile::from_array(&params.bias),
    };
    serde_json::to_string(&f).expect("params serialize")
}

pub fn params_from_json(text: &str) -> Result<(CellVariant, RnnParams), RnnError> {
    let f: ParamsFile = serde_json::from_str(text).map_err(|e| RnnError::Format(e.to_string()))?;
    check_header(&f.format, PARAMS_FORMAT, f.version)?;
    let shape_err = |what: &str| RnnError::Shape(format!("{what} tensor has the wrong rank"));
    let params = RnnParams {
        num_heads: f.num_heads,
        head_dim: f.head_dim,
        recurrent: f
            .recurrent
            .to_array()?
            .into_dimensionality()
            .map_err(|_| shape_err("recurrent"))?,
        bias: f
            .bias
            .to_array()?
            .into_dimensionality()
            .map_err(|_| shape_err("bias"))?,
    };
    params.validate(f.variant)?;
    Ok((f.variant, params))
}
