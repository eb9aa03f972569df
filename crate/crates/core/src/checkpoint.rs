//! Model checkpoint file format.
//!
//! A checkpoint is a single JSON document:
//!
//! ```text
//! {
//!   "format": "gpf-checkpoint",
//!   "version": 1,
//!   "model": { "variant": ..., "config": {...}, "members": [...] }
//! }
//! ```
//!
//! Every matrix is stored as `{"rows": r, "cols": c, "data": [...]}` in
//! row-major order and every vector as a plain array, so a checkpoint can be
//! read without this crate. Floats are written in shortest round-trip form;
//! reloading reproduces the in-memory model bit for bit. The full field
//! layout is documented in `docs/checkpoint.md`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::TrainedModel;

pub const CHECKPOINT_FORMAT: &str = "gpf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    model: TrainedModel,
}

pub fn to_json(model: &TrainedModel) -> Result<String> {
    let env = Envelope {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    Ok(serde_json::to_string_pretty(&env)?)
}

pub fn from_json(text: &str) -> Result<TrainedModel> {
    let env: Envelope = serde_json::from_str(text)?;
    if env.format != CHECKPOINT_FORMAT {
        return Err(Error::InvalidInput(format!(
            "not a checkpoint (format tag {:?})",
            env.format
        )));
    }
    if env.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            env.version
        )));
    }
    env.model.validate()?;
    Ok(env.model)
}

pub fn save(model: &TrainedModel, path: &Path) -> Result<()> {
    fs::write(path, to_json(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    from_json(&fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
struct MatrixRecord {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixRecord {
    fn from_matrix(m: &crate::DenseMatrix) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    fn into_matrix<E: serde::de::Error>(self) -> std::result::Result<crate::DenseMatrix, E> {
        if self.rows * self.cols != self.data.len() {
            return Err(E::custom(format!(
                "matrix {}x{} has {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(crate::DenseMatrix::from_row_slice(
            self.rows, self.cols, &self.data,
        ))
    }
}

/// Serde adapter for `DenseMatrix` fields.
pub mod matrix {
    use super::MatrixRecord;
    use crate::DenseMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DenseMatrix, s: S) -> Result<S::Ok, S::Error> {
        MatrixRecord::from_matrix(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DenseMatrix, D::Error> {
        MatrixRecord::deserialize(d)?.into_matrix()
    }
}

/// Serde adapter for `Option<DenseMatrix>` fields.
pub mod opt_matrix {
    use super::MatrixRecord;
    use crate::DenseMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DenseMatrix>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(MatrixRecord::from_matrix).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DenseMatrix>, D::Error> {
        Option::<MatrixRecord>::deserialize(d)?
            .map(MatrixRecord::into_matrix)
            .transpose()
    }
}

/// Serde adapter for `DenseVector` fields.
pub mod vector {
    use crate::DenseVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DenseVector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DenseVector, D::Error> {
        Ok(DenseVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
