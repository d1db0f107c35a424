use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::ser::{Error as _, SerializeSeq};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use super::{CellSpec, ModelParams, NnError, ReadoutSpec, Tensor};
use crate::scalar::Scalar;
use crate::train::optim::Optimizer;

/// Parameters, optimizer state and position of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub params: ModelParams<S>,
    pub seed: u64,
    pub iteration: u64,
    pub optimizer: Option<Optimizer<S>>,
}

struct Digits17<'a, S>(&'a [S]);

impl<S: Scalar> Serialize for Digits17<'_, S> {
    fn serialize<Z: Serializer>(&self, s: Z) -> Result<Z::Ok, Z::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for v in self.0 {
            let x = v.to_f64_lossy();
            if !x.is_finite() {
                return Err(Z::Error::custom(format!("non-finite parameter value {x}")));
            }
            let raw = RawValue::from_string(format!("{x:.16e}")).map_err(Z::Error::custom)?;
            seq.serialize_element(&raw)?;
        }
        seq.end()
    }
}

#[derive(Serialize)]
struct TensorOut<'a, S: Scalar> {
    rows: usize,
    cols: usize,
    data: Digits17<'a, S>,
}

#[derive(Deserialize)]
struct TensorIn {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize)]
struct DocOut<'a, S: Scalar> {
    spec: CellSpec,
    readout: ReadoutSpec,
    seed: u64,
    iteration: u64,
    params: BTreeMap<String, TensorOut<'a, S>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimizer: Option<&'a Optimizer<S>>,
}

#[derive(Deserialize)]
#[serde(bound = "S: DeserializeOwned")]
struct DocIn<S> {
    spec: CellSpec,
    readout: ReadoutSpec,
    seed: u64,
    iteration: u64,
    params: BTreeMap<String, TensorIn>,
    #[serde(default)]
    optimizer: Option<Optimizer<S>>,
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

impl<S: Scalar + Serialize + DeserializeOwned> Checkpoint<S> {
    /// JSON document `{spec, readout, seed, iteration, params, optimizer}`
    /// with every parameter written to 17 significant digits.
    pub fn to_json(&self) -> Result<String, NnError> {
        let params = self
            .params
            .named()
            .map(|(name, t)| {
                (
                    name,
                    TensorOut {
                        rows: t.rows(),
                        cols: t.cols(),
                        data: Digits17(t.data()),
                    },
                )
            })
            .collect();
        let doc = DocOut {
            spec: self.params.spec,
            readout: self.params.readout,
            seed: self.seed,
            iteration: self.iteration,
            params,
            optimizer: self.optimizer.as_ref(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| NnError::Checkpoint {
            offset: 0,
            msg: e.to_string(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let doc: DocIn<S> = serde_json::from_str(text).map_err(|e| NnError::Checkpoint {
            offset: byte_offset(text, e.line(), e.column()),
            msg: e.to_string(),
        })?;
        let mut named = Vec::with_capacity(doc.params.len());
        for (name, t) in doc.params {
            let data = t.data.into_iter().map(S::lit).collect();
            let tensor = Tensor::new(t.rows, t.cols, data).map_err(|_| NnError::Shape {
                name: name.clone(),
                expected: (t.rows, t.cols),
                found: (0, 0),
            })?;
            named.push((name, tensor));
        }
        let params = ModelParams::from_named(doc.spec, doc.readout, named)?;
        Ok(Checkpoint {
            params,
            seed: doc.seed,
            iteration: doc.iteration,
            optimizer: doc.optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
