use std::path::Path;

use serde::{Deserialize, Serialize};

use super::infer::infer_video;
use super::params::{Arch, TcnParams};
use crate::encoding::{EncodingConfig, IndicatorSeries};
use crate::error::{Error, Result};
use crate::types::Pose;

const FORMAT: &str = "posevent-tcn";
const VERSION: u32 = 1;

/// A trained network together with the preprocessing it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: TcnParams<f32>,
    pub encoding: EncodingConfig,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Nested {
    Leaf(Vec<f32>),
    Node(Vec<Nested>),
}

impl Nested {
    fn build(shape: &[usize], data: &[f32]) -> Nested {
        match shape {
            [] | [_] => Nested::Leaf(data.to_vec()),
            [n, rest @ ..] => {
                let chunk = data.len() / n.max(&1);
                Nested::Node(
                    data.chunks(chunk.max(1))
                        .map(|c| Nested::build(rest, c))
                        .collect(),
                )
            }
        }
    }

    fn flatten(&self, shape: &[usize], out: &mut Vec<f32>) -> bool {
        match (self, shape) {
            (Nested::Leaf(v), [n]) => {
                out.extend_from_slice(v);
                v.len() == *n
            }
            (Nested::Node(items), [n, rest @ ..]) if !rest.is_empty() => {
                items.len() == *n && items.iter().all(|i| i.flatten(rest, out))
            }
            _ => false,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Nested,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelRecord {
    format: String,
    version: u32,
    arch: Arch,
    receptive_field: usize,
    bn_running_stats: bool,
    encoding: EncodingConfig,
    tensors: Vec<TensorRecord>,
}

impl Model {
    pub fn infer(&self, poses: &[Pose]) -> Result<IndicatorSeries> {
        infer_video(&self.params, poses, &self.encoding)
    }

    pub fn to_json(&self) -> String {
        let record = ModelRecord {
            format: FORMAT.into(),
            version: VERSION,
            arch: *self.params.arch(),
            receptive_field: self.params.arch().receptive_field(),
            bn_running_stats: self.params.arch().batch_norm,
            encoding: self.encoding,
            tensors: self
                .params
                .tensors()
                .iter()
                .map(|spec| {
                    let (_, data) = self.params.tensor(&spec.name).expect("own tensor");
                    TensorRecord {
                        name: spec.name.clone(),
                        shape: spec.shape.clone(),
                        data: Nested::build(&spec.shape, data),
                    }
                })
                .collect(),
        };
        serde_json::to_string(&record).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let record: ModelRecord = serde_json::from_str(text)
            .map_err(|e| Error::Schema(format!("model file: {e}")))?;
        if record.format != FORMAT || record.version != VERSION {
            return Err(Error::Schema(format!(
                "model file: unsupported format {} version {}",
                record.format, record.version
            )));
        }
        let mut params = TcnParams::<f32>::zeros(record.arch)?;
        if record.receptive_field != params.arch().receptive_field() {
            return Err(Error::Schema(format!(
                "model file: declared receptive field {} does not match the architecture ({})",
                record.receptive_field,
                params.arch().receptive_field()
            )));
        }
        if record.encoding.s != record.receptive_field {
            return Err(Error::Schema(format!(
                "model file: encoding window {} differs from the receptive field {}",
                record.encoding.s, record.receptive_field
            )));
        }
        let expected = params.tensors().len();
        if record.tensors.len() != expected {
            return Err(Error::Schema(format!(
                "model file: {} tensors, architecture has {expected}",
                record.tensors.len()
            )));
        }
        for t in &record.tensors {
            let spec = params
                .tensors()
                .iter()
                .find(|s| s.name == t.name)
                .ok_or_else(|| Error::Schema(format!("model file: unknown tensor {}", t.name)))?
                .clone();
            if spec.shape != t.shape {
                return Err(Error::Schema(format!(
                    "model file: tensor {} has shape {:?}, expected {:?}",
                    t.name, t.shape, spec.shape
                )));
            }
            let mut flat = Vec::with_capacity(spec.len());
            if !t.data.flatten(&t.shape, &mut flat) {
                return Err(Error::Schema(format!(
                    "model file: tensor {} data does not match its shape",
                    t.name
                )));
            }
            params.tensor_mut(&t.name).expect("known").copy_from_slice(&flat);
        }
        Ok(Model {
            params,
            encoding: record.encoding,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Model::from_json(&text)
    }
}
