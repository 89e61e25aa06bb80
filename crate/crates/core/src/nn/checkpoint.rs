use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{build_layers, InputNorm, Model, ModelSpec};
use crate::container::{self, PayloadReader};
use crate::error::{Error, Result};
use crate::num::Real;

pub const MODEL_MAGIC: &[u8; 8] = b"MCGMODEL";
pub const MODEL_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub params: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    input_norm: InputNorm,
    layers: Vec<LayerRecord>,
}

pub fn layer_table(spec: &ModelSpec) -> Result<Vec<LayerRecord>> {
    Ok(build_layers(spec)?.into_iter().map(|l| LayerRecord { params: l.params.len(), name: l.name }).collect())
}

fn first_mismatch(found: &[LayerRecord], expected: &[LayerRecord]) -> Option<Error> {
    for i in 0..found.len().max(expected.len()) {
        match (found.get(i), expected.get(i)) {
            (Some(f), Some(e)) if f == e => {}
            (f, e) => {
                return Some(Error::LayerMismatch {
                    layer: e.or(f).map(|r| r.name.clone()).unwrap_or_default(),
                    found: f.map_or(0, |r| r.params),
                    expected: e.map_or(0, |r| r.params),
                });
            }
        }
    }
    None
}

/// Parameters are stored as little-endian `f32`.
pub fn model_to_bytes<T: Real>(model: &Model<T>) -> Result<Vec<u8>> {
    let header = Header { spec: model.spec().clone(), input_norm: model.input_norm, layers: layer_table(model.spec())? };
    let values: Vec<f32> = model.params().iter().map(|v| v.to_f64_lossy() as f32).collect();
    let mut payload = Vec::with_capacity(values.len() * 4);
    container::put_f32s(&mut payload, &values);
    container::encode(MODEL_MAGIC, MODEL_VERSION, &header, &payload)
}

/// Decodes a checkpoint; with `expected` set, the stored layer table must
/// match the one built from that spec.
pub fn model_from_bytes<T: Real>(bytes: &[u8], origin: &Path, expected: Option<&ModelSpec>) -> Result<Model<T>> {
    let (header, payload): (Header, _) = container::decode(bytes, MODEL_MAGIC, MODEL_VERSION, origin)?;
    let own = layer_table(&header.spec)?;
    if let Some(err) = first_mismatch(&header.layers, &own) {
        return Err(err);
    }
    if let Some(spec) = expected {
        if let Some(err) = first_mismatch(&header.layers, &layer_table(spec)?) {
            return Err(err);
        }
        if *spec != header.spec {
            return Err(Error::ShapeMismatch(format!("checkpoint spec {:?} differs from requested {:?}", header.spec, spec)));
        }
    }
    let n: usize = own.iter().map(|l| l.params).sum();
    let mut reader = PayloadReader::new(&payload);
    let values = reader.f32s(n)?;
    reader.finish()?;
    Model::from_params(header.spec, values.into_iter().map(|v| T::lit(v as f64)).collect(), header.input_norm)
}

pub fn save_model<T: Real>(model: &Model<T>, path: &Path) -> Result<()> {
    container::write_bytes(path, &model_to_bytes(model)?)
}

pub fn load_model<T: Real>(path: &Path) -> Result<Model<T>> {
    model_from_bytes(&std::fs::read(path)?, path, None)
}

pub fn load_model_for<T: Real>(path: &Path, spec: &ModelSpec) -> Result<Model<T>> {
    model_from_bytes(&std::fs::read(path)?, path, Some(spec))
}
