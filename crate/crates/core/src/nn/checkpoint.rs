//! Checkpoint layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "VPGN"
//! 4       4     u32 format version (1)
//! 8       4     u32 byte length L of the spec JSON
//! 12      L     ModelSpec as UTF-8 JSON (input shape, classes, layer list)
//! 12+L    8     u64 parameter count N
//! 20+L    4N    f32 parameters: for each parameterised layer in order,
//!               weights (out, in, kh, kw row-major) then biases
//! ```

use std::fs;
use std::path::Path;

use super::{Model, ModelSpec, NnError, ParamSet};
use crate::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VPGN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<(), NnError> {
    let spec = serde_json::to_vec(model.spec()).map_err(|e| NnError::BadCheckpoint(e.to_string()))?;
    let n = model.param_count();
    let mut bytes = Vec::with_capacity(20 + spec.len() + 4 * n);
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&spec);
    bytes.extend_from_slice(&(n as u64).to_le_bytes());
    for v in model.params().iter() {
        bytes.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8], NnError> {
    if bytes.len() < n {
        return Err(NnError::BadCheckpoint(format!("truncated {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>, NnError> {
    let data = fs::read(path)?;
    let mut rest = data.as_slice();
    if take(&mut rest, 4, "magic")? != CHECKPOINT_MAGIC {
        return Err(NnError::BadCheckpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(take(&mut rest, 4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(NnError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let spec_len = u32::from_le_bytes(take(&mut rest, 4, "spec length")?.try_into().unwrap()) as usize;
    let spec: ModelSpec = serde_json::from_slice(take(&mut rest, spec_len, "spec")?)
        .map_err(|e| NnError::BadCheckpoint(e.to_string()))?;
    let n = u64::from_le_bytes(take(&mut rest, 8, "parameter count")?.try_into().unwrap()) as usize;
    if n != spec.param_count() {
        return Err(NnError::BadCheckpoint(format!("{n} parameters stored, spec needs {}", spec.param_count())));
    }
    let payload = take(&mut rest, 4 * n, "parameters")?;
    if !rest.is_empty() {
        return Err(NnError::BadCheckpoint(format!("{} trailing bytes", rest.len())));
    }
    let mut values = payload.chunks_exact(4).map(|b| T::from_sample(f32::from_le_bytes(b.try_into().unwrap())));
    let tensors = spec
        .layers
        .iter()
        .filter_map(|l| l.param_shapes())
        .flat_map(|(w, b)| [w.iter().product::<usize>(), b])
        .map(|len| values.by_ref().take(len).collect())
        .collect();
    Model::from_params(spec, ParamSet { tensors })
}
