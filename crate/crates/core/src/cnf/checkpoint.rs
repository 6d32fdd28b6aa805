//! Checkpoint container: magic, version, a JSON header and the raw
//! little-endian parameter vector.
//!
//! ```text
//! b"PLUMEFLW" | u32 version | u64 header length | header JSON | params
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlowConfig, FlowModel, Op, ParamInfo, Real, CHANNEL_ORDER};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PLUMEFLW";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    config: FlowConfig,
    x_shape: (usize, usize, usize),
    y_channels: usize,
    channel_order: Vec<String>,
    initialized: bool,
    floored: Vec<(usize, usize)>,
    permutations: Vec<Vec<usize>>,
    params: Vec<ParamInfo>,
}

pub fn save_to<T: Real, W: Write>(model: &FlowModel<T>, mut out: W) -> Result<()> {
    let header = Header {
        dtype: T::DTYPE.into(),
        config: model.config.clone(),
        x_shape: model.x_shape,
        y_channels: model.y_channels,
        channel_order: CHANNEL_ORDER.iter().map(|s| s.to_string()).collect(),
        initialized: model.initialized,
        floored: model.floored.clone(),
        permutations: model
            .ops
            .iter()
            .filter_map(|op| match op {
                Op::Permute { perm, .. } => Some(perm.clone()),
                _ => None,
            })
            .collect(),
        params: model.table.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(24 + json.len() + model.params.len() * T::BYTES);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for &p in &model.params {
        p.put_le(&mut buf);
    }
    out.write_all(&buf).map_err(|e| Error::io("<checkpoint>", e))
}

pub fn load_from<T: Real, R: Read>(mut input: R, origin: &Path) -> Result<FlowModel<T>> {
    let bad = |msg: String| Error::format(origin, msg);
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io(origin, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a flow checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("checkpoint version {version}, expected {VERSION}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(bad(format!("checkpoint holds {} parameters, requested {}", header.dtype, T::DTYPE)));
    }
    if header.channel_order != CHANNEL_ORDER {
        return Err(bad(format!("channel order {:?} differs from {:?}", header.channel_order, CHANNEL_ORDER)));
    }
    let mut model = FlowModel::<T>::new(header.config, header.x_shape, header.y_channels)?;
    if model.table != header.params {
        return Err(bad("parameter table does not match the architecture".into()));
    }
    let mut perms = header.permutations.into_iter();
    for op in &mut model.ops {
        if let Op::Permute { c, perm, .. } = op {
            let p = perms.next().ok_or_else(|| bad("missing permutation".into()))?;
            let mut seen = vec![false; *c];
            if p.len() != *c || !p.iter().all(|&i| i < *c && !std::mem::replace(&mut seen[i], true)) {
                return Err(bad("stored permutation is not a bijection".into()));
            }
            *perm = p;
        }
    }
    if perms.next().is_some() {
        return Err(bad("extra permutations".into()));
    }
    let data = &bytes[20 + hlen..];
    if data.len() != model.params.len() * T::BYTES {
        return Err(bad(format!(
            "expected {} parameter bytes, found {}",
            model.params.len() * T::BYTES,
            data.len()
        )));
    }
    for (p, chunk) in model.params.iter_mut().zip(data.chunks_exact(T::BYTES)) {
        *p = T::get_le(chunk);
    }
    model.initialized = header.initialized;
    model.floored = header.floored;
    Ok(model)
}

pub fn save<T: Real>(model: &FlowModel<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    save_to(model, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<FlowModel<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_from(std::io::BufReader::new(f), path)
}
