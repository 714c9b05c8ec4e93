use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::network::MegtModel;
use crate::codec::Reader;
use crate::error::{FormatError, MegtError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MEGM";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Layout: magic, u16 version, u32 config length, config as `key=value`
/// text, u32 parameter count, then per parameter u16 name length, name,
/// u32 rows, u32 cols and little-endian `f64` values, in registration order.
pub fn encode_checkpoint(model: &MegtModel) -> Result<Vec<u8>> {
    let config = model.config.to_kv();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    for (_, name, t) in model.store.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| MegtError::Config(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn malformed(what: &'static str, detail: String) -> MegtError {
    FormatError::Malformed { what, detail }.into()
}

/// Rebuilds the architecture from the stored config, then overwrites every
/// parameter; names, order and shapes must match exactly.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<MegtModel> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        }
        .into());
    }
    let config_len = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(config_len, "config")?)
        .map_err(|e| malformed("config", e.to_string()))?;
    let config = ModelConfig::from_kv(text)?;
    let mut model = MegtModel::new(config)?;

    let count = r.u32("parameter count")? as usize;
    if count != model.store.len() {
        return Err(malformed(
            "parameter count",
            format!("file has {count}, config implies {}", model.store.len()),
        ));
    }
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|e| malformed("name", e.to_string()))?;
        if name != model.store.name(id) {
            return Err(malformed(
                "parameter name",
                format!("expected {}, found {name}", model.store.name(id)),
            ));
        }
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let target = model.store.get_mut(id);
        if (rows, cols) != target.shape() {
            return Err(malformed(
                "parameter shape",
                format!("{name}: expected {:?}, found ({rows}, {cols})", target.shape()),
            ));
        }
        let values = r.f64s(rows * cols, "parameter values")?;
        target.data_mut().copy_from_slice(&values);
    }
    r.finish()?;
    Ok(model)
}

pub fn save_checkpoint(model: &MegtModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MegtModel> {
    decode_checkpoint(&fs::read(path)?)
}
