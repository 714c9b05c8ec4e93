use std::fs;
use std::path::Path;

use super::Bag;
use crate::codec::Reader;
use crate::error::{FormatError, MegtError, Result};
use crate::numerics::Tensor;

pub const BAG_MAGIC: [u8; 4] = *b"MEGB";
pub const BAG_VERSION: u16 = 1;

/// Layout: magic, u16 version, u8 label, u8 reserved, u32 n_low, u32 n_high,
/// u32 d, then low and high features as row-major little-endian `f32`.
pub fn encode_bag(bag: &Bag) -> Result<Vec<u8>> {
    bag.validate()?;
    let label = u8::try_from(bag.label)
        .map_err(|_| MegtError::Data(format!("label {} does not fit in a byte", bag.label)))?;
    let dim = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| MegtError::Data(format!("{what} {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(20 + 4 * (bag.low.len() + bag.high.len()));
    out.extend_from_slice(&BAG_MAGIC);
    out.extend_from_slice(&BAG_VERSION.to_le_bytes());
    out.push(label);
    out.push(0);
    out.extend_from_slice(&dim(bag.n_low(), "n_low")?.to_le_bytes());
    out.extend_from_slice(&dim(bag.n_high(), "n_high")?.to_le_bytes());
    out.extend_from_slice(&dim(bag.d(), "d")?.to_le_bytes());
    for &x in bag.low.data().iter().chain(bag.high.data()) {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_bag(bytes: &[u8], id: &str) -> Result<Bag> {
    let mut r = Reader::new(bytes);
    r.magic(BAG_MAGIC)?;
    let version = r.u16("version")?;
    if version != BAG_VERSION {
        return Err(FormatError::Version {
            found: version,
            expected: BAG_VERSION,
        }
        .into());
    }
    let label = r.u8("label")? as usize;
    let reserved = r.u8("reserved")?;
    if reserved != 0 {
        return Err(FormatError::Malformed {
            what: "reserved",
            detail: format!("expected 0, found {reserved}"),
        }
        .into());
    }
    let n_low = r.u32("n_low")? as usize;
    let n_high = r.u32("n_high")? as usize;
    let d = r.u32("d")? as usize;
    for (what, v) in [("n_low", n_low), ("n_high", n_high), ("d", d)] {
        if v == 0 {
            return Err(FormatError::Malformed {
                what,
                detail: "must be at least 1".into(),
            }
            .into());
        }
    }
    let low = r.f32s(n_low * d, "low features")?;
    let high = r.f32s(n_high * d, "high features")?;
    r.finish()?;
    Bag::new(id, label, Tensor::from_vec(n_low, d, low)?, Tensor::from_vec(n_high, d, high)?)
}

pub fn write_bag(bag: &Bag, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_bag(bag)?)?;
    Ok(())
}

/// The bag id is the file stem.
pub fn read_bag(path: impl AsRef<Path>) -> Result<Bag> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_bag(&bytes, &id)
}
