//! Binary checkpoints.
//!
//! Layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `TKNN` |
//! | 2 | version (1) |
//! | 2 | reserved, zero |
//! | 4 | length of the config text in bytes |
//! | 8 | number of f64 parameters |
//! | … | config as TOML text |
//! | … | parameters, row-major, in declaration order |

use std::path::Path;

use ndarray::Array2;

use super::{Network, NetworkConfig};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TKNN";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 20;

pub fn to_bytes(net: &Network) -> Result<Vec<u8>> {
    let text = toml::to_string(net.config()).map_err(|e| Error::Format(format!("config serialisation: {e}")))?;
    let count = net.param_count();
    let mut out = Vec::with_capacity(HEADER_LEN + text.len() + 8 * count);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for p in net.params() {
        for v in p.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let bad = |msg: &str| Error::Format(format!("checkpoint: {msg}"));
    if bytes.len() < HEADER_LEN || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let text_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let params_at = HEADER_LEN.checked_add(text_len).ok_or_else(|| bad("config length overflow"))?;
    let expected = count.checked_mul(8).and_then(|b| b.checked_add(params_at)).ok_or_else(|| bad("size overflow"))?;
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let text = std::str::from_utf8(&bytes[HEADER_LEN..params_at]).map_err(|_| bad("config is not UTF-8"))?;
    let config: NetworkConfig = toml::from_str(text).map_err(|e| bad(&format!("config: {e}")))?;
    config.validate()?;
    if config.param_count() != count {
        return Err(bad(&format!("config implies {} parameters, header says {count}", config.param_count())));
    }
    let mut values = bytes[params_at..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let params = config
        .param_shapes()
        .into_iter()
        .map(|(_, shape)| Array2::from_shape_simple_fn(shape, || values.next().expect("length checked")))
        .collect();
    Network::from_params(config, params)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    from_bytes(&std::fs::read(path)?)
}
