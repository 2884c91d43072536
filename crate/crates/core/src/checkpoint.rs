//! Bit-exact checkpoint container.
//!
//! Layout: magic `SPTW`, format version, digest of the canonical config
//! document, the document itself, a named tensor section holding every model
//! parameter, and a CRC32 footer. Loading verifies the checksum and that the
//! embedded document still hashes to the stored digest.

use std::path::Path;

use crate::config::RunConfig;
use crate::container::{
    read_file_verified, read_tensor_section, write_file, write_tensor_section, ByteReader,
    ByteWriter,
};
use crate::error::{Error, Result};
use crate::hashing::fnv1a64;
use crate::model::{BaseModel, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPTW";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn checkpoint_bytes(cfg: &RunConfig, model: &BaseModel) -> Vec<u8> {
    let doc = cfg.canonical_toml();
    let mut w = ByteWriter::new();
    w.put_bytes(CHECKPOINT_MAGIC);
    w.put_u16(CHECKPOINT_VERSION);
    w.put_u64(fnv1a64(doc.as_bytes()));
    w.put_string(&doc);
    write_tensor_section(&mut w, model.params());
    w.into_bytes_with_crc()
}

pub fn save_checkpoint(path: &Path, cfg: &RunConfig, model: &BaseModel) -> Result<()> {
    write_file(path, &checkpoint_bytes(cfg, model))
}

/// Load and verify a checkpoint; the returned model is frozen.
pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, BaseModel)> {
    let body = read_file_verified(path)?;
    let display = path.display().to_string();
    let mut r = ByteReader::new(&body, &display);
    if r.take_bytes(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(&display, "bad magic (not a checkpoint)"));
    }
    let version = r.take_u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(&display, format!("unsupported version {version}")));
    }
    let stored_digest = r.take_u64()?;
    let doc = r.take_string()?;
    if fnv1a64(doc.as_bytes()) != stored_digest {
        return Err(Error::format(&display, "config digest does not match document"));
    }
    let cfg = RunConfig::from_toml(&doc)?;
    let params = read_tensor_section(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::format(&display, "trailing bytes after tensor section"));
    }
    let model_cfg = ModelConfig::from_run_config(&cfg)?;
    for required in ["embed.tokens", "frontend.w", "enc.pos", "dec.pos"] {
        if !params.contains_key(required) {
            return Err(Error::format(&display, format!("missing parameter '{required}'")));
        }
    }
    let mut model = BaseModel::from_params(model_cfg, params)?;
    model.freeze();
    Ok((cfg, model))
}

/// Digest of the config document a checkpoint was built from.
pub fn checkpoint_config_digest(path: &Path) -> Result<u64> {
    let body = read_file_verified(path)?;
    let display = path.display().to_string();
    let mut r = ByteReader::new(&body, &display);
    if r.take_bytes(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(&display, "bad magic (not a checkpoint)"));
    }
    let _version = r.take_u16()?;
    r.take_u64()
}
