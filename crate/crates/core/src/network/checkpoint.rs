//! Binary checkpoint format, all integers and reals little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `RCNN` |
//! | 2 | version (u16) |
//! | 96 | 24 config fields as u32, in [`ModelConfig::field_names`] order |
//! | 4·n | every parameter as f32, in canonical order |
//! | 4 | CRC-32 of all preceding bytes |

use std::fs;
use std::io::Cursor;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::network::{ModelConfig, Parameters};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RCNN";
pub const CHECKPOINT_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 24 * 4;

pub fn encode_checkpoint(params: &Parameters<f32>, config: &ModelConfig) -> Result<Vec<u8>> {
    params.check_shapes(config)?;
    let mut buf = Vec::with_capacity(HEADER_LEN + params.len() * 4 + 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.write_u16::<LittleEndian>(CHECKPOINT_VERSION)?;
    for v in config.to_fields() {
        let v = u32::try_from(v).map_err(|_| Error::Config(format!("config value {v} exceeds u32")))?;
        buf.write_u32::<LittleEndian>(v)?;
    }
    let mut res = Ok(());
    params.for_each_slice(|s| {
        for &v in s {
            if res.is_ok() {
                res = buf.write_f32::<LittleEndian>(v);
            }
        }
    });
    res?;
    let crc = crc32fast::hash(&buf);
    buf.write_u32::<LittleEndian>(crc)?;
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Parameters<f32>, ModelConfig)> {
    let short = |need: usize| {
        Error::format(
            bytes.len() as u64,
            format!("checkpoint truncated: need {need} bytes, file has {}", bytes.len()),
        )
    };
    if bytes.len() < HEADER_LEN {
        return Err(short(HEADER_LEN));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected `RCNN`"));
    }
    let mut rd = Cursor::new(&bytes[4..]);
    let version = rd.read_u16::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let mut fields = [0usize; 24];
    for f in fields.iter_mut() {
        *f = rd.read_u32::<LittleEndian>()? as usize;
    }
    let config = ModelConfig::from_fields(fields);
    config
        .validate()
        .map_err(|e| Error::format(6, format!("invalid config block: {e}")))?;
    let count = config
        .parameter_count()
        .map_err(|e| Error::format(6, format!("invalid config block: {e}")))?;
    let total = HEADER_LEN + count * 4 + 4;
    if bytes.len() < total {
        return Err(short(total));
    }
    if bytes.len() > total {
        return Err(Error::format(
            total as u64,
            format!("{} trailing bytes after checksum", bytes.len() - total),
        ));
    }
    let stored = u32::from_le_bytes(bytes[total - 4..].try_into().expect("4 bytes"));
    let actual = crc32fast::hash(&bytes[..total - 4]);
    if stored != actual {
        return Err(Error::format(
            (total - 4) as u64,
            format!("checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"),
        ));
    }
    let flat: Vec<f32> = bytes[HEADER_LEN..total - 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let mut params = Parameters::zeros(&config)?;
    params.assign_flat(&flat)?;
    Ok((params, config))
}

pub fn save_checkpoint(params: &Parameters<f32>, config: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(params, config)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Parameters<f32>, ModelConfig)> {
    decode_checkpoint(&fs::read(path)?)
}
