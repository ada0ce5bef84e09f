use std::collections::BTreeMap;
use std::path::Path;

use super::{checked_count, read_file, write_file, Cursor};
use crate::autodiff::Tensor;
use crate::error::FormatError;
use crate::Result;

pub const CKPT_MAGIC: &[u8; 5] = b"CKPT1";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

/// Everything needed to resume or evaluate a trained network.
///
/// `config` is stored as sorted `key=value` lines, so equal maps always
/// serialize to equal bytes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub params: Vec<NamedTensor>,
    pub optimizer_step: u64,
    pub optimizer: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn config_text(&self) -> String {
        self.config.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| crate::Error::shape(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_records(out: &mut Vec<u8>, records: &[NamedTensor]) -> Result<()> {
    put_u32(out, records.len())?;
    for r in records {
        put_u32(out, r.name.len())?;
        out.extend_from_slice(r.name.as_bytes());
        put_u32(out, r.value.shape().len())?;
        for &d in r.value.shape() {
            put_u32(out, d)?;
        }
        for v in r.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

fn get_string(cur: &mut Cursor, what: &'static str) -> std::result::Result<String, FormatError> {
    let len = cur.u32(what)? as usize;
    let bytes = cur.take(len, what)?;
    String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::Malformed(format!("{what} is not UTF-8")))
}

fn get_records(cur: &mut Cursor) -> Result<Vec<NamedTensor>> {
    let count = cur.u32("record count")? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = get_string(cur, "record name")?;
        let ndim = cur.u32("record rank")? as usize;
        if ndim > 8 {
            return Err(FormatError::Malformed(format!("record {name} has rank {ndim}")).into());
        }
        let shape = (0..ndim).map(|_| cur.u32("record shape").map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = checked_count(&shape, 8, cur.remaining())?;
        let data = (0..n).map(|_| cur.f64("record values")).collect::<std::result::Result<Vec<_>, _>>()?;
        out.push(NamedTensor { name, value: Tensor::new(shape, data)? });
    }
    Ok(out)
}

fn parse_config(text: &str) -> std::result::Result<BTreeMap<String, String>, FormatError> {
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| FormatError::Malformed(format!("config line {line:?}")))?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    let text = ckpt.config_text();
    put_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    put_records(&mut out, &ckpt.params)?;
    out.extend_from_slice(&ckpt.optimizer_step.to_le_bytes());
    put_records(&mut out, &ckpt.optimizer)?;
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Decodes a checkpoint, verifying the trailing CRC32 over all preceding bytes.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor::new(bytes);
    cur.magic(CKPT_MAGIC)?;
    let version = cur.u32("version")?;
    if version != CKPT_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let config = parse_config(&get_string(&mut cur, "config")?)?;
    let params = get_records(&mut cur)?;
    let optimizer_step = cur.u64("optimizer step")?;
    let optimizer = get_records(&mut cur)?;
    let body_end = cur.position();
    let stored = cur.u32("checksum")?;
    cur.finish()?;
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed }.into());
    }
    Ok(Checkpoint { config, params, optimizer_step, optimizer })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    write_file(path.as_ref(), &write_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(&read_file(path.as_ref())?)
}
