//! Binary checkpoint format.
//!
//! ```text
//! magic      4 bytes  "TTAF"
//! version    u32
//! arch_len   u32, then arch_len bytes of UTF-8 descriptor
//! count      u32
//! count x {
//!   name_len u32, name bytes
//!   dtype    u8    (1 = f32, 2 = f64)
//!   rank     u32
//!   extents  rank x u64
//!   data     product(extents) values
//! }
//! ```
//!
//! All integers and values are little-endian. Parameters are written first,
//! then batch-norm buffers, each in model order.

use std::io::{Read, Write};
use std::path::Path;

use super::{Architecture, Model};
use crate::engine::Parameter;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TTAF";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;

pub fn write_checkpoint(model: &Model, mut w: impl Write) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let arch = model.arch().to_string();
    buf.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    buf.extend_from_slice(arch.as_bytes());
    let arrays: Vec<&Parameter> = model.params().iter().chain(model.buffers()).collect();
    buf.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for p in arrays {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.push(DTYPE_F32);
        buf.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &p.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated file: needed {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Model> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    cur.pos = 4;
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let arch: Architecture = cur
        .string("architecture")?
        .parse()
        .map_err(|e| Error::Checkpoint(format!("architecture descriptor: {e}")))?;
    let template = Model::build(&arch, 0);
    let count = cur.u32("array count")? as usize;
    let expected = template.params().len() + template.buffers().len();
    if count != expected {
        return Err(Error::Checkpoint(format!(
            "{arch} has {expected} arrays, file has {count}"
        )));
    }
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let name = cur.string("array name")?;
        let dtype = cur.take(1, "dtype")?[0];
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match dtype {
            DTYPE_F32 => cur
                .take(n * 4, &name)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DTYPE_F64 => cur
                .take(n * 8, &name)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
                .collect(),
            other => return Err(Error::Checkpoint(format!("unknown dtype tag {other} for `{name}`"))),
        };
        arrays.push(Parameter { name, shape, data });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last array",
            bytes.len() - cur.pos
        )));
    }
    let mut take_matching = |slots: &[Parameter]| -> Result<Vec<Parameter>> {
        slots
            .iter()
            .map(|slot| {
                let i = arrays
                    .iter()
                    .position(|a| a.name == slot.name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing array `{}`", slot.name)))?;
                let a = arrays.swap_remove(i);
                if a.shape != slot.shape {
                    return Err(Error::Checkpoint(format!(
                        "shape header mismatch for `{}`: file {:?}, architecture {:?}",
                        a.name, a.shape, slot.shape
                    )));
                }
                Ok(a)
            })
            .collect()
    };
    let params = take_matching(template.params())?;
    let buffers = take_matching(template.buffers())?;
    Ok(Model::from_parts(arch, params, buffers))
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, std::io::BufWriter::new(f))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f))
}
