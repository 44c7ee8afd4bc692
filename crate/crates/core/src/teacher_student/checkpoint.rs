//! Parameter checkpoints: an 8-byte magic followed by named sections, each
//! a u16 name length, the name, a u64 payload length and the payload. All
//! integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"VILCKPT1";
pub const CHECKPOINT_FORMAT: &str = "vil-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub alpha: f64,
    /// Epochs completed.
    pub epoch: usize,
    pub seed: u64,
    pub detector: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub student: Vec<f64>,
    pub teacher: Vec<f64>,
}

impl Checkpoint {
    pub fn new(detector: &str, alpha: f64, epoch: usize, seed: u64, student: Vec<f64>, teacher: Vec<f64>) -> Result<Self> {
        if student.len() != teacher.len() {
            return Err(Error::InvalidShape(format!(
                "student has {} parameters, teacher {}",
                student.len(),
                teacher.len()
            )));
        }
        Ok(Checkpoint {
            meta: CheckpointMeta {
                format: CHECKPOINT_FORMAT.into(),
                version: CHECKPOINT_VERSION,
                dim: student.len(),
                alpha,
                epoch,
                seed,
                detector: detector.into(),
            },
            student,
            teacher,
        })
    }
}

fn put_section(out: &mut Vec<u8>, name: &str, payload: &[u8]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn floats(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    let meta = serde_json::to_vec(&ck.meta).map_err(|e| Error::InvalidInput(e.to_string()))?;
    put_section(&mut out, "meta", &meta);
    put_section(&mut out, "student", &floats(&ck.student));
    put_section(&mut out, "teacher", &floats(&ck.teacher));
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::parse(self.path, self.pos, "truncated checkpoint")
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

fn parse_floats(bytes: &[u8], path: &Path, name: &str) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::parse(path, 0, format!("section `{name}` is not a whole number of f64s")));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// `path` only labels errors.
pub fn decode_checkpoint(buf: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut cur = Cursor { buf, pos: 0, path };
    if cur.take(8)? != MAGIC {
        return Err(Error::parse(path, 0, "not a checkpoint file (bad magic)"));
    }
    let (mut meta, mut student, mut teacher) = (None, None, None);
    while cur.pos < buf.len() {
        let n = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(cur.take(n)?)
            .map_err(|e| Error::parse(path, cur.pos, e))?
            .to_string();
        let len = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize;
        let payload = cur.take(len)?;
        match name.as_str() {
            "meta" => {
                let m: CheckpointMeta =
                    serde_json::from_slice(payload).map_err(|e| Error::parse(path, 0, e))?;
                meta = Some(m);
            }
            "student" => student = Some(parse_floats(payload, path, &name)?),
            "teacher" => teacher = Some(parse_floats(payload, path, &name)?),
            // unknown sections are skipped for forward compatibility
            _ => {}
        }
    }
    let missing = |s: &str| Error::parse(path, 0, format!("missing section `{s}`"));
    let meta = meta.ok_or_else(|| missing("meta"))?;
    let student = student.ok_or_else(|| missing("student"))?;
    let teacher = teacher.ok_or_else(|| missing("teacher"))?;
    if meta.format != CHECKPOINT_FORMAT || meta.version != CHECKPOINT_VERSION {
        return Err(Error::parse(
            path,
            0,
            format!("unsupported checkpoint {} v{}", meta.format, meta.version),
        ));
    }
    if student.len() != meta.dim || teacher.len() != meta.dim {
        return Err(Error::parse(
            path,
            0,
            format!(
                "declared dimension {} but found {} student / {} teacher values",
                meta.dim,
                student.len(),
                teacher.len()
            ),
        ));
    }
    Ok(Checkpoint { meta, student, teacher })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let bytes = encode_checkpoint(ck)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf, path)
}
