//! Line-delimited JSON files with a versioned header line.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Reads `path`, checks that the header names `format` at `version`, and
/// returns the header plus every following non-empty line.
pub fn read<H, R>(path: &Path, format: &str, version: u32) -> Result<(H, Vec<R>)>
where
    H: DeserializeOwned,
    R: DeserializeOwned,
{
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::parse(path, 0, "empty file, missing header"))?
        .map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| Error::parse(path, 0, e))?;
    let found = raw.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if found != format {
        return Err(Error::parse(
            path,
            0,
            format!("expected format `{format}`, found `{found}`"),
        ));
    }
    let found_version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if found_version != version as u64 {
        return Err(Error::parse(
            path,
            0,
            format!("unsupported version {found_version} (expected {version})"),
        ));
    }
    let header: H = serde_json::from_value(raw).map_err(|e| Error::parse(path, 0, e))?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e))?;
        records.push(rec);
    }
    Ok((header, records))
}

pub fn write<H, R>(path: &Path, header: &H, records: &[R]) -> Result<()>
where
    H: Serialize,
    R: Serialize,
{
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_line(&mut w, path, header)?;
    for r in records {
        write_line(&mut w, path, r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_line<W: Write, T: Serialize>(w: &mut W, path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string(value).map_err(|e| Error::parse(path, 0, e))?;
    w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Head {
        format: String,
        version: u32,
    }

    #[test]
    fn header_checks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        let h = Head {
            format: "demo".into(),
            version: 1,
        };
        write(&p, &h, &[1u32, 2, 3]).unwrap();
        let (back, recs): (Head, Vec<u32>) = read(&p, "demo", 1).unwrap();
        assert_eq!(back, h);
        assert_eq!(recs, vec![1, 2, 3]);
        assert!(read::<Head, u32>(&p, "other", 1).is_err());
        assert!(read::<Head, u32>(&p, "demo", 2).is_err());
    }

    #[test]
    fn bad_record_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        std::fs::write(&p, "{\"format\":\"demo\",\"version\":1}\n1\n\"nope\"\n").unwrap();
        match read::<Head, u32>(&p, "demo", 1) {
            Err(Error::Parse { record, .. }) => assert_eq!(record, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
