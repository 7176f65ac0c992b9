//! Binary container shared by model, coder and prototype files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  b"PSTEER\0\0"
//! kind      u32 length + UTF-8 bytes     e.g. "lm", "sae", "prototypes"
//! version   u32
//! header    u64 length + JSON bytes      shapes and metadata
//! count     u64                          number of f64 values that follow
//! values    count * 8 bytes              raw little-endian f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"PSTEER\0\0";

pub(crate) struct Container<H> {
    pub header: H,
    pub values: Vec<f64>,
}

pub(crate) fn write<H: Serialize, W: Write>(mut w: W, kind: &str, version: u32, header: &H, values: &[f64]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(kind.len() as u32).to_le_bytes())?;
    w.write_all(kind.as_bytes())?;
    w.write_all(&version.to_le_bytes())?;
    let json = serde_json::to_vec(header)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Format(format!("truncated {what}: wanted {n} bytes, got {}", buf.len())));
    }
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4, what)?.try_into().expect("4 bytes")))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r, 8, what)?.try_into().expect("8 bytes")))
}

pub(crate) fn read<H: DeserializeOwned, R: Read>(mut r: R, kind: &str, version: u32) -> Result<Container<H>> {
    if read_exact(&mut r, 8, "magic")? != MAGIC {
        return Err(Error::Format("not a protosteer artifact".into()));
    }
    let kind_len = read_u32(&mut r, "kind length")? as usize;
    if kind_len > 64 {
        return Err(Error::Format(format!("implausible kind length {kind_len}")));
    }
    let found_kind = String::from_utf8(read_exact(&mut r, kind_len, "kind")?).map_err(|_| Error::Format("kind is not UTF-8".into()))?;
    if found_kind != kind {
        return Err(Error::Format(format!("expected a {kind:?} artifact, found {found_kind:?}")));
    }
    let found_version = read_u32(&mut r, "version")?;
    if found_version != version {
        return Err(Error::Version {
            expected: version.to_string(),
            found: found_version.to_string(),
        });
    }
    let header_len = read_u64(&mut r, "header length")? as usize;
    let header: H = serde_json::from_slice(&read_exact(&mut r, header_len, "header")?).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let count = read_u64(&mut r, "value count")? as usize;
    let bytes = read_exact(
        &mut r,
        count.checked_mul(8).ok_or_else(|| Error::Format("value count overflow".into()))?,
        "values",
    )?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format(format!("non-finite value at index {i}")));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after values".into()));
    }
    Ok(Container { header, values })
}

pub(crate) fn save<H: Serialize>(path: &Path, kind: &str, version: u32, header: &H, values: &[f64]) -> Result<()> {
    let f = File::create(path)?;
    write(BufWriter::new(f), kind, version, header, values)
}

pub(crate) fn load<H: DeserializeOwned>(path: &Path, kind: &str, version: u32) -> Result<Container<H>> {
    let f = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read(BufReader::new(f), kind, version)
}
