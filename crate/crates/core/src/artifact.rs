//! Versioned binary artifacts for trained offline data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FLEXRB\0\0";

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
}

pub fn to_bytes<T: Serialize>(kind: &str, value: &T) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    bincode::serialize_into(
        &mut out,
        &Header {
            version: FORMAT_VERSION,
            kind: kind.to_string(),
        },
    )?;
    bincode::serialize_into(&mut out, value)?;
    Ok(out)
}

pub fn from_reader<T: DeserializeOwned, R: Read>(kind: &str, mut reader: R) -> Result<T> {
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Artifact("not a flexrb artifact".into()));
    }
    let header: Header = bincode::deserialize_from(&mut reader)?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Artifact(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    if header.kind != kind {
        return Err(Error::Artifact(format!("expected a '{kind}' artifact, found '{}'", header.kind)));
    }
    Ok(bincode::deserialize_from(reader)?)
}

pub fn from_bytes<T: DeserializeOwned>(kind: &str, bytes: &[u8]) -> Result<T> {
    from_reader(kind, bytes)
}

pub fn save<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&to_bytes(kind, value)?)?;
    w.flush()?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    from_reader(kind, BufReader::new(File::open(path)?))
}
