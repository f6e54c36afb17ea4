//! Binary container shared by backbone weight files and trained artifacts.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, UTF-8 JSON header,
//! then the payload of little-endian `f64` values. The header is a JSON object
//! holding caller metadata plus `tensors` (name → element offset and shape)
//! and `checksum` (hex SHA-256 of the payload bytes).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::seed::sha256_hex;
use crate::Tensor;

const MAGIC: &[u8; 8] = b"PTECBIN1";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct Entry {
    offset: usize,
    shape: Vec<usize>,
}

pub fn encode(meta: &impl Serialize, tensors: &BTreeMap<String, Tensor>) -> Result<Vec<u8>> {
    let mut header = match serde_json::to_value(meta)? {
        Value::Object(m) => m,
        Value::Null => Map::new(),
        _ => return Err(Error::Format("container metadata must be a JSON object".into())),
    };
    let mut payload = Vec::new();
    let mut entries = BTreeMap::new();
    let mut offset = 0;
    for (name, t) in tensors {
        entries.insert(
            name.clone(),
            Entry {
                offset,
                shape: t.shape().to_vec(),
            },
        );
        offset += t.len();
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    header.insert("tensors".into(), serde_json::to_value(&entries)?);
    header.insert("checksum".into(), Value::String(sha256_hex(&payload)));
    let header_bytes = serde_json::to_vec(&Value::Object(header))?;

    let mut out = Vec::with_capacity(16 + header_bytes.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Returns the metadata (without `tensors` and `checksum`) and the tensors.
pub fn decode(bytes: &[u8]) -> Result<(Map<String, Value>, BTreeMap<String, Tensor>)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("missing magic bytes".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("header length exceeds file".into()))?;
    let mut header: Map<String, Value> = serde_json::from_slice(&bytes[16..header_end])?;
    let payload = &bytes[header_end..];

    let expected = match header.remove("checksum") {
        Some(Value::String(s)) => s,
        _ => return Err(Error::Format("header lacks checksum".into())),
    };
    let found = sha256_hex(payload);
    if expected != found {
        return Err(Error::Checksum { expected, found });
    }
    if payload.len() % 8 != 0 {
        return Err(Error::Format("payload is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let entries: BTreeMap<String, Entry> = serde_json::from_value(
        header
            .remove("tensors")
            .ok_or_else(|| Error::Format("header lacks tensors".into()))?,
    )?;
    let mut tensors = BTreeMap::new();
    for (name, e) in entries {
        let n: usize = e.shape.iter().product();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::Format(format!("tensor `{name}` out of payload bounds")))?;
        tensors.insert(name, Tensor::new(e.shape, slice.to_vec())?);
    }
    Ok((header, tensors))
}

pub fn write(path: &Path, meta: &impl Serialize, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let bytes = encode(meta, tensors)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(Map<String, Value>, BTreeMap<String, Tensor>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BTreeMap<String, Tensor> {
        let mut t = BTreeMap::new();
        t.insert("a".into(), Tensor::matrix(2, 2, vec![1.0, -2.5, 3.0, 1e-300]).unwrap());
        t.insert("b".into(), Tensor::vector(vec![0.125]));
        t
    }

    #[test]
    fn round_trip_is_bitwise() {
        let meta = serde_json::json!({"kind": "test"});
        let bytes = encode(&meta, &sample()).unwrap();
        let (m, t) = decode(&bytes).unwrap();
        assert_eq!(m["kind"], "test");
        assert_eq!(t, sample());
    }

    #[test]
    fn flipped_payload_byte_is_a_checksum_error() {
        let mut bytes = encode(&serde_json::json!({}), &sample()).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(matches!(decode(&bytes), Err(Error::Checksum { .. })));
    }
}
