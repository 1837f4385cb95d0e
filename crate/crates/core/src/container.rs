//! Versioned binary container used for checkpoints, datasets, frame stores
//! and plan outputs.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"CPLT"
//! version u32
//! hlen    u64, followed by hlen bytes of JSON header
//! n       u64, followed by n f64 values (IEEE-754 bits)
//! ```
//!
//! The header always carries `kind` and `payload_sha256`. JSON objects are
//! serialized with sorted keys, so encoding is a pure function of the value.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CPLT";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    /// Free-form metadata; `kind` and `payload_sha256` are managed here.
    pub header: Map<String, Value>,
    pub payload: Vec<f64>,
}

fn payload_digest(payload: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in payload {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Short hex digest of arbitrary bytes, used to name artifacts.
pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    hex::encode(&d[..8])
}

pub fn fingerprint_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(fingerprint_bytes(&bytes))
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Container {
            kind: kind.into(),
            header: Map::new(),
            payload: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.header.insert(key.to_string(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Result<&Value> {
        self.header
            .get(key)
            .ok_or_else(|| Error::Format(format!("{} header lacks `{key}`", self.kind)))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.get(key)?
            .as_u64()
            .ok_or_else(|| Error::Format(format!("`{key}` is not an unsigned integer")))
    }

    pub fn get_str(&self, key: &str) -> Result<&str> {
        self.get(key)?
            .as_str()
            .ok_or_else(|| Error::Format(format!("`{key}` is not a string")))
    }

    pub fn get_as<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        Ok(T::deserialize(self.get(key)?)?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a {kind} container, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = self.header.clone();
        header.insert("kind".into(), Value::String(self.kind.clone()));
        header.insert(
            "payload_sha256".into(),
            Value::String(payload_digest(&self.payload)),
        );
        let hjson = serde_json::to_vec(&Value::Object(header)).expect("header is valid JSON");
        let mut out = Vec::with_capacity(24 + hjson.len() + 8 * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != CONTAINER_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let hlen = r.u64()? as usize;
        let mut header: Map<String, Value> = serde_json::from_slice(r.take(hlen)?)?;
        let n = r.u64()? as usize;
        if n.checked_mul(8) != Some(bytes.len() - r.pos) {
            return Err(Error::Format(format!(
                "payload declares {n} values, {} bytes remain",
                bytes.len() - r.pos
            )));
        }
        let payload: Vec<f64> = r.bytes[r.pos..]
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let kind = match header.remove("kind") {
            Some(Value::String(k)) => k,
            _ => return Err(Error::Format("header lacks kind".into())),
        };
        match header.remove("payload_sha256") {
            Some(Value::String(d)) if d == payload_digest(&payload) => {}
            _ => return Err(Error::Format(format!("{kind} payload digest mismatch"))),
        }
        Ok(Container {
            kind,
            header,
            payload,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_bytes(&self.to_bytes())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(payload in proptest::collection::vec(any::<f64>(), 0..64), tag in "[a-z]{0,8}") {
            let c = Container::new("test").with("tag", tag).with("n", 3u64);
            let c = Container { payload, ..c };
            let bytes = c.to_bytes();
            let back = Container::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back.payload.len(), c.payload.len());
            for (a, b) in back.payload.iter().zip(&c.payload) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn detects_corruption() {
        let mut c = Container::new("x");
        c.payload = vec![1.0, 2.0];
        let mut bytes = c.to_bytes();
        let n = bytes.len();
        bytes[n - 1] ^= 0x01;
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(Container::from_bytes(&bytes[..10]).is_err());
        assert!(Container::from_bytes(b"nope").is_err());
    }
}
