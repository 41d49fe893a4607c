//! Content-addressed on-disk cache for completions and embeddings.
//!
//! One file per key, named by the hex SHA-256 of the key parts. Completion
//! bodies are the raw text; vector bodies carry a 16-byte header
//! (`b"TQVC"`, u16 version, u16 reserved, u64 dim, all little-endian)
//! followed by `dim` little-endian f64 values.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

const VECTOR_MAGIC: &[u8; 4] = b"TQVC";
const VECTOR_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Hashes length-prefixed parts so that `["ab", "c"]` and `["a", "bc"]`
    /// differ.
    pub fn key(parts: &[&[u8]]) -> String {
        let mut hasher = Sha256::new();
        for part in parts {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part);
        }
        hex::encode(hasher.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    pub fn get_text(&self, key: &str) -> Option<String> {
        fs::read_to_string(self.path(key)).ok()
    }

    pub fn put_text(&self, key: &str, text: &str) -> io::Result<()> {
        self.write_atomic(key, text.as_bytes())
    }

    pub fn get_vector(&self, key: &str) -> Option<Vec<f64>> {
        let bytes = fs::read(self.path(key)).ok()?;
        decode_vector(&bytes)
    }

    pub fn put_vector(&self, key: &str, values: &[f64]) -> io::Result<()> {
        self.write_atomic(key, &encode_vector(values))
    }

    // Identical keys always carry identical bodies, so concurrent writers may
    // race on the rename; the last one wins.
    fn write_atomic(&self, key: &str, body: &[u8]) -> io::Result<()> {
        let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let tmp = self.dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
        {
            let mut file = fs::File::create(&tmp)?;
            file.write_all(body)?;
            file.sync_all()?;
        }
        fs::rename(&tmp, self.path(key))
    }
}

pub fn encode_vector(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(VECTOR_MAGIC);
    out.extend_from_slice(&VECTOR_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_vector(bytes: &[u8]) -> Option<Vec<f64>> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != VECTOR_MAGIC {
        return None;
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().ok()?);
    let dim = u64::from_le_bytes(bytes[8..16].try_into().ok()?) as usize;
    let body = &bytes[HEADER_LEN..];
    if version != VECTOR_VERSION || body.len() != dim * 8 {
        return None;
    }
    Some(
        body.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn text_and_vector_entries() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        let key = Cache::key(&[b"backend", b"fp", &3u32.to_le_bytes()]);
        assert_eq!(cache.get_text(&key), None);
        cache.put_text(&key, "CERTAINTY = 4").unwrap();
        assert_eq!(cache.get_text(&key).as_deref(), Some("CERTAINTY = 4"));
        assert!(dir.path().join(&key).exists());

        let vkey = Cache::key(&[b"embedding"]);
        cache.put_vector(&vkey, &[1.5, -2.0]).unwrap();
        let bytes = fs::read(dir.path().join(&vkey)).unwrap();
        assert_eq!(bytes.len(), 16 + 16);
        assert_eq!(&bytes[..4], b"TQVC");
        assert_eq!(cache.get_vector(&vkey), Some(vec![1.5, -2.0]));
    }

    #[test]
    fn key_parts_are_length_prefixed() {
        assert_ne!(Cache::key(&[b"ab", b"c"]), Cache::key(&[b"a", b"bc"]));
    }

    #[test]
    fn corrupt_vector_is_a_miss() {
        assert_eq!(decode_vector(b"nope"), None);
        let mut bytes = encode_vector(&[1.0, 2.0]);
        bytes.pop();
        assert_eq!(decode_vector(&bytes), None);
    }

    proptest! {
        #[test]
        fn vector_codec_round_trip(values in prop::collection::vec(-1e6f64..1e6, 0..64)) {
            prop_assert_eq!(decode_vector(&encode_vector(&values)), Some(values));
        }
    }
}
