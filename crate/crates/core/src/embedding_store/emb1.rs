//! EMB1 container: a fixed 24-byte little-endian header, a JSON metadata
//! block, then `count * dim` row-major `f32` values.
//!
//! ```text
//! 0..4    b"EMB1"
//! 4..6    version (u16) = 1
//! 6..8    flags (u16), bit0 = rows pre-L2-normalized
//! 8..12   dim (u32)
//! 12..20  count (u64)
//! 20..24  metadata length M (u32)
//! 24..    M bytes of UTF-8 JSON, then the payload
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingKind, EmbeddingSet, SetMetadata, StoreError};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u16 = 1;
pub const FLAG_PRENORMALIZED: u16 = 1;

const HEADER_LEN: usize = 24;

#[derive(Serialize, Deserialize)]
struct Metadata {
    kind: EmbeddingKind,
    ids: Vec<String>,
    labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    taxonomy: Option<Vec<Vec<String>>>,
    model: String,
    template: String,
}

pub fn read_embedding_set(path: impl AsRef<Path>) -> Result<EmbeddingSet, StoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

pub fn write_embedding_set(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let bytes = encode(set)?;
    let io_err = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&bytes).map_err(io_err)?;
    file.sync_all().map_err(io_err)
}

pub(crate) fn encode(set: &EmbeddingSet) -> Result<Vec<u8>, StoreError> {
    let meta = Metadata {
        kind: set.kind,
        ids: set.ids.clone(),
        labels: set.labels.clone(),
        taxonomy: set.taxonomy_paths.clone(),
        model: set.model_tag.clone(),
        template: set.template.clone(),
    };
    let json = serde_json::to_vec(&meta)?;
    let dim =
        u32::try_from(set.dim).map_err(|_| StoreError::MetadataMismatch(format!("dim {} exceeds u32", set.dim)))?;
    let meta_len =
        u32::try_from(json.len()).map_err(|_| StoreError::MetadataMismatch("metadata exceeds 4 GiB".into()))?;
    let flags = if set.prenormalized { FLAG_PRENORMALIZED } else { 0 };

    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + set.vectors.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(&json);
    for x in &set.vectors {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<EmbeddingSet, StoreError> {
    let truncated = |expected: u64| StoreError::TruncatedPayload {
        expected,
        found: bytes.len() as u64,
    };
    if bytes.len() < 4 {
        return Err(truncated(HEADER_LEN as u64));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(StoreError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN as u64));
    }
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().expect("2 bytes"));
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u16_at(4);
    if version != VERSION {
        return Err(StoreError::VersionUnsupported(version));
    }
    let flags = u16_at(6);
    let dim = u32_at(8) as u64;
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let meta_len = u32_at(20) as u64;

    let payload_len = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| StoreError::MetadataMismatch(format!("count {count} x dim {dim} overflows")))?;
    let expected = HEADER_LEN as u64 + meta_len + payload_len;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(truncated(expected));
    }
    if found > expected {
        return Err(StoreError::MetadataMismatch(format!(
            "{} trailing bytes after a payload of {count} rows x {dim} dims",
            found - expected
        )));
    }

    let meta_end = HEADER_LEN + meta_len as usize;
    let meta: Metadata = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])?;
    if meta.ids.len() as u64 != count {
        return Err(StoreError::MetadataMismatch(format!(
            "header count {count} but metadata lists {} ids",
            meta.ids.len()
        )));
    }
    let vectors = bytes[meta_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();

    EmbeddingSet::new(
        meta.kind,
        dim as usize,
        vectors,
        SetMetadata {
            ids: meta.ids,
            labels: meta.labels,
            taxonomy_paths: meta.taxonomy,
            model_tag: meta.model,
            template: meta.template,
            prenormalized: flags & FLAG_PRENORMALIZED != 0,
        },
    )
}
