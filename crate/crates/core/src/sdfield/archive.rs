//! `SALF` sample archive.
//!
//! Layout, little-endian throughout: magic `SALF`, u32 version, u32 id length,
//! id bytes, u64 N, u64 M, N×3 f32 input cloud, M×3 f32 queries, M f32 labels,
//! u32 CRC-32 of every byte between the version and the CRC.

use std::fs;
use std::path::Path;

use super::{Result, SampleSet, SdfieldError};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"SALF";
pub const ARCHIVE_VERSION: u32 = 1;

pub fn encode_archive(set: &SampleSet) -> Vec<u8> {
    let id = set.shape_id.as_bytes();
    let mut out = Vec::with_capacity(36 + id.len() + 12 * set.input_cloud.len() + 16 * set.queries.len());
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&(set.input_cloud.len() as u64).to_le_bytes());
    out.extend_from_slice(&(set.queries.len() as u64).to_le_bytes());
    for p in set.input_cloud.iter().chain(&set.queries) {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for h in &set.h {
        out.extend_from_slice(&h.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[8..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(SdfieldError::Integrity {
                path: self.path.to_string(),
                field,
                msg: format!("truncated at byte {} (needed {n} more)", self.bytes.len()),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize, field: &'static str) -> Result<Vec<f32>> {
        let raw = self.take(count * 4, field)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn integrity(path: &str, field: &'static str, msg: impl Into<String>) -> SdfieldError {
    SdfieldError::Integrity { path: path.to_string(), field, msg: msg.into() }
}

fn triples(flat: Vec<f32>) -> Vec<[f32; 3]> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Decodes and verifies an archive; `path` is used only in messages.
pub fn decode_archive(bytes: &[u8], path: &str) -> Result<SampleSet> {
    let mut c = Cursor { bytes, pos: 0, path };
    if c.take(4, "magic")? != ARCHIVE_MAGIC {
        return Err(integrity(path, "magic", "not a SALF archive"));
    }
    let version = c.u32("version")?;
    if version != ARCHIVE_VERSION {
        return Err(integrity(path, "version", format!("unsupported version {version}")));
    }
    if bytes.len() < 12 {
        return Err(integrity(path, "crc", "truncated"));
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let body = &bytes[..bytes.len() - 4];
    let crc = crc32fast::hash(&body[8..]);
    if crc != stored {
        return Err(integrity(path, "crc", format!("checksum {crc:08x} != stored {stored:08x}")));
    }
    c.bytes = body;

    let id_len = c.u32("shape id")? as usize;
    let id = std::str::from_utf8(c.take(id_len, "shape id")?)
        .map_err(|_| integrity(path, "shape id", "not utf-8"))?
        .to_string();
    let n = c.u64("counts")?;
    let m = c.u64("counts")?;
    let remaining = (body.len() - c.pos) as u64;
    if n.checked_mul(12).zip(m.checked_mul(16)).and_then(|(a, b)| a.checked_add(b)) != Some(remaining) {
        return Err(integrity(path, "counts", format!("N={n}, M={m} disagree with {remaining} payload bytes")));
    }
    let (n, m) = (n as usize, m as usize);
    let input_cloud = triples(c.f32s(3 * n, "input cloud")?);
    let queries = triples(c.f32s(3 * m, "queries")?);
    let h = c.f32s(m, "h")?;
    Ok(SampleSet { shape_id: id, input_cloud, queries, h })
}

/// Writes via a temporary sibling and rename so readers never see a partial
/// archive.
pub fn write_archive(set: &SampleSet, path: &Path) -> Result<()> {
    let io = |source| SdfieldError::Io { path: path.display().to_string(), source };
    let tmp = path.with_extension("salf.tmp");
    fs::write(&tmp, encode_archive(set)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn read_archive(path: &Path) -> Result<SampleSet> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| SdfieldError::Io { path: name.clone(), source })?;
    decode_archive(&bytes, &name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> SampleSet {
        SampleSet {
            shape_id: "bunny-01".into(),
            input_cloud: vec![[0.0, 1.0, 2.0], [-1.5, 0.25, 3.0]],
            queries: vec![[0.5, 0.5, 0.5]],
            h: vec![0.125],
        }
    }

    fn field_of(e: SdfieldError) -> &'static str {
        match e {
            SdfieldError::Integrity { field, .. } => field,
            other => panic!("expected integrity error, got {other}"),
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_archive(&sample());
        assert_eq!(&bytes[..4], b"SALF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), ARCHIVE_VERSION);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        assert_eq!(&bytes[12..20], b"bunny-01");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 8 + 8 + 8 + 24 + 12 + 4 + 4);
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&bytes[8..bytes.len() - 4]));
    }

    #[test]
    fn truncation_is_integrity_error() {
        let bytes = encode_archive(&sample());
        for cut in 0..bytes.len() {
            assert!(matches!(decode_archive(&bytes[..cut], "t"), Err(SdfieldError::Integrity { .. })));
        }
    }

    #[test]
    fn flipped_payload_byte_fails_crc() {
        let mut bytes = encode_archive(&sample());
        bytes[30] ^= 0x40;
        assert_eq!(field_of(decode_archive(&bytes, "f").unwrap_err()), "crc");
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_archive(&sample());
        bytes[0] = b'X';
        assert_eq!(field_of(decode_archive(&bytes, "m").unwrap_err()), "magic");
        let mut bytes = encode_archive(&sample());
        bytes[4] = 9;
        assert_eq!(field_of(decode_archive(&bytes, "v").unwrap_err()), "version");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.salf");
        write_archive(&sample(), &path).unwrap();
        assert_eq!(read_archive(&path).unwrap(), sample());
        assert!(matches!(read_archive(&dir.path().join("nope")), Err(SdfieldError::Io { .. })));
    }

    fn arb_point() -> impl Strategy<Value = [f32; 3]> {
        prop::array::uniform3(any::<f32>())
    }

    proptest! {
        #[test]
        fn round_trip_is_byte_identity(
            id in "[a-z0-9_\\-]{0,12}",
            cloud in prop::collection::vec(arb_point(), 0..40),
            pairs in prop::collection::vec((arb_point(), any::<f32>()), 0..40),
        ) {
            let set = SampleSet {
                shape_id: id,
                input_cloud: cloud,
                queries: pairs.iter().map(|p| p.0).collect(),
                h: pairs.iter().map(|p| p.1).collect(),
            };
            let bytes = encode_archive(&set);
            let back = decode_archive(&bytes, "p").unwrap();
            prop_assert_eq!(encode_archive(&back), bytes);
        }
    }
}
