// SPDX-License-Identifier: Apache-2.0

//! Byte layout of a transactional global batch (TGB) object.
//!
//! ```text
//! [slice (0,0)][slice (0,1)] ... [slice (D-1,C-1)][footer][footer_len: u64 LE]["TGB1"]
//! ```
//!
//! Slices are stored contiguously in row-major `(d, c)` order, `d` outer. The
//! footer is fixed-width: `dp: u32 LE`, `cp: u32 LE`, then one
//! `(offset: u64 LE, length: u64 LE)` pair per slice in the same order. A
//! reader can recover the footer from the object tail alone and then fetch
//! its own slice with a single range read.

use serde::{Deserialize, Serialize};

use crate::object_store::{ObjectKey, StoreError};

pub const MAGIC: [u8; 4] = *b"TGB1";
/// `footer_len` plus magic.
pub const TRAILER_LEN: u64 = 12;
/// Size of the speculative tail read a consumer issues to find the footer.
pub const TAIL_PROBE_LEN: u64 = 4096 + TRAILER_LEN;

const MESH_HEADER_LEN: u64 = 8;
const ENTRY_LEN: u64 = 16;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("expected {expected} slices for the mesh, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("mesh degrees must be at least 1 (dp={dp}, cp={cp})")]
    InvalidMesh { dp: u32, cp: u32 },

    #[error("bad TGB magic")]
    BadMagic,

    #[error("footer truncated: need {needed} tail bytes, have {available}")]
    TruncatedFooter { needed: u64, available: u64 },

    #[error("malformed footer: {0}")]
    Malformed(String),

    #[error("coordinate ({d}, {c}) outside mesh {dp}x{cp}")]
    CoordinateOutOfMesh { d: u32, c: u32, dp: u32, cp: u32 },
}

/// Data-relevant part of the device mesh. Tensor and pipeline parallel ranks
/// share slices, so only the DP and CP degrees shape the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeshSpec {
    pub dp: u32,
    pub cp: u32,
}

impl MeshSpec {
    pub fn new(dp: u32, cp: u32) -> Result<Self, FormatError> {
        if dp == 0 || cp == 0 {
            return Err(FormatError::InvalidMesh { dp, cp });
        }
        Ok(MeshSpec { dp, cp })
    }

    pub fn slice_count(&self) -> usize {
        self.dp as usize * self.cp as usize
    }

    fn index(&self, d: u32, c: u32) -> Result<usize, FormatError> {
        if d >= self.dp || c >= self.cp {
            return Err(FormatError::CoordinateOutOfMesh {
                d,
                c,
                dp: self.dp,
                cp: self.cp,
            });
        }
        Ok(d as usize * self.cp as usize + c as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceEntry {
    pub d: u32,
    pub c: u32,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FooterIndex {
    pub mesh: MeshSpec,
    pub entries: Vec<SliceEntry>,
}

impl FooterIndex {
    /// `(offset, length)` of slice `(d, c)` within the object.
    pub fn slice_range(&self, d: u32, c: u32) -> Result<(u64, u64), FormatError> {
        let e = &self.entries[self.mesh.index(d, c)?];
        Ok((e.offset, e.length))
    }

    /// Total payload bytes preceding the footer.
    pub fn body_len(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.offset + e.length)
    }

    /// Encoded footer size, excluding the 12-byte trailer.
    pub fn encoded_len(&self) -> u64 {
        footer_len_for(self.mesh)
    }

    /// Total object size implied by this footer.
    pub fn object_len(&self) -> u64 {
        self.body_len() + self.encoded_len() + TRAILER_LEN
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.mesh.dp.to_le_bytes());
        out.extend_from_slice(&self.mesh.cp.to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.offset.to_le_bytes());
            out.extend_from_slice(&e.length.to_le_bytes());
        }
    }
}

fn footer_len_for(mesh: MeshSpec) -> u64 {
    MESH_HEADER_LEN + ENTRY_LEN * mesh.slice_count() as u64
}

/// Serializes one TGB. `slices` holds the `D·C` payloads in row-major order.
pub fn encode_tgb<S: AsRef<[u8]>>(slices: &[S], mesh: MeshSpec) -> Result<Vec<u8>, FormatError> {
    let mesh = MeshSpec::new(mesh.dp, mesh.cp)?;
    if slices.len() != mesh.slice_count() {
        return Err(FormatError::ShapeMismatch {
            expected: mesh.slice_count(),
            actual: slices.len(),
        });
    }
    let mut entries = Vec::with_capacity(slices.len());
    let mut offset = 0u64;
    for (i, s) in slices.iter().enumerate() {
        let length = s.as_ref().len() as u64;
        entries.push(SliceEntry {
            d: (i / mesh.cp as usize) as u32,
            c: (i % mesh.cp as usize) as u32,
            offset,
            length,
        });
        offset += length;
    }
    let footer = FooterIndex { mesh, entries };
    let mut out = Vec::with_capacity(footer.object_len() as usize);
    for s in slices {
        out.extend_from_slice(s.as_ref());
    }
    footer.encode_into(&mut out);
    out.extend_from_slice(&footer.encoded_len().to_le_bytes());
    out.extend_from_slice(&MAGIC);
    Ok(out)
}

/// Number of bytes from the end of the object needed to decode the footer.
/// Needs only the 12-byte trailer.
pub fn footer_span(tail: &[u8]) -> Result<u64, FormatError> {
    let available = tail.len() as u64;
    if available < TRAILER_LEN {
        return Err(FormatError::TruncatedFooter {
            needed: TRAILER_LEN,
            available,
        });
    }
    let trailer = &tail[tail.len() - TRAILER_LEN as usize..];
    if trailer[8..] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let footer_len = u64::from_le_bytes(trailer[..8].try_into().unwrap());
    footer_len
        .checked_add(TRAILER_LEN)
        .ok_or_else(|| FormatError::Malformed(format!("footer length {footer_len} overflows")))
}

/// Decodes the footer from the last bytes of a TGB object.
pub fn decode_footer(tail: &[u8]) -> Result<FooterIndex, FormatError> {
    let span = footer_span(tail)?;
    let available = tail.len() as u64;
    if available < span {
        return Err(FormatError::TruncatedFooter {
            needed: span,
            available,
        });
    }
    let footer = &tail[(available - span) as usize..(available - TRAILER_LEN) as usize];
    if footer.len() < MESH_HEADER_LEN as usize {
        return Err(FormatError::Malformed("footer shorter than mesh header".into()));
    }
    let dp = u32::from_le_bytes(footer[0..4].try_into().unwrap());
    let cp = u32::from_le_bytes(footer[4..8].try_into().unwrap());
    let mesh = MeshSpec::new(dp, cp).map_err(|e| FormatError::Malformed(e.to_string()))?;
    if footer.len() as u64 != footer_len_for(mesh) {
        return Err(FormatError::Malformed(format!(
            "footer is {} bytes but mesh {dp}x{cp} needs {}",
            footer.len(),
            footer_len_for(mesh)
        )));
    }
    let mut entries = Vec::with_capacity(mesh.slice_count());
    let mut expected_offset = 0u64;
    for (i, raw) in footer[MESH_HEADER_LEN as usize..]
        .chunks_exact(ENTRY_LEN as usize)
        .enumerate()
    {
        let offset = u64::from_le_bytes(raw[0..8].try_into().unwrap());
        let length = u64::from_le_bytes(raw[8..16].try_into().unwrap());
        if offset != expected_offset {
            return Err(FormatError::Malformed(format!(
                "slice {i} starts at {offset}, expected {expected_offset}"
            )));
        }
        expected_offset = offset
            .checked_add(length)
            .ok_or_else(|| FormatError::Malformed("slice range overflows".into()))?;
        entries.push(SliceEntry {
            d: (i / cp as usize) as u32,
            c: (i % cp as usize) as u32,
            offset,
            length,
        });
    }
    Ok(FooterIndex { mesh, entries })
}

/// `<ns>/data/<producer_id>/<producer_seq:012>.tgb`
pub fn tgb_key(namespace: &ObjectKey, producer_id: &str, seq: u64) -> Result<ObjectKey, StoreError> {
    namespace.join(&format!("data/{producer_id}/{seq:012}.tgb"))
}

pub fn data_prefix(namespace: &ObjectKey) -> ObjectKey {
    namespace.join("data").expect("static suffix is a valid key")
}

/// Parses `(producer_id, seq)` out of a TGB key produced by [`tgb_key`].
pub fn parse_tgb_key(namespace: &ObjectKey, key: &ObjectKey) -> Option<(String, u64)> {
    let rest = key
        .as_str()
        .strip_prefix(namespace.as_str())?
        .strip_prefix("/data/")?;
    let (producer_id, file) = rest.split_once('/')?;
    let digits = file.strip_suffix(".tgb")?;
    if digits.len() != 12 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((producer_id.to_string(), digits.parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mesh(dp: u32, cp: u32) -> MeshSpec {
        MeshSpec::new(dp, cp).unwrap()
    }

    /// Cumulative-sum oracle: offsets are prefix sums of lengths.
    fn cumsum_offsets(lengths: &[u64]) -> Vec<u64> {
        lengths
            .iter()
            .scan(0, |acc, &l| {
                let o = *acc;
                *acc += l;
                Some(o)
            })
            .collect()
    }

    #[test]
    fn single_slice_layout() {
        let blob = encode_tgb(&[b"abc"], mesh(1, 1)).unwrap();
        let footer = decode_footer(&blob).unwrap();
        assert_eq!(
            footer.entries,
            vec![SliceEntry { d: 0, c: 0, offset: 0, length: 3 }]
        );
        assert_eq!(blob.len() as u64, 3 + 8 + 16 + TRAILER_LEN);
        assert_eq!(&blob[blob.len() - 4..], b"TGB1");
    }

    #[test]
    fn two_by_two_offsets() {
        let slices: Vec<Vec<u8>> = (1..=4).map(|n| vec![n as u8; n]).collect();
        let footer = decode_footer(&encode_tgb(&slices, mesh(2, 2)).unwrap()).unwrap();
        let offsets: Vec<u64> = footer.entries.iter().map(|e| e.offset).collect();
        assert_eq!(offsets, cumsum_offsets(&[1, 2, 3, 4]));
        assert_eq!(offsets, vec![0, 1, 3, 6]);
        assert_eq!(footer.slice_range(1, 0).unwrap(), (3, 3));
        assert_eq!(footer.slice_range(0, 0).unwrap(), (0, 1));
        assert_eq!(
            footer.slice_range(2, 0),
            Err(FormatError::CoordinateOutOfMesh { d: 2, c: 0, dp: 2, cp: 2 })
        );
        assert!(footer.slice_range(0, 2).is_err());
    }

    #[test]
    fn empty_slice_keeps_later_offsets() {
        let slices: [&[u8]; 3] = [b"ab", b"", b"cde"];
        let footer = decode_footer(&encode_tgb(&slices, mesh(3, 1)).unwrap()).unwrap();
        assert_eq!(footer.slice_range(1, 0).unwrap(), (2, 0));
        assert_eq!(footer.slice_range(2, 0).unwrap(), (2, 3));
    }

    #[test]
    fn shape_mismatch() {
        assert_eq!(
            encode_tgb(&[b"a", b"b", b"c"], mesh(2, 2)),
            Err(FormatError::ShapeMismatch { expected: 4, actual: 3 })
        );
        assert!(MeshSpec::new(0, 1).is_err());
    }

    #[test]
    fn corrupted_trailers() {
        let mut blob = encode_tgb(&[b"payload"], mesh(1, 1)).unwrap();
        assert!(matches!(
            decode_footer(&blob[blob.len() - 11..]),
            Err(FormatError::TruncatedFooter { needed: 12, .. })
        ));
        // Trailer present but footer cut off.
        assert!(matches!(
            decode_footer(&blob[blob.len() - 20..]),
            Err(FormatError::TruncatedFooter { needed: 36, .. })
        ));
        let n = blob.len();
        blob[n - 1] = b'2';
        assert_eq!(decode_footer(&blob), Err(FormatError::BadMagic));
    }

    #[test]
    fn malformed_footer_rejected() {
        let mut blob = encode_tgb(&[b"ab", b"cd"], mesh(2, 1)).unwrap();
        // Corrupt the second entry's offset.
        let second_offset = 4 + 8 + 16;
        blob[second_offset] = 9;
        assert!(matches!(decode_footer(&blob), Err(FormatError::Malformed(_))));
    }

    #[test]
    fn tail_read_fits_in_probe_for_large_meshes() {
        // 128 slices: 8 + 128 * 16 = 2056 footer bytes.
        assert!(footer_len_for(mesh(32, 4)) + TRAILER_LEN <= TAIL_PROBE_LEN);
    }

    #[test]
    fn key_round_trip() {
        let ns = ObjectKey::new("ns").unwrap();
        let k = tgb_key(&ns, "p-3", 42).unwrap();
        assert_eq!(k.as_str(), "ns/data/p-3/000000000042.tgb");
        assert_eq!(parse_tgb_key(&ns, &k), Some(("p-3".to_string(), 42)));
        assert_eq!(parse_tgb_key(&ns, &ObjectKey::new("ns/data/p/1.tgb").unwrap()), None);
        assert!(tgb_key(&ns, "bad id", 0).is_err());
    }

    proptest! {
        #[test]
        fn every_slice_reads_back(
            dp in 1u32..5,
            cp in 1u32..5,
            seed in any::<u64>(),
            max_len in 0usize..64,
        ) {
            let m = mesh(dp, cp);
            let slices: Vec<Vec<u8>> = (0..m.slice_count())
                .map(|i| {
                    let len = (seed.wrapping_mul(i as u64 + 1) >> 7) as usize % (max_len + 1);
                    (0..len).map(|j| (seed as usize + i * 31 + j) as u8).collect()
                })
                .collect();
            let blob = encode_tgb(&slices, m).unwrap();
            prop_assert_eq!(&blob, &encode_tgb(&slices, m).unwrap());
            let footer = decode_footer(&blob).unwrap();
            prop_assert_eq!(footer.object_len(), blob.len() as u64);
            let lengths: Vec<u64> = slices.iter().map(|s| s.len() as u64).collect();
            let offsets: Vec<u64> = footer.entries.iter().map(|e| e.offset).collect();
            prop_assert_eq!(offsets, cumsum_offsets(&lengths));
            for d in 0..dp {
                for c in 0..cp {
                    let (off, len) = footer.slice_range(d, c).unwrap();
                    let got = &blob[off as usize..(off + len) as usize];
                    prop_assert_eq!(got, &slices[(d * cp + c) as usize][..]);
                }
            }
        }
    }
}
