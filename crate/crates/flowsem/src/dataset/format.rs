//! The binary dataset layout.
//!
//! ```text
//! magic "FSUTAB01"
//! u32 version | u32 t | u32 n | u32 record_count      (little-endian)
//! 32-byte schema hash
//! u32 class_count, then per class: u32 len + utf-8 bytes
//! records, each:
//!     u64 flow_id
//!     i32 label            (-1 = unlabeled)
//!     ceil(t/8) bytes      validity bitmap, LSB-first
//!     t*n f32              row-major values
//!     u32 crc32            over the record bytes above
//! ```

use std::path::Path;

use super::{DatasetError, DatasetFile, FlowTable};
use crate::hash::crc32;

const MAGIC: &[u8; 8] = b"FSUTAB01";

pub(super) fn to_bytes(ds: &DatasetFile) -> Result<Vec<u8>, DatasetError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [ds.version as u32, ds.t as u32, ds.n as u32, ds.records.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ds.schema_hash);
    out.extend_from_slice(&(ds.class_names.len() as u32).to_le_bytes());
    for name in &ds.class_names {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for (i, rec) in ds.records.iter().enumerate() {
        if rec.values.len() != ds.t * ds.n || rec.valid.len() != ds.t {
            return Err(DatasetError::ShapeMismatch(format!(
                "record {i}: {} values / {} valid, expected {}x{}",
                rec.values.len(),
                rec.valid.len(),
                ds.t,
                ds.n
            )));
        }
        if let Some(label) = rec.label {
            if (label as usize) >= ds.class_names.len() {
                return Err(DatasetError::ShapeMismatch(format!(
                    "record {i}: label {label} outside class table"
                )));
            }
        }
        let mut body = Vec::with_capacity(8 + 4 + ds.t.div_ceil(8) + ds.t * ds.n * 4);
        body.extend_from_slice(&rec.flow_id.to_le_bytes());
        let label: i32 = rec.label.map(|l| l as i32).unwrap_or(-1);
        body.extend_from_slice(&label.to_le_bytes());
        let mut bitmap = vec![0u8; ds.t.div_ceil(8)];
        for (ti, &v) in rec.valid.iter().enumerate() {
            if v {
                bitmap[ti / 8] |= 1 << (ti % 8);
            }
        }
        body.extend_from_slice(&bitmap);
        for v in &rec.values {
            body.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32(&body);
        out.extend_from_slice(&body);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    Ok(out)
}

pub(super) fn write(ds: &DatasetFile, path: &Path) -> Result<(), DatasetError> {
    std::fs::write(path, to_bytes(ds)?)?;
    Ok(())
}

pub(super) fn read(path: &Path) -> Result<DatasetFile, DatasetError> {
    from_bytes(&std::fs::read(path)?)
}

pub(super) fn from_bytes(bytes: &[u8]) -> Result<DatasetFile, DatasetError> {
    let mut cur = Reader { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = cur.u32()?;
    let t = cur.u32()? as usize;
    let n = cur.u32()? as usize;
    let record_count = cur.u32()? as usize;
    let mut schema_hash = [0u8; 32];
    schema_hash.copy_from_slice(cur.take(32)?);
    let class_count = cur.u32()? as usize;
    let mut class_names = Vec::with_capacity(class_count);
    for _ in 0..class_count {
        let len = cur.u32()? as usize;
        let raw = cur.take(len)?;
        class_names.push(
            String::from_utf8(raw.to_vec())
                .map_err(|_| DatasetError::Corrupt("non-utf8 class name".into()))?,
        );
    }

    let bitmap_len = t.div_ceil(8);
    let body_len = 8 + 4 + bitmap_len + t * n * 4;
    let mut records = Vec::with_capacity(record_count);
    for i in 0..record_count {
        let body = cur.take(body_len).map_err(|_| {
            DatasetError::Corrupt(format!("file truncated in record {i}"))
        })?;
        let stored_crc = cur.u32().map_err(|_| {
            DatasetError::Corrupt(format!("file truncated in record {i} checksum"))
        })?;
        if crc32(body) != stored_crc {
            return Err(DatasetError::Corrupt(format!("record {i} checksum mismatch")));
        }
        let flow_id = u64::from_le_bytes(body[0..8].try_into().unwrap());
        let label_raw = i32::from_le_bytes(body[8..12].try_into().unwrap());
        let label = if label_raw < 0 { None } else { Some(label_raw as u32) };
        let bitmap = &body[12..12 + bitmap_len];
        let valid: Vec<bool> = (0..t).map(|ti| bitmap[ti / 8] >> (ti % 8) & 1 == 1).collect();
        let values: Vec<f32> = body[12 + bitmap_len..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(FlowTable {
            values,
            valid,
            label,
            flow_id,
        });
    }
    if cur.pos != bytes.len() {
        return Err(DatasetError::Corrupt("trailing bytes after records".into()));
    }
    Ok(DatasetFile {
        version,
        t,
        n,
        schema_hash,
        class_names,
        records,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        if self.bytes.len() - self.pos < n {
            return Err(DatasetError::Corrupt("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
