//! Tagged binary container shared by checkpoints, statistics and datasets.
//!
//! Layout (little-endian):
//!
//! ```text
//! 0   magic        8 bytes  "FLTPRUNE"
//! 8   version      u32
//! 12  total_len    u64      whole file, including the trailing CRC
//! 20  n_sections   u32
//! 24  table        n_sections × { tag [u8; 4], offset u64, len u64 }
//! ..  payloads
//! -4  crc32        u32      over bytes [0, total_len - 4)
//! ```

use crate::error::CheckpointError;

pub const MAGIC: &[u8; 8] = b"FLTPRUNE";
pub const VERSION: u32 = 1;
const HEADER: usize = 24;
const ENTRY: usize = 20;

pub type Tag = [u8; 4];

pub const TAG_NETWORK: Tag = *b"NETW";
pub const TAG_STATS: Tag = *b"STAT";
pub const TAG_IMAGES: Tag = *b"IMGS";
pub const TAG_LABELS: Tag = *b"LABL";
pub const TAG_DATASET_META: Tag = *b"DMET";

#[derive(Debug, Default, Clone)]
pub struct ContainerWriter {
    sections: Vec<(Tag, Vec<u8>)>,
}

impl ContainerWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn section(mut self, tag: Tag, payload: Vec<u8>) -> Self {
        self.sections.push((tag, payload));
        self
    }

    pub fn finish(self) -> Vec<u8> {
        let table_end = HEADER + ENTRY * self.sections.len();
        let payload_len: usize = self.sections.iter().map(|(_, p)| p.len()).sum();
        let total = table_end + payload_len + 4;
        let mut out = Vec::with_capacity(total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(total as u64).to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        let mut offset = table_end as u64;
        for (tag, payload) in &self.sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            offset += payload.len() as u64;
        }
        for (_, payload) in &self.sections {
            out.extend_from_slice(payload);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }
}

/// A verified container: magic, version, length and CRC have been checked.
#[derive(Debug)]
pub struct Container<'a> {
    bytes: &'a [u8],
    sections: Vec<(Tag, usize, usize)>,
}

impl<'a> Container<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self, CheckpointError> {
        let available = bytes.len() as u64;
        if bytes.len() < HEADER {
            if bytes.len() >= 8 && &bytes[..8] != MAGIC {
                return Err(CheckpointError::BadMagic);
            }
            return Err(CheckpointError::Truncated {
                needed: HEADER as u64 + 4,
                available,
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let total = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        if available < total {
            return Err(CheckpointError::Truncated {
                needed: total,
                available,
            });
        }
        if available > total || total < (HEADER + 4) as u64 {
            return Err(malformed("header", format!("declared length {total}, file has {available} bytes")));
        }
        let body = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..body]);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let count = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
        if HEADER + count * ENTRY > body {
            return Err(malformed("header", format!("{count} sections do not fit")));
        }
        let mut sections = Vec::with_capacity(count);
        for i in 0..count {
            let e = &bytes[HEADER + i * ENTRY..HEADER + (i + 1) * ENTRY];
            let tag: Tag = e[..4].try_into().unwrap();
            let offset = u64::from_le_bytes(e[4..12].try_into().unwrap()) as usize;
            let len = u64::from_le_bytes(e[12..20].try_into().unwrap()) as usize;
            if offset.checked_add(len).is_none_or(|end| end > body) {
                return Err(malformed(&tag_name(&tag), "section extends past payload".into()));
            }
            sections.push((tag, offset, len));
        }
        Ok(Self { bytes, sections })
    }

    pub fn get(&self, tag: Tag) -> Option<&'a [u8]> {
        self.sections
            .iter()
            .find(|(t, _, _)| *t == tag)
            .map(|&(_, off, len)| &self.bytes[off..off + len])
    }

    pub fn require(&self, tag: Tag) -> Result<&'a [u8], CheckpointError> {
        self.get(tag)
            .ok_or_else(|| CheckpointError::MissingSection(tag_name(&tag)))
    }

    pub fn tags(&self) -> impl Iterator<Item = Tag> + '_ {
        self.sections.iter().map(|(t, _, _)| *t)
    }
}

pub fn tag_name(tag: &Tag) -> String {
    String::from_utf8_lossy(tag).into_owned()
}

fn malformed(section: &str, reason: String) -> CheckpointError {
    CheckpointError::Malformed {
        section: section.to_string(),
        reason,
    }
}

/// Little-endian cursor used by the section decoders.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], section: &'static str) -> Self {
        Self {
            bytes,
            pos: 0,
            section,
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.error(format!("needs {n} more bytes at offset {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i128(&mut self) -> Result<i128, CheckpointError> {
        Ok(i128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn string(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.error("invalid UTF-8".into()))
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn error(&self, reason: String) -> CheckpointError {
        malformed(self.section, reason)
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}
