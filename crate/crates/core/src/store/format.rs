//! Byte layout of scene files.
//!
//! ```text
//! 0   magic "GLOD"
//! 4   u32 version
//! 8   u64 gaussian count (leaves)
//! 16  u64 node count (slots, including free ones)
//! 24  u8  SH degree, 3 bytes padding
//! 28  u32 flags (bit 0 skybox, bit 1 HSPT present)
//! 32  u32 root
//! 36  u32 skybox root or NONE
//! 40  u32 section count
//! 44  reserved, zero up to 64
//! 64  section table: count × (u32 kind, u32 reserved, u64 offset, u64 len)
//! ```
//!
//! Sections start on 64-byte boundaries. Attribute sections are indexed by
//! storage slot; slots hold the SPT nodes first, SPT after SPT in record
//! order, then every other node in ascending id. Topology sections are
//! indexed by node id.

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"GLOD";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 64;
pub const SECTION_ENTRY_BYTES: usize = 24;
pub const ALIGN: usize = 64;
pub const SPT_DIR_ENTRY_BYTES: usize = 40;

pub const FLAG_SKYBOX: u32 = 1;
pub const FLAG_HSPT: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u32)]
pub enum SectionKind {
    Means = 1,
    Scales = 2,
    Rotations = 3,
    Opacities = 4,
    BaseColors = 5,
    ShRest = 6,
    /// u32 node id per storage slot.
    SlotNodes = 7,
    Parents = 8,
    /// Two u32 per node, both NONE for leaves.
    Children = 9,
    FreeList = 10,
    SptDirectory = 11,
    SptRecords = 12,
    HsptMeta = 13,
}

pub const SECTION_ORDER: [SectionKind; 13] = [
    SectionKind::Means,
    SectionKind::Scales,
    SectionKind::Rotations,
    SectionKind::Opacities,
    SectionKind::BaseColors,
    SectionKind::ShRest,
    SectionKind::SlotNodes,
    SectionKind::Parents,
    SectionKind::Children,
    SectionKind::FreeList,
    SectionKind::SptDirectory,
    SectionKind::SptRecords,
    SectionKind::HsptMeta,
];

impl SectionKind {
    pub fn from_u32(v: u32) -> Option<Self> {
        SECTION_ORDER.iter().copied().find(|k| *k as u32 == v)
    }

    /// f32 count per node for attribute sections.
    pub fn floats_per_node(self, sh_rest: usize) -> Option<usize> {
        match self {
            Self::Means | Self::Scales | Self::BaseColors => Some(3),
            Self::Rotations => Some(4),
            Self::Opacities => Some(1),
            Self::ShRest => Some(sh_rest),
            _ => None,
        }
    }
}

pub const ATTRIBUTE_SECTIONS: [SectionKind; 6] = [
    SectionKind::Means,
    SectionKind::Scales,
    SectionKind::Rotations,
    SectionKind::Opacities,
    SectionKind::BaseColors,
    SectionKind::ShRest,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub gaussian_count: u64,
    pub node_count: u64,
    pub sh_degree: u8,
    pub flags: u32,
    pub root: u32,
    pub skybox_root: u32,
    pub section_count: u32,
}

impl Header {
    pub fn encode(&self) -> [u8; HEADER_BYTES] {
        let mut b = [0u8; HEADER_BYTES];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..8].copy_from_slice(&VERSION.to_le_bytes());
        b[8..16].copy_from_slice(&self.gaussian_count.to_le_bytes());
        b[16..24].copy_from_slice(&self.node_count.to_le_bytes());
        b[24] = self.sh_degree;
        b[28..32].copy_from_slice(&self.flags.to_le_bytes());
        b[32..36].copy_from_slice(&self.root.to_le_bytes());
        b[36..40].copy_from_slice(&self.skybox_root.to_le_bytes());
        b[40..44].copy_from_slice(&self.section_count.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_BYTES {
            return Err(Error::corrupt(b.len() as u64, "file shorter than the 64-byte header"));
        }
        if b[0..4] != MAGIC {
            return Err(Error::corrupt(0, "bad magic, expected GLOD"));
        }
        let version = u32_at(b, 4);
        if version != VERSION {
            return Err(Error::corrupt(4, format!("unsupported version {version}")));
        }
        Ok(Self {
            gaussian_count: u64_at(b, 8),
            node_count: u64_at(b, 16),
            sh_degree: b[24],
            flags: u32_at(b, 28),
            root: u32_at(b, 32),
            skybox_root: u32_at(b, 36),
            section_count: u32_at(b, 40),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SectionEntry {
    pub kind: SectionKind,
    pub offset: u64,
    pub len: u64,
}

impl SectionEntry {
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.kind as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&self.offset.to_le_bytes());
        out.extend_from_slice(&self.len.to_le_bytes());
    }

    pub fn decode(b: &[u8], at: usize) -> Result<Self> {
        let kind = u32_at(b, at);
        let kind = SectionKind::from_u32(kind).ok_or_else(|| Error::corrupt(at as u64, format!("unknown section kind {kind}")))?;
        Ok(Self {
            kind,
            offset: u64_at(b, at + 8),
            len: u64_at(b, at + 16),
        })
    }
}

pub fn align_up(v: usize) -> usize {
    v.div_ceil(ALIGN) * ALIGN
}

pub fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    out.reserve(v.len() * 4);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn put_u32s(out: &mut Vec<u8>, v: &[u32]) {
    out.reserve(v.len() * 4);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn f32s_from(b: &[u8]) -> Vec<f32> {
    b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

pub fn u32s_from(b: &[u8]) -> Vec<u32> {
    b.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let h = Header {
            gaussian_count: 7,
            node_count: 13,
            sh_degree: 1,
            flags: FLAG_HSPT,
            root: 12,
            skybox_root: u32::MAX,
            section_count: 13,
        };
        let b = h.encode();
        assert_eq!(&b[0..4], b"GLOD");
        assert_eq!(Header::decode(&b).unwrap(), h);
        assert!(b[44..].iter().all(|&x| x == 0));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut b = Header {
            gaussian_count: 1,
            node_count: 1,
            sh_degree: 0,
            flags: 0,
            root: 0,
            skybox_root: u32::MAX,
            section_count: 0,
        }
        .encode();
        b[4] = 9;
        assert!(matches!(Header::decode(&b), Err(Error::CorruptFile { offset: 4, .. })));
        b[0] = b'X';
        assert!(matches!(Header::decode(&b), Err(Error::CorruptFile { offset: 0, .. })));
        assert!(matches!(Header::decode(&b[..10]), Err(Error::CorruptFile { offset: 10, .. })));
    }

    #[test]
    fn alignment() {
        assert_eq!(align_up(0), 0);
        assert_eq!(align_up(1), 64);
        assert_eq!(align_up(64), 64);
        assert_eq!(align_up(65), 128);
    }
}
