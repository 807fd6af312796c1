//! Out-of-core scene storage.
//!
//! A [`SceneStore`] keeps topology, SPT records and HSPT metadata in memory
//! and pages attribute data from its backing on demand. Reading an SPT cut
//! prefix costs one contiguous range per attribute array.

mod format;
mod ply;

pub use format::{Header, SectionEntry, SectionKind, HEADER_BYTES, MAGIC, VERSION};
pub use ply::{read_ply, read_ply_bytes, write_ply, write_ply_bytes, PlyPoint};

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::{floats_per_gaussian, sh_rest_len, GaussianAttributes};
use crate::hierarchy::{Hierarchy, NodeId, NONE};
use crate::hspt::Hspt;
use crate::lod::{LodConfig, LodMetric};
use crate::spt::{Spt, SptRecord, RECORD_BYTES};
use format::*;

/// SH degree whose rest-coefficient count is `len`.
pub fn sh_degree_for_len(len: usize) -> Option<u8> {
    (0u8..=4).find(|&d| sh_rest_len(d) == len)
}

/// Attributes of an SPT record prefix, in record order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttributeBlock {
    pub spt_id: u32,
    pub sh_degree: u8,
    pub nodes: Vec<NodeId>,
    pub means: Vec<[f32; 3]>,
    pub scales: Vec<[f32; 3]>,
    pub rotations: Vec<[f32; 4]>,
    pub opacities: Vec<f32>,
    pub base_colors: Vec<[f32; 3]>,
    /// `sh_rest_len(sh_degree)` scalars per Gaussian.
    pub sh_rest: Vec<f32>,
}

impl AttributeBlock {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Attribute payload in bytes.
    pub fn bytes(&self) -> u64 {
        (self.len() * floats_per_gaussian(self.sh_degree) * 4) as u64
    }

    pub fn gaussian(&self, i: usize) -> GaussianAttributes {
        let k = sh_rest_len(self.sh_degree);
        GaussianAttributes {
            mean: self.means[i],
            scale: self.scales[i],
            rotation: self.rotations[i],
            opacity: self.opacities[i],
            base_color: self.base_colors[i],
            sh_rest: self.sh_rest[i * k..(i + 1) * k].to_vec(),
        }
    }

    pub fn set(&mut self, i: usize, g: &GaussianAttributes) {
        let k = sh_rest_len(self.sh_degree);
        self.means[i] = g.mean;
        self.scales[i] = g.scale;
        self.rotations[i] = g.rotation;
        self.opacities[i] = g.opacity;
        self.base_colors[i] = g.base_color;
        self.sh_rest[i * k..(i + 1) * k].copy_from_slice(&g.sh_rest[..k]);
    }

    /// Builds a block from in-memory Gaussians.
    pub fn from_gaussians(spt_id: u32, sh_degree: u8, nodes: Vec<NodeId>, gs: &[&GaussianAttributes]) -> Self {
        let k = sh_rest_len(sh_degree);
        let mut b = Self {
            spt_id,
            sh_degree,
            nodes,
            ..Default::default()
        };
        for g in gs {
            b.means.push(g.mean);
            b.scales.push(g.scale);
            b.rotations.push(g.rotation);
            b.opacities.push(g.opacity);
            b.base_colors.push(g.base_color);
            let mut sh = g.sh_rest.clone();
            sh.resize(k, 0.0);
            b.sh_rest.extend_from_slice(&sh);
        }
        b
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.len();
        let k = sh_rest_len(self.sh_degree);
        if self.means.len() != n
            || self.scales.len() != n
            || self.rotations.len() != n
            || self.opacities.len() != n
            || self.base_colors.len() != n
            || self.sh_rest.len() != n * k
        {
            return Err(Error::InvalidBlock(format!("attribute arrays of SPT {} disagree in length", self.spt_id)));
        }
        Ok(())
    }
}

/// Per-component memory footprint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MemoryReport {
    pub sh_degree: u8,
    pub gaussian_count: u64,
    pub node_count: u64,
    pub spt_records: u64,
    pub attribute_bytes_per_gaussian: u64,
    /// Two Adam moments per attribute scalar.
    pub optimizer_bytes_per_gaussian: u64,
    pub gradient_bytes_per_gaussian: u64,
    pub spt_metadata_bytes_per_gaussian: u64,
    /// Parent index plus child pair.
    pub topology_bytes_per_node: u64,
}

impl MemoryReport {
    pub fn for_layout(sh_degree: u8, gaussian_count: u64, node_count: u64, spt_records: u64) -> Self {
        let attr = (floats_per_gaussian(sh_degree) * 4) as u64;
        Self {
            sh_degree,
            gaussian_count,
            node_count,
            spt_records,
            attribute_bytes_per_gaussian: attr,
            optimizer_bytes_per_gaussian: 2 * attr,
            gradient_bytes_per_gaussian: attr,
            spt_metadata_bytes_per_gaussian: RECORD_BYTES as u64,
            topology_bytes_per_node: 12,
        }
    }

    /// Attributes, optimizer state and gradients of one trainable Gaussian.
    pub fn training_bytes_per_gaussian(&self) -> u64 {
        self.attribute_bytes_per_gaussian + self.optimizer_bytes_per_gaussian + self.gradient_bytes_per_gaussian
    }

    pub fn attribute_total(&self) -> u64 {
        self.attribute_bytes_per_gaussian * self.node_count
    }

    pub fn optimizer_total(&self) -> u64 {
        self.optimizer_bytes_per_gaussian * self.node_count
    }

    pub fn spt_metadata_total(&self) -> u64 {
        self.spt_metadata_bytes_per_gaussian * self.spt_records
    }

    pub fn topology_total(&self) -> u64 {
        self.topology_bytes_per_node * self.node_count
    }

    /// SPT metadata for `gaussians` records.
    pub fn spt_metadata_for(&self, gaussians: u64) -> u64 {
        self.spt_metadata_bytes_per_gaussian * gaussians
    }
}

enum Backing {
    File { file: File, path: PathBuf },
    Memory(RwLock<Vec<u8>>),
}

impl Backing {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        match self {
            Backing::File { file, path } => read_exact_at(file, buf, offset).map_err(|e| Error::io(path, e)),
            Backing::Memory(m) => {
                let m = m.read().unwrap();
                let end = offset as usize + buf.len();
                if end > m.len() {
                    return Err(Error::corrupt(offset, "read past end of scene"));
                }
                buf.copy_from_slice(&m[offset as usize..end]);
                Ok(())
            }
        }
    }

    fn write_at(&self, offset: u64, buf: &[u8]) -> Result<()> {
        match self {
            Backing::File { file, path } => write_all_at(file, buf, offset).map_err(|e| Error::io(path, e)),
            Backing::Memory(m) => {
                let mut m = m.write().unwrap();
                m[offset as usize..offset as usize + buf.len()].copy_from_slice(buf);
                Ok(())
            }
        }
    }

    fn len(&self) -> Result<u64> {
        match self {
            Backing::File { file, path } => Ok(file.metadata().map_err(|e| Error::io(path, e))?.len()),
            Backing::Memory(m) => Ok(m.read().unwrap().len() as u64),
        }
    }
}

#[cfg(unix)]
fn read_exact_at(f: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::read_exact_at(f, buf, offset)
}

#[cfg(unix)]
fn write_all_at(f: &File, buf: &[u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::write_all_at(f, buf, offset)
}

#[cfg(windows)]
fn read_exact_at(f: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        let n = f.seek_read(buf, offset)?;
        if n == 0 {
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        buf = &mut buf[n..];
        offset += n as u64;
    }
    Ok(())
}

#[cfg(windows)]
fn write_all_at(f: &File, mut buf: &[u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        let n = f.seek_write(buf, offset)?;
        buf = &buf[n..];
        offset += n as u64;
    }
    Ok(())
}

/// One SPT directory entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SptDirEntry {
    pub spt_id: u32,
    pub root: NodeId,
    pub center: [f32; 3],
    pub radius: f32,
    /// First storage slot, equal to the record index offset.
    pub record_offset: u64,
    pub record_count: u64,
}

#[derive(Clone, Debug, PartialEq)]
struct HsptMeta {
    size_threshold: f64,
    min_subtree: u64,
    lod: LodConfig,
    upper: Vec<NodeId>,
    passthrough: Vec<NodeId>,
    skybox_leaves: Vec<NodeId>,
}

/// Handle to a scene file or an in-memory scene image.
pub struct SceneStore {
    backing: Backing,
    header: Header,
    sections: Vec<SectionEntry>,
    node_of_slot: Vec<NodeId>,
    parents: Vec<NodeId>,
    children: Vec<Option<[NodeId; 2]>>,
    free: Vec<NodeId>,
    dir: Vec<SptDirEntry>,
    records: Vec<SptRecord>,
    meta: HsptMeta,
    bytes_read: AtomicU64,
    bytes_written: AtomicU64,
    trace: Mutex<Option<Vec<(u64, u64)>>>,
}

impl std::fmt::Debug for SceneStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SceneStore")
            .field("header", &self.header)
            .field("spts", &self.dir.len())
            .finish_non_exhaustive()
    }
}

impl SceneStore {
    /// Serializes a scene to bytes.
    pub fn encode(h: &Hierarchy, hspt: &Hspt) -> Result<Vec<u8>> {
        if h.root() == NONE || h.live_count() == 0 {
            return Err(Error::EmptyScene);
        }
        let k = h.node(h.root()).sh_rest.len();
        let sh_degree = sh_degree_for_len(k).ok_or_else(|| Error::InvalidInput(format!("{k} SH coefficients match no degree")))?;
        if let Some(bad) = h.nodes().iter().position(|g| g.sh_rest.len() != k) {
            return Err(Error::InvalidInput(format!("node {bad} has a different SH degree than the root")));
        }
        let n = h.len();

        let mut node_of_slot = Vec::with_capacity(n);
        let mut in_spt = vec![false; n];
        let mut dir = Vec::with_capacity(hspt.spts.len());
        for (id, s) in hspt.spts.iter().enumerate() {
            dir.push(SptDirEntry {
                spt_id: id as u32,
                root: s.root,
                center: s.root_center,
                radius: s.root_radius,
                record_offset: node_of_slot.len() as u64,
                record_count: s.records.len() as u64,
            });
            for r in &s.records {
                if std::mem::replace(&mut in_spt[r.node as usize], true) {
                    return Err(Error::InvalidInput(format!("node {} appears in two SPTs", r.node)));
                }
                node_of_slot.push(r.node);
            }
        }
        node_of_slot.extend((0..n as NodeId).filter(|&i| !in_spt[i as usize]));

        let mut bodies: Vec<(SectionKind, Vec<u8>)> = Vec::with_capacity(SECTION_ORDER.len());
        for kind in ATTRIBUTE_SECTIONS {
            let per = kind.floats_per_node(k).unwrap();
            let mut body = Vec::with_capacity(n * per * 4);
            for &node in &node_of_slot {
                let g = h.node(node);
                match kind {
                    SectionKind::Means => put_f32s(&mut body, &g.mean),
                    SectionKind::Scales => put_f32s(&mut body, &g.scale),
                    SectionKind::Rotations => put_f32s(&mut body, &g.rotation),
                    SectionKind::Opacities => put_f32s(&mut body, &[g.opacity]),
                    SectionKind::BaseColors => put_f32s(&mut body, &g.base_color),
                    _ => put_f32s(&mut body, &g.sh_rest),
                }
            }
            bodies.push((kind, body));
        }
        let mut body = Vec::new();
        put_u32s(&mut body, &node_of_slot);
        bodies.push((SectionKind::SlotNodes, body));
        let mut body = Vec::new();
        put_u32s(&mut body, h.parents_raw());
        bodies.push((SectionKind::Parents, body));
        let mut body = Vec::with_capacity(n * 8);
        for c in h.children_raw() {
            put_u32s(&mut body, &c.unwrap_or([NONE, NONE]));
        }
        bodies.push((SectionKind::Children, body));
        let mut free = h.free_slots().to_vec();
        free.sort_unstable();
        let mut body = Vec::new();
        put_u32s(&mut body, &free);
        bodies.push((SectionKind::FreeList, body));
        let mut body = Vec::with_capacity(dir.len() * SPT_DIR_ENTRY_BYTES);
        for d in &dir {
            put_u32s(&mut body, &[d.spt_id, d.root]);
            put_f32s(&mut body, &d.center);
            put_f32s(&mut body, &[d.radius]);
            body.extend_from_slice(&d.record_offset.to_le_bytes());
            body.extend_from_slice(&d.record_count.to_le_bytes());
        }
        bodies.push((SectionKind::SptDirectory, body));
        let mut body = Vec::with_capacity(hspt.spt_node_count() * RECORD_BYTES);
        for s in &hspt.spts {
            for r in &s.records {
                body.extend_from_slice(&r.to_bytes());
            }
        }
        bodies.push((SectionKind::SptRecords, body));
        let mut body = Vec::new();
        body.extend_from_slice(&hspt.size_threshold.to_le_bytes());
        body.extend_from_slice(&(hspt.min_subtree as u64).to_le_bytes());
        body.extend_from_slice(&hspt.lod.threshold.to_le_bytes());
        put_u32s(&mut body, &[hspt.lod.metric.to_u32(), 0]);
        for list in [&hspt.upper_nodes, &hspt.passthrough_roots, &hspt.skybox_leaves] {
            body.extend_from_slice(&(list.len() as u64).to_le_bytes());
        }
        for list in [&hspt.upper_nodes, &hspt.passthrough_roots, &hspt.skybox_leaves] {
            put_u32s(&mut body, list);
        }
        bodies.push((SectionKind::HsptMeta, body));

        let table_end = HEADER_BYTES + bodies.len() * SECTION_ENTRY_BYTES;
        let mut offset = align_up(table_end);
        let mut entries = Vec::with_capacity(bodies.len());
        for (kind, body) in &bodies {
            entries.push(SectionEntry {
                kind: *kind,
                offset: offset as u64,
                len: body.len() as u64,
            });
            offset = align_up(offset + body.len());
        }
        let header = Header {
            gaussian_count: h.leaf_count() as u64,
            node_count: n as u64,
            sh_degree,
            flags: FLAG_HSPT | if h.skybox_root().is_some() { FLAG_SKYBOX } else { 0 },
            root: h.root(),
            skybox_root: h.skybox_root().unwrap_or(NONE),
            section_count: bodies.len() as u32,
        };
        let mut out = Vec::with_capacity(offset);
        out.extend_from_slice(&header.encode());
        for e in &entries {
            e.encode(&mut out);
        }
        for (e, (_, body)) in entries.iter().zip(&bodies) {
            out.resize(e.offset as usize, 0);
            out.extend_from_slice(body);
        }
        out.resize(align_up(out.len()), 0);
        Ok(out)
    }

    /// Writes a scene file.
    pub fn write(path: impl AsRef<Path>, h: &Hierarchy, hspt: &Hspt) -> Result<()> {
        let path = path.as_ref();
        let bytes = Self::encode(h, hspt)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Writes a scene file and opens it.
    pub fn create(path: impl AsRef<Path>, h: &Hierarchy, hspt: &Hspt) -> Result<Self> {
        Self::write(path.as_ref(), h, hspt)?;
        Self::open(path)
    }

    /// Opens a scene file, reading all metadata; attributes stay on disk.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::options().read(true).write(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_backing(Backing::File { file, path })
    }

    /// Scene held entirely in memory.
    pub fn in_memory(h: &Hierarchy, hspt: &Hspt) -> Result<Self> {
        Self::from_bytes(Self::encode(h, hspt)?)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        Self::from_backing(Backing::Memory(RwLock::new(bytes)))
    }

    fn from_backing(backing: Backing) -> Result<Self> {
        let file_len = backing.len()?;
        let mut head = vec![0u8; HEADER_BYTES.min(file_len as usize)];
        backing.read_at(0, &mut head)?;
        let header = Header::decode(&head)?;
        let count = header.section_count as usize;
        if count != SECTION_ORDER.len() {
            return Err(Error::corrupt(40, format!("expected {} sections, found {count}", SECTION_ORDER.len())));
        }
        let table_len = count * SECTION_ENTRY_BYTES;
        if (HEADER_BYTES + table_len) as u64 > file_len {
            return Err(Error::corrupt(file_len, "truncated section table"));
        }
        let mut table = vec![0u8; table_len];
        backing.read_at(HEADER_BYTES as u64, &mut table)?;
        let n = header.node_count as usize;
        let k = sh_rest_len(header.sh_degree);
        let mut sections = Vec::with_capacity(count);
        for (i, want) in SECTION_ORDER.iter().enumerate() {
            let at = i * SECTION_ENTRY_BYTES;
            let e = SectionEntry::decode(&table, at)?;
            let entry_offset = (HEADER_BYTES + at) as u64;
            if e.kind != *want {
                return Err(Error::corrupt(
                    entry_offset,
                    format!("section {i} has kind {:?}, expected {want:?}", e.kind),
                ));
            }
            if e.offset % ALIGN as u64 != 0 {
                return Err(Error::corrupt(entry_offset, "section not 64-byte aligned"));
            }
            if e.offset.checked_add(e.len).is_none_or(|end| end > file_len) {
                return Err(Error::corrupt(e.offset, format!("{want:?} section extends past end of file")));
            }
            let expected = match want.floats_per_node(k) {
                Some(per) => Some((n * per * 4) as u64),
                None => match want {
                    SectionKind::SlotNodes | SectionKind::Parents => Some(n as u64 * 4),
                    SectionKind::Children => Some(n as u64 * 8),
                    _ => None,
                },
            };
            if expected.is_some_and(|x| x != e.len) {
                return Err(Error::corrupt(
                    entry_offset,
                    format!("{want:?} section length {} does not match node count {n}", e.len),
                ));
            }
            sections.push(e);
        }

        let read_section = |kind: SectionKind| -> Result<Vec<u8>> {
            let e = sections[kind as usize - 1];
            let mut buf = vec![0u8; e.len as usize];
            backing.read_at(e.offset, &mut buf)?;
            Ok(buf)
        };
        let check_ids = |ids: &[u32], kind: SectionKind, allow_none: bool| -> Result<()> {
            if let Some(i) = ids.iter().position(|&x| (x as usize >= n) && !(allow_none && x == NONE)) {
                let off = sections[kind as usize - 1].offset + 4 * i as u64;
                return Err(Error::corrupt(off, format!("node index {} out of range", ids[i])));
            }
            Ok(())
        };

        let node_of_slot = u32s_from(&read_section(SectionKind::SlotNodes)?);
        check_ids(&node_of_slot, SectionKind::SlotNodes, false)?;
        let parents = u32s_from(&read_section(SectionKind::Parents)?);
        check_ids(&parents, SectionKind::Parents, true)?;
        let raw_children = u32s_from(&read_section(SectionKind::Children)?);
        check_ids(&raw_children, SectionKind::Children, true)?;
        let children = raw_children
            .chunks_exact(2)
            .map(|c| if c[0] == NONE { None } else { Some([c[0], c[1]]) })
            .collect();
        let free = u32s_from(&read_section(SectionKind::FreeList)?);
        check_ids(&free, SectionKind::FreeList, false)?;

        let dir_bytes = read_section(SectionKind::SptDirectory)?;
        if dir_bytes.len() % SPT_DIR_ENTRY_BYTES != 0 {
            return Err(Error::corrupt(
                sections[SectionKind::SptDirectory as usize - 1].offset,
                "ragged SPT directory",
            ));
        }
        let rec_bytes = read_section(SectionKind::SptRecords)?;
        if rec_bytes.len() % RECORD_BYTES != 0 {
            return Err(Error::corrupt(
                sections[SectionKind::SptRecords as usize - 1].offset,
                "ragged SPT record array",
            ));
        }
        let records: Vec<SptRecord> = rec_bytes
            .chunks_exact(RECORD_BYTES)
            .map(|c| SptRecord::from_bytes(c.try_into().unwrap()))
            .collect();
        check_ids(&records.iter().map(|r| r.node).collect::<Vec<_>>(), SectionKind::SptRecords, false)?;
        let dir: Vec<SptDirEntry> = dir_bytes
            .chunks_exact(SPT_DIR_ENTRY_BYTES)
            .map(|c| SptDirEntry {
                spt_id: u32_at(c, 0),
                root: u32_at(c, 4),
                center: [f32_at(c, 8), f32_at(c, 12), f32_at(c, 16)],
                radius: f32_at(c, 20),
                record_offset: u64_at(c, 24),
                record_count: u64_at(c, 32),
            })
            .collect();
        for (i, d) in dir.iter().enumerate() {
            if d.record_offset + d.record_count > records.len() as u64 || d.spt_id != i as u32 {
                let off = sections[SectionKind::SptDirectory as usize - 1].offset + (i * SPT_DIR_ENTRY_BYTES) as u64;
                return Err(Error::corrupt(off, format!("SPT directory entry {i} is inconsistent")));
            }
        }

        let meta_bytes = read_section(SectionKind::HsptMeta)?;
        let meta_off = sections[SectionKind::HsptMeta as usize - 1].offset;
        if meta_bytes.len() < 56 {
            return Err(Error::corrupt(meta_off, "truncated HSPT metadata"));
        }
        let metric = LodMetric::from_u32(u32_at(&meta_bytes, 24)).ok_or_else(|| Error::corrupt(meta_off + 24, "unknown LoD metric"))?;
        let counts = [u64_at(&meta_bytes, 32), u64_at(&meta_bytes, 40), u64_at(&meta_bytes, 48)];
        if 56 + 4 * counts.iter().sum::<u64>() as usize != meta_bytes.len() {
            return Err(Error::corrupt(meta_off, "HSPT metadata list lengths disagree with section length"));
        }
        let ids = u32s_from(&meta_bytes[56..]);
        check_ids(&ids, SectionKind::HsptMeta, false)?;
        let (a, b) = (counts[0] as usize, counts[0] as usize + counts[1] as usize);
        let meta = HsptMeta {
            size_threshold: f64_at(&meta_bytes, 0),
            min_subtree: u64_at(&meta_bytes, 8),
            lod: LodConfig::new(f64_at(&meta_bytes, 16), metric),
            upper: ids[..a].to_vec(),
            passthrough: ids[a..b].to_vec(),
            skybox_leaves: ids[b..].to_vec(),
        };
        if header.root as usize >= n.max(1) {
            return Err(Error::corrupt(32, "root index out of range"));
        }

        Ok(Self {
            backing,
            header,
            sections,
            node_of_slot,
            parents,
            children,
            free,
            dir,
            records,
            meta,
            bytes_read: AtomicU64::new(0),
            bytes_written: AtomicU64::new(0),
            trace: Mutex::new(None),
        })
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn sh_degree(&self) -> u8 {
        self.header.sh_degree
    }

    pub fn node_count(&self) -> usize {
        self.header.node_count as usize
    }

    pub fn gaussian_count(&self) -> usize {
        self.header.gaussian_count as usize
    }

    pub fn spt_count(&self) -> usize {
        self.dir.len()
    }

    pub fn spt_directory(&self) -> &[SptDirEntry] {
        &self.dir
    }

    pub fn spt_records(&self, spt_id: u32) -> Result<&[SptRecord]> {
        let d = self.dir.get(spt_id as usize).ok_or(Error::SptNotFound(spt_id))?;
        Ok(&self.records[d.record_offset as usize..(d.record_offset + d.record_count) as usize])
    }

    /// Attribute bytes read since creation or the last reset.
    pub fn bytes_read(&self) -> u64 {
        self.bytes_read.load(Ordering::Relaxed)
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.bytes_read.store(0, Ordering::Relaxed);
        self.bytes_written.store(0, Ordering::Relaxed);
    }

    /// Starts recording `(offset, len)` of every attribute read.
    pub fn start_trace(&self) {
        *self.trace.lock().unwrap() = Some(Vec::new());
    }

    pub fn take_trace(&self) -> Vec<(u64, u64)> {
        self.trace.lock().unwrap().take().unwrap_or_default()
    }

    fn section(&self, kind: SectionKind) -> SectionEntry {
        self.sections[kind as usize - 1]
    }

    /// Reads `count` slots of an attribute section starting at `first`.
    fn read_slots(&self, kind: SectionKind, first: usize, count: usize) -> Result<Vec<f32>> {
        let per = kind.floats_per_node(sh_rest_len(self.header.sh_degree)).unwrap();
        let len = count * per * 4;
        if len == 0 {
            return Ok(Vec::new());
        }
        let offset = self.section(kind).offset + (first * per * 4) as u64;
        let mut buf = vec![0u8; len];
        self.backing.read_at(offset, &mut buf)?;
        self.bytes_read.fetch_add(len as u64, Ordering::Relaxed);
        if let Some(t) = self.trace.lock().unwrap().as_mut() {
            t.push((offset, len as u64));
        }
        Ok(f32s_from(&buf))
    }

    fn write_slots(&self, kind: SectionKind, first: usize, data: &[f32]) -> Result<()> {
        if data.is_empty() {
            return Ok(());
        }
        let per = kind.floats_per_node(sh_rest_len(self.header.sh_degree)).unwrap();
        let offset = self.section(kind).offset + (first * per * 4) as u64;
        let mut buf = Vec::with_capacity(data.len() * 4);
        put_f32s(&mut buf, data);
        self.backing.write_at(offset, &buf)?;
        self.bytes_written.fetch_add(buf.len() as u64, Ordering::Relaxed);
        Ok(())
    }

    fn read_block(&self, spt_id: u32, first: usize, count: usize, nodes: Vec<NodeId>) -> Result<AttributeBlock> {
        let means = self.read_slots(SectionKind::Means, first, count)?;
        let scales = self.read_slots(SectionKind::Scales, first, count)?;
        let rotations = self.read_slots(SectionKind::Rotations, first, count)?;
        let opacities = self.read_slots(SectionKind::Opacities, first, count)?;
        let base_colors = self.read_slots(SectionKind::BaseColors, first, count)?;
        let sh_rest = self.read_slots(SectionKind::ShRest, first, count)?;
        Ok(AttributeBlock {
            spt_id,
            sh_degree: self.header.sh_degree,
            nodes,
            means: means.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            scales: scales.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            rotations: rotations.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
            opacities,
            base_colors: base_colors.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            sh_rest,
        })
    }

    /// Attributes of the first `prefix_len` records of an SPT.
    pub fn load_spt_prefix(&self, spt_id: u32, prefix_len: usize) -> Result<AttributeBlock> {
        let d = *self.dir.get(spt_id as usize).ok_or(Error::SptNotFound(spt_id))?;
        if prefix_len as u64 > d.record_count {
            return Err(Error::InvalidParameter(format!(
                "prefix {prefix_len} exceeds the {} records of SPT {spt_id}",
                d.record_count
            )));
        }
        let first = d.record_offset as usize;
        let nodes = self.node_of_slot[first..first + prefix_len].to_vec();
        self.read_block(spt_id, first, prefix_len, nodes)
    }

    /// Stores a block back at its SPT prefix.
    pub fn write_back(&self, block: &AttributeBlock) -> Result<()> {
        let d = *self.dir.get(block.spt_id as usize).ok_or(Error::SptNotFound(block.spt_id))?;
        block.check_shape()?;
        if block.sh_degree != self.header.sh_degree {
            return Err(Error::InvalidBlock(format!(
                "block SH degree {} differs from scene degree {}",
                block.sh_degree, self.header.sh_degree
            )));
        }
        if block.len() as u64 > d.record_count {
            return Err(Error::InvalidBlock(format!(
                "block of {} exceeds the {} records of SPT {}",
                block.len(),
                d.record_count,
                block.spt_id
            )));
        }
        let first = d.record_offset as usize;
        if block.nodes[..] != self.node_of_slot[first..first + block.len()] {
            return Err(Error::InvalidBlock(format!("block nodes do not match SPT {} record order", block.spt_id)));
        }
        self.write_slots(SectionKind::Means, first, block.means.as_flattened())?;
        self.write_slots(SectionKind::Scales, first, block.scales.as_flattened())?;
        self.write_slots(SectionKind::Rotations, first, block.rotations.as_flattened())?;
        self.write_slots(SectionKind::Opacities, first, &block.opacities)?;
        self.write_slots(SectionKind::BaseColors, first, block.base_colors.as_flattened())?;
        self.write_slots(SectionKind::ShRest, first, &block.sh_rest)?;
        Ok(())
    }

    /// Reads every node and reassembles the hierarchy.
    pub fn read_hierarchy(&self) -> Result<Hierarchy> {
        let n = self.node_count();
        let all = self.read_block(u32::MAX, 0, n, self.node_of_slot.clone())?;
        let mut nodes = vec![GaussianAttributes::default(); n];
        for (slot, &node) in self.node_of_slot.iter().enumerate() {
            nodes[node as usize] = all.gaussian(slot);
        }
        let sky = match self.header.skybox_root {
            NONE => None,
            s => Some(s),
        };
        Hierarchy::from_parts(
            nodes,
            self.parents.clone(),
            self.children.clone(),
            self.header.root,
            self.free.clone(),
            sky,
        )
    }

    /// Reassembles the HSPT stored with the scene.
    pub fn read_hspt(&self, h: &Hierarchy) -> Result<Hspt> {
        let spts = self
            .dir
            .iter()
            .map(|d| Spt {
                root: d.root,
                root_center: d.center,
                root_radius: d.radius,
                records: self.records[d.record_offset as usize..(d.record_offset + d.record_count) as usize].to_vec(),
            })
            .collect();
        Hspt::from_parts(
            h,
            self.meta.upper.clone(),
            spts,
            self.meta.passthrough.clone(),
            self.meta.skybox_leaves.clone(),
            self.meta.size_threshold,
            self.meta.min_subtree as usize,
            self.meta.lod,
        )
    }

    /// Full scene image as stored.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; self.backing.len()? as usize];
        self.backing.read_at(0, &mut buf)?;
        Ok(buf)
    }

    pub fn memory_report(&self) -> MemoryReport {
        MemoryReport::for_layout(
            self.header.sh_degree,
            self.header.gaussian_count,
            self.header.node_count - self.free.len() as u64,
            self.records.len() as u64,
        )
    }
}
