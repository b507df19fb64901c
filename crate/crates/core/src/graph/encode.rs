//! Node attribute vectors.
//!
//! Every node gets a 256-wide base vector followed by an 11-wide node-type
//! one-hot. Base layouts (unused tail entries are zero):
//!
//! | node        | layout |
//! |-------------|--------|
//! | General     | ln(1+size), ln(1+vsize), has_debug, ln(1+#exports), ln(1+#imports), has_relocations, has_resources, has_signature, has_tls, ln(1+#symbols) |
//! | Header      | timestamp/2^32, ln(1+x) of 8 version fields, sizeof_code, sizeof_headers, heap commit; then 64 hashed categoricals (machine, magic, subsystem, flags) |
//! | Imports     | ln(1+#dlls), ln(1+#apis); 64 hashed dll names; 128 hashed api names |
//! | Exports     | ln(1+#exports); 128 hashed export names |
//! | Section     | ln(1+#sections), mean/max/min entropy/8, ln(1+total size), ln(1+total vsize), empty-raw fraction, write+exec fraction; 64 hashed names; 64 hashed props; 64 hashed entry name |
//! | ByteHist    | l1-normalized counts |
//! | ByteEntropy | l1-normalized counts |
//! | Strings     | ln(1+x) of count, avg length, printables; entropy/8; ln(1+x) of paths, urls, registry, MZ; l1-normalized 96-bin char histogram |
//! | DataDirs    | 15 x (ln(1+size), ln(1+rva)) |
//! | dll child   | ln(1+#apis); 64 hashed dll name; 128 hashed api names |
//! | section child | ln(1+size), ln(1+vsize), entropy/8, is_entry, ln(1+vsize)-ln(1+size); 64 hashed name; 64 hashed props |
//!
//! Hashed blocks use signed feature hashing with 64-bit FNV-1a: bucket is
//! `h mod B`, sign is the top bit of `h`. Blocks that aggregate over many
//! items are compressed with `sign(v) * ln(1 + |v|)`.

use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::ingest::{
    DataDirectory, GeneralFeatures, HeaderFeatures, ImportTable, SectionEntry, SectionFeatures,
    StringFeatures,
};

use super::skeleton::Major;

pub const BASE_WIDTH: usize = 256;
pub const NODE_TYPE_COUNT: usize = 11;
pub const NODE_WIDTH: usize = BASE_WIDTH + NODE_TYPE_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeType {
    Major(Major),
    Dll,
    SectionChild,
}

impl NodeType {
    pub fn index(self) -> usize {
        match self {
            NodeType::Major(m) => m.index(),
            NodeType::Dll => 9,
            NodeType::SectionChild => 10,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0..=8 => Some(NodeType::Major(Major::ALL[i])),
            9 => Some(NodeType::Dll),
            10 => Some(NodeType::SectionChild),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeEncoderConfig {
    pub api_buckets: usize,
    pub export_buckets: usize,
    pub dll_buckets: usize,
    pub section_buckets: usize,
    pub header_buckets: usize,
}

impl Default for NodeEncoderConfig {
    fn default() -> Self {
        NodeEncoderConfig {
            api_buckets: 128,
            export_buckets: 128,
            dll_buckets: 64,
            section_buckets: 64,
            header_buckets: 64,
        }
    }
}

impl NodeEncoderConfig {
    /// Widest layout must fit the base width.
    pub fn validate(&self) -> crate::Result<()> {
        let widths = [
            12 + self.header_buckets,
            2 + self.dll_buckets + self.api_buckets,
            1 + self.export_buckets,
            8 + 3 * self.section_buckets,
            5 + 2 * self.section_buckets,
        ];
        let zero = [
            self.api_buckets,
            self.export_buckets,
            self.dll_buckets,
            self.section_buckets,
            self.header_buckets,
        ]
        .contains(&0);
        if zero || widths.iter().any(|&w| w > BASE_WIDTH) {
            return Err(crate::Error::Config(format!(
                "encoder buckets {self:?} overflow the {BASE_WIDTH}-wide node vector"
            )));
        }
        Ok(())
    }
}

/// One node's worth of record data.
#[derive(Debug, Clone, Copy)]
pub enum FeatureGroup<'a> {
    General(&'a GeneralFeatures),
    Header(&'a HeaderFeatures),
    Imports(&'a ImportTable),
    Exports(&'a [String]),
    Section(&'a SectionFeatures),
    ByteHistogram(&'a [u64]),
    ByteEntropy(&'a [u64]),
    Strings(&'a StringFeatures),
    DataDirectories(&'a [DataDirectory]),
    Dll { name: &'a str, apis: &'a [String] },
    SectionChild { section: &'a SectionEntry, is_entry: bool },
}

impl FeatureGroup<'_> {
    pub fn node_type(&self) -> NodeType {
        match self {
            FeatureGroup::General(_) => NodeType::Major(Major::General),
            FeatureGroup::Header(_) => NodeType::Major(Major::Header),
            FeatureGroup::Imports(_) => NodeType::Major(Major::Imports),
            FeatureGroup::Exports(_) => NodeType::Major(Major::Exports),
            FeatureGroup::Section(_) => NodeType::Major(Major::Section),
            FeatureGroup::ByteHistogram(_) => NodeType::Major(Major::ByteHistogram),
            FeatureGroup::ByteEntropy(_) => NodeType::Major(Major::ByteEntropy),
            FeatureGroup::Strings(_) => NodeType::Major(Major::Strings),
            FeatureGroup::DataDirectories(_) => NodeType::Major(Major::DataDirectories),
            FeatureGroup::Dll { .. } => NodeType::Dll,
            FeatureGroup::SectionChild { .. } => NodeType::SectionChild,
        }
    }
}

/// Strips anything but printable, non-space ASCII.
pub fn clean_name(name: &str) -> String {
    name.chars().filter(|c| c.is_ascii_graphic()).collect()
}

/// Bucket and sign of `name` in a block of `buckets` entries.
pub fn hash_bucket(name: &str, buckets: usize) -> (usize, f64) {
    let mut h = FnvHasher::default();
    h.write(name.as_bytes());
    let v = h.finish();
    let sign = if v >> 63 == 1 { -1.0 } else { 1.0 };
    ((v % buckets as u64) as usize, sign)
}

fn hash_into<'a>(block: &mut [f64], names: impl IntoIterator<Item = &'a str>) {
    let n = block.len();
    for name in names {
        let (b, s) = hash_bucket(&clean_name(name), n);
        block[b] += s;
    }
}

fn hash_owned(block: &mut [f64], names: impl IntoIterator<Item = String>) {
    let n = block.len();
    for name in names {
        let (b, s) = hash_bucket(&clean_name(&name), n);
        block[b] += s;
    }
}

fn compress(block: &mut [f64]) {
    for v in block {
        *v = v.signum() * v.abs().ln_1p();
    }
}

/// Divisor applied after `ln(1 + x)` so that sizes up to a few megabytes
/// land near `[0, 1]`, the range of the normalized and hashed fields.
pub const LOG_SCALE: f64 = 16.0;

fn ln1p(v: u64) -> f64 {
    (v as f64).ln_1p() / LOG_SCALE
}

fn l1_normalized(counts: &[u64], out: &mut [f64]) {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return;
    }
    for (o, &c) in out.iter_mut().zip(counts) {
        *o = c as f64 / total as f64;
    }
}

fn finite(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// The 256-wide base vector of a node, without the type one-hot.
pub fn encode_base(group: &FeatureGroup<'_>, cfg: &NodeEncoderConfig) -> Vec<f64> {
    let mut v = vec![0.0; BASE_WIDTH];
    match *group {
        FeatureGroup::General(g) => {
            let vals = [
                ln1p(g.size),
                ln1p(g.vsize),
                g.has_debug as f64,
                ln1p(g.exports),
                ln1p(g.imports),
                g.has_relocations as f64,
                g.has_resources as f64,
                g.has_signature as f64,
                g.has_tls as f64,
                ln1p(g.symbols),
            ];
            v[..vals.len()].copy_from_slice(&vals);
        }
        FeatureGroup::Header(h) => {
            let o = &h.optional;
            v[0] = (h.coff.timestamp as f64 / 4_294_967_296.0).min(1.0);
            let nums = [
                o.major_image_version,
                o.minor_image_version,
                o.major_linker_version,
                o.minor_linker_version,
                o.major_operating_system_version,
                o.minor_operating_system_version,
                o.major_subsystem_version,
                o.minor_subsystem_version,
                o.sizeof_code,
                o.sizeof_headers,
                o.sizeof_heap_commit,
            ];
            for (i, &n) in nums.iter().enumerate() {
                v[1 + i] = ln1p(n);
            }
            let cats = [
                format!("machine={}", h.coff.machine),
                format!("magic={}", o.magic),
                format!("subsystem={}", o.subsystem),
            ]
            .into_iter()
            .chain(h.coff.characteristics.iter().map(|c| format!("coff={c}")))
            .chain(o.dll_characteristics.iter().map(|c| format!("dll={c}")));
            hash_owned(&mut v[12..12 + cfg.header_buckets], cats);
        }
        FeatureGroup::Imports(imports) => {
            let apis: usize = imports.values().map(Vec::len).sum();
            v[0] = ln1p(imports.len() as u64);
            v[1] = ln1p(apis as u64);
            let dll_end = 2 + cfg.dll_buckets;
            hash_owned(&mut v[2..dll_end], imports.keys().map(|d| d.to_ascii_lowercase()));
            hash_into(
                &mut v[dll_end..dll_end + cfg.api_buckets],
                imports.values().flatten().map(String::as_str),
            );
            compress(&mut v[2..dll_end + cfg.api_buckets]);
        }
        FeatureGroup::Exports(exports) => {
            v[0] = ln1p(exports.len() as u64);
            hash_into(&mut v[1..1 + cfg.export_buckets], exports.iter().map(String::as_str));
            compress(&mut v[1..1 + cfg.export_buckets]);
        }
        FeatureGroup::Section(s) => {
            let n = s.sections.len();
            v[0] = ln1p(n as u64);
            if n > 0 {
                let ent: Vec<f64> = s.sections.iter().map(|e| finite(e.entropy) / 8.0).collect();
                v[1] = ent.iter().sum::<f64>() / n as f64;
                v[2] = ent.iter().cloned().fold(f64::MIN, f64::max);
                v[3] = ent.iter().cloned().fold(f64::MAX, f64::min);
                v[4] = ln1p(s.sections.iter().map(|e| e.size).sum());
                v[5] = ln1p(s.sections.iter().map(|e| e.vsize).sum());
                v[6] = s.sections.iter().filter(|e| e.size == 0).count() as f64 / n as f64;
                let wx = s
                    .sections
                    .iter()
                    .filter(|e| {
                        e.props.iter().any(|p| p == "MEM_WRITE")
                            && e.props.iter().any(|p| p == "MEM_EXECUTE")
                    })
                    .count();
                v[7] = wx as f64 / n as f64;
            }
            let b = cfg.section_buckets;
            hash_into(&mut v[8..8 + b], s.sections.iter().map(|e| e.name.as_str()));
            hash_into(
                &mut v[8 + b..8 + 2 * b],
                s.sections.iter().flat_map(|e| e.props.iter().map(String::as_str)),
            );
            compress(&mut v[8..8 + 2 * b]);
            if !s.entry.is_empty() {
                hash_into(&mut v[8 + 2 * b..8 + 3 * b], [s.entry.as_str()]);
            }
        }
        FeatureGroup::ByteHistogram(h) | FeatureGroup::ByteEntropy(h) => {
            l1_normalized(h, &mut v);
        }
        FeatureGroup::Strings(s) => {
            let vals = [
                ln1p(s.numstrings),
                finite(s.avlength).max(0.0).ln_1p() / LOG_SCALE,
                ln1p(s.printables),
                finite(s.entropy) / 8.0,
                ln1p(s.paths),
                ln1p(s.urls),
                ln1p(s.registry),
                ln1p(s.mz),
            ];
            v[..8].copy_from_slice(&vals);
            l1_normalized(&s.printabledist, &mut v[8..8 + s.printabledist.len().min(96)]);
        }
        FeatureGroup::DataDirectories(dirs) => {
            for (i, d) in dirs.iter().take(15).enumerate() {
                v[2 * i] = ln1p(d.size);
                v[2 * i + 1] = ln1p(d.virtual_address);
            }
        }
        FeatureGroup::Dll { name, apis } => {
            v[0] = ln1p(apis.len() as u64);
            let dll_end = 1 + cfg.dll_buckets;
            hash_owned(&mut v[1..dll_end], [name.to_ascii_lowercase()]);
            hash_into(
                &mut v[dll_end..dll_end + cfg.api_buckets],
                apis.iter().map(String::as_str),
            );
        }
        FeatureGroup::SectionChild { section, is_entry } => {
            v[0] = ln1p(section.size);
            v[1] = ln1p(section.vsize);
            v[2] = finite(section.entropy) / 8.0;
            v[3] = is_entry as u8 as f64;
            v[4] = ln1p(section.vsize) - ln1p(section.size);
            let b = cfg.section_buckets;
            hash_into(&mut v[5..5 + b], [section.name.as_str()]);
            hash_into(&mut v[5 + b..5 + 2 * b], section.props.iter().map(String::as_str));
        }
    }
    for x in &mut v {
        *x = finite(*x);
    }
    v
}

/// Base vector plus node-type one-hot, `NODE_WIDTH` entries.
pub fn encode_node(group: &FeatureGroup<'_>, cfg: &NodeEncoderConfig) -> Vec<f64> {
    let mut v = encode_base(group, cfg);
    let mut onehot = [0.0; NODE_TYPE_COUNT];
    onehot[group.node_type().index()] = 1.0;
    v.extend_from_slice(&onehot);
    v
}

/// Offset of the api-name block inside a dll child's base vector.
pub fn dll_api_block(cfg: &NodeEncoderConfig) -> std::ops::Range<usize> {
    let start = 1 + cfg.dll_buckets;
    start..start + cfg.api_buckets
}
