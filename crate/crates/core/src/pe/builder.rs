//! Writes small but well-formed PE images.
//!
//! Used for test fixtures and synthetic corpora. The layout is fixed: DOS
//! stub header, PE signature, COFF and optional headers, section table,
//! then user sections followed by an `.edata` section (when exports are
//! given) and an `.idata` section (when imports are given).

use super::parse::{PE32_MAGIC, PE32_PLUS_MAGIC};

const FILE_ALIGN: u32 = 0x200;
const SECTION_ALIGN: u32 = 0x1000;

pub const SCN_CODE: u32 = 0x0000_0020;
pub const SCN_INITIALIZED_DATA: u32 = 0x0000_0040;
pub const SCN_EXECUTE: u32 = 0x2000_0000;
pub const SCN_READ: u32 = 0x4000_0000;
pub const SCN_WRITE: u32 = 0x8000_0000;

fn align_up(v: u32, a: u32) -> u32 {
    v.div_ceil(a) * a
}

#[derive(Debug, Clone)]
struct SectionSpec {
    name: String,
    data: Vec<u8>,
    characteristics: u32,
}

#[derive(Debug, Clone)]
pub struct PeBuilder {
    wide: bool,
    machine: u16,
    timestamp: u32,
    subsystem: u16,
    dll_characteristics: u16,
    characteristics: Option<u16>,
    sections: Vec<SectionSpec>,
    imports: Vec<(String, Vec<String>)>,
    exports: Vec<String>,
    entry: Option<(usize, u32)>,
    extra_dirs: Vec<(usize, u32, u32)>,
    overlay: Vec<u8>,
}

impl PeBuilder {
    /// A 64-bit (PE32+) AMD64 console image.
    pub fn new_64() -> Self {
        PeBuilder {
            wide: true,
            machine: 0x8664,
            timestamp: 0x5a4b_3c2d,
            subsystem: 3,
            dll_characteristics: 0x8160,
            characteristics: None,
            sections: Vec::new(),
            imports: Vec::new(),
            exports: Vec::new(),
            entry: None,
            extra_dirs: Vec::new(),
            overlay: Vec::new(),
        }
    }

    /// A 32-bit (PE32) I386 GUI image.
    pub fn new_32() -> Self {
        PeBuilder {
            wide: false,
            machine: 0x14c,
            subsystem: 2,
            dll_characteristics: 0x0140,
            ..PeBuilder::new_64()
        }
    }

    pub fn timestamp(mut self, ts: u32) -> Self {
        self.timestamp = ts;
        self
    }

    pub fn subsystem(mut self, s: u16) -> Self {
        self.subsystem = s;
        self
    }

    pub fn characteristics(mut self, c: u16) -> Self {
        self.characteristics = Some(c);
        self
    }

    pub fn section(mut self, name: &str, data: Vec<u8>, characteristics: u32) -> Self {
        self.sections.push(SectionSpec {
            name: name.to_string(),
            data,
            characteristics,
        });
        self
    }

    pub fn import(mut self, dll: &str, apis: &[&str]) -> Self {
        self.imports
            .push((dll.to_string(), apis.iter().map(|s| s.to_string()).collect()));
        self
    }

    pub fn export(mut self, name: &str) -> Self {
        self.exports.push(name.to_string());
        self
    }

    /// Entry point at `offset` bytes into user section `index`.
    pub fn entry(mut self, index: usize, offset: u32) -> Self {
        self.entry = Some((index, offset));
        self
    }

    /// Sets a raw data-directory entry (e.g. 6 for debug, 9 for TLS).
    pub fn data_directory(mut self, index: usize, virtual_address: u32, size: u32) -> Self {
        self.extra_dirs.push((index, virtual_address, size));
        self
    }

    /// Bytes appended after the last section.
    pub fn overlay(mut self, bytes: &[u8]) -> Self {
        self.overlay.extend_from_slice(bytes);
        self
    }

    pub fn build(&self) -> Vec<u8> {
        let opt_size: u32 = if self.wide { 240 } else { 224 };
        let user = self.sections.len();
        let has_exports = !self.exports.is_empty();
        let has_imports = !self.imports.is_empty();
        let n_sections = user + has_exports as usize + has_imports as usize;
        let headers_len = 0x40 + 4 + 20 + opt_size + 40 * n_sections as u32;
        let headers_size = align_up(headers_len, FILE_ALIGN);

        let mut specs = self.sections.clone();
        let mut vas = Vec::with_capacity(n_sections);
        let mut va = SECTION_ALIGN;
        for s in &specs {
            vas.push(va);
            va = align_up(va + (s.data.len() as u32).max(1), SECTION_ALIGN);
        }
        let code_rva = vas.first().copied().unwrap_or(SECTION_ALIGN);
        let mut export_dir = (0, 0);
        if has_exports {
            let data = self.export_section(va, code_rva);
            export_dir = (va, data.len() as u32);
            vas.push(va);
            va = align_up(va + data.len() as u32, SECTION_ALIGN);
            specs.push(SectionSpec {
                name: ".edata".into(),
                data,
                characteristics: SCN_INITIALIZED_DATA | SCN_READ,
            });
        }
        let mut import_dir = (0, 0);
        if has_imports {
            let data = self.import_section(va);
            import_dir = (va, 20 * (self.imports.len() as u32 + 1));
            vas.push(va);
            va = align_up(va + data.len() as u32, SECTION_ALIGN);
            specs.push(SectionSpec {
                name: ".idata".into(),
                data,
                characteristics: SCN_INITIALIZED_DATA | SCN_READ | SCN_WRITE,
            });
        }
        let size_of_image = va;

        let mut raw_ptrs = Vec::with_capacity(n_sections);
        let mut ptr = headers_size;
        for s in &specs {
            let raw = align_up(s.data.len() as u32, FILE_ALIGN);
            raw_ptrs.push(if raw == 0 { 0 } else { ptr });
            ptr += raw;
        }

        let mut out = vec![0u8; headers_size as usize];
        out[0..2].copy_from_slice(b"MZ");
        out[0x3c..0x40].copy_from_slice(&0x40u32.to_le_bytes());
        out[0x40..0x44].copy_from_slice(b"PE\0\0");

        let characteristics = self
            .characteristics
            .unwrap_or(if self.wide { 0x0022 } else { 0x0102 });
        let coff = 0x44;
        put16(&mut out, coff, self.machine);
        put16(&mut out, coff + 2, n_sections as u16);
        put32(&mut out, coff + 4, self.timestamp);
        put16(&mut out, coff + 16, opt_size as u16);
        put16(&mut out, coff + 18, characteristics);

        let entry_rva = self
            .entry
            .map(|(i, off)| vas[i] + off)
            .unwrap_or(0);
        let code_size: u32 = specs
            .iter()
            .filter(|s| s.characteristics & SCN_CODE != 0)
            .map(|s| align_up(s.data.len() as u32, FILE_ALIGN))
            .sum();
        let o = coff + 20;
        put16(&mut out, o, if self.wide { PE32_PLUS_MAGIC } else { PE32_MAGIC });
        out[o + 2] = 14;
        out[o + 3] = 20;
        put32(&mut out, o + 4, code_size);
        put32(&mut out, o + 16, entry_rva);
        put32(&mut out, o + 20, code_rva);
        if self.wide {
            put64(&mut out, o + 24, 0x1_4000_0000);
        } else {
            put32(&mut out, o + 28, 0x40_0000);
        }
        put32(&mut out, o + 32, SECTION_ALIGN);
        put32(&mut out, o + 36, FILE_ALIGN);
        put16(&mut out, o + 40, 6);
        put16(&mut out, o + 44, 1);
        put16(&mut out, o + 46, 2);
        put16(&mut out, o + 48, 6);
        put32(&mut out, o + 56, size_of_image);
        put32(&mut out, o + 60, headers_size);
        put16(&mut out, o + 68, self.subsystem);
        put16(&mut out, o + 70, self.dll_characteristics);
        let dirs_off = if self.wide {
            put64(&mut out, o + 72, 0x10_0000);
            put64(&mut out, o + 80, 0x1000);
            put64(&mut out, o + 88, 0x10_0000);
            put64(&mut out, o + 96, 0x1000);
            put32(&mut out, o + 108, 16);
            o + 112
        } else {
            put32(&mut out, o + 72, 0x10_0000);
            put32(&mut out, o + 76, 0x1000);
            put32(&mut out, o + 80, 0x10_0000);
            put32(&mut out, o + 84, 0x1000);
            put32(&mut out, o + 92, 16);
            o + 96
        };
        let mut dirs = [(0u32, 0u32); 16];
        dirs[0] = export_dir;
        dirs[1] = import_dir;
        for &(i, dva, size) in &self.extra_dirs {
            dirs[i] = (dva, size);
        }
        for (i, (dva, size)) in dirs.iter().enumerate() {
            put32(&mut out, dirs_off + 8 * i, *dva);
            put32(&mut out, dirs_off + 8 * i + 4, *size);
        }

        let table = o + opt_size as usize;
        for (i, s) in specs.iter().enumerate() {
            let at = table + 40 * i;
            let name = s.name.as_bytes();
            let n = name.len().min(8);
            out[at..at + n].copy_from_slice(&name[..n]);
            put32(&mut out, at + 8, s.data.len() as u32);
            put32(&mut out, at + 12, vas[i]);
            put32(&mut out, at + 16, align_up(s.data.len() as u32, FILE_ALIGN));
            put32(&mut out, at + 20, raw_ptrs[i]);
            put32(&mut out, at + 36, s.characteristics);
        }

        for s in &specs {
            let start = out.len();
            out.extend_from_slice(&s.data);
            out.resize(start + align_up(s.data.len() as u32, FILE_ALIGN) as usize, 0);
        }
        out.extend_from_slice(&self.overlay);
        out
    }

    fn import_section(&self, base: u32) -> Vec<u8> {
        let thunk = if self.wide { 8 } else { 4 };
        let n = self.imports.len();
        let desc_len = 20 * (n + 1);
        // Layout: descriptors | per dll: lookup table, address table | hint/names | dll names
        let mut cursor = desc_len;
        let mut tables = Vec::with_capacity(n);
        for (_, apis) in &self.imports {
            let len = thunk * (apis.len() + 1);
            tables.push((cursor, cursor + len));
            cursor += 2 * len;
        }
        let mut hint_names = Vec::with_capacity(n);
        for (_, apis) in &self.imports {
            let mut offs = Vec::with_capacity(apis.len());
            for api in apis {
                offs.push(cursor);
                cursor += 2 + api.len() + 1;
                cursor += cursor % 2;
            }
            hint_names.push(offs);
        }
        let mut dll_names = Vec::with_capacity(n);
        for (dll, _) in &self.imports {
            dll_names.push(cursor);
            cursor += dll.len() + 1;
        }

        let mut data = vec![0u8; cursor];
        for (i, (dll, apis)) in self.imports.iter().enumerate() {
            let d = 20 * i;
            let (ilt, iat) = tables[i];
            put32(&mut data, d, base + ilt as u32);
            put32(&mut data, d + 12, base + dll_names[i] as u32);
            put32(&mut data, d + 16, base + iat as u32);
            for (j, &hn) in hint_names[i].iter().enumerate() {
                let rva = base + hn as u32;
                for table in [ilt, iat] {
                    if self.wide {
                        put64(&mut data, table + 8 * j, rva as u64);
                    } else {
                        put32(&mut data, table + 4 * j, rva);
                    }
                }
                let name = apis[j].as_bytes();
                data[hn + 2..hn + 2 + name.len()].copy_from_slice(name);
            }
            let at = dll_names[i];
            data[at..at + dll.len()].copy_from_slice(dll.as_bytes());
        }
        data
    }

    fn export_section(&self, base: u32, code_rva: u32) -> Vec<u8> {
        let n = self.exports.len();
        let module = b"fixture.dll";
        let funcs = 40;
        let names = funcs + 4 * n;
        let ordinals = names + 4 * n;
        let module_at = ordinals + 2 * n;
        let mut cursor = module_at + module.len() + 1;
        let mut name_offs = Vec::with_capacity(n);
        for e in &self.exports {
            name_offs.push(cursor);
            cursor += e.len() + 1;
        }
        let mut data = vec![0u8; cursor];
        put32(&mut data, 12, base + module_at as u32);
        put32(&mut data, 16, 1);
        put32(&mut data, 20, n as u32);
        put32(&mut data, 24, n as u32);
        put32(&mut data, 28, base + funcs as u32);
        put32(&mut data, 32, base + names as u32);
        put32(&mut data, 36, base + ordinals as u32);
        data[module_at..module_at + module.len()].copy_from_slice(module);
        for (i, e) in self.exports.iter().enumerate() {
            put32(&mut data, funcs + 4 * i, code_rva);
            put32(&mut data, names + 4 * i, base + name_offs[i] as u32);
            put16(&mut data, ordinals + 2 * i, i as u16);
            data[name_offs[i]..name_offs[i] + e.len()].copy_from_slice(e.as_bytes());
        }
        data
    }
}

fn put16(b: &mut [u8], off: usize, v: u16) {
    b[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn put32(b: &mut [u8], off: usize, v: u32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn put64(b: &mut [u8], off: usize, v: u64) {
    b[off..off + 8].copy_from_slice(&v.to_le_bytes());
}
