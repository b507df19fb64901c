//! A tolerant PE/COFF reader.
//!
//! Only the `MZ` magic and the `PE\0\0` signature are mandatory. Every
//! later structure is read on a best-effort basis: if a table points
//! outside the file or is cut short, that table comes back empty and the
//! rest of the image is still reported.

use crate::error::{Error, Result};
use crate::ingest::{ImportTable, DATA_DIRECTORY_COUNT};

use super::bytes::shannon_entropy;

const MAX_DLLS: usize = 4096;
const MAX_THUNKS: usize = 1 << 16;
const MAX_EXPORTS: usize = 1 << 16;
const MAX_NAME: usize = 512;

pub const PE32_MAGIC: u16 = 0x10b;
pub const PE32_PLUS_MAGIC: u16 = 0x20b;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoffInfo {
    pub machine: u16,
    pub number_of_sections: u16,
    pub timestamp: u32,
    pub number_of_symbols: u32,
    pub characteristics: u16,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OptionalInfo {
    pub magic: u16,
    pub major_linker_version: u8,
    pub minor_linker_version: u8,
    pub sizeof_code: u32,
    pub entry_point: u32,
    pub major_operating_system_version: u16,
    pub minor_operating_system_version: u16,
    pub major_image_version: u16,
    pub minor_image_version: u16,
    pub major_subsystem_version: u16,
    pub minor_subsystem_version: u16,
    pub size_of_image: u32,
    pub sizeof_headers: u32,
    pub subsystem: u16,
    pub dll_characteristics: u16,
    pub sizeof_heap_commit: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionInfo {
    pub name: String,
    pub virtual_size: u32,
    pub virtual_address: u32,
    pub raw_size: u32,
    pub raw_pointer: u32,
    pub characteristics: u32,
    /// Entropy of the section's raw bytes as present in the file.
    pub entropy: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DataDirectoryEntry {
    pub virtual_address: u32,
    pub size: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPe {
    pub coff: CoffInfo,
    pub optional: Option<OptionalInfo>,
    pub sections: Vec<SectionInfo>,
    pub imports: ImportTable,
    pub exports: Vec<String>,
    pub data_directories: [DataDirectoryEntry; DATA_DIRECTORY_COUNT],
    pub entry_section: String,
}

impl ParsedPe {
    pub fn is_64bit(&self) -> bool {
        self.optional.as_ref().map(|o| o.magic) == Some(PE32_PLUS_MAGIC)
    }
}

fn u16_at(b: &[u8], off: usize) -> Option<u16> {
    b.get(off..off.checked_add(2)?).map(|s| u16::from_le_bytes([s[0], s[1]]))
}

fn u32_at(b: &[u8], off: usize) -> Option<u32> {
    b.get(off..off.checked_add(4)?)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
}

fn u64_at(b: &[u8], off: usize) -> Option<u64> {
    b.get(off..off.checked_add(8)?)
        .map(|s| u64::from_le_bytes(s.try_into().expect("8-byte slice")))
}

fn c_string_at(b: &[u8], off: usize) -> Option<String> {
    let tail = b.get(off..)?;
    let len = tail.iter().take(MAX_NAME).position(|&c| c == 0)?;
    Some(String::from_utf8_lossy(&tail[..len]).into_owned())
}

fn section_name(raw: &[u8]) -> String {
    let end = raw.iter().position(|&c| c == 0).unwrap_or(raw.len());
    String::from_utf8_lossy(&raw[..end]).into_owned()
}

struct Image<'a> {
    bytes: &'a [u8],
    sections: &'a [SectionInfo],
    headers_size: u32,
}

impl Image<'_> {
    /// Maps a relative virtual address to a file offset.
    fn offset(&self, rva: u32) -> Option<usize> {
        for s in self.sections {
            let span = s.virtual_size.max(s.raw_size);
            if rva >= s.virtual_address && rva - s.virtual_address < span {
                let delta = rva - s.virtual_address;
                if delta >= s.raw_size {
                    return None;
                }
                let off = s.raw_pointer as usize + delta as usize;
                return (off < self.bytes.len()).then_some(off);
            }
        }
        let header_limit = if self.headers_size > 0 {
            self.headers_size as usize
        } else {
            self.bytes.len()
        };
        let off = rva as usize;
        (off < header_limit.min(self.bytes.len())).then_some(off)
    }

    fn c_string(&self, rva: u32) -> Option<String> {
        c_string_at(self.bytes, self.offset(rva)?)
    }
}

/// Parses a PE image. Fails only when the DOS magic or the PE signature is
/// missing.
pub fn parse_pe(bytes: &[u8]) -> Result<ParsedPe> {
    if bytes.len() < 2 || &bytes[..2] != b"MZ" {
        return Err(Error::NotPe("missing MZ magic".into()));
    }
    let pe_off = u32_at(bytes, 0x3c)
        .ok_or_else(|| Error::NotPe("truncated DOS header".into()))? as usize;
    if bytes.get(pe_off..pe_off.saturating_add(4)) != Some(b"PE\0\0".as_slice()) {
        return Err(Error::NotPe("missing PE signature".into()));
    }

    let coff_off = pe_off + 4;
    let coff = CoffInfo {
        machine: u16_at(bytes, coff_off).unwrap_or(0),
        number_of_sections: u16_at(bytes, coff_off + 2).unwrap_or(0),
        timestamp: u32_at(bytes, coff_off + 4).unwrap_or(0),
        number_of_symbols: u32_at(bytes, coff_off + 12).unwrap_or(0),
        characteristics: u16_at(bytes, coff_off + 18).unwrap_or(0),
    };
    let opt_size = u16_at(bytes, coff_off + 16).unwrap_or(0) as usize;
    let opt_off = coff_off + 20;

    let (optional, data_directories) = parse_optional(bytes, opt_off, opt_size);

    let table_off = opt_off + opt_size;
    let mut sections = Vec::with_capacity(coff.number_of_sections as usize);
    for i in 0..coff.number_of_sections as usize {
        let off = table_off + i * 40;
        let Some(raw) = bytes.get(off..off + 40) else {
            break;
        };
        let raw_size = u32_at(raw, 16).unwrap_or(0);
        let raw_pointer = u32_at(raw, 20).unwrap_or(0);
        let start = (raw_pointer as usize).min(bytes.len());
        let end = start.saturating_add(raw_size as usize).min(bytes.len());
        sections.push(SectionInfo {
            name: section_name(&raw[..8]),
            virtual_size: u32_at(raw, 8).unwrap_or(0),
            virtual_address: u32_at(raw, 12).unwrap_or(0),
            raw_size,
            raw_pointer,
            characteristics: u32_at(raw, 36).unwrap_or(0),
            entropy: shannon_entropy(&bytes[start..end]),
        });
    }

    let image = Image {
        bytes,
        sections: &sections,
        headers_size: optional.as_ref().map_or(0, |o| o.sizeof_headers),
    };
    let wide = optional.as_ref().map(|o| o.magic) == Some(PE32_PLUS_MAGIC);
    let imports = parse_imports(&image, data_directories[1], wide).unwrap_or_default();
    let exports = parse_exports(&image, data_directories[0]).unwrap_or_default();

    let entry_section = optional
        .as_ref()
        .and_then(|o| {
            sections.iter().find(|s| {
                let span = s.virtual_size.max(s.raw_size);
                o.entry_point >= s.virtual_address && o.entry_point - s.virtual_address < span
            })
        })
        .map(|s| s.name.clone())
        .unwrap_or_default();

    Ok(ParsedPe {
        coff,
        optional,
        sections,
        imports,
        exports,
        data_directories,
        entry_section,
    })
}

fn parse_optional(
    bytes: &[u8],
    off: usize,
    size: usize,
) -> (Option<OptionalInfo>, [DataDirectoryEntry; DATA_DIRECTORY_COUNT]) {
    let mut dirs = [DataDirectoryEntry::default(); DATA_DIRECTORY_COUNT];
    let Some(hdr) = bytes.get(off..off.saturating_add(size).min(bytes.len())) else {
        return (None, dirs);
    };
    let Some(magic) = u16_at(hdr, 0) else {
        return (None, dirs);
    };
    let wide = magic == PE32_PLUS_MAGIC;
    if !wide && magic != PE32_MAGIC {
        return (None, dirs);
    }
    let opt = OptionalInfo {
        magic,
        major_linker_version: hdr.get(2).copied().unwrap_or(0),
        minor_linker_version: hdr.get(3).copied().unwrap_or(0),
        sizeof_code: u32_at(hdr, 4).unwrap_or(0),
        entry_point: u32_at(hdr, 16).unwrap_or(0),
        major_operating_system_version: u16_at(hdr, 40).unwrap_or(0),
        minor_operating_system_version: u16_at(hdr, 42).unwrap_or(0),
        major_image_version: u16_at(hdr, 44).unwrap_or(0),
        minor_image_version: u16_at(hdr, 46).unwrap_or(0),
        major_subsystem_version: u16_at(hdr, 48).unwrap_or(0),
        minor_subsystem_version: u16_at(hdr, 50).unwrap_or(0),
        size_of_image: u32_at(hdr, 56).unwrap_or(0),
        sizeof_headers: u32_at(hdr, 60).unwrap_or(0),
        subsystem: u16_at(hdr, 68).unwrap_or(0),
        dll_characteristics: u16_at(hdr, 70).unwrap_or(0),
        sizeof_heap_commit: if wide {
            u64_at(hdr, 96).unwrap_or(0)
        } else {
            u32_at(hdr, 84).unwrap_or(0) as u64
        },
    };
    let (count_off, dirs_off) = if wide { (108, 112) } else { (92, 96) };
    let count = u32_at(hdr, count_off).unwrap_or(0) as usize;
    for (i, d) in dirs.iter_mut().enumerate().take(count.min(DATA_DIRECTORY_COUNT)) {
        let at = dirs_off + 8 * i;
        match (u32_at(hdr, at), u32_at(hdr, at + 4)) {
            (Some(va), Some(size)) => {
                *d = DataDirectoryEntry {
                    virtual_address: va,
                    size,
                }
            }
            _ => break,
        }
    }
    (Some(opt), dirs)
}

fn parse_imports(image: &Image<'_>, dir: DataDirectoryEntry, wide: bool) -> Option<ImportTable> {
    let mut table = ImportTable::new();
    if dir.virtual_address == 0 {
        return Some(table);
    }
    let base = image.offset(dir.virtual_address)?;
    let thunk_size = if wide { 8 } else { 4 };
    for i in 0..MAX_DLLS {
        let d = base + i * 20;
        let desc = image.bytes.get(d..d + 20)?;
        if desc.iter().all(|&b| b == 0) {
            return Some(table);
        }
        let original_first_thunk = u32_at(desc, 0)?;
        let name_rva = u32_at(desc, 12)?;
        let first_thunk = u32_at(desc, 16)?;
        let dll = image.c_string(name_rva)?;
        let thunk_rva = if original_first_thunk != 0 {
            original_first_thunk
        } else {
            first_thunk
        };
        let thunks = image.offset(thunk_rva)?;
        let mut apis = Vec::new();
        for j in 0..MAX_THUNKS {
            let at = thunks + j * thunk_size;
            let (value, by_ordinal) = if wide {
                let v = u64_at(image.bytes, at)?;
                (v, v & (1 << 63) != 0)
            } else {
                let v = u32_at(image.bytes, at)? as u64;
                (v, v & (1 << 31) != 0)
            };
            if value == 0 {
                break;
            }
            if by_ordinal {
                apis.push(format!("ordinal{}", value & 0xffff));
            } else {
                apis.push(image.c_string((value as u32).wrapping_add(2))?);
            }
        }
        table.entry(dll).or_default().extend(apis);
    }
    Some(table)
}

fn parse_exports(image: &Image<'_>, dir: DataDirectoryEntry) -> Option<Vec<String>> {
    if dir.virtual_address == 0 {
        return Some(Vec::new());
    }
    let base = image.offset(dir.virtual_address)?;
    let count = u32_at(image.bytes, base + 24)? as usize;
    let names_rva = u32_at(image.bytes, base + 32)?;
    if count == 0 {
        return Some(Vec::new());
    }
    let names = image.offset(names_rva)?;
    let mut out = Vec::with_capacity(count.min(MAX_EXPORTS));
    for i in 0..count.min(MAX_EXPORTS) {
        let rva = u32_at(image.bytes, names + 4 * i)?;
        out.push(image.c_string(rva)?);
    }
    Some(out)
}

pub fn machine_name(machine: u16) -> String {
    match machine {
        0x0 => "UNKNOWN".into(),
        0x14c => "I386".into(),
        0x8664 => "AMD64".into(),
        0x1c0 => "ARM".into(),
        0x1c4 => "ARMNT".into(),
        0xaa64 => "ARM64".into(),
        0x200 => "IA64".into(),
        0x1f0 => "POWERPC".into(),
        other => format!("0x{other:x}"),
    }
}

pub fn magic_name(magic: u16) -> String {
    match magic {
        PE32_MAGIC => "PE32".into(),
        PE32_PLUS_MAGIC => "PE32_PLUS".into(),
        other => format!("0x{other:x}"),
    }
}

pub fn subsystem_name(subsystem: u16) -> String {
    match subsystem {
        1 => "NATIVE",
        2 => "WINDOWS_GUI",
        3 => "WINDOWS_CUI",
        5 => "OS2_CUI",
        7 => "POSIX_CUI",
        9 => "WINDOWS_CE_GUI",
        10 => "EFI_APPLICATION",
        11 => "EFI_BOOT_SERVICE_DRIVER",
        12 => "EFI_RUNTIME_DRIVER",
        13 => "EFI_ROM",
        14 => "XBOX",
        16 => "WINDOWS_BOOT_APPLICATION",
        _ => "UNKNOWN",
    }
    .into()
}

fn flag_names(value: u32, table: &[(u32, &str)]) -> Vec<String> {
    table
        .iter()
        .filter(|(bit, _)| value & bit != 0)
        .map(|(_, name)| name.to_string())
        .collect()
}

pub fn coff_characteristic_names(value: u16) -> Vec<String> {
    const TABLE: &[(u32, &str)] = &[
        (0x0001, "RELOCS_STRIPPED"),
        (0x0002, "EXECUTABLE_IMAGE"),
        (0x0004, "LINE_NUMS_STRIPPED"),
        (0x0008, "LOCAL_SYMS_STRIPPED"),
        (0x0010, "AGGRESSIVE_WS_TRIM"),
        (0x0020, "LARGE_ADDRESS_AWARE"),
        (0x0080, "BYTES_REVERSED_LO"),
        (0x0100, "CHARA_32BIT_MACHINE"),
        (0x0200, "DEBUG_STRIPPED"),
        (0x0400, "REMOVABLE_RUN_FROM_SWAP"),
        (0x0800, "NET_RUN_FROM_SWAP"),
        (0x1000, "SYSTEM"),
        (0x2000, "DLL"),
        (0x4000, "UP_SYSTEM_ONLY"),
        (0x8000, "BYTES_REVERSED_HI"),
    ];
    flag_names(value as u32, TABLE)
}

pub fn dll_characteristic_names(value: u16) -> Vec<String> {
    const TABLE: &[(u32, &str)] = &[
        (0x0020, "HIGH_ENTROPY_VA"),
        (0x0040, "DYNAMIC_BASE"),
        (0x0080, "FORCE_INTEGRITY"),
        (0x0100, "NX_COMPAT"),
        (0x0200, "NO_ISOLATION"),
        (0x0400, "NO_SEH"),
        (0x0800, "NO_BIND"),
        (0x1000, "APPCONTAINER"),
        (0x2000, "WDM_DRIVER"),
        (0x4000, "GUARD_CF"),
        (0x8000, "TERMINAL_SERVER_AWARE"),
    ];
    flag_names(value as u32, TABLE)
}

pub fn section_characteristic_names(value: u32) -> Vec<String> {
    const TABLE: &[(u32, &str)] = &[
        (0x0000_0020, "CNT_CODE"),
        (0x0000_0040, "CNT_INITIALIZED_DATA"),
        (0x0000_0080, "CNT_UNINITIALIZED_DATA"),
        (0x0000_0200, "LNK_INFO"),
        (0x0000_0800, "LNK_REMOVE"),
        (0x0000_1000, "LNK_COMDAT"),
        (0x0000_8000, "GPREL"),
        (0x0100_0000, "LNK_NRELOC_OVFL"),
        (0x0200_0000, "MEM_DISCARDABLE"),
        (0x0400_0000, "MEM_NOT_CACHED"),
        (0x0800_0000, "MEM_NOT_PAGED"),
        (0x1000_0000, "MEM_SHARED"),
        (0x2000_0000, "MEM_EXECUTE"),
        (0x4000_0000, "MEM_READ"),
        (0x8000_0000, "MEM_WRITE"),
    ];
    flag_names(value, TABLE)
}
