use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::ingest::{
    CoffHeader, DataDirectory, FeatureRecord, GeneralFeatures, HeaderFeatures, Label,
    OptionalHeader, SectionEntry, SectionFeatures, YearMonth, DATA_DIRECTORY_NAMES,
};

use super::bytes::{byte_entropy_histogram, byte_histogram, string_stats, ByteEntropyConfig};
use super::parse::{
    coff_characteristic_names, dll_characteristic_names, machine_name, magic_name, parse_pe,
    section_characteristic_names, subsystem_name, ParsedPe,
};

const DIR_RESOURCE: usize = 2;
const DIR_SECURITY: usize = 4;
const DIR_RELOC: usize = 5;
const DIR_DEBUG: usize = 6;
const DIR_TLS: usize = 9;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Extracts all nine feature groups of a PE image.
pub fn extract_features(
    bytes: &[u8],
    appeared: YearMonth,
    label: Label,
    cfg: &ByteEntropyConfig,
) -> Result<FeatureRecord> {
    let pe = parse_pe(bytes)?;
    assemble(bytes, &pe, appeared, label, cfg)
}

fn present(pe: &ParsedPe, idx: usize) -> u8 {
    let d = pe.data_directories[idx];
    (d.size > 0 && d.virtual_address > 0) as u8
}

fn assemble(
    bytes: &[u8],
    pe: &ParsedPe,
    appeared: YearMonth,
    label: Label,
    cfg: &ByteEntropyConfig,
) -> Result<FeatureRecord> {
    let opt = pe.optional.clone().unwrap_or_default();
    let import_count: usize = pe.imports.values().map(Vec::len).sum();

    let general = GeneralFeatures {
        size: bytes.len() as u64,
        vsize: opt.size_of_image as u64,
        has_debug: present(pe, DIR_DEBUG),
        exports: pe.exports.len() as u64,
        imports: import_count as u64,
        has_relocations: present(pe, DIR_RELOC),
        has_resources: present(pe, DIR_RESOURCE),
        has_signature: present(pe, DIR_SECURITY),
        has_tls: present(pe, DIR_TLS),
        symbols: pe.coff.number_of_symbols as u64,
    };

    let header = HeaderFeatures {
        coff: CoffHeader {
            timestamp: pe.coff.timestamp as u64,
            machine: machine_name(pe.coff.machine),
            characteristics: coff_characteristic_names(pe.coff.characteristics),
        },
        optional: match &pe.optional {
            None => OptionalHeader::default(),
            Some(o) => OptionalHeader {
                subsystem: subsystem_name(o.subsystem),
                dll_characteristics: dll_characteristic_names(o.dll_characteristics),
                magic: magic_name(o.magic),
                major_image_version: o.major_image_version as u64,
                minor_image_version: o.minor_image_version as u64,
                major_linker_version: o.major_linker_version as u64,
                minor_linker_version: o.minor_linker_version as u64,
                major_operating_system_version: o.major_operating_system_version as u64,
                minor_operating_system_version: o.minor_operating_system_version as u64,
                major_subsystem_version: o.major_subsystem_version as u64,
                minor_subsystem_version: o.minor_subsystem_version as u64,
                sizeof_code: o.sizeof_code as u64,
                sizeof_headers: o.sizeof_headers as u64,
                sizeof_heap_commit: o.sizeof_heap_commit,
            },
        },
    };

    let section = SectionFeatures {
        entry: pe.entry_section.clone(),
        sections: pe
            .sections
            .iter()
            .map(|s| SectionEntry {
                name: s.name.clone(),
                size: s.raw_size as u64,
                entropy: s.entropy,
                vsize: s.virtual_size as u64,
                props: section_characteristic_names(s.characteristics),
            })
            .collect(),
    };

    let datadirectories = pe
        .data_directories
        .iter()
        .zip(DATA_DIRECTORY_NAMES)
        .map(|(d, name)| DataDirectory {
            name: name.to_string(),
            size: d.size as u64,
            virtual_address: d.virtual_address as u64,
        })
        .collect();

    Ok(FeatureRecord {
        sha256: sha256_hex(bytes),
        md5: None,
        appeared,
        label,
        avclass: None,
        histogram: byte_histogram(bytes),
        byteentropy: byte_entropy_histogram(bytes, cfg)?,
        strings: string_stats(bytes),
        general,
        header,
        section,
        imports: pe.imports.clone(),
        exports: pe.exports.clone(),
        datadirectories,
    })
}
