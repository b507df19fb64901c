//! Static feature extraction from raw PE images.

pub mod builder;
mod bytes;
mod extract;
mod parse;

pub use bytes::{
    byte_entropy_histogram, byte_histogram, entropy_of_counts, shannon_entropy, string_stats,
    ByteEntropyConfig, ENTROPY_BINS, NIBBLE_BINS,
};
pub use extract::{extract_features, sha256_hex};
pub use parse::{
    coff_characteristic_names, dll_characteristic_names, machine_name, magic_name, parse_pe,
    section_characteristic_names, subsystem_name, CoffInfo, DataDirectoryEntry, OptionalInfo,
    ParsedPe, SectionInfo, PE32_MAGIC, PE32_PLUS_MAGIC,
};

#[cfg(test)]
mod tests {
    use super::builder::*;
    use super::*;
    use crate::error::Error;
    use crate::ingest::{Label, YearMonth};

    fn text_only() -> Vec<u8> {
        PeBuilder::new_64()
            .section(".text", vec![0xc3; 100], SCN_CODE | SCN_EXECUTE | SCN_READ)
            .entry(0, 0)
            .build()
    }

    #[test]
    fn minimal_64bit_image() {
        let pe = parse_pe(&text_only()).unwrap();
        assert!(pe.is_64bit());
        assert_eq!(pe.sections.len(), 1);
        assert_eq!(pe.sections[0].name, ".text");
        assert_eq!(pe.entry_section, ".text");
        assert!(pe.imports.is_empty());
        assert!(pe.exports.is_empty());
        assert_eq!(machine_name(pe.coff.machine), "AMD64");
    }

    #[test]
    fn not_a_pe() {
        assert!(matches!(parse_pe(b"GIF89a\x01\x00"), Err(Error::NotPe(_))));
        assert!(matches!(parse_pe(b""), Err(Error::NotPe(_))));
        let mut bytes = text_only();
        bytes[0x40] = b'X';
        assert!(matches!(parse_pe(&bytes), Err(Error::NotPe(_))));
        // MZ alone, e_lfanew pointing past the end.
        assert!(matches!(parse_pe(b"MZ"), Err(Error::NotPe(_))));
    }

    #[test]
    fn imports_and_exports() {
        let bytes = PeBuilder::new_32()
            .section(".text", vec![0x90; 64], SCN_CODE | SCN_EXECUTE | SCN_READ)
            .import("KERNEL32.dll", &["GetProcAddress", "LoadLibraryA"])
            .import("USER32.dll", &["MessageBoxA"])
            .export("Foo")
            .export("Bar")
            .build();
        let pe = parse_pe(&bytes).unwrap();
        assert!(!pe.is_64bit());
        let dlls: Vec<_> = pe.imports.keys().cloned().collect();
        assert_eq!(dlls, ["KERNEL32.dll", "USER32.dll"]);
        assert_eq!(pe.imports["KERNEL32.dll"], ["GetProcAddress", "LoadLibraryA"]);
        assert_eq!(pe.exports, ["Foo", "Bar"]);
        let names: Vec<_> = pe.sections.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, [".text", ".edata", ".idata"]);
    }

    #[test]
    fn truncated_import_table_degrades() {
        let bytes = PeBuilder::new_64()
            .section(".text", vec![0x90; 64], SCN_CODE | SCN_EXECUTE | SCN_READ)
            .import("KERNEL32.dll", &["ExitProcess"])
            .build();
        let full = parse_pe(&bytes).unwrap();
        let idata = full.sections.iter().find(|s| s.name == ".idata").unwrap();
        // Keep only the first descriptor's first bytes.
        let cut = &bytes[..idata.raw_pointer as usize + 10];
        let pe = parse_pe(cut).unwrap();
        assert!(pe.imports.is_empty());
        assert_eq!(pe.sections.len(), 2);
        assert_eq!(pe.coff, full.coff);
        assert_eq!(pe.optional, full.optional);
    }

    #[test]
    fn section_entropy_in_range() {
        let noisy: Vec<u8> = (0..4096u32).map(|i| (i.wrapping_mul(2654435761) >> 13) as u8).collect();
        let bytes = PeBuilder::new_64()
            .section(".text", vec![0; 512], SCN_CODE)
            .section(".rsrc", noisy, SCN_INITIALIZED_DATA)
            .build();
        let pe = parse_pe(&bytes).unwrap();
        assert_eq!(pe.sections[0].entropy, 0.0);
        assert!(pe.sections[1].entropy > 7.0 && pe.sections[1].entropy <= 8.0);
    }

    #[test]
    fn general_group_counts() {
        let bytes = PeBuilder::new_64()
            .section(".text", vec![0x90; 64], SCN_CODE | SCN_EXECUTE | SCN_READ)
            .import("kernel32.dll", &["A", "B", "C"])
            .data_directory(9, 0x1000, 0x28)
            .build();
        let ym = YearMonth::new(2018, 1).unwrap();
        let r = extract_features(&bytes, ym, Label::Malicious, &ByteEntropyConfig::default()).unwrap();
        assert_eq!(r.general.imports, 3);
        assert_eq!(r.imports.len(), 1);
        assert_eq!(r.general.exports, 0);
        assert!(r.exports.is_empty());
        assert_eq!(r.general.has_tls, 1);
        assert_eq!(r.general.has_debug, 0);
        assert_eq!(r.general.size, bytes.len() as u64);
        assert_eq!(r.histogram.iter().sum::<u64>(), bytes.len() as u64);
        assert_eq!(r.datadirectories.len(), 15);
        assert_eq!(r.header.optional.magic, "PE32_PLUS");
        assert_eq!(r.section.sections[0].props, ["CNT_CODE", "MEM_EXECUTE", "MEM_READ"]);
    }

    #[test]
    fn extraction_is_deterministic() {
        let bytes = text_only();
        let ym = YearMonth::new(2018, 5).unwrap();
        let cfg = ByteEntropyConfig::default();
        let a = extract_features(&bytes, ym, Label::Benign, &cfg).unwrap();
        let b = extract_features(&bytes, ym, Label::Benign, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_line(), b.to_line());
    }
}
