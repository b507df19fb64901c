//! Cross-checks the native PE reader against goblin on builder fixtures.

use goblin::pe::PE;
use mfgraph::pe::builder::{PeBuilder, SCN_CODE, SCN_EXECUTE, SCN_INITIALIZED_DATA, SCN_READ};
use mfgraph::pe::parse_pe;

fn check(bytes: &[u8]) {
    let ours = parse_pe(bytes).unwrap();
    let theirs = PE::parse(bytes).unwrap();

    assert_eq!(ours.coff.machine, theirs.header.coff_header.machine);
    assert_eq!(ours.coff.timestamp, theirs.header.coff_header.time_date_stamp);
    assert_eq!(ours.coff.characteristics, theirs.header.coff_header.characteristics);
    assert_eq!(ours.is_64bit(), theirs.is_64);

    let opt = theirs.header.optional_header.unwrap();
    let our_opt = ours.optional.as_ref().unwrap();
    assert_eq!(our_opt.entry_point as u64, opt.standard_fields.address_of_entry_point);
    assert_eq!(our_opt.size_of_image, opt.windows_fields.size_of_image);
    assert_eq!(our_opt.subsystem, opt.windows_fields.subsystem);
    assert_eq!(our_opt.dll_characteristics, opt.windows_fields.dll_characteristics);
    assert_eq!(our_opt.sizeof_heap_commit, opt.windows_fields.size_of_heap_commit);

    let names: Vec<String> = theirs
        .sections
        .iter()
        .map(|s| s.name().unwrap().to_string())
        .collect();
    let our_names: Vec<String> = ours.sections.iter().map(|s| s.name.clone()).collect();
    assert_eq!(our_names, names);
    for (a, b) in ours.sections.iter().zip(&theirs.sections) {
        assert_eq!(a.raw_size, b.size_of_raw_data);
        assert_eq!(a.virtual_size, b.virtual_size);
        assert_eq!(a.characteristics, b.characteristics);
    }

    let mut their_imports: Vec<(String, String)> = theirs
        .imports
        .iter()
        .map(|i| (i.dll.to_string(), i.name.to_string()))
        .collect();
    let mut our_imports: Vec<(String, String)> = ours
        .imports
        .iter()
        .flat_map(|(dll, apis)| apis.iter().map(move |a| (dll.clone(), a.clone())))
        .collect();
    their_imports.sort();
    our_imports.sort();
    assert_eq!(our_imports, their_imports);

    let mut their_exports: Vec<String> = theirs
        .exports
        .iter()
        .filter_map(|e| e.name.map(str::to_string))
        .collect();
    let mut our_exports = ours.exports.clone();
    their_exports.sort();
    our_exports.sort();
    assert_eq!(our_exports, their_exports);
}

#[test]
fn minimal_64bit_text_only() {
    let bytes = PeBuilder::new_64()
        .section(".text", vec![0xc3; 32], SCN_CODE | SCN_EXECUTE | SCN_READ)
        .entry(0, 0)
        .build();
    check(&bytes);
    let ours = parse_pe(&bytes).unwrap();
    assert_eq!(ours.sections.len(), 1);
    assert!(ours.imports.is_empty());
}

#[test]
fn imports_exports_32bit() {
    let bytes = PeBuilder::new_32()
        .section(".text", vec![0x90; 300], SCN_CODE | SCN_EXECUTE | SCN_READ)
        .section(".data", b"hello world".to_vec(), SCN_INITIALIZED_DATA | SCN_READ)
        .import("KERNEL32.dll", &["GetProcAddress", "LoadLibraryA", "ExitProcess"])
        .import("ADVAPI32.dll", &["RegOpenKeyExA"])
        .export("Alpha")
        .export("Beta")
        .entry(0, 16)
        .build();
    check(&bytes);
}

#[test]
fn imports_64bit() {
    let bytes = PeBuilder::new_64()
        .section(".text", vec![0x90; 700], SCN_CODE | SCN_EXECUTE | SCN_READ)
        .import("ws2_32.dll", &["socket", "connect", "send", "recv"])
        .entry(0, 0)
        .build();
    check(&bytes);
}
