//! Synthetic feature records with a planted class signal.
//!
//! Malicious samples tend to import process-injection and network APIs and
//! to carry high-entropy sections; benign samples occasionally do too.
//! Every other field is drawn independently of the label, so a model can
//! only separate the classes through imports and section entropy.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    DataDirectory, FeatureRecord, GeneralFeatures, HeaderFeatures, Label, SectionEntry, SectionFeatures,
    StringFeatures, YearMonth, DATA_DIRECTORY_NAMES, HISTOGRAM_BINS, PRINTABLE_BINS,
};
use crate::pe::sha256_hex;
use crate::seed::{self, Stream};

const LIBRARIES: [(&str, &[&str]); 8] = [
    (
        "KERNEL32.dll",
        &["GetModuleHandleA", "GetProcAddress", "LoadLibraryA", "ExitProcess", "CloseHandle", "ReadFile", "CreateFileW", "GetLastError", "Sleep", "HeapAlloc"],
    ),
    ("USER32.dll", &["MessageBoxW", "GetDC", "ShowWindow", "CreateWindowExW", "DispatchMessageW", "LoadIconW"]),
    ("ADVAPI32.dll", &["RegOpenKeyExW", "RegCloseKey", "OpenProcessToken", "GetUserNameW"]),
    ("GDI32.dll", &["BitBlt", "CreateCompatibleDC", "SelectObject", "DeleteObject"]),
    ("SHELL32.dll", &["ShellExecuteW", "SHGetFolderPathW", "DragQueryFileW"]),
    ("ole32.dll", &["CoInitialize", "CoCreateInstance", "CoUninitialize"]),
    ("msvcrt.dll", &["malloc", "free", "memcpy", "printf", "strlen", "_exit"]),
    ("COMCTL32.dll", &["InitCommonControlsEx", "ImageList_Create"]),
];

const SUSPICIOUS: [(&str, &str); 10] = [
    ("KERNEL32.dll", "VirtualAllocEx"),
    ("KERNEL32.dll", "WriteProcessMemory"),
    ("KERNEL32.dll", "CreateRemoteThread"),
    ("KERNEL32.dll", "IsDebuggerPresent"),
    ("USER32.dll", "SetWindowsHookExA"),
    ("USER32.dll", "GetAsyncKeyState"),
    ("ADVAPI32.dll", "CryptEncrypt"),
    ("ADVAPI32.dll", "RegSetValueExA"),
    ("urlmon.dll", "URLDownloadToFileA"),
    ("WININET.dll", "InternetOpenUrlA"),
];

const SECTION_NAMES: [&str; 8] = [".text", ".rdata", ".data", ".rsrc", ".reloc", ".pdata", ".idata", ".tls"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    pub malicious_fraction: f64,
    pub year: u16,
    /// Months samples are spread over, round-robin.
    pub months: Vec<u8>,
    /// Strength of the class signal in `[0, 1]` for the first month.
    pub signal: f64,
    /// Signal lost per month after the first, modelling drift.
    pub drift_per_month: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 2000,
            malicious_fraction: 0.5,
            year: 2018,
            months: vec![1],
            signal: 1.0,
            drift_per_month: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.malicious_fraction) || !(0.0..=1.0).contains(&self.signal) {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        if self.months.is_empty() || self.months.iter().any(|m| !(1..=12).contains(m)) {
            return Err(Error::Config(format!("months {:?} must be within 1..=12", self.months)));
        }
        if self.drift_per_month < 0.0 {
            return Err(Error::Config("drift must be non-negative".into()));
        }
        Ok(())
    }
}

fn counts<R: Rng>(rng: &mut R, n: usize, scale: u64) -> Vec<u64> {
    (0..n).map(|_| rng.gen_range(0..scale)).collect()
}

fn record<R: Rng>(rng: &mut R, id: String, appeared: YearMonth, malicious: bool, signal: f64) -> FeatureRecord {
    // Planted signal: suspicious imports.
    let mut imports: IndexMap<String, Vec<String>> = IndexMap::new();
    let mut libs: Vec<_> = LIBRARIES.to_vec();
    libs.shuffle(rng);
    for (dll, apis) in libs.iter().take(rng.gen_range(1..=5)) {
        let mut apis = apis.to_vec();
        apis.shuffle(rng);
        let take = rng.gen_range(1..=apis.len());
        imports.insert(dll.to_string(), apis[..take].iter().map(|s| s.to_string()).collect());
    }
    let p_suspicious = if malicious { 0.5 + 0.4 * signal } else { 0.1 };
    if rng.gen_bool(p_suspicious) {
        let mut picks = SUSPICIOUS.to_vec();
        picks.shuffle(rng);
        for (dll, api) in picks.iter().take(rng.gen_range(1..=3)) {
            imports.entry(dll.to_string()).or_default().push(api.to_string());
        }
    }

    // Planted signal: packed-looking sections.
    let mean = 5.2 + if malicious { 1.8 * signal } else { 0.0 };
    let entropy = Normal::new(mean, 0.9).expect("valid normal");
    let mut names = SECTION_NAMES.to_vec();
    names[1..].shuffle(rng);
    let n_sections = rng.gen_range(2..=6);
    let sections: Vec<SectionEntry> = names[..n_sections]
        .iter()
        .map(|name| {
            let size = rng.gen_range(0..64u64) * 512;
            SectionEntry {
                name: name.to_string(),
                size,
                entropy: entropy.sample(rng).clamp(0.0, 8.0),
                vsize: size + rng.gen_range(0..4096),
                props: if *name == ".text" {
                    vec!["CNT_CODE".into(), "MEM_EXECUTE".into(), "MEM_READ".into()]
                } else {
                    vec!["CNT_INITIALIZED_DATA".into(), "MEM_READ".into()]
                },
            }
        })
        .collect();

    let exports = if rng.gen_bool(0.2) {
        (0..rng.gen_range(1..5)).map(|i| format!("Export{i}")).collect()
    } else {
        Vec::new()
    };
    let size = rng.gen_range(10_000..3_000_000u64);
    let datadirectories = DATA_DIRECTORY_NAMES
        .iter()
        .map(|name| {
            let present = rng.gen_bool(0.4);
            DataDirectory {
                name: name.to_string(),
                size: if present { rng.gen_range(8..20_000) } else { 0 },
                virtual_address: if present { rng.gen_range(0x1000..0x80_000) } else { 0 },
            }
        })
        .collect();
    let mut header = HeaderFeatures::default();
    header.coff.timestamp = rng.gen_range(1_200_000_000..1_530_000_000);
    header.coff.machine = "I386".into();
    header.coff.characteristics = vec!["EXECUTABLE_IMAGE".into(), "CHARA_32BIT_MACHINE".into()];
    header.optional.magic = "PE32".into();
    header.optional.subsystem = if rng.gen_bool(0.7) { "WINDOWS_GUI" } else { "WINDOWS_CUI" }.into();
    header.optional.major_linker_version = rng.gen_range(6..15);
    header.optional.sizeof_code = rng.gen_range(0..size);
    header.optional.sizeof_headers = 1024;

    FeatureRecord {
        sha256: sha256_hex(id.as_bytes()),
        md5: None,
        appeared,
        label: if malicious { Label::Malicious } else { Label::Benign },
        avclass: None,
        histogram: counts(rng, HISTOGRAM_BINS, 5000),
        byteentropy: counts(rng, HISTOGRAM_BINS, 800),
        strings: StringFeatures {
            numstrings: rng.gen_range(0..5000),
            avlength: rng.gen_range(5.0..30.0),
            printabledist: counts(rng, PRINTABLE_BINS, 3000),
            printables: rng.gen_range(0..100_000),
            entropy: rng.gen_range(4.0..6.5),
            paths: rng.gen_range(0..10),
            urls: rng.gen_range(0..10),
            registry: rng.gen_range(0..5),
            mz: rng.gen_range(0..3),
        },
        general: GeneralFeatures {
            size,
            vsize: size + rng.gen_range(0..100_000),
            has_debug: rng.gen_range(0..2),
            exports: exports.len() as u64,
            imports: imports.values().map(|v| v.len() as u64).sum(),
            has_relocations: rng.gen_range(0..2),
            has_resources: rng.gen_range(0..2),
            has_signature: rng.gen_range(0..2),
            has_tls: rng.gen_range(0..2),
            symbols: 0,
        },
        header,
        section: SectionFeatures {
            entry: ".text".into(),
            sections,
        },
        imports,
        exports,
        datadirectories,
    }
}

/// Deterministic synthetic records for a seed.
pub fn synth_records(cfg: &SynthConfig, master_seed: u64) -> Result<Vec<FeatureRecord>> {
    cfg.validate()?;
    let mut rng: ChaCha8Rng = seed::rng(master_seed, Stream::Synthetic);
    let first = cfg.months[0];
    (0..cfg.count)
        .map(|i| {
            let month = cfg.months[i % cfg.months.len()];
            let appeared = YearMonth::new(cfg.year, month)?;
            let elapsed = month.saturating_sub(first) as f64;
            let signal = (cfg.signal - cfg.drift_per_month * elapsed).max(0.0);
            let malicious = rng.gen_bool(cfg.malicious_fraction);
            Ok(record(&mut rng, format!("synthetic-{master_seed}-{i}"), appeared, malicious, signal))
        })
        .collect()
}
