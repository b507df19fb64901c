//! Line-delimited feature records.
//!
//! The layout follows the public EMBER 2018 feature schema, so dataset files
//! can be read without conversion. Each line holds one JSON object carrying
//! the nine static feature groups of a single binary.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const HISTOGRAM_BINS: usize = 256;
pub const PRINTABLE_BINS: usize = 96;
pub const DATA_DIRECTORY_COUNT: usize = 15;

/// Names of the fifteen optional-header data directories, in table order.
pub const DATA_DIRECTORY_NAMES: [&str; DATA_DIRECTORY_COUNT] = [
    "EXPORT_TABLE",
    "IMPORT_TABLE",
    "RESOURCE_TABLE",
    "EXCEPTION_TABLE",
    "CERTIFICATE_TABLE",
    "BASE_RELOCATION_TABLE",
    "DEBUG",
    "ARCHITECTURE",
    "GLOBAL_PTR",
    "TLS_TABLE",
    "LOAD_CONFIG_TABLE",
    "BOUND_IMPORT",
    "IAT",
    "DELAY_IMPORT_DESCRIPTOR",
    "CLR_RUNTIME_HEADER",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Unlabeled,
    Benign,
    Malicious,
}

impl Label {
    pub fn as_i8(self) -> i8 {
        match self {
            Label::Unlabeled => -1,
            Label::Benign => 0,
            Label::Malicious => 1,
        }
    }

    pub fn from_i64(v: i64) -> Option<Self> {
        match v {
            -1 => Some(Label::Unlabeled),
            0 => Some(Label::Benign),
            1 => Some(Label::Malicious),
            _ => None,
        }
    }

    /// Class index for labeled samples (benign 0, malicious 1).
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Unlabeled => None,
            Label::Benign => Some(0),
            Label::Malicious => Some(1),
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.as_i8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Label::from_i64(v)
            .ok_or_else(|| serde::de::Error::custom(format!("label {v} not in {{-1, 0, 1}}")))
    }
}

/// Calendar month a sample was first seen, serialized as `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct YearMonth {
    pub year: u16,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: u16, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidArgument(format!("month {month} outside 1..=12")));
        }
        Ok(YearMonth { year, month })
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("expected YYYY-MM, got {s:?}"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        // EMBER occasionally carries a day component; ignore it.
        let m = m.split('-').next().unwrap_or(m);
        let year = y.parse::<u16>().map_err(|_| bad())?;
        let month = m.parse::<u8>().map_err(|_| bad())?;
        YearMonth::new(year, month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneralFeatures {
    pub size: u64,
    pub vsize: u64,
    pub has_debug: u8,
    pub exports: u64,
    pub imports: u64,
    pub has_relocations: u8,
    pub has_resources: u8,
    pub has_signature: u8,
    pub has_tls: u8,
    pub symbols: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoffHeader {
    pub timestamp: u64,
    pub machine: String,
    pub characteristics: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptionalHeader {
    pub subsystem: String,
    pub dll_characteristics: Vec<String>,
    pub magic: String,
    pub major_image_version: u64,
    pub minor_image_version: u64,
    pub major_linker_version: u64,
    pub minor_linker_version: u64,
    pub major_operating_system_version: u64,
    pub minor_operating_system_version: u64,
    pub major_subsystem_version: u64,
    pub minor_subsystem_version: u64,
    pub sizeof_code: u64,
    pub sizeof_headers: u64,
    pub sizeof_heap_commit: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeaderFeatures {
    pub coff: CoffHeader,
    pub optional: OptionalHeader,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SectionEntry {
    pub name: String,
    pub size: u64,
    pub entropy: f64,
    pub vsize: u64,
    pub props: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SectionFeatures {
    pub entry: String,
    pub sections: Vec<SectionEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataDirectory {
    pub name: String,
    pub size: u64,
    pub virtual_address: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StringFeatures {
    pub numstrings: u64,
    pub avlength: f64,
    pub printabledist: Vec<u64>,
    pub printables: u64,
    pub entropy: f64,
    pub paths: u64,
    pub urls: u64,
    pub registry: u64,
    #[serde(rename = "MZ")]
    pub mz: u64,
}

impl Default for StringFeatures {
    fn default() -> Self {
        StringFeatures {
            numstrings: 0,
            avlength: 0.0,
            printabledist: vec![0; PRINTABLE_BINS],
            printables: 0,
            entropy: 0.0,
            paths: 0,
            urls: 0,
            registry: 0,
            mz: 0,
        }
    }
}

/// Imported libraries in file order, each with its imported symbol names.
pub type ImportTable = IndexMap<String, Vec<String>>;

/// One binary's static features, label and first-seen month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub md5: Option<String>,
    pub appeared: YearMonth,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avclass: Option<String>,
    pub histogram: Vec<u64>,
    pub byteentropy: Vec<u64>,
    #[serde(default)]
    pub strings: StringFeatures,
    #[serde(default)]
    pub general: GeneralFeatures,
    #[serde(default)]
    pub header: HeaderFeatures,
    #[serde(default)]
    pub section: SectionFeatures,
    #[serde(default, deserialize_with = "null_as_default")]
    pub imports: ImportTable,
    #[serde(default, deserialize_with = "null_as_default")]
    pub exports: Vec<String>,
    #[serde(default)]
    pub datadirectories: Vec<DataDirectory>,
}

fn null_as_default<'de, D, T>(d: D) -> std::result::Result<T, D::Error>
where
    D: Deserializer<'de>,
    T: Default + Deserialize<'de>,
{
    Ok(Option::<T>::deserialize(d)?.unwrap_or_default())
}

impl FeatureRecord {
    /// Total number of imported symbols across all libraries.
    pub fn import_count(&self) -> usize {
        self.imports.values().map(Vec::len).sum()
    }

    /// Checks array arities and value ranges, and pads the data directory
    /// table to its fifteen fixed entries.
    pub fn normalize(&mut self, line: usize) -> Result<()> {
        let schema = |message: String| Error::Schema { line, message };
        if self.histogram.len() != HISTOGRAM_BINS {
            return Err(schema(format!(
                "histogram has {} entries, expected {HISTOGRAM_BINS}",
                self.histogram.len()
            )));
        }
        if self.byteentropy.len() != HISTOGRAM_BINS {
            return Err(schema(format!(
                "byteentropy has {} entries, expected {HISTOGRAM_BINS}",
                self.byteentropy.len()
            )));
        }
        if self.strings.printabledist.is_empty() {
            self.strings.printabledist = vec![0; PRINTABLE_BINS];
        }
        if self.strings.printabledist.len() != PRINTABLE_BINS {
            return Err(schema(format!(
                "strings.printabledist has {} entries, expected {PRINTABLE_BINS}",
                self.strings.printabledist.len()
            )));
        }
        if self.datadirectories.len() > DATA_DIRECTORY_COUNT {
            return Err(schema(format!(
                "{} data directories, at most {DATA_DIRECTORY_COUNT} allowed",
                self.datadirectories.len()
            )));
        }
        for name in &DATA_DIRECTORY_NAMES[self.datadirectories.len()..DATA_DIRECTORY_COUNT] {
            self.datadirectories.push(DataDirectory {
                name: name.to_string(),
                size: 0,
                virtual_address: 0,
            });
        }
        let finite = self.strings.avlength.is_finite()
            && self.strings.entropy.is_finite()
            && self.section.sections.iter().all(|s| s.entropy.is_finite());
        if !finite {
            return Err(schema("non-finite floating-point field".into()));
        }
        Ok(())
    }

    /// Renders the record as one line of the dataset format (no newline).
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}

/// Parses one line of a record file. `line` is 1-based and only used for
/// error messages.
pub fn parse_record(text: &str, line: usize) -> Result<FeatureRecord> {
    let mut record: FeatureRecord =
        serde_json::from_str(text).map_err(|e| classify_serde_error(e, line))?;
    record.normalize(line)?;
    Ok(record)
}

fn classify_serde_error(e: serde_json::Error, line: usize) -> Error {
    use serde_json::error::Category;
    match e.classify() {
        Category::Data => Error::Schema {
            line,
            message: e.to_string(),
        },
        _ => Error::Parse {
            line,
            message: e.to_string(),
        },
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn minimal_line(label: i64, appeared: &str) -> String {
        let zeros = vec![0u64; 256];
        serde_json::json!({
            "sha256": format!("{:064x}", (label + 7) as u64),
            "appeared": appeared,
            "label": label,
            "histogram": zeros,
            "byteentropy": zeros,
            "imports": {},
            "exports": [],
        })
        .to_string()
    }

    #[test]
    fn unlabeled_record_parses() {
        let r = parse_record(&minimal_line(-1, "2018-03"), 1).unwrap();
        assert_eq!(r.label, Label::Unlabeled);
        assert_eq!(r.appeared, YearMonth { year: 2018, month: 3 });
    }

    #[test]
    fn empty_exports_become_empty_list() {
        let r = parse_record(&minimal_line(0, "2018-01"), 1).unwrap();
        assert!(r.exports.is_empty());
        assert!(r.imports.is_empty());
        assert_eq!(r.datadirectories.len(), DATA_DIRECTORY_COUNT);
        assert_eq!(r.strings.printabledist.len(), PRINTABLE_BINS);
    }

    #[test]
    fn missing_or_null_imports_are_empty() {
        let mut v: serde_json::Value = serde_json::from_str(&minimal_line(1, "2018-01")).unwrap();
        v.as_object_mut().unwrap().remove("imports");
        v["exports"] = serde_json::Value::Null;
        let r = parse_record(&v.to_string(), 1).unwrap();
        assert!(r.imports.is_empty());
        assert!(r.exports.is_empty());
    }

    #[test]
    fn short_histogram_is_schema_error() {
        let mut v: serde_json::Value = serde_json::from_str(&minimal_line(1, "2018-01")).unwrap();
        v["histogram"] = serde_json::json!(vec![0u64; 255]);
        match parse_record(&v.to_string(), 42) {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 42),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_parse_error() {
        match parse_record("{\"sha256\": ", 5) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_label_and_month_rejected() {
        assert!(parse_record(&minimal_line(2, "2018-01"), 1).is_err());
        assert!(parse_record(&minimal_line(0, "2018-13"), 1).is_err());
        assert!(parse_record(&minimal_line(0, "2018-00"), 1).is_err());
    }

    #[test]
    fn import_order_is_preserved() {
        let mut v: serde_json::Value = serde_json::from_str(&minimal_line(1, "2018-01")).unwrap();
        v["imports"] = serde_json::json!({"zlib.dll": ["a"], "advapi32.dll": ["b", "c"]});
        // serde_json sorts object keys by default; build the text by hand.
        let text = v
            .to_string()
            .replace(r#""imports":{"advapi32.dll":["b","c"],"zlib.dll":["a"]}"#, r#""imports":{"zlib.dll":["a"],"advapi32.dll":["b","c"]}"#);
        let r = parse_record(&text, 1).unwrap();
        let names: Vec<_> = r.imports.keys().cloned().collect();
        assert_eq!(names, ["zlib.dll", "advapi32.dll"]);
        assert_eq!(r.import_count(), 3);
    }

    #[test]
    fn line_round_trip() {
        let r = parse_record(&minimal_line(1, "2018-07"), 1).unwrap();
        let again = parse_record(&r.to_line(), 1).unwrap();
        assert_eq!(r, again);
    }
}
