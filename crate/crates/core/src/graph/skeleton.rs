//! Edge sets over the nine major feature nodes.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The nine first-level feature groups, in node order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Major {
    General,
    Header,
    Imports,
    Exports,
    Section,
    ByteHistogram,
    ByteEntropy,
    Strings,
    DataDirectories,
}

impl Major {
    pub const ALL: [Major; 9] = [
        Major::General,
        Major::Header,
        Major::Imports,
        Major::Exports,
        Major::Section,
        Major::ByteHistogram,
        Major::ByteEntropy,
        Major::Strings,
        Major::DataDirectories,
    ];

    /// Node index of this group in every feature graph.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Major::General => "G",
            Major::Header => "H",
            Major::Imports => "I",
            Major::Exports => "E",
            Major::Section => "Sec",
            Major::ByteHistogram => "BH",
            Major::ByteEntropy => "BEH",
            Major::Strings => "Str",
            Major::DataDirectories => "D",
        }
    }
}

impl fmt::Display for Major {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Major {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Major::ALL
            .into_iter()
            .find(|m| m.short_name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown major node {s:?}")))
    }
}

/// An undirected, simple, connected edge set over the major nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonConfig {
    pub name: String,
    edges: Vec<(Major, Major)>,
}

#[derive(Deserialize)]
struct SkeletonFile {
    name: Option<String>,
    edges: Vec<String>,
}

use Major::*;

const DEFAULT_EDGES: [(Major, Major); 8] = [
    (Strings, ByteHistogram),
    (Strings, ByteEntropy),
    (Strings, Section),
    (Strings, DataDirectories),
    (Strings, Header),
    (Strings, General),
    (General, Imports),
    (General, Exports),
];

impl SkeletonConfig {
    /// Validates and canonicalizes an edge list.
    pub fn new(name: impl Into<String>, edges: impl IntoIterator<Item = (Major, Major)>) -> Result<Self> {
        let name = name.into();
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::Config(format!("skeleton {name}: self-loop on {a}")));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(Error::Config(format!("skeleton {name}: duplicate edge {a}-{b}")));
            }
            out.push(key);
        }
        let s = SkeletonConfig { name, edges: out };
        if !s.is_connected() {
            return Err(Error::Config(format!(
                "skeleton {}: major nodes are not connected",
                s.name
            )));
        }
        Ok(s)
    }

    pub fn edges(&self) -> &[(Major, Major)] {
        &self.edges
    }

    pub fn contains(&self, a: Major, b: Major) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn degree(&self, m: Major) -> usize {
        self.edges.iter().filter(|(a, b)| *a == m || *b == m).count()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = [false; 9];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(a, b) in &self.edges {
                let next = if a.index() == v {
                    b.index()
                } else if b.index() == v {
                    a.index()
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    /// Reads a TOML-style file: `name = "..."` and
    /// `edges = ["Str-BH", "G-I", ...]`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SkeletonFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("skeleton file: {e}")))?;
        let edges = file
            .edges
            .iter()
            .map(|e| {
                let (a, b) = e
                    .split_once('-')
                    .ok_or_else(|| Error::Config(format!("edge {e:?} is not of the form A-B")))?;
                Ok((a.parse()?, b.parse()?))
            })
            .collect::<Result<Vec<_>>>()?;
        SkeletonConfig::new(file.name.unwrap_or_else(|| "custom".into()), edges)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SkeletonConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let edges: Vec<String> = self.edges.iter().map(|(a, b)| format!("\"{a}-{b}\"")).collect();
        format!("name = \"{}\"\nedges = [{}]\n", self.name, edges.join(", "))
    }

    /// Resolves `default`, `variant-N` or a file path.
    pub fn resolve(name: &str) -> Result<Self> {
        if name == "default" {
            return Ok(default_skeleton());
        }
        if let Some(n) = name.strip_prefix("variant-") {
            let id = n
                .parse::<u8>()
                .map_err(|_| Error::Config(format!("bad skeleton variant {name:?}")))?;
            return variant_skeleton(id);
        }
        SkeletonConfig::from_file(Path::new(name))
    }
}

/// String hub with byte statistics, sections, data directories, header and
/// general info attached; imports and exports hang off the general node.
pub fn default_skeleton() -> SkeletonConfig {
    SkeletonConfig::new("default", DEFAULT_EDGES).expect("default skeleton is valid")
}

fn edit(
    name: String,
    base: &[(Major, Major)],
    remove: &[(Major, Major)],
    add: &[(Major, Major)],
) -> Result<SkeletonConfig> {
    let norm = |(a, b): (Major, Major)| (a.min(b), a.max(b));
    let remove: Vec<_> = remove.iter().copied().map(norm).collect();
    let edges = base
        .iter()
        .copied()
        .map(norm)
        .filter(|e| !remove.contains(e))
        .chain(add.iter().copied());
    SkeletonConfig::new(name, edges)
}

/// Ablation layouts of the major-node skeleton, numbered 1 to 8.
///
/// 1. default.
/// 2. D moved between G and Sec (G-D, D-Sec) with no D-Str edge.
/// 3. as 2 without D-Sec.
/// 4. default without G-Str; G stays attached through a G-D edge.
/// 5. D attached to H instead of Str.
/// 6. D attached to G instead of Str, G also linked to H and Sec.
/// 7. H as intermediary: G-Str replaced by G-H, plus H-Sec.
/// 8. G, Sec, H, Str, BH, BEH and D fully interconnected (ring plus all
///    chords), with I and E on G.
pub fn variant_skeleton(id: u8) -> Result<SkeletonConfig> {
    let name = format!("variant-{id}");
    match id {
        1 => Ok(SkeletonConfig {
            name,
            ..default_skeleton()
        }),
        2 => edit(
            name,
            &DEFAULT_EDGES,
            &[(Strings, DataDirectories)],
            &[(General, DataDirectories), (DataDirectories, Section)],
        ),
        3 => edit(
            name,
            &DEFAULT_EDGES,
            &[(Strings, DataDirectories)],
            &[(General, DataDirectories)],
        ),
        4 => edit(
            name,
            &DEFAULT_EDGES,
            &[(Strings, General)],
            &[(General, DataDirectories)],
        ),
        5 => edit(
            name,
            &DEFAULT_EDGES,
            &[(Strings, DataDirectories)],
            &[(Header, DataDirectories)],
        ),
        6 => edit(
            name,
            &DEFAULT_EDGES,
            &[(Strings, DataDirectories)],
            &[(General, DataDirectories), (General, Header), (General, Section)],
        ),
        7 => edit(
            name,
            &DEFAULT_EDGES,
            &[(Strings, General)],
            &[(General, Header), (Header, Section)],
        ),
        8 => {
            let ring = [General, Section, Header, Strings, ByteHistogram, ByteEntropy, DataDirectories];
            let mut edges = Vec::new();
            for i in 0..ring.len() {
                for j in i + 1..ring.len() {
                    edges.push((ring[i], ring[j]));
                }
            }
            edges.push((General, Imports));
            edges.push((General, Exports));
            SkeletonConfig::new(name, edges)
        }
        _ => Err(Error::Config(format!("unknown skeleton variant {id}, expected 1..=8"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape() {
        let s = default_skeleton();
        assert_eq!(s.edges().len(), 8);
        assert_eq!(s.degree(Strings), 6);
        assert_eq!(s.degree(General), 3);
        assert!(s.is_connected());
        assert!(!s.contains(Imports, Strings));
        assert!(!s.contains(Exports, Strings));
    }

    #[test]
    fn variant_two_routes_directories_through_general() {
        let s = variant_skeleton(2).unwrap();
        assert!(s.contains(General, DataDirectories));
        assert!(s.contains(DataDirectories, Section));
        assert!(!s.contains(DataDirectories, Strings));
    }

    #[test]
    fn variant_four_drops_general_string_edge() {
        let s = variant_skeleton(4).unwrap();
        let d = default_skeleton();
        assert!(!s.contains(General, Strings));
        for &(a, b) in d.edges() {
            if (a, b) != (General.min(Strings), General.max(Strings)) {
                assert!(s.contains(a, b), "missing {a}-{b}");
            }
        }
        assert_eq!(s.edges().len(), d.edges().len());
    }

    #[test]
    fn variant_one_is_default() {
        assert_eq!(variant_skeleton(1).unwrap().edges(), default_skeleton().edges());
    }

    #[test]
    fn all_variants_valid_and_eight_is_dense() {
        for id in 1..=8 {
            assert!(variant_skeleton(id).unwrap().is_connected());
        }
        let dense = variant_skeleton(8).unwrap();
        assert_eq!(dense.edges().len(), 21 + 2);
        assert_eq!(dense.degree(Strings), 6);
        assert!(variant_skeleton(0).is_err());
        assert!(variant_skeleton(9).is_err());
    }

    #[test]
    fn rejects_invalid_edge_sets() {
        assert!(SkeletonConfig::new("x", [(General, General)]).is_err());
        let dup = DEFAULT_EDGES.iter().copied().chain([(General, Strings)]);
        assert!(SkeletonConfig::new("x", dup).is_err());
        assert!(SkeletonConfig::new("x", DEFAULT_EDGES[..7].iter().copied()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let s = variant_skeleton(6).unwrap();
        let back = SkeletonConfig::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(back, s);
        let custom = SkeletonConfig::from_toml_str(
            r#"edges = ["Str-BH", "Str-BEH", "Str-Sec", "Str-D", "Str-H", "Str-G", "G-I", "G-E", "D-Sec"]"#,
        )
        .unwrap();
        assert_eq!(custom.name, "custom");
        assert!(custom.contains(Section, DataDirectories));
        assert!(SkeletonConfig::from_toml_str(r#"edges = ["Str+BH"]"#).is_err());
        assert!(SkeletonConfig::resolve("variant-3").is_ok());
        assert!(SkeletonConfig::resolve("default").is_ok());
    }
}
