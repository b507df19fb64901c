//! Byte-level statistics over the whole file image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{StringFeatures, HISTOGRAM_BINS, PRINTABLE_BINS};

/// Shannon entropy (bits per byte) of `bytes`, in `[0, 8]`. Empty input has
/// entropy 0.
pub fn shannon_entropy(bytes: &[u8]) -> f64 {
    entropy_of_counts(&byte_histogram(bytes))
}

/// Base-2 entropy of the distribution given by `counts`.
pub fn entropy_of_counts(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Occurrence count of every byte value.
pub fn byte_histogram(bytes: &[u8]) -> Vec<u64> {
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    for &b in bytes {
        counts[b as usize] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteEntropyConfig {
    pub window: usize,
    pub step: usize,
}

impl Default for ByteEntropyConfig {
    fn default() -> Self {
        ByteEntropyConfig {
            window: 1024,
            step: 256,
        }
    }
}

/// Rows of the (entropy bin, high nibble) grid; 16 x 16 = 256 cells.
pub const ENTROPY_BINS: usize = 16;
pub const NIBBLE_BINS: usize = 16;

impl ByteEntropyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.step == 0 || !self.window.is_multiple_of(self.step) {
            return Err(Error::Config(format!(
                "byte-entropy window {} must be a positive multiple of step {}",
                self.window, self.step
            )));
        }
        Ok(())
    }

    /// Number of windows scanned for an input of `len` bytes.
    pub fn window_count(&self, len: usize) -> usize {
        if len >= self.window {
            (len - self.window) / self.step + 1
        } else {
            1
        }
    }
}

/// Sliding-window (entropy, byte value) histogram.
///
/// Each window contributes one count per byte, placed in row `H / 0.5`
/// (clamped to 15) where `H` is the window's byte entropy, and in the column
/// given by the byte's high nibble. The 16 x 16 grid is flattened row-major.
/// Inputs shorter than one window are scanned as a single window.
pub fn byte_entropy_histogram(bytes: &[u8], cfg: &ByteEntropyConfig) -> Result<Vec<u64>> {
    cfg.validate()?;
    let mut grid = vec![0u64; ENTROPY_BINS * NIBBLE_BINS];
    let windows = cfg.window_count(bytes.len());
    for w in 0..windows {
        let start = w * cfg.step;
        let end = (start + cfg.window).min(bytes.len());
        let block = &bytes[start..end];
        let h = shannon_entropy(block);
        let row = ((h * 2.0) as usize).min(ENTROPY_BINS - 1);
        for &b in block {
            grid[row * NIBBLE_BINS + (b >> 4) as usize] += 1;
        }
    }
    Ok(grid)
}

const MIN_STRING_LEN: usize = 5;

fn count_occurrences(haystack: &[u8], needle: &[u8], ignore_case: bool) -> u64 {
    if haystack.len() < needle.len() {
        return 0;
    }
    let mut count = 0;
    let mut i = 0;
    while i + needle.len() <= haystack.len() {
        let window = &haystack[i..i + needle.len()];
        let hit = if ignore_case {
            window.eq_ignore_ascii_case(needle)
        } else {
            window == needle
        };
        if hit {
            count += 1;
            i += needle.len();
        } else {
            i += 1;
        }
    }
    count
}

/// Printable-string statistics.
///
/// Strings are maximal runs of bytes in `0x20..=0x7E` at least five long.
/// Marker counts (`C:\`, URL prefixes, `HKEY_`, `MZ`) are non-overlapping
/// matches over the raw bytes; only the URL prefixes ignore case.
pub fn string_stats(bytes: &[u8]) -> StringFeatures {
    let mut dist = vec![0u64; PRINTABLE_BINS];
    let mut numstrings = 0u64;
    let mut printables = 0u64;
    let mut run = 0usize;
    let mut flush = |run: usize, end: usize, dist: &mut Vec<u64>| {
        if run >= MIN_STRING_LEN {
            numstrings += 1;
            printables += run as u64;
            for &b in &bytes[end - run..end] {
                dist[(b - 0x20) as usize] += 1;
            }
        }
    };
    for (i, &b) in bytes.iter().enumerate() {
        if (0x20..=0x7e).contains(&b) {
            run += 1;
        } else {
            flush(run, i, &mut dist);
            run = 0;
        }
    }
    flush(run, bytes.len(), &mut dist);

    StringFeatures {
        numstrings,
        avlength: if numstrings > 0 {
            printables as f64 / numstrings as f64
        } else {
            0.0
        },
        entropy: entropy_of_counts(&dist),
        printabledist: dist,
        printables,
        paths: count_occurrences(bytes, b"C:\\", false),
        urls: count_occurrences(bytes, b"http://", true) + count_occurrences(bytes, b"https://", true),
        registry: count_occurrences(bytes, b"HKEY_", false),
        mz: count_occurrences(bytes, b"MZ", false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn histogram_cases() {
        assert!(byte_histogram(&[]).iter().all(|&c| c == 0));
        let h = byte_histogram(&[0u8; 100]);
        assert_eq!(h[0], 100);
        assert_eq!(h.iter().sum::<u64>(), 100);
        let all: Vec<u8> = (0..=255).collect();
        assert!(byte_histogram(&all).iter().all(|&c| c == 1));
    }

    #[test]
    fn zero_entropy_window() {
        let g = byte_entropy_histogram(&[0x41u8; 1024], &ByteEntropyConfig::default()).unwrap();
        assert_eq!(g[4], 1024);
        assert_eq!(g.iter().sum::<u64>(), 1024);
    }

    #[test]
    fn window_count_for_4096_bytes() {
        let cfg = ByteEntropyConfig::default();
        // (4096 - 1024) / 256 + 1
        assert_eq!(cfg.window_count(4096), 13);
        let g = byte_entropy_histogram(&vec![7u8; 4096], &cfg).unwrap();
        assert_eq!(g.iter().sum::<u64>(), 13 * 1024);
    }

    #[test]
    fn max_entropy_clamps_to_last_row() {
        let block: Vec<u8> = (0..1024).map(|i| (i % 256) as u8).collect();
        assert!((shannon_entropy(&block) - 8.0).abs() < 1e-12);
        let g = byte_entropy_histogram(&block, &ByteEntropyConfig::default()).unwrap();
        let last_row: u64 = g[15 * 16..].iter().sum();
        assert_eq!(last_row, 1024);
        assert!(g[15 * 16..].iter().all(|&c| c == 64));
    }

    #[test]
    fn short_input_is_one_window() {
        let cfg = ByteEntropyConfig::default();
        assert_eq!(cfg.window_count(10), 1);
        let g = byte_entropy_histogram(&[1, 2, 3], &cfg).unwrap();
        assert_eq!(g.iter().sum::<u64>(), 3);
        assert!(byte_entropy_histogram(&[], &cfg).unwrap().iter().all(|&c| c == 0));
    }

    #[test]
    fn invalid_config() {
        let cfg = ByteEntropyConfig { window: 1000, step: 256 };
        assert!(byte_entropy_histogram(&[0; 10], &cfg).is_err());
    }

    #[test]
    fn mz_only() {
        let s = string_stats(b"MZMZ");
        assert_eq!(s.mz, 2);
        assert_eq!(s.numstrings, 0);
    }

    #[test]
    fn windows_path() {
        let s = string_stats(b"C:\\Windows\\");
        assert_eq!(s.paths, 1);
        assert_eq!(s.numstrings, 1);
        assert_eq!(s.avlength, 11.0);
        assert_eq!(s.printables, 11);
        assert_eq!(s.printabledist.iter().sum::<u64>(), 11);
    }

    #[test]
    fn empty_strings() {
        let s = string_stats(&[]);
        assert_eq!(s, StringFeatures::default());
        assert_eq!(s.entropy, 0.0);
    }

    #[test]
    fn url_and_registry_markers() {
        let s = string_stats(b"HTTP://a\0https://b\0HKEY_LOCAL\0hkey_x\0c:\\x");
        assert_eq!(s.urls, 2);
        assert_eq!(s.registry, 1);
        assert_eq!(s.paths, 0);
    }

    #[test]
    fn runs_split_on_unprintable() {
        let s = string_stats(b"abcde\x01abcd\nabcdefg");
        assert_eq!(s.numstrings, 2);
        assert_eq!(s.avlength, 6.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn histogram_sums_to_length(bytes in proptest::collection::vec(any::<u8>(), 0..2048)) {
            prop_assert_eq!(byte_histogram(&bytes).iter().sum::<u64>(), bytes.len() as u64);
            let h = shannon_entropy(&bytes);
            prop_assert!((0.0..=8.0).contains(&h));
        }
    }

    proptest! {
        #[test]
        fn entropy_grid_mass(bytes in proptest::collection::vec(any::<u8>(), 1024..5000)) {
            let cfg = ByteEntropyConfig::default();
            let g = byte_entropy_histogram(&bytes, &cfg).unwrap();
            prop_assert_eq!(g.iter().sum::<u64>(), (cfg.window_count(bytes.len()) * cfg.window) as u64);
        }
    }
}
