//! Reading, filtering and time-partitioning feature record files.

mod record;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;

pub use record::{
    parse_record, CoffHeader, DataDirectory, FeatureRecord, GeneralFeatures, HeaderFeatures,
    ImportTable, Label, OptionalHeader, SectionEntry, SectionFeatures, StringFeatures, YearMonth,
    DATA_DIRECTORY_COUNT, DATA_DIRECTORY_NAMES, HISTOGRAM_BINS, PRINTABLE_BINS,
};

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

/// Iterates over the records of a line-delimited file. Blank lines are
/// skipped; any other unparseable line is an error carrying its line number.
pub struct RecordReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
    origin: String,
}

impl RecordReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(RecordReader::new(BufReader::new(file), path.display().to_string()))
    }
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R, origin: impl Into<String>) -> Self {
        RecordReader {
            lines: reader.lines(),
            line: 0,
            origin: origin.into(),
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<FeatureRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(Error::io(&self.origin, e))),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let origin = &self.origin;
            return Some(parse_record(&text, self.line).map_err(|e| match e {
                Error::Parse { line, message } => Error::Parse {
                    line,
                    message: format!("{origin}: {message}"),
                },
                Error::Schema { line, message } => Error::Schema {
                    line,
                    message: format!("{origin}: {message}"),
                },
                other => other,
            }));
        }
    }
}

pub fn read_records(path: &Path) -> Result<Vec<FeatureRecord>> {
    RecordReader::open(path)?.collect()
}

pub fn write_records(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", r.to_line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Which records survive loading: labeled samples first seen in `year`.
#[derive(Debug, Clone, Copy)]
pub struct FilterPolicy {
    pub year: u16,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy { year: 2018 }
    }
}

impl FilterPolicy {
    pub fn keeps(&self, r: &FeatureRecord) -> bool {
        r.label.is_labeled() && r.appeared.year == self.year
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub read: usize,
    pub kept: usize,
    pub dropped_unlabeled: usize,
    pub dropped_out_of_year: usize,
}

impl FilterStats {
    pub fn dropped(&self) -> usize {
        self.dropped_unlabeled + self.dropped_out_of_year
    }

    fn observe(&mut self, policy: &FilterPolicy, r: &FeatureRecord) -> bool {
        self.read += 1;
        if !r.label.is_labeled() {
            self.dropped_unlabeled += 1;
            false
        } else if r.appeared.year != policy.year {
            self.dropped_out_of_year += 1;
            false
        } else {
            self.kept += 1;
            true
        }
    }
}

pub fn filter_records(
    records: impl IntoIterator<Item = FeatureRecord>,
    policy: &FilterPolicy,
) -> (Vec<FeatureRecord>, FilterStats) {
    let mut stats = FilterStats::default();
    let kept = records
        .into_iter()
        .filter(|r| stats.observe(policy, r))
        .collect();
    (kept, stats)
}

/// Reads every file in order and keeps the records `policy` admits.
pub fn load_filtered(
    paths: &[PathBuf],
    policy: &FilterPolicy,
) -> Result<(Vec<FeatureRecord>, FilterStats)> {
    let mut stats = FilterStats::default();
    let mut kept = Vec::new();
    for path in paths {
        for r in RecordReader::open(path)? {
            let r = r?;
            if stats.observe(policy, &r) {
                kept.push(r);
            }
        }
    }
    info!(
        "loaded {} records, kept {}, dropped {} unlabeled and {} outside {}",
        stats.read, stats.kept, stats.dropped_unlabeled, stats.dropped_out_of_year, policy.year
    );
    Ok((kept, stats))
}

/// Groups records by first-seen month; iteration order is chronological.
pub fn partition_by_month(
    records: impl IntoIterator<Item = FeatureRecord>,
) -> BTreeMap<YearMonth, Vec<FeatureRecord>> {
    let mut buckets: BTreeMap<YearMonth, Vec<FeatureRecord>> = BTreeMap::new();
    for r in records {
        buckets.entry(r.appeared).or_default().push(r);
    }
    buckets
}

/// Writes one `YYYY-MM.jsonl` file per bucket and returns the paths.
pub fn write_month_files(
    dir: &Path,
    buckets: &BTreeMap<YearMonth, Vec<FeatureRecord>>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(buckets.len());
    for (month, records) in buckets {
        let path = dir.join(format!("{month}.jsonl"));
        write_records(&path, records)?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<FeatureRecord>,
    pub test: Vec<FeatureRecord>,
    pub seed: u64,
    pub ratio: f64,
}

/// Per-class train positions for a stratified split. Returns a train flag
/// per input index.
pub fn stratified_train_mask(classes: &[usize], ratio: f64, master_seed: u64) -> Result<Vec<bool>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio {ratio} must lie strictly between 0 and 1"
        )));
    }
    let mut rng = seed::rng(master_seed, Stream::Split);
    let mut mask = vec![false; classes.len()];
    for class in 0..2 {
        let mut members: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::Stratification(format!(
                "class {class} has {} records, need at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        for &i in &members[..n_train] {
            mask[i] = true;
        }
    }
    Ok(mask)
}

/// Stratified, seeded train/test split. Both halves keep input order.
pub fn split_train_test(records: Vec<FeatureRecord>, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    let classes = records
        .iter()
        .map(|r| {
            r.label
                .class()
                .ok_or_else(|| Error::Stratification(format!("record {} is unlabeled", r.sha256)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mask = stratified_train_mask(&classes, ratio, seed)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (r, in_train) in records.into_iter().zip(mask) {
        if in_train {
            train.push(r);
        } else {
            test.push(r);
        }
    }
    Ok(DatasetSplit {
        train,
        test,
        seed,
        ratio,
    })
}
