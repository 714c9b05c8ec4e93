use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{read_bag, Bag};
use crate::error::{MegtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = MegtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(MegtError::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// As written, relative to the manifest's directory.
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
    /// 1-based.
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Bag>,
    pub val: Vec<Bag>,
    pub test: Vec<Bag>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[Bag] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn push(&mut self, split: Split, bag: Bag) {
        match split {
            Split::Train => self.train.push(bag),
            Split::Val => self.val.push(bag),
            Split::Test => self.test.push(bag),
        }
    }
}

/// Train/val/test assignment by position: the first 70% train, the next
/// 10% val, the remainder test.
pub fn standard_split(n: usize) -> Vec<Split> {
    let train = n * 7 / 10;
    let val = n / 10;
    (0..n)
        .map(|i| match i {
            _ if i < train => Split::Train,
            _ if i < train + val => Split::Val,
            _ => Split::Test,
        })
        .collect()
}

/// Partitions in-memory bags with [`standard_split`].
pub fn split_bags(bags: Vec<Bag>) -> Splits {
    let labels = standard_split(bags.len());
    let mut splits = Splits::default();
    for (bag, split) in bags.into_iter().zip(labels) {
        splits.push(split, bag);
    }
    splits
}

/// Tab-separated `path<TAB>label<TAB>split`; blank lines and `#` lines are
/// skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        let [path, label, split] = fields[..] else {
            return Err(MegtError::Data(format!(
                "manifest line {line}: expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        };
        if path.is_empty() {
            return Err(MegtError::Data(format!("manifest line {line}: empty path")));
        }
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| MegtError::Data(format!("manifest line {line}: bad label {label:?}")))?;
        let split: Split = split.trim().parse().map_err(|e| match e {
            MegtError::Config(msg) => MegtError::Config(format!("manifest line {line}: {msg}")),
            other => other,
        })?;
        if !seen.insert(path.to_string()) {
            log::warn!("manifest line {line}: duplicate path {path}");
        }
        entries.push(ManifestEntry {
            path: PathBuf::from(path),
            label,
            split,
            line,
        });
    }
    if entries.is_empty() {
        return Err(MegtError::Config("manifest lists no bags".into()));
    }
    Ok(entries)
}

/// Reads every listed bag. The manifest label is authoritative; a differing
/// label inside the bag file is logged and overridden.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Splits> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut splits = Splits::default();
    for entry in parse_manifest(&text)? {
        let file = base.join(&entry.path);
        let mut bag = read_bag(&file).map_err(|e| match e {
            MegtError::Io(io) => MegtError::Data(format!(
                "manifest line {}: cannot read {}: {io}",
                entry.line,
                file.display()
            )),
            MegtError::Format(f) => MegtError::Data(format!(
                "manifest line {}: {}: {f}",
                entry.line,
                file.display()
            )),
            other => other,
        })?;
        if bag.label != entry.label {
            log::warn!(
                "manifest line {}: file label {} overridden by manifest label {}",
                entry.line,
                bag.label,
                entry.label
            );
            bag.label = entry.label;
        }
        splits.push(entry.split, bag);
    }
    Ok(splits)
}

pub fn write_manifest(path: impl AsRef<Path>, header: &str, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for line in header.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    for e in entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.path.display(), e.label, e.split));
    }
    fs::write(path, out)?;
    Ok(())
}
