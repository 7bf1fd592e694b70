//! Train/test partitions by performer, camera, or explicit sample lists.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::Sample;
use crate::error::{DataError, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    /// Partition by performer id.
    CrossSubject,
    /// Partition by camera id.
    CrossView,
    /// Partition by camera id with both sides listed explicitly, e.g. two
    /// views for training and two for testing.
    ViewCombination,
    /// Partition by 0-based position in the sample index.
    Manifest,
}

impl FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-subject" => Ok(SplitKind::CrossSubject),
            "cross-view" => Ok(SplitKind::CrossView),
            "view-combination" => Ok(SplitKind::ViewCombination),
            "manifest" => Ok(SplitKind::Manifest),
            other => Err(Error::invalid(format!(
                "unknown split kind {other:?} (cross-subject, cross-view, view-combination, manifest)"
            ))),
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::CrossSubject => "cross-subject",
            SplitKind::CrossView => "cross-view",
            SplitKind::ViewCombination => "view-combination",
            SplitKind::Manifest => "manifest",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitProtocol {
    pub kind: SplitKind,
    pub train_ids: BTreeSet<u32>,
    /// Everything not in `train_ids` when unset.
    pub test_ids: Option<BTreeSet<u32>>,
}

fn parse_ids(text: &str) -> Result<BTreeSet<u32>> {
    let mut out = BTreeSet::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || Error::invalid(format!("bad id {part:?}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u32, u32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => {
                out.insert(part.parse().map_err(|_| bad())?);
            }
        }
    }
    Ok(out)
}

impl SplitProtocol {
    pub fn new(kind: SplitKind, train_ids: BTreeSet<u32>, test_ids: Option<BTreeSet<u32>>) -> Result<Self> {
        if train_ids.is_empty() {
            return Err(Error::invalid("split protocol lists no training ids"));
        }
        if let Some(test) = &test_ids {
            if let Some(id) = train_ids.intersection(test).next() {
                return Err(Error::invalid(format!("id {id} is on both sides of the split")));
            }
        }
        if kind == SplitKind::ViewCombination && test_ids.is_none() {
            return Err(Error::invalid("view-combination protocols must list test_ids"));
        }
        Ok(SplitProtocol {
            kind,
            train_ids,
            test_ids,
        })
    }

    /// Parses `key=value` lines: `kind`, `train_ids` and optional `test_ids`.
    /// Id lists are comma separated and may contain ranges such as `3-7`.
    pub fn parse(text: &str) -> Result<Self> {
        let (mut kind, mut train, mut test) = (None, None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("protocol line {line:?} is not key=value")))?;
            match k.trim() {
                "kind" => kind = Some(v.trim().parse::<SplitKind>()?),
                "train_ids" => train = Some(parse_ids(v)?),
                "test_ids" => test = Some(parse_ids(v)?),
                other => return Err(Error::invalid(format!("unknown protocol key {other:?}"))),
            }
        }
        let kind = kind.ok_or_else(|| Error::invalid("protocol lacks kind"))?;
        let train = train.ok_or_else(|| Error::invalid("protocol lacks train_ids"))?;
        Self::new(kind, train, test)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn key(&self, position: usize, sample: &Sample) -> Result<u32> {
        let (value, field) = match self.kind {
            SplitKind::CrossSubject => (sample.meta.subject, "subject"),
            SplitKind::CrossView | SplitKind::ViewCombination => (sample.meta.camera, "camera"),
            SplitKind::Manifest => (u32::try_from(position).ok(), "position"),
        };
        value.ok_or_else(|| {
            DataError::MissingField {
                sample: sample.id.clone(),
                field,
            }
            .into()
        })
    }
}

/// Positions of the training and test samples.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Assigns every sample to exactly one side; a sample that matches neither
/// side is an error.
pub fn apply_split(samples: &[Sample], protocol: &SplitProtocol) -> Result<Split> {
    let mut split = Split::default();
    for (i, s) in samples.iter().enumerate() {
        let key = protocol.key(i, s)?;
        if protocol.train_ids.contains(&key) {
            split.train.push(i);
        } else if protocol.test_ids.as_ref().is_none_or(|t| t.contains(&key)) {
            split.test.push(i);
        } else {
            return Err(DataError::Protocol(format!(
                "sample {} has {} id {key}, which is on neither side",
                s.id, protocol.kind
            ))
            .into());
        }
    }
    Ok(split)
}
