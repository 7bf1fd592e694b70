//! Discovering videos on disk and parsing their metadata.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{DataError, Error, Result};

/// Identifiers encoded in an NTU-style name, `S001C002P003R002A013`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SampleMeta {
    pub setup: Option<u32>,
    pub camera: Option<u32>,
    pub subject: Option<u32>,
    pub replication: Option<u32>,
    pub action: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Directory holding the video's frames.
    pub path: PathBuf,
    pub label: usize,
    pub frames: usize,
    pub meta: SampleMeta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Naming {
    Ntu,
    Generic,
}

impl FromStr for Naming {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ntu" => Ok(Naming::Ntu),
            "generic" => Ok(Naming::Generic),
            other => Err(Error::invalid(format!("naming must be ntu or generic, got {other:?}"))),
        }
    }
}

impl fmt::Display for Naming {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Naming::Ntu => "ntu",
            Naming::Generic => "generic",
        })
    }
}

pub fn ntu_name(meta: &SampleMeta) -> String {
    format!(
        "S{:03}C{:03}P{:03}R{:03}A{:03}",
        meta.setup.unwrap_or(0),
        meta.camera.unwrap_or(0),
        meta.subject.unwrap_or(0),
        meta.replication.unwrap_or(0),
        meta.action.unwrap_or(0)
    )
}

/// Parses `SsssCcccPpppRrrrAaaa`, optionally followed by a suffix such as
/// `_depth` or an extension.
pub fn parse_ntu_name(name: &str) -> Option<SampleMeta> {
    let b = name.as_bytes();
    if b.len() < 20 {
        return None;
    }
    let mut fields = [0u32; 5];
    for (i, (tag, slot)) in b"SCPRA".iter().zip(fields.iter_mut()).enumerate() {
        let chunk = &b[i * 4..i * 4 + 4];
        if chunk[0] != *tag || !chunk[1..].iter().all(u8::is_ascii_digit) {
            return None;
        }
        *slot = std::str::from_utf8(&chunk[1..]).ok()?.parse().ok()?;
    }
    if b.len() > 20 && b[20].is_ascii_alphanumeric() {
        return None;
    }
    let [setup, camera, subject, replication, action] = fields;
    if action == 0 {
        return None;
    }
    Some(SampleMeta {
        setup: Some(setup),
        camera: Some(camera),
        subject: Some(subject),
        replication: Some(replication),
        action: Some(action),
    })
}

pub(crate) fn is_frame_file(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Frame files of one video directory, sorted by name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_frame_file(&path) {
            frames.push(path);
        }
    }
    frames.sort();
    Ok(frames)
}

/// Describes one frame directory outside any scan, for single-clip prediction.
pub fn single_video(dir: &Path) -> Result<Sample> {
    let frames = list_frames(dir)?.len();
    if frames == 0 {
        return Err(DataError::NoFrames(dir.to_path_buf()).into());
    }
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let meta = parse_ntu_name(&name).unwrap_or_default();
    Ok(Sample {
        id: name,
        path: dir.to_path_buf(),
        label: meta.action.map_or(0, |a| a as usize - 1),
        frames,
        meta,
    })
}

#[derive(Clone, Debug, Default)]
pub struct ScanReport {
    pub samples: Vec<Sample>,
    /// Paths that could not be indexed, with the reason.
    pub rejects: Vec<(PathBuf, String)>,
}

impl ScanReport {
    pub fn count_by<F: Fn(&Sample) -> Option<u32>>(&self, key: F) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            if let Some(k) = key(s) {
                *out.entry(k).or_insert(0) += 1;
            }
        }
        out
    }

    pub fn rejects_text(&self) -> String {
        self.rejects
            .iter()
            .map(|(p, why)| format!("{}\t{why}\n", p.display()))
            .collect()
    }
}

fn video_dirs(root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut children = Vec::new();
    let mut has_frames = false;
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() {
            children.push(path);
        } else if is_frame_file(&path) {
            has_frames = true;
        }
    }
    if has_frames {
        out.push(root.to_path_buf());
    }
    children.sort();
    for child in children {
        video_dirs(&child, out)?;
    }
    Ok(())
}

/// Indexes every video under `root`, ordered by path.
///
/// In `Ntu` mode each directory that directly contains frames is a video and
/// its name carries the metadata; the label is `action - 1`. In `Generic` mode
/// `root` is a manifest CSV (or a directory containing `manifest.csv`) with
/// rows `path,label[,subject,camera]`, paths relative to the manifest.
pub fn scan_dataset(root: &Path, naming: Naming) -> Result<ScanReport> {
    if !root.exists() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root does not exist"),
        ));
    }
    match naming {
        Naming::Ntu => scan_ntu(root),
        Naming::Generic => {
            let manifest = if root.is_dir() { root.join("manifest.csv") } else { root.to_path_buf() };
            scan_manifest(&manifest)
        }
    }
}

fn scan_ntu(root: &Path) -> Result<ScanReport> {
    let mut dirs = Vec::new();
    video_dirs(root, &mut dirs)?;
    let mut report = ScanReport::default();
    for dir in dirs {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match parse_ntu_name(&name) {
            Some(meta) => {
                let frames = list_frames(&dir)?.len();
                report.samples.push(Sample {
                    id: name,
                    path: dir,
                    label: meta.action.expect("parsed") as usize - 1,
                    frames,
                    meta,
                });
            }
            None => report.rejects.push((dir, "name does not match SsssCcccPpppRrrrAaaa".into())),
        }
    }
    Ok(report)
}

fn scan_manifest(manifest: &Path) -> Result<ScanReport> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(manifest)
        .map_err(|e| DataError::Manifest(format!("{}: {e}", manifest.display())))?;
    let mut report = ScanReport::default();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| DataError::Manifest(format!("{}: {e}", manifest.display())))?;
        if line == 0 && row.get(0) == Some("path") {
            continue;
        }
        let bad = |why: String| DataError::Manifest(format!("{} row {}: {why}", manifest.display(), line + 1));
        if row.len() < 2 || row.len() > 4 {
            return Err(bad(format!("expected 2 to 4 fields, got {}", row.len())).into());
        }
        let rel = &row[0];
        let label: usize = row[1].parse().map_err(|_| bad(format!("label {:?}", &row[1])))?;
        let id_field = |i: usize| -> Result<Option<u32>> {
            match row.get(i) {
                None | Some("") => Ok(None),
                Some(v) => v.parse().map(Some).map_err(|_| bad(format!("id {v:?}")).into()),
            }
        };
        let meta = SampleMeta {
            subject: id_field(2)?,
            camera: id_field(3)?,
            ..SampleMeta::default()
        };
        let path = base.join(rel);
        if !path.is_dir() {
            report.rejects.push((path, "not a directory of frames".into()));
            continue;
        }
        let frames = list_frames(&path)?.len();
        report.samples.push(Sample {
            id: rel.to_string(),
            path,
            label,
            frames,
            meta,
        });
    }
    report.samples.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(report)
}
