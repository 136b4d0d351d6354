use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pnm::load_image;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, ScoredImage, StereoSample};

pub const HEADER: [&str; 7] = [
    "left_path",
    "right_path",
    "score",
    "kind",
    "distortion",
    "level",
    "observers",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    #[serde(rename = "2d")]
    Mono,
    #[serde(rename = "3d")]
    Stereo,
}

/// One manifest row, with paths already resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub left_path: PathBuf,
    /// Absent for single-image records.
    pub right_path: Option<PathBuf>,
    pub score: f64,
    pub kind: RecordKind,
    pub distortion: String,
    pub level: String,
    pub observers: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

#[derive(Debug, Deserialize)]
struct Row {
    left_path: String,
    right_path: String,
    score: String,
    kind: String,
    distortion: String,
    level: String,
    observers: String,
}

fn parse_row(row: Row, base: &Path, line: u64) -> Result<ManifestRecord> {
    let err = |msg: String| Error::format(format!("manifest line {line}: {msg}"));
    let score: f64 = row
        .score
        .trim()
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite())
        .ok_or_else(|| err(format!("unparsable score {:?}", row.score)))?;
    let kind = match row.kind.trim() {
        "2d" => RecordKind::Mono,
        "3d" => RecordKind::Stereo,
        k => return Err(err(format!("kind must be 2d or 3d, got {k:?}"))),
    };
    let resolve = |p: &str| -> Result<PathBuf> {
        let p = Path::new(p.trim());
        let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        if !full.is_file() {
            return Err(err(format!("image {} not found", full.display())));
        }
        Ok(full)
    };
    if row.left_path.trim().is_empty() {
        return Err(err("left_path is empty".into()));
    }
    let left_path = resolve(&row.left_path)?;
    let right_path = match (kind, row.right_path.trim().is_empty()) {
        (RecordKind::Stereo, true) => return Err(err("3d record needs right_path".into())),
        (RecordKind::Stereo, false) => Some(resolve(&row.right_path)?),
        (RecordKind::Mono, true) => None,
        (RecordKind::Mono, false) => return Err(err("2d record must not have right_path".into())),
    };
    let observers = if row.observers.trim().is_empty() {
        None
    } else {
        Some(
            row.observers
                .split(';')
                .map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| err(format!("unparsable observer scores {:?}", row.observers)))?,
        )
    };
    Ok(ManifestRecord {
        left_path,
        right_path,
        score,
        kind,
        distortion: row.distortion.trim().to_owned(),
        level: row.level.trim().to_owned(),
        observers,
    })
}

impl DatasetManifest {
    /// Parses CSV text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::Headers)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::format(format!("manifest header: {e}")))?
            .clone();
        for col in HEADER {
            if !headers.iter().any(|h| h == col) {
                return Err(Error::format(format!("manifest is missing column `{col}`")));
            }
        }
        let mut records = Vec::new();
        for result in reader.deserialize::<Row>() {
            let row = result.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::format(format!("manifest line {line}: {e}"))
            })?;
            // Header is line 1; the reader has just consumed this record.
            let line = records.len() as u64 + 2;
            records.push(parse_row(row, base, line)?);
        }
        Ok(Self { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    /// CSV text with paths written relative to `base` when possible.
    pub fn to_csv(&self, base: &Path) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::format(e.to_string());
        w.write_record(HEADER).map_err(csv_err)?;
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned();
        for r in &self.records {
            let observers = r
                .observers
                .as_ref()
                .map(|o| o.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            let kind = match r.kind {
                RecordKind::Mono => "2d",
                RecordKind::Stereo => "3d",
            };
            w.write_record([
                rel(&r.left_path),
                r.right_path.as_deref().map(rel).unwrap_or_default(),
                format!("{}", r.score),
                kind.to_owned(),
                r.distortion.clone(),
                r.level.clone(),
                observers,
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        super::pnm::write_file(path, self.to_csv(base)?.as_bytes())
    }

    pub fn stereo(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(|r| r.kind == RecordKind::Stereo)
    }

    pub fn mono(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(|r| r.kind == RecordKind::Mono)
    }

    pub fn load_stereo_samples(&self) -> Result<Vec<StereoSample>> {
        self.stereo()
            .map(|r| {
                let right = r.right_path.as_ref().expect("validated 3d record");
                let mut s = StereoSample::new(load_image(&r.left_path)?, load_image(right)?, r.score)?;
                s.observers = r.observers.clone();
                Ok(s)
            })
            .collect()
    }

    pub fn load_scored_images(&self) -> Result<Vec<ScoredImage>> {
        self.mono()
            .map(|r| {
                Ok(ScoredImage {
                    image: load_image(&r.left_path)?,
                    score: r.score,
                })
            })
            .collect()
    }

    /// Every image the manifest names: single images and both stereo views.
    pub fn load_all_images(&self) -> Result<Vec<ImageTensor>> {
        let mut out = Vec::new();
        for r in &self.records {
            out.push(load_image(&r.left_path)?);
            if let Some(p) = &r.right_path {
                out.push(load_image(p)?);
            }
        }
        Ok(out)
    }
}
