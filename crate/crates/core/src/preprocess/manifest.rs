//! Slice manifests.
//!
//! One record per line, space separated:
//! `<relative_path> <label> <xmin> <ymin> <xmax> <ymax> <patient_id>`.
//! The four box fields may be omitted together (`<path> <label> <patient>`),
//! in which case the whole image is used. Blank lines and lines starting
//! with `#` are skipped.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::augment::CropBox;
use crate::class::Label;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Validation(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceRecord {
    pub image_path: String,
    pub label: Label,
    pub patient_id: String,
    pub crop: Option<CropBox>,
}

impl SliceRecord {
    pub fn to_line(&self) -> String {
        match self.crop {
            Some(b) => format!(
                "{} {} {} {} {} {} {}",
                self.image_path,
                self.label.index(),
                b.xmin,
                b.ymin,
                b.xmax,
                b.ymax,
                self.patient_id
            ),
            None => format!("{} {} {}", self.image_path, self.label.index(), self.patient_id),
        }
    }

    /// Crop box to use for an image of the given size.
    pub fn box_for(&self, width: usize, height: usize) -> Result<CropBox> {
        match self.crop {
            Some(b) => {
                b.check_inside(width, height)
                    .map_err(|e| Error::Validation(format!("{}: {e}", self.image_path)))?;
                Ok(b)
            }
            None => Ok(CropBox::full(width, height)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub split: Option<Split>,
    pub records: Vec<SliceRecord>,
}

impl Manifest {
    pub fn new(split: Option<Split>, records: Vec<SliceRecord>) -> Self {
        Manifest { split, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Parses manifest text. `origin` only labels error messages.
    pub fn parse(text: &str, origin: &Path, split: Option<Split>) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.display().to_string(),
                line: i + 1,
                message,
            };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let (path, label, crop, patient) = match tokens.as_slice() {
                [p, l, x0, y0, x1, y1, pid] => {
                    let n = |t: &str, what: &str| {
                        t.parse::<usize>()
                            .map_err(|_| err(format!("malformed box: {what} {t:?} is not a non-negative integer")))
                    };
                    let b = CropBox {
                        xmin: n(x0, "xmin")?,
                        ymin: n(y0, "ymin")?,
                        xmax: n(x1, "xmax")?,
                        ymax: n(y1, "ymax")?,
                    };
                    if b.xmin >= b.xmax || b.ymin >= b.ymax {
                        return Err(err(format!("malformed box: {x0} {y0} {x1} {y1} has no area")));
                    }
                    (*p, *l, Some(b), *pid)
                }
                [p, l, pid] => (*p, *l, None, *pid),
                _ => {
                    return Err(err(format!(
                        "expected 7 fields (or 3 without a box), found {}",
                        tokens.len()
                    )))
                }
            };
            let label = l_parse(label).ok_or_else(|| err(format!("unknown label {label:?}")))?;
            if !seen.insert(path.to_string()) {
                return Err(err(format!("duplicate image path {path}")));
            }
            records.push(SliceRecord {
                image_path: path.to_string(),
                label,
                patient_id: patient.to_string(),
                crop,
            });
        }
        Ok(Manifest { split, records })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        super::image::ensure_parent(path)?;
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Resolves a record's image path against `data_dir`.
    pub fn resolve(data_dir: &Path, record: &SliceRecord) -> PathBuf {
        data_dir.join(&record.image_path)
    }
}

fn l_parse(t: &str) -> Option<Label> {
    t.parse::<usize>().ok().and_then(|i| Label::from_index(i).ok())
}

/// Reads a manifest file. The split tag comes from the file stem when it is
/// `train`, `val` or `test`.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let split = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok());
    Manifest::parse(&text, path, split)
}
