//! Sequence datasets in the OTB directory layout:
//!
//! ```text
//! root/train.txt, root/test.txt      one sequence id per line
//! root/<seq>/img/0001.png ...        frames, ordered by numeric file stem
//! root/<seq>/groundtruth_rect.txt    one "x,y,w,h" line per frame
//! root/<seq>/attributes.txt          optional, 12 comma-separated 0/1 flags
//! ```
//!
//! A ground-truth line of all zeros or containing NaN marks a frame where
//! the target is absent.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::image::{image_dimensions, read_image};
use crate::error::{Error, Result};
use crate::guidance::BBox;
use crate::tensor::Tensor;

pub const ATTRIBUTE_COUNT: usize = 12;
pub const GROUND_TRUTH_FILE: &str = "groundtruth_rect.txt";
pub const ATTRIBUTE_FILE: &str = "attributes.txt";
const FRAME_EXTENSIONS: [&str; 5] = ["png", "ppm", "pnm", "jpg", "jpeg"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("sequence {seq}: missing {GROUND_TRUTH_FILE}")]
    MissingGroundTruth { seq: String },
    #[error("sequence {seq}: no frames under img/")]
    NoFrames { seq: String },
    #[error("sequence {seq}: {frames} frames but {boxes} ground-truth lines")]
    CountMismatch { seq: String, frames: usize, boxes: usize },
    #[error("sequence {seq}: {file} line {line}: {message}")]
    BadLine {
        seq: String,
        file: &'static str,
        line: usize,
        message: String,
    },
    #[error("sequence {seq}: unreadable frame {}: {message}", path.display())]
    UnreadableFrame {
        seq: String,
        path: PathBuf,
        message: String,
    },
    #[error("sequence {seq} listed in {split}.txt does not exist")]
    UnknownSequence { seq: String, split: Split },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub id: String,
    pub frames: Vec<PathBuf>,
    /// One entry per frame; `None` where the target is absent.
    pub boxes: Vec<Option<BBox>>,
    pub attributes: Option<[bool; ATTRIBUTE_COUNT]>,
    pub split: Split,
    /// `(width, height)` of the first frame.
    pub frame_size: (usize, usize),
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn load_frame(&self, index: usize) -> Result<Tensor> {
        read_image(&self.frames[index])
    }

    pub fn has_attribute(&self, index: usize) -> bool {
        self.attributes.is_some_and(|a| a.get(index).copied().unwrap_or(false))
    }
}

/// Parses one ground-truth line; comma or tab separated.
pub fn parse_box_line(line: &str) -> std::result::Result<Option<BBox>, String> {
    let fields: Vec<&str> = line
        .split([',', '\t'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 fields, found {}", fields.len()));
    }
    let mut v = [0.0; 4];
    for (dst, f) in v.iter_mut().zip(&fields) {
        *dst = f.parse::<f64>().map_err(|_| format!("{f:?} is not a number"))?;
    }
    if v.iter().any(|x| x.is_nan()) || v.iter().all(|x| *x == 0.0) {
        return Ok(None);
    }
    BBox::new(v[0], v[1], v[2], v[3]).map(Some).map_err(|e| e.to_string())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn frame_paths(dir: &Path, seq: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|_| DatasetError::NoFrames { seq: seq.into() })?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| FRAME_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        match path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) {
            Some(n) => frames.push((n, path)),
            None => log::warn!("sequence {seq}: ignoring non-numeric frame {}", path.display()),
        }
    }
    frames.sort();
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

/// Reads and validates a single sequence directory.
pub fn load_sequence(dir: &Path, id: &str, split: Split) -> Result<SequenceRecord> {
    let frames = frame_paths(&dir.join("img"), id)?;
    if frames.is_empty() {
        return Err(DatasetError::NoFrames { seq: id.into() }.into());
    }
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    if !gt_path.is_file() {
        return Err(DatasetError::MissingGroundTruth { seq: id.into() }.into());
    }
    let text = read_text(&gt_path)?;
    let mut boxes = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let b = parse_box_line(line).map_err(|message| DatasetError::BadLine {
            seq: id.into(),
            file: GROUND_TRUTH_FILE,
            line: k + 1,
            message,
        })?;
        boxes.push((k + 1, b));
    }
    if boxes.len() != frames.len() {
        return Err(DatasetError::CountMismatch {
            seq: id.into(),
            frames: frames.len(),
            boxes: boxes.len(),
        }
        .into());
    }
    let unreadable = |path: &Path, e: Error| DatasetError::UnreadableFrame {
        seq: id.into(),
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let frame_size = image_dimensions(&frames[0]).map_err(|e| unreadable(&frames[0], e))?;
    for path in &frames[1..] {
        let size = image_dimensions(path).map_err(|e| unreadable(path, e))?;
        if size != frame_size {
            return Err(unreadable(
                path,
                Error::InvalidArgument(format!("size {size:?} differs from first frame {frame_size:?}")),
            )
            .into());
        }
    }
    for (line, b) in &boxes {
        if let Some(b) = b {
            if !b.overlaps_frame(frame_size.0, frame_size.1) {
                return Err(DatasetError::BadLine {
                    seq: id.into(),
                    file: GROUND_TRUTH_FILE,
                    line: *line,
                    message: format!("box lies outside the {}x{} frame", frame_size.0, frame_size.1),
                }
                .into());
            }
        }
    }

    let attr_path = dir.join(ATTRIBUTE_FILE);
    let attributes = if attr_path.is_file() {
        let text = read_text(&attr_path)?;
        let bad = |message: String| DatasetError::BadLine {
            seq: id.into(),
            file: ATTRIBUTE_FILE,
            line: 1,
            message,
        };
        let flags: Vec<&str> = text.trim().split(',').map(str::trim).collect();
        if flags.len() != ATTRIBUTE_COUNT {
            return Err(bad(format!("expected {ATTRIBUTE_COUNT} flags, found {}", flags.len())).into());
        }
        let mut out = [false; ATTRIBUTE_COUNT];
        for (dst, f) in out.iter_mut().zip(flags) {
            *dst = match f {
                "0" => false,
                "1" => true,
                other => return Err(bad(format!("flag {other:?} is not 0 or 1")).into()),
            };
        }
        Some(out)
    } else {
        None
    };

    Ok(SequenceRecord {
        id: id.into(),
        frames,
        boxes: boxes.into_iter().map(|(_, b)| b).collect(),
        attributes,
        split,
        frame_size,
    })
}

/// Sequences named in `root/<split>.txt`, in listed order. Without any
/// split list, every subdirectory holding ground truth is loaded, sorted
/// by name.
pub fn load_dataset(root: &Path, split: Split) -> Result<Vec<SequenceRecord>> {
    let list = root.join(format!("{split}.txt"));
    let ids: Vec<String> = if list.is_file() {
        read_text(&list)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect()
    } else if root.join("train.txt").is_file() || root.join("test.txt").is_file() {
        Vec::new()
    } else {
        let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        let mut ids = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(root, e))?.path();
            if path.join(GROUND_TRUTH_FILE).is_file() {
                if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                    ids.push(name.to_string());
                }
            }
        }
        ids.sort();
        ids
    };
    ids.iter()
        .map(|id| {
            let dir = root.join(id);
            if !dir.is_dir() {
                return Err(DatasetError::UnknownSequence { seq: id.clone(), split }.into());
            }
            load_sequence(&dir, id, split)
        })
        .collect()
}
