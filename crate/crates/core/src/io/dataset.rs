//! MOTChallenge directory layout: `<seq>/seqinfo.ini`, `<seq>/<imDir>/`,
//! `<seq>/gt/gt.txt`.

use std::path::{Path, PathBuf};

use super::image::RgbImage;
use super::mot::{parse_gt_records, GtRecord};
use super::seqinfo::SequenceDescriptor;
use super::{read_text, DataError};

#[derive(Clone, Debug)]
pub struct MotSequence {
    pub dir: PathBuf,
    pub info: SequenceDescriptor,
    /// Unfiltered ground truth; empty when the sequence has no `gt/gt.txt`.
    pub gt: Vec<GtRecord>,
}

impl MotSequence {
    pub fn open(dir: &Path) -> Result<Self, DataError> {
        let info = SequenceDescriptor::load(&dir.join("seqinfo.ini"))?;
        let gt_path = dir.join("gt").join("gt.txt");
        let gt = if gt_path.exists() {
            parse_gt_records(&read_text(&gt_path)?).map_err(|e| e.in_file(&gt_path))?
        } else {
            Vec::new()
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            info,
            gt,
        })
    }

    /// Every subdirectory of `root` containing a `seqinfo.ini`, sorted by name.
    pub fn list(root: &Path) -> Result<Vec<Self>, DataError> {
        let entries = std::fs::read_dir(root).map_err(|source| DataError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("seqinfo.ini").is_file())
            .collect();
        dirs.sort();
        dirs.iter().map(|d| Self::open(d)).collect()
    }

    pub fn name(&self) -> &str {
        &self.info.name
    }

    pub fn frame_path(&self, frame: u32) -> PathBuf {
        self.dir.join(&self.info.im_dir).join(self.info.frame_file(frame))
    }

    pub fn load_frame(&self, frame: u32) -> Result<RgbImage, DataError> {
        if frame < 1 || frame > self.info.seq_length {
            return Err(DataError::Invalid(format!(
                "{}: frame {frame} outside 1..={}",
                self.name(),
                self.info.seq_length
            )));
        }
        RgbImage::load(&self.frame_path(frame))
    }

    /// Ground truth of one frame, all records.
    pub fn gt_for_frame(&self, frame: u32) -> impl Iterator<Item = &GtRecord> {
        self.gt.iter().filter(move |r| r.frame == frame)
    }
}
