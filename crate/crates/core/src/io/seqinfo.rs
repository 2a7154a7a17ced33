//! `seqinfo.ini` sequence descriptors.

use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_bytes, DataError};

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDescriptor {
    pub name: String,
    pub im_dir: String,
    pub frame_rate: f64,
    pub seq_length: u32,
    pub im_width: u32,
    pub im_height: u32,
    /// Image file extension including the dot; MOT17 uses `.jpg`.
    pub im_ext: String,
}

impl SequenceDescriptor {
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut name = None;
        let mut im_dir = None;
        let mut frame_rate = None;
        let mut seq_length = None;
        let mut im_width = None;
        let mut im_height = None;
        let mut im_ext = None;
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with(';') || line.starts_with('#') || line.starts_with('[') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(DataError::parse(lineno, format!("expected key=value, got `{line}`")));
            };
            let (k, v) = (k.trim(), v.trim());
            let int = |what: &str| -> Result<u32, DataError> {
                v.parse::<u32>()
                    .map_err(|_| DataError::parse(lineno, format!("`{what}` must be a non-negative integer, got `{v}`")))
            };
            match k {
                "name" => name = Some(v.to_string()),
                "imDir" => im_dir = Some(v.to_string()),
                "frameRate" => {
                    let r: f64 = v
                        .parse()
                        .map_err(|_| DataError::parse(lineno, format!("`frameRate` is not a number: `{v}`")))?;
                    frame_rate = Some(r)
                }
                "seqLength" => seq_length = Some(int("seqLength")?),
                "imWidth" => im_width = Some(int("imWidth")?),
                "imHeight" => im_height = Some(int("imHeight")?),
                "imExt" => im_ext = Some(v.to_string()),
                _ => {}
            }
        }
        let missing = |k: &str| DataError::Invalid(format!("seqinfo: missing key `{k}`"));
        let d = SequenceDescriptor {
            name: name.ok_or_else(|| missing("name"))?,
            im_dir: im_dir.ok_or_else(|| missing("imDir"))?,
            frame_rate: frame_rate.ok_or_else(|| missing("frameRate"))?,
            seq_length: seq_length.ok_or_else(|| missing("seqLength"))?,
            im_width: im_width.ok_or_else(|| missing("imWidth"))?,
            im_height: im_height.ok_or_else(|| missing("imHeight"))?,
            im_ext: im_ext.unwrap_or_else(|| ".jpg".to_string()),
        };
        if d.seq_length < 1 {
            return Err(DataError::Invalid("seqinfo: seqLength must be >= 1".into()));
        }
        if d.im_width == 0 || d.im_height == 0 {
            return Err(DataError::Invalid("seqinfo: image dimensions must be positive".into()));
        }
        if !(d.frame_rate.is_finite() && d.frame_rate > 0.0) {
            return Err(DataError::Invalid("seqinfo: frameRate must be positive".into()));
        }
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::parse(&read_text(path)?).map_err(|e| e.in_file(path))
    }

    pub fn to_ini(&self) -> String {
        let mut s = String::from("[Sequence]\n");
        let _ = writeln!(s, "name={}", self.name);
        let _ = writeln!(s, "imDir={}", self.im_dir);
        let _ = writeln!(s, "frameRate={}", self.frame_rate);
        let _ = writeln!(s, "seqLength={}", self.seq_length);
        let _ = writeln!(s, "imWidth={}", self.im_width);
        let _ = writeln!(s, "imHeight={}", self.im_height);
        let _ = writeln!(s, "imExt={}", self.im_ext);
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        write_bytes(path, self.to_ini().as_bytes())
    }

    /// File name of frame `index` (1-based), e.g. `000001.jpg`.
    pub fn frame_file(&self, index: u32) -> String {
        format!("{index:06}{}", self.im_ext)
    }
}
