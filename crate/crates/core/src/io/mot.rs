//! MOTChallenge ground-truth and results files.
//!
//! Ground truth: `frame,id,left,top,width,height,conf,class,visibility`.
//! Results: `frame,id,left,top,width,height,score,-1,-1,-1`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_bytes, DataError};
use crate::geometry::{LabeledBox, PixelBox, MIN_SIDE};

/// Boxes grouped by frame number.
pub type FrameBoxes = BTreeMap<u32, Vec<LabeledBox<PixelBox>>>;

/// The pedestrian class in MOT17 ground truth.
pub const PEDESTRIAN_CLASS: i64 = 1;

/// One unfiltered ground-truth line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtRecord {
    pub frame: u32,
    pub id: u32,
    pub bbox: PixelBox,
    /// The "consider" flag: 0 marks boxes ignored by evaluation.
    pub consider: f64,
    pub class: i64,
    pub visibility: f64,
}

impl GtRecord {
    pub fn is_evaluated(&self) -> bool {
        self.consider != 0.0 && self.class == PEDESTRIAN_CLASS
    }
}

fn fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn num(lineno: usize, name: &str, s: &str) -> Result<f64, DataError> {
    let v: f64 = s
        .parse()
        .map_err(|_| DataError::parse(lineno, format!("field `{name}`: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(DataError::parse(lineno, format!("field `{name}` is not finite")));
    }
    Ok(v)
}

fn positive_int(lineno: usize, name: &str, s: &str) -> Result<u32, DataError> {
    let v = num(lineno, name, s)?;
    if v.fract() != 0.0 {
        return Err(DataError::parse(lineno, format!("field `{name}`: `{s}` is not an integer")));
    }
    if v < 1.0 {
        return Err(DataError::parse(lineno, format!("field `{name}` must be >= 1, got {s}")));
    }
    if v > u32::MAX as f64 {
        return Err(DataError::parse(lineno, format!("field `{name}` too large")));
    }
    Ok(v as u32)
}

fn side(lineno: usize, name: &str, s: &str) -> Result<f64, DataError> {
    let v = num(lineno, name, s)?;
    if v < 0.0 {
        return Err(DataError::parse(lineno, format!("field `{name}` is negative")));
    }
    if v == 0.0 {
        log::warn!("line {lineno}: zero {name} inflated to {MIN_SIDE}");
        return Ok(MIN_SIDE);
    }
    Ok(v)
}

fn parse_box(lineno: usize, f: &[&str]) -> Result<(u32, u32, PixelBox), DataError> {
    let frame = positive_int(lineno, "frame", f[0])?;
    let id = positive_int(lineno, "id", f[1])?;
    let left = num(lineno, "left", f[2])?;
    let top = num(lineno, "top", f[3])?;
    let width = side(lineno, "width", f[4])?;
    let height = side(lineno, "height", f[5])?;
    Ok((frame, id, PixelBox::new(left, top, width, height)))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Every ground-truth line, unfiltered.
pub fn parse_gt_records(text: &str) -> Result<Vec<GtRecord>, DataError> {
    let mut out = Vec::new();
    for (lineno, line) in content_lines(text) {
        let f = fields(line);
        if f.len() < 9 {
            return Err(DataError::parse(
                lineno,
                format!("expected 9 comma-separated fields, found {}", f.len()),
            ));
        }
        let (frame, id, bbox) = parse_box(lineno, &f)?;
        let consider = num(lineno, "conf", f[6])?;
        let class = num(lineno, "class", f[7])?;
        if class.fract() != 0.0 {
            return Err(DataError::parse(lineno, "field `class` is not an integer"));
        }
        let visibility = num(lineno, "visibility", f[8])?;
        out.push(GtRecord {
            frame,
            id,
            bbox,
            consider,
            class: class as i64,
            visibility,
        });
    }
    Ok(out)
}

/// Groups evaluated records (pedestrian class, consider flag set) by frame.
pub fn group_gt(records: &[GtRecord]) -> FrameBoxes {
    let mut out = FrameBoxes::new();
    for r in records.iter().filter(|r| r.is_evaluated()) {
        out.entry(r.frame)
            .or_default()
            .push(LabeledBox::tracked(r.bbox, r.id, 1.0));
    }
    for v in out.values_mut() {
        v.sort_by_key(|b| b.identity);
    }
    out
}

/// Parses ground truth text and applies the evaluation filter.
pub fn parse_gt_str(text: &str) -> Result<FrameBoxes, DataError> {
    Ok(group_gt(&parse_gt_records(text)?))
}

pub fn parse_gt(path: &Path) -> Result<FrameBoxes, DataError> {
    parse_gt_str(&read_text(path)?).map_err(|e| e.in_file(path))
}

/// Parses a tracker results file.
pub fn parse_results_str(text: &str) -> Result<FrameBoxes, DataError> {
    let mut out = FrameBoxes::new();
    for (lineno, line) in content_lines(text) {
        let f = fields(line);
        if f.len() < 7 {
            return Err(DataError::parse(
                lineno,
                format!("expected at least 7 comma-separated fields, found {}", f.len()),
            ));
        }
        let (frame, id, bbox) = parse_box(lineno, &f)?;
        let score = num(lineno, "score", f[6])?;
        out.entry(frame).or_default().push(LabeledBox {
            bbox,
            class_id: 1,
            score,
            identity: Some(id),
        });
    }
    for v in out.values_mut() {
        v.sort_by_key(|b| b.identity);
    }
    Ok(out)
}

pub fn parse_results(path: &Path) -> Result<FrameBoxes, DataError> {
    parse_results_str(&read_text(path)?).map_err(|e| e.in_file(path))
}

/// Serializes results, frames ascending then identities ascending. Scores
/// carry six decimals; coordinates use the shortest exact representation.
pub fn format_results(frames: &FrameBoxes) -> Result<String, DataError> {
    let mut s = String::new();
    for (&frame, boxes) in frames {
        let mut sorted: Vec<_> = boxes.iter().collect();
        sorted.sort_by_key(|b| b.identity);
        for b in sorted {
            let id = match b.identity {
                Some(id) if id > 0 => id,
                _ => {
                    return Err(DataError::Invalid(format!(
                        "frame {frame}: result box without a positive identity"
                    )))
                }
            };
            let p = b.bbox;
            let _ = writeln!(
                s,
                "{frame},{id},{},{},{},{},{:.6},-1,-1,-1",
                p.left, p.top, p.width, p.height, b.score
            );
        }
    }
    Ok(s)
}

pub fn write_results(path: &Path, frames: &FrameBoxes) -> Result<(), DataError> {
    write_bytes(path, format_results(frames)?.as_bytes())
}

/// Serializes ground-truth records in MOTChallenge order.
pub fn format_gt(records: &[GtRecord]) -> String {
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let mut s = String::new();
    for r in sorted {
        let p = r.bbox;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.frame, r.id, p.left, p.top, p.width, p.height, r.consider, r.class, r.visibility
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gt_line_transcription() {
        let r = parse_gt_records("1,3,10,20,30,40,1,1,1.0\n").unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!((r[0].frame, r[0].id), (1, 3));
        assert_eq!(r[0].bbox, PixelBox::new(10.0, 20.0, 30.0, 40.0));
        let g = parse_gt_str("1,3,10,20,30,40,1,1,1.0\n").unwrap();
        assert_eq!(g[&1][0].identity, Some(3));
    }

    #[test]
    fn consider_flag_and_class_filter() {
        let g = parse_gt_str("1,3,10,20,30,40,0,1,1.0\n1,4,10,20,30,40,1,7,1.0\n2,5,1,1,1,1,1,1,0\n").unwrap();
        assert!(!g.contains_key(&1));
        assert_eq!(g[&2].len(), 1);
    }

    #[test]
    fn empty_file_is_valid() {
        assert!(parse_gt_str("").unwrap().is_empty());
        assert!(parse_results_str("\n\n").unwrap().is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_gt_str("1,1,0,0,1,1,1,1,1\n0,1,0,0,1,1,1,1,1\n").unwrap_err();
        assert!(matches!(e, DataError::Parse { line: 2, .. }), "{e}");
        let e = parse_gt_str("1,0,0,0,1,1,1,1,1\n").unwrap_err();
        assert!(e.to_string().contains("`id`"));
        let e = parse_gt_str("1,1,x,0,1,1,1,1,1\n").unwrap_err();
        assert!(e.to_string().contains("`left`"));
        let e = parse_gt_str("1,1,0,0,1,1\n").unwrap_err();
        assert!(e.to_string().contains("9"));
    }

    #[test]
    fn zero_sides_inflate() {
        let r = parse_gt_records("1,1,5,5,0,3,1,1,1\n").unwrap();
        assert_eq!(r[0].bbox.width, MIN_SIDE);
    }

    #[test]
    fn single_result_line_format() {
        let mut m = FrameBoxes::new();
        m.insert(
            3,
            vec![LabeledBox::tracked(PixelBox::new(1.5, 2.0, 30.25, 40.0), 7, 0.123456789)],
        );
        assert_eq!(format_results(&m).unwrap(), "3,7,1.5,2,30.25,40,0.123457,-1,-1,-1\n");
    }

    #[test]
    fn results_reject_missing_identity() {
        let mut m = FrameBoxes::new();
        m.insert(
            1,
            vec![LabeledBox {
                bbox: PixelBox::new(0.0, 0.0, 1.0, 1.0),
                class_id: 1,
                score: 1.0,
                identity: None,
            }],
        );
        assert!(matches!(format_results(&m), Err(DataError::Invalid(_))));
    }
}
