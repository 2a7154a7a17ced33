//! Checks shared by the fuzz targets, callable from stable tests.

use querytrack_core::io::archive::Archive;
use querytrack_core::io::image::RgbImage;
use querytrack_core::io::mot::{format_gt, format_results, parse_gt_records, parse_results_str};
use querytrack_core::io::seqinfo::SequenceDescriptor;
use querytrack_model::model::Checkpoint;
use querytrack_model::{ModelConfig, TrainConfig};

pub fn gt(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(records) = parse_gt_records(text) else { return };
    let again = parse_gt_records(&format_gt(&records)).expect("formatted ground truth parses");
    assert_eq!(again.len(), records.len());
}

pub fn results(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(frames) = parse_results_str(text) else { return };
    if let Ok(out) = format_results(&frames) {
        let again = parse_results_str(&out).expect("formatted results parse");
        assert_eq!(again.len(), frames.len());
    }
}

pub fn seqinfo(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(d) = SequenceDescriptor::parse(text) else { return };
    let again = SequenceDescriptor::parse(&d.to_ini()).expect("written descriptor parses");
    assert_eq!(again, d);
}

/// Lines starting with `--` are dotted overrides, the rest is the document.
pub fn config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (overrides, doc): (Vec<&str>, Vec<&str>) = text.lines().partition(|l| l.starts_with("--"));
    let overrides: Vec<String> = overrides.iter().map(|l| l[2..].to_string()).collect();
    let Ok(cfg) = TrainConfig::from_toml(&doc.join("\n"), &overrides) else { return };
    let again = TrainConfig::from_toml(&cfg.to_toml(), &[]).expect("resolved configuration reloads");
    assert_eq!(again.to_toml(), cfg.to_toml());
}

pub fn archive(data: &[u8]) {
    let Ok(a) = Archive::decode(data) else { return };
    let bytes = a.encode();
    let again = Archive::decode(&bytes).expect("encoded archive decodes");
    assert_eq!(again.encode(), bytes);
}

pub fn checkpoint(data: &[u8]) {
    let _ = Checkpoint::decode(data, Some(&ModelConfig::tiny()));
}

pub fn ppm(data: &[u8]) {
    let Ok(img) = RgbImage::decode_ppm(data) else { return };
    assert_eq!(img.data.len(), img.width as usize * img.height as usize * 3);
    let again = RgbImage::decode_ppm(&img.encode_ppm()).expect("encoded image decodes");
    assert_eq!(again, img);
}
