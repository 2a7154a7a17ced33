//! Deterministic synthetic tracking sequences: flat-colored rectangles moving
//! at constant integer velocity over a noisy gray background.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{identity_color, RgbImage};
use super::mot::{format_gt, GtRecord, PEDESTRIAN_CLASS};
use super::seqinfo::SequenceDescriptor;
use super::{write_bytes, DataError};
use crate::geometry::PixelBox;

const BACKGROUND: i32 = 96;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticObject {
    pub id: u32,
    /// First frame (1-based) on which the object exists.
    pub spawn: u32,
    /// First frame on which the object no longer exists, if scheduled.
    pub despawn: Option<u32>,
    /// Top-left corner on the spawn frame.
    pub left: i64,
    pub top: i64,
    pub width: u32,
    pub height: u32,
    /// Pixels per frame.
    pub velocity: (i64, i64),
}

/// Frames `first..=last` on which an object is hidden: not drawn and
/// marked invisible in the ground truth, while its geometry keeps moving.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Occlusion {
    pub id: u32,
    pub first: u32,
    pub last: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub name: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    pub frame_rate: f64,
    /// Half-range of the uniform background noise.
    pub noise: u8,
    pub objects: Vec<SyntheticObject>,
    pub occlusions: Vec<Occlusion>,
}

impl SyntheticObject {
    /// Unclipped `(left, top)` on `frame`, if the object exists there.
    fn position(&self, frame: u32, width: u32, height: u32) -> Option<(i64, i64)> {
        if frame < self.spawn || self.despawn.is_some_and(|d| frame >= d) {
            return None;
        }
        let dt = (frame - self.spawn) as i64;
        let left = self.left + self.velocity.0 * dt;
        let top = self.top + self.velocity.1 * dt;
        // twice the center, to stay in integers
        let cx2 = 2 * left + self.width as i64;
        let cy2 = 2 * top + self.height as i64;
        let inside = (0..2 * width as i64).contains(&cx2) && (0..2 * height as i64).contains(&cy2);
        inside.then_some((left, top))
    }

    /// Box clipped to the image as integer `(x0, y0, x1, y1)`, exclusive end.
    fn clipped(&self, frame: u32, width: u32, height: u32) -> Option<(i64, i64, i64, i64)> {
        let (l, t) = self.position(frame, width, height)?;
        let x0 = l.max(0);
        let y0 = t.max(0);
        let x1 = (l + self.width as i64).min(width as i64);
        let y1 = (t + self.height as i64).min(height as i64);
        (x1 > x0 && y1 > y0).then_some((x0, y0, x1, y1))
    }
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Invalid(format!("scene `{}`: {m}", self.name)));
        if self.frames == 0 {
            return bad("zero frames".into());
        }
        if self.objects.is_empty() {
            return bad("zero objects".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if o.id == 0 || !ids.insert(o.id) {
                return bad(format!("object identity {} is zero or repeated", o.id));
            }
            if o.width == 0 || o.height == 0 {
                return bad(format!("object {} has an empty size", o.id));
            }
            if o.spawn < 1 || o.spawn > self.frames {
                return bad(format!("object {} spawns outside the sequence", o.id));
            }
            let fits = o.left >= 0
                && o.top >= 0
                && o.left + o.width as i64 <= self.width as i64
                && o.top + o.height as i64 <= self.height as i64;
            if !fits {
                return bad(format!("object {} does not fit the image when it spawns", o.id));
            }
        }
        for oc in &self.occlusions {
            if !ids.contains(&oc.id) || oc.first > oc.last {
                return bad(format!("invalid occlusion event for object {}", oc.id));
            }
        }
        Ok(())
    }

    fn occluded(&self, id: u32, frame: u32) -> bool {
        self.occlusions
            .iter()
            .any(|o| o.id == id && (o.first..=o.last).contains(&frame))
    }

    pub fn generate(&self) -> Result<SyntheticSequence<'_>, DataError> {
        self.validate()?;
        Ok(SyntheticSequence { scene: self })
    }
}

/// A validated scene; frames are rendered on demand.
#[derive(Clone, Copy, Debug)]
pub struct SyntheticSequence<'a> {
    scene: &'a SyntheticScene,
}

impl SyntheticSequence<'_> {
    pub fn descriptor(&self) -> SequenceDescriptor {
        let s = self.scene;
        SequenceDescriptor {
            name: s.name.clone(),
            im_dir: "img1".into(),
            frame_rate: s.frame_rate,
            seq_length: s.frames,
            im_width: s.width,
            im_height: s.height,
            im_ext: ".ppm".into(),
        }
    }

    /// Renders frame `frame` and returns it with the per-identity count of
    /// visible pixels.
    fn render_with_coverage(&self, frame: u32) -> (RgbImage, Vec<(u32, usize)>) {
        let s = self.scene;
        let mut img = RgbImage::new(s.width, s.height);
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(frame as u64);
        let n = s.noise as i32;
        for px in img.data.chunks_exact_mut(3) {
            let v = (BACKGROUND + if n > 0 { rng.random_range(-n..=n) } else { 0 }).clamp(0, 255) as u8;
            px.fill(v);
        }
        // identity buffer: 0 is background, later identities paint on top
        let mut owner = vec![0u32; s.width as usize * s.height as usize];
        let mut order: Vec<&SyntheticObject> = s.objects.iter().collect();
        order.sort_by_key(|o| o.id);
        for o in &order {
            if s.occluded(o.id, frame) {
                continue;
            }
            let Some((x0, y0, x1, y1)) = o.clipped(frame, s.width, s.height) else {
                continue;
            };
            let color = identity_color(o.id);
            for y in y0..y1 {
                for x in x0..x1 {
                    owner[y as usize * s.width as usize + x as usize] = o.id;
                    img.put(x as u32, y as u32, color);
                }
            }
        }
        let coverage = order
            .iter()
            .map(|o| (o.id, owner.iter().filter(|&&v| v == o.id).count()))
            .collect();
        (img, coverage)
    }

    pub fn render(&self, frame: u32) -> RgbImage {
        self.render_with_coverage(frame).0
    }

    /// Ground truth for one frame; `coverage` gives visible pixel counts.
    fn frame_gt(&self, frame: u32, coverage: &[(u32, usize)]) -> Vec<GtRecord> {
        let s = self.scene;
        let mut out = Vec::new();
        for o in &s.objects {
            let Some((x0, y0, x1, y1)) = o.clipped(frame, s.width, s.height) else {
                continue;
            };
            let area = ((x1 - x0) * (y1 - y0)) as f64;
            let visible = coverage.iter().find(|c| c.0 == o.id).map_or(0, |c| c.1) as f64;
            let visibility = visible / area;
            out.push(GtRecord {
                frame,
                id: o.id,
                bbox: PixelBox::new(x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64),
                consider: if visibility > 0.0 { 1.0 } else { 0.0 },
                class: PEDESTRIAN_CLASS,
                visibility,
            });
        }
        out.sort_by_key(|r| r.id);
        out
    }

    pub fn ground_truth(&self) -> Vec<GtRecord> {
        (1..=self.scene.frames)
            .flat_map(|f| {
                let (_, cov) = self.render_with_coverage(f);
                self.frame_gt(f, &cov)
            })
            .collect()
    }

    /// Writes `<root>/<name>/{seqinfo.ini, img1/NNNNNN.ppm, gt/gt.txt}` and
    /// returns the sequence directory.
    pub fn write_mot(&self, root: &Path) -> Result<PathBuf, DataError> {
        let desc = self.descriptor();
        let dir = root.join(&desc.name);
        desc.save(&dir.join("seqinfo.ini"))?;
        let mut gt = Vec::new();
        for f in 1..=self.scene.frames {
            let (img, cov) = self.render_with_coverage(f);
            img.save_ppm(&dir.join(&desc.im_dir).join(desc.frame_file(f)))?;
            gt.extend(self.frame_gt(f, &cov));
        }
        write_bytes(&dir.join("gt").join("gt.txt"), format_gt(&gt).as_bytes())?;
        Ok(dir)
    }
}

/// Random scene parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSampler {
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    pub min_objects: u32,
    pub max_objects: u32,
    /// Object side range as a fraction of the shorter image side.
    pub min_size: f64,
    pub max_size: f64,
    /// Largest velocity component in pixels per frame.
    pub max_speed: i64,
    /// Probability that an object is born after the first frame.
    pub late_spawn: f64,
    /// Probability that an object has one occlusion event.
    pub occlusion: f64,
    pub noise: u8,
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            width: 640,
            height: 640,
            frames: 60,
            min_objects: 4,
            max_objects: 8,
            min_size: 0.08,
            max_size: 0.2,
            max_speed: 4,
            late_spawn: 0.3,
            occlusion: 0.2,
            noise: 12,
        }
    }
}

impl SceneSampler {
    /// Defaults rescaled to a square image of side `side`.
    pub fn with_side(side: u32) -> Self {
        Self {
            width: side,
            height: side,
            max_speed: ((side as f64 / 160.0).round() as i64).max(1),
            ..Self::default()
        }
    }

    pub fn sample(&self, name: impl Into<String>, seed: u64) -> SyntheticScene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(self.min_objects..=self.max_objects.max(self.min_objects));
        let short = self.width.min(self.height) as f64;
        let lo = ((self.min_size * short).round() as u32).max(1);
        let hi = ((self.max_size * short).round() as u32).max(lo);
        let mut objects = Vec::new();
        let mut occlusions = Vec::new();
        for id in 1..=n {
            let width = rng.random_range(lo..=hi).min(self.width);
            let height = rng.random_range(lo..=hi).min(self.height);
            let spawn = if self.frames > 2 && rng.random_bool(self.late_spawn) {
                rng.random_range(2..=(2 * self.frames / 3).max(2))
            } else {
                1
            };
            let left = rng.random_range(0..=(self.width - width) as i64);
            let top = rng.random_range(0..=(self.height - height) as i64);
            let s = self.max_speed;
            let velocity = (rng.random_range(-s..=s), rng.random_range(-s..=s));
            let despawn = (rng.random_bool(0.15) && spawn + 2 < self.frames)
                .then(|| rng.random_range(spawn + 2..=self.frames));
            objects.push(SyntheticObject {
                id,
                spawn,
                despawn,
                left,
                top,
                width,
                height,
                velocity,
            });
            if rng.random_bool(self.occlusion) && spawn + 3 < self.frames {
                let first = rng.random_range(spawn + 1..self.frames - 1);
                let len = rng.random_range(2..=5);
                occlusions.push(Occlusion {
                    id,
                    first,
                    last: (first + len - 1).min(self.frames),
                });
            }
        }
        SyntheticScene {
            name: name.into(),
            seed,
            width: self.width,
            height: self.height,
            frames: self.frames,
            frame_rate: 30.0,
            noise: self.noise,
            objects,
            occlusions,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::mot::{group_gt, parse_gt_records};
    use crate::metrics::{evaluate_sequence, SequenceEval};

    fn one_object(velocity: (i64, i64), despawn: Option<u32>) -> SyntheticScene {
        SyntheticScene {
            name: "s".into(),
            seed: 3,
            width: 64,
            height: 48,
            frames: 10,
            frame_rate: 30.0,
            noise: 8,
            objects: vec![SyntheticObject {
                id: 1,
                spawn: 1,
                despawn,
                left: 4,
                top: 5,
                width: 8,
                height: 6,
                velocity,
            }],
            occlusions: vec![],
        }
    }

    #[test]
    fn constant_velocity_kinematics() {
        let scene = one_object((2, 0), None);
        let gt = scene.generate().unwrap().ground_truth();
        assert_eq!(gt.len(), 10);
        for w in gt.windows(2) {
            assert_eq!(w[1].bbox.left - w[0].bbox.left, 2.0);
            assert_eq!(w[1].bbox.top, w[0].bbox.top);
        }
    }

    #[test]
    fn scheduled_despawn() {
        let scene = one_object((1, 1), Some(6));
        let frames: Vec<u32> = scene.generate().unwrap().ground_truth().iter().map(|r| r.frame).collect();
        assert_eq!(frames, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn leaving_the_image_despawns_and_clips() {
        let mut scene = one_object((20, 0), None);
        scene.objects[0].left = 40;
        let gt = scene.generate().unwrap().ground_truth();
        // centers at 44, 64(out)
        assert_eq!(gt.len(), 1);
        let mut scene = one_object((6, 0), None);
        scene.objects[0].left = 52;
        let gt = scene.generate().unwrap().ground_truth();
        // frame 2: left 58, center 62 inside, clipped to width 6
        assert_eq!(gt[1].bbox.width, 6.0);
        assert_eq!(gt.len(), 2);
    }

    #[test]
    fn rendered_pixels_match_geometry() {
        let scene = one_object((2, 1), None);
        let seq = scene.generate().unwrap();
        let img = seq.render(3);
        let color = identity_color(1);
        // frame 3: left 8, top 7, 8×6
        assert_eq!(img.pixel(8, 7), color);
        assert_eq!(img.pixel(15, 12), color);
        assert_ne!(img.pixel(16, 12), color);
        assert_ne!(img.pixel(8, 13), color);
    }

    #[test]
    fn occlusion_hides_but_keeps_geometry() {
        let mut scene = one_object((1, 0), None);
        scene.occlusions.push(Occlusion { id: 1, first: 3, last: 4 });
        let seq = scene.generate().unwrap();
        let gt = seq.ground_truth();
        assert_eq!(gt.len(), 10);
        assert_eq!(gt[2].visibility, 0.0);
        assert_eq!(gt[2].consider, 0.0);
        assert_eq!(gt[2].bbox.left, 6.0);
        assert_eq!(gt[4].visibility, 1.0);
        assert_ne!(seq.render(3).pixel(7, 6), identity_color(1));
    }

    #[test]
    fn overlap_reduces_visibility() {
        let mut scene = one_object((0, 0), None);
        let mut top = scene.objects[0].clone();
        top.id = 2;
        top.left = 8;
        scene.objects.push(top);
        let gt = scene.generate().unwrap().ground_truth();
        assert!((gt[0].visibility - 0.5).abs() < 1e-12);
        assert_eq!(gt[1].visibility, 1.0);
    }

    #[test]
    fn rejects_degenerate_scenes() {
        let mut s = one_object((0, 0), None);
        s.frames = 0;
        assert!(s.generate().is_err());
        let mut s = one_object((0, 0), None);
        s.objects.clear();
        assert!(s.generate().is_err());
        let mut s = one_object((0, 0), None);
        s.objects[0].left = 60;
        assert!(s.generate().is_err());
    }

    #[test]
    fn sampled_scene_is_deterministic_on_disk() {
        let sampler = SceneSampler {
            frames: 6,
            ..SceneSampler::with_side(64)
        };
        let scene = sampler.sample("seq-a", 11);
        assert_eq!(scene, sampler.sample("seq-a", 11));
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let da = scene.generate().unwrap().write_mot(a.path()).unwrap();
        let db = scene.generate().unwrap().write_mot(b.path()).unwrap();
        for rel in ["seqinfo.ini", "gt/gt.txt", "img1/000001.ppm", "img1/000006.ppm"] {
            assert_eq!(std::fs::read(da.join(rel)).unwrap(), std::fs::read(db.join(rel)).unwrap(), "{rel}");
        }
        let info = SequenceDescriptor::load(&da.join("seqinfo.ini")).unwrap();
        assert_eq!((info.seq_length, info.im_width), (6, 64));
    }

    #[test]
    fn perfect_self_evaluation() {
        for seed in 0..5 {
            let scene = SceneSampler {
                frames: 12,
                ..SceneSampler::with_side(96)
            }
            .sample("p", seed);
            let text = format_gt(&scene.generate().unwrap().ground_truth());
            let gt = group_gt(&parse_gt_records(&text).unwrap());
            let seq = SequenceEval::from_maps("p", &gt, &gt).unwrap();
            let r = evaluate_sequence(&seq).report().unwrap();
            assert_eq!((r.mota, r.idf1, r.hota), (1.0, 1.0, 1.0));
        }
    }
}
