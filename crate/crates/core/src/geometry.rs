//! Axis-aligned boxes in normalized and pixel coordinates.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Coordinates may overshoot the unit interval by this much and still be
/// accepted (clamped); sigmoid heads produce tiny drift.
pub const CLAMP_TOLERANCE: f64 = 1e-6;

/// Smallest side length accepted for ground-truth boxes.
pub const MIN_SIDE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("box coordinate {name}={value} outside the unit interval")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("box side {name}={value} must be positive")]
    NonPositiveSide { name: &'static str, value: f64 },
    #[error("non-finite box coordinate")]
    NonFinite,
    #[error("unknown box format `{0}`")]
    UnknownFormat(String),
    #[error("pixel conversion requires an image size")]
    MissingImageSize,
}

/// Normalized center-format box: every field is a fraction of image size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

fn clamp_unit(name: &'static str, v: f64, lo: f64) -> Result<f64, GeometryError> {
    if !v.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    if v < lo - CLAMP_TOLERANCE || v > 1.0 + CLAMP_TOLERANCE {
        return Err(GeometryError::OutOfRange { name, value: v });
    }
    Ok(v.clamp(lo, 1.0))
}

impl BoundingBox {
    /// Validates and clamps drift of at most [`CLAMP_TOLERANCE`].
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let cx = clamp_unit("cx", cx, 0.0)?;
        let cy = clamp_unit("cy", cy, 0.0)?;
        let w = clamp_unit("w", w, 0.0)?;
        let h = clamp_unit("h", h, 0.0)?;
        if w <= 0.0 {
            return Err(GeometryError::NonPositiveSide { name: "w", value: w });
        }
        if h <= 0.0 {
            return Err(GeometryError::NonPositiveSide { name: "h", value: h });
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Builds from normalized corners `(x1, y1, x2, y2)`.
    pub fn from_xyxy(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Converts to pixel left-top-width-height.
    pub fn to_pixels(&self, image_w: f64, image_h: f64) -> PixelBox {
        PixelBox {
            left: (self.cx - self.w / 2.0) * image_w,
            top: (self.cy - self.h / 2.0) * image_h,
            width: self.w * image_w,
            height: self.h * image_h,
        }
    }
}

/// Pixel-space left-top-width-height box as used by MOTChallenge files.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl PixelBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Self {
        Self {
            left,
            top,
            width,
            height,
        }
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.left * s, self.top * s, self.width * s, self.height * s)
    }

    /// Normalizes against an image size. Parts outside the image are clipped
    /// away first so the result satisfies the [`BoundingBox`] invariants.
    pub fn to_normalized(&self, image_w: f64, image_h: f64) -> Result<BoundingBox, GeometryError> {
        let x1 = (self.left / image_w).clamp(0.0, 1.0);
        let y1 = (self.top / image_h).clamp(0.0, 1.0);
        let x2 = ((self.left + self.width) / image_w).clamp(0.0, 1.0);
        let y2 = ((self.top + self.height) / image_h).clamp(0.0, 1.0);
        BoundingBox::from_xyxy(x1, y1, x2.max(x1 + MIN_SIDE), y2.max(y1 + MIN_SIDE))
    }
}

/// Anything with axis-aligned corners.
pub trait Corners {
    /// `(x1, y1, x2, y2)`.
    fn xyxy(&self) -> [f64; 4];
}

impl Corners for BoundingBox {
    fn xyxy(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }
}

impl Corners for PixelBox {
    fn xyxy(&self) -> [f64; 4] {
        [
            self.left,
            self.top,
            self.left + self.width,
            self.top + self.height,
        ]
    }
}

impl Corners for [f64; 4] {
    fn xyxy(&self) -> [f64; 4] {
        *self
    }
}

/// A box with class, confidence and an optional persistent identity.
///
/// Ground truth and emitted tracks always carry an identity; raw detections
/// do not.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledBox<B = BoundingBox> {
    pub bbox: B,
    pub class_id: u32,
    pub score: f64,
    pub identity: Option<u32>,
}

impl<B> LabeledBox<B> {
    pub fn tracked(bbox: B, identity: u32, score: f64) -> Self {
        Self {
            bbox,
            class_id: 1,
            score,
            identity: Some(identity),
        }
    }
}

fn inter_union<A: Corners, B: Corners>(a: &A, b: &B) -> (f64, f64) {
    let [ax1, ay1, ax2, ay2] = a.xyxy();
    let [bx1, by1, bx2, by2] = b.xyxy();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    (inter, union)
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou<A: Corners, B: Corners>(a: &A, b: &B) -> f64 {
    let (inter, union) = inter_union(a, b);
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `IoU − (C − U) / C` with `C` the enclosing box area.
pub fn giou<A: Corners, B: Corners>(a: &A, b: &B) -> f64 {
    let (inter, union) = inter_union(a, b);
    let [ax1, ay1, ax2, ay2] = a.xyxy();
    let [bx1, by1, bx2, by2] = b.xyxy();
    let enclosing = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    if union <= 0.0 || enclosing <= 0.0 {
        return 0.0;
    }
    inter / union - (enclosing - union) / enclosing
}

/// GIoU of two corner-form boxes and its gradient with respect to
/// `(a.x1, a.y1, a.x2, a.y2, b.x1, b.y1, b.x2, b.y2)`.
///
/// The gradient is the one-sided derivative where min/max selections tie.
pub fn giou_with_grad(a: [f64; 4], b: [f64; 4]) -> (f64, [f64; 8]) {
    let [ax1, ay1, ax2, ay2] = a;
    let [bx1, by1, bx2, by2] = b;
    let mut grad = [0.0; 8];

    // intersection extents and which box supplies each edge
    let (ix1, ix1_a) = if ax1 >= bx1 { (ax1, true) } else { (bx1, false) };
    let (iy1, iy1_a) = if ay1 >= by1 { (ay1, true) } else { (by1, false) };
    let (ix2, ix2_a) = if ax2 <= bx2 { (ax2, true) } else { (bx2, false) };
    let (iy2, iy2_a) = if ay2 <= by2 { (ay2, true) } else { (by2, false) };
    let iw_raw = ix2 - ix1;
    let ih_raw = iy2 - iy1;
    let iw = iw_raw.max(0.0);
    let ih = ih_raw.max(0.0);
    let inter = iw * ih;
    let area_a = (ax2 - ax1) * (ay2 - ay1);
    let area_b = (bx2 - bx1) * (by2 - by1);
    let union = area_a + area_b - inter;

    let (cx1, cx1_a) = if ax1 <= bx1 { (ax1, true) } else { (bx1, false) };
    let (cy1, cy1_a) = if ay1 <= by1 { (ay1, true) } else { (by1, false) };
    let (cx2, cx2_a) = if ax2 >= bx2 { (ax2, true) } else { (bx2, false) };
    let (cy2, cy2_a) = if ay2 >= by2 { (ay2, true) } else { (by2, false) };
    let cw = cx2 - cx1;
    let ch = cy2 - cy1;
    let enclosing = cw * ch;

    let value = inter / union - (enclosing - union) / enclosing;

    // value = I/U - 1 + U/C with U = Aa + Ab - I
    let d_union = -inter / (union * union) + 1.0 / enclosing;
    let d_inter_total = 1.0 / union - d_union;
    let d_enc = -union / (enclosing * enclosing);

    // indices: a = 0..4, b = 4..8
    let pick = |from_a: bool, k: usize| if from_a { k } else { k + 4 };

    // area terms
    grad[0] += d_union * -(ay2 - ay1);
    grad[2] += d_union * (ay2 - ay1);
    grad[1] += d_union * -(ax2 - ax1);
    grad[3] += d_union * (ax2 - ax1);
    grad[4] += d_union * -(by2 - by1);
    grad[6] += d_union * (by2 - by1);
    grad[5] += d_union * -(bx2 - bx1);
    grad[7] += d_union * (bx2 - bx1);

    // intersection terms
    if iw_raw > 0.0 && ih_raw > 0.0 {
        grad[pick(ix1_a, 0)] += d_inter_total * -ih;
        grad[pick(ix2_a, 2)] += d_inter_total * ih;
        grad[pick(iy1_a, 1)] += d_inter_total * -iw;
        grad[pick(iy2_a, 3)] += d_inter_total * iw;
    }

    // enclosing terms
    grad[pick(cx1_a, 0)] += d_enc * -ch;
    grad[pick(cx2_a, 2)] += d_enc * ch;
    grad[pick(cy1_a, 1)] += d_enc * -cw;
    grad[pick(cy2_a, 3)] += d_enc * cw;

    (value, grad)
}

/// Coordinate conventions understood by [`convert`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoxFormat {
    /// Normalized center-x, center-y, width, height.
    CxCyWhNormalized,
    /// Pixel corners.
    XyxyPixels,
    /// Pixel left, top, width, height.
    LtwhPixels,
}

impl BoxFormat {
    fn is_pixel(self) -> bool {
        !matches!(self, BoxFormat::CxCyWhNormalized)
    }
}

impl FromStr for BoxFormat {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cxcywh" => Ok(Self::CxCyWhNormalized),
            "xyxy" => Ok(Self::XyxyPixels),
            "ltwh" => Ok(Self::LtwhPixels),
            other => Err(GeometryError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for BoxFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CxCyWhNormalized => "cxcywh",
            Self::XyxyPixels => "xyxy",
            Self::LtwhPixels => "ltwh",
        })
    }
}

/// Converts raw coordinates between formats. `image` is `(width, height)` and
/// is required whenever exactly one side of the conversion is in pixels.
pub fn convert(
    coords: [f64; 4],
    from: BoxFormat,
    to: BoxFormat,
    image: Option<(f64, f64)>,
) -> Result<[f64; 4], GeometryError> {
    if from == to {
        return Ok(coords);
    }
    let needs_size = from.is_pixel() != to.is_pixel();
    let (iw, ih) = match image {
        Some(s) => s,
        None if needs_size => return Err(GeometryError::MissingImageSize),
        None => (1.0, 1.0),
    };
    // go through pixel corners
    let [x1, y1, x2, y2] = match from {
        BoxFormat::CxCyWhNormalized => {
            let [cx, cy, w, h] = coords;
            [
                (cx - w / 2.0) * iw,
                (cy - h / 2.0) * ih,
                (cx + w / 2.0) * iw,
                (cy + h / 2.0) * ih,
            ]
        }
        BoxFormat::XyxyPixels => coords,
        BoxFormat::LtwhPixels => {
            let [l, t, w, h] = coords;
            [l, t, l + w, t + h]
        }
    };
    Ok(match to {
        BoxFormat::CxCyWhNormalized => [
            (x1 + x2) / 2.0 / iw,
            (y1 + y2) / 2.0 / ih,
            (x2 - x1) / iw,
            (y2 - y1) / ih,
        ],
        BoxFormat::XyxyPixels => [x1, y1, x2, y2],
        BoxFormat::LtwhPixels => [x1, y1, x2 - x1, y2 - y1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corners(c: [f64; 4], s: f64) -> [f64; 4] {
        c.map(|v| v * s)
    }

    #[test]
    fn iou_examples() {
        let a = BoundingBox::new(0.3, 0.4, 0.2, 0.5).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        let d = iou(&corners([0., 0., 1., 1.], 0.25), &corners([2., 0., 3., 1.], 0.25));
        assert_eq!(d, 0.0);
        let v = iou(&corners([0., 0., 2., 2.], 0.25), &corners([1., 1., 3., 3.], 0.25));
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn giou_examples() {
        let a = BoundingBox::new(0.3, 0.4, 0.2, 0.5).unwrap();
        assert_eq!(giou(&a, &a), 1.0);
        let abut = giou(&corners([0., 0., 1., 1.], 0.5), &corners([1., 0., 2., 1.], 0.5));
        assert!(abut.abs() < 1e-15);
        let apart = giou(&corners([0., 0., 1., 1.], 1.0 / 3.0), &corners([2., 0., 3., 1.], 1.0 / 3.0));
        assert!((apart + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn giou_equals_iou_when_nested() {
        let outer = [0.1, 0.1, 0.9, 0.8];
        let inner = [0.2, 0.3, 0.5, 0.6];
        assert!((giou(&outer, &inner) - iou(&outer, &inner)).abs() < 1e-15);
    }

    #[test]
    fn construction_clamps_small_drift_only() {
        let b = BoundingBox::new(1.0 + 5e-7, -5e-7, 0.5, 1.0 + 1e-7).unwrap();
        assert_eq!((b.cx(), b.cy(), b.h()), (1.0, 0.0, 1.0));
        assert!(matches!(
            BoundingBox::new(1.01, 0.5, 0.1, 0.1),
            Err(GeometryError::OutOfRange { name: "cx", .. })
        ));
        assert!(matches!(
            BoundingBox::new(0.5, 0.5, 0.0, 0.1),
            Err(GeometryError::NonPositiveSide { name: "w", .. })
        ));
        assert_eq!(BoundingBox::new(f64::NAN, 0.5, 0.1, 0.1), Err(GeometryError::NonFinite));
    }

    #[test]
    fn convert_examples() {
        let out = convert(
            [0.5, 0.5, 1.0, 1.0],
            BoxFormat::CxCyWhNormalized,
            BoxFormat::XyxyPixels,
            Some((640.0, 640.0)),
        )
        .unwrap();
        assert_eq!(out, [0.0, 0.0, 640.0, 640.0]);
        let out = convert(
            [10.0, 20.0, 30.0, 40.0],
            BoxFormat::LtwhPixels,
            BoxFormat::CxCyWhNormalized,
            Some((100.0, 200.0)),
        )
        .unwrap();
        let expect = [0.25, 0.20, 0.30, 0.20];
        for (o, e) in out.iter().zip(expect) {
            assert!((o - e).abs() < 1e-15);
        }
        assert_eq!("polar".parse::<BoxFormat>(), Err(GeometryError::UnknownFormat("polar".into())));
        assert_eq!(
            convert([0.0; 4], BoxFormat::LtwhPixels, BoxFormat::CxCyWhNormalized, None),
            Err(GeometryError::MissingImageSize)
        );
    }

    #[test]
    fn corner_round_trip() {
        let b = BoundingBox::new(0.123456789, 0.987654321, 0.2, 0.0123).unwrap();
        let [x1, y1, x2, y2] = b.xyxy();
        let r = BoundingBox::from_xyxy(x1, y1, x2, y2).unwrap();
        for (p, q) in b.to_array().iter().zip(r.to_array()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
