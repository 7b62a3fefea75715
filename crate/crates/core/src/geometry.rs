//! Axis-aligned box arithmetic.
//!
//! Boxes use continuous corner coordinates. Area is `(x2 - x1) * (y2 - y1)`
//! with no pixel-inclusive `+1` correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned box with strictly positive width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x2 <= x1 || y2 <= y1 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from center coordinates and size.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Area of the intersection with `other`, zero when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    /// True when `other` lies entirely inside `self`.
    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.corners()
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// The smallest box containing every input box.
pub fn bounding_box<'a, I>(boxes: I) -> Result<BBox>
where
    I: IntoIterator<Item = &'a BBox>,
{
    let mut iter = boxes.into_iter();
    let first = *iter.next().ok_or(Error::EmptyBoxSet)?;
    Ok(iter.fold(first, |acc, b| BBox {
        x1: acc.x1.min(b.x1),
        y1: acc.y1.min(b.y1),
        x2: acc.x2.max(b.x2),
        y2: acc.y2.max(b.y2),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn center_form_normalizes() {
        let b = BBox::from_center(5.0, 5.0, 4.0, 2.0).unwrap();
        assert_eq!(b.corners(), [3.0, 4.0, 7.0, 6.0]);
    }

    #[test]
    fn iou_basic_cases() {
        let a = bx(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &bx(1.0, 0.0, 2.0, 1.0)), 0.0);
        // value frozen from the rasterization oracle in tests/geometry_oracle.rs
        assert!((iou(&a, &bx(0.5, 0.0, 1.5, 1.0)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bounding_box_cases() {
        let b = bx(1.0, 2.0, 3.0, 4.0);
        assert_eq!(bounding_box([&b]).unwrap(), b);
        assert_eq!(bounding_box([&b, &b, &b]).unwrap(), b);
        let u = bounding_box(&[bx(0.0, 0.0, 1.0, 1.0), bx(2.0, 2.0, 3.0, 3.0)]).unwrap();
        assert_eq!(u.corners(), [0.0, 0.0, 3.0, 3.0]);
        assert!(matches!(
            bounding_box(std::iter::empty::<&BBox>()),
            Err(Error::EmptyBoxSet)
        ));
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.1..40.0f64, 0.1..40.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            if ab == 1.0 {
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn iou_translation_invariant(a in arb_box(), b in arb_box(), dx in -20.0..20.0f64, dy in -20.0..20.0f64) {
            let moved = iou(&a.translate(dx, dy).unwrap(), &b.translate(dx, dy).unwrap());
            prop_assert!((moved - iou(&a, &b)).abs() < 1e-9);
        }

        #[test]
        fn bounding_box_contains_all(boxes in prop::collection::vec(arb_box(), 1..8)) {
            let u = bounding_box(&boxes).unwrap();
            for b in &boxes {
                prop_assert!(u.contains(b));
                prop_assert_eq!(b.intersection_area(&u), b.area());
            }
            // idempotent, permutation and duplication invariant
            prop_assert_eq!(bounding_box([&u]).unwrap(), u);
            let mut rev: Vec<BBox> = boxes.iter().rev().copied().collect();
            rev.extend_from_slice(&boxes);
            prop_assert_eq!(bounding_box(&rev).unwrap(), u);
        }

        #[test]
        fn bounding_box_translation_equivariant(boxes in prop::collection::vec(arb_box(), 1..6), dx in -20.0..20.0f64) {
            let moved: Vec<BBox> = boxes.iter().map(|b| b.translate(dx, 0.0).unwrap()).collect();
            let a = bounding_box(&moved).unwrap();
            let b = bounding_box(&boxes).unwrap().translate(dx, 0.0).unwrap();
            for (p, q) in a.corners().iter().zip(b.corners()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }
}
