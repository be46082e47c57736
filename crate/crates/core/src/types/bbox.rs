use serde::{Deserialize, Serialize};

use super::ValidationError;

/// Minimum side length of a box, in normalized units, after clamping.
/// Sides at or below this value (up to float noise) are degenerate.
pub const MIN_BOX_SIDE: f64 = 1e-4;

const SIDE_EPS: f64 = 1e-12;

/// An axis-aligned region in normalized image coordinates.
///
/// Corners satisfy `0 <= x1 < x2 <= 1` and `0 <= y1 < y2 <= 1`. Serialized as
/// the four-element array `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    /// Clamp raw coordinates into `[0, 1]` and reject boxes whose width or
    /// height does not exceed [`MIN_BOX_SIDE`].
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, ValidationError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(ValidationError::NonFiniteCoordinate);
        }
        let c = |v: f64| v.clamp(0.0, 1.0);
        let (x1, y1, x2, y2) = (c(x1), c(y1), c(x2), c(y2));
        if x2 - x1 <= MIN_BOX_SIDE + SIDE_EPS || y2 - y1 <= MIN_BOX_SIDE + SIDE_EPS {
            return Err(ValidationError::DegenerateBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// The whole image.
    pub fn full() -> Self {
        Self {
            x1: 0.0,
            y1: 0.0,
            x2: 1.0,
            y2: 1.0,
        }
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

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Intersection over union with another box.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let iy = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = ValidationError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

impl std::fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{:.3},{:.3},{:.3},{:.3}]",
            self.x1, self.y1, self.x2, self.y2
        )
    }
}

/// Validate four raw coordinates into a [`BoundingBox`].
pub fn validate_bbox(raw: [f64; 4]) -> Result<BoundingBox, ValidationError> {
    BoundingBox::try_from(raw)
}
