use std::fmt;

use serde::{Deserialize, Serialize};

/// Axis-aligned box in absolute pixel corners, origin top-left.
///
/// Serialized as `[x1, y1, x2, y2]`. Construction through [`BoundingBox::new`]
/// enforces `0 <= x1 < x2` and `0 <= y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BoxError {
    #[error("{field} is not finite")]
    NonFinite { field: &'static str },
    #[error("{field} is negative ({value})")]
    Negative { field: &'static str, value: f64 },
    #[error("x2 ({x2}) must be greater than x1 ({x1})")]
    EmptyWidth { x1: f64, x2: f64 },
    #[error("y2 ({y2}) must be greater than y1 ({y1})")]
    EmptyHeight { y1: f64, y2: f64 },
}

impl BoxError {
    /// Name of the coordinate the error is about.
    pub fn field(&self) -> &'static str {
        match self {
            BoxError::NonFinite { field } | BoxError::Negative { field, .. } => field,
            BoxError::EmptyWidth { .. } => "x2",
            BoxError::EmptyHeight { .. } => "y2",
        }
    }
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, BoxError> {
        for (field, value) in [("x1", x1), ("y1", y1), ("x2", x2), ("y2", y2)] {
            if !value.is_finite() {
                return Err(BoxError::NonFinite { field });
            }
            if value < 0.0 {
                return Err(BoxError::Negative { field, value });
            }
        }
        if x2 <= x1 {
            return Err(BoxError::EmptyWidth { x1, x2 });
        }
        if y2 <= y1 {
            return Err(BoxError::EmptyHeight { y1, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
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

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x2 <= width && self.y2 <= height
    }

    /// Shift by `(dx, dy)`. The result may leave the valid domain, so it is
    /// returned unchecked and callers clamp or validate as needed.
    pub fn translated(&self, dx: f64, dy: f64) -> BoundingBox {
        BoundingBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }
}

impl BoundingBox {
    /// Same top-left corner with a new extent. Unchecked, like [`BoundingBox::translated`].
    pub fn resized(&self, width: f64, height: f64) -> BoundingBox {
        BoundingBox {
            x1: self.x1,
            y1: self.y1,
            x2: self.x1 + width,
            y2: self.y1 + height,
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = BoxError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        BoundingBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.corners()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}
