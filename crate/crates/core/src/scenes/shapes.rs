//! Shape classes and their anti-aliased coverage.

use serde::{Deserialize, Serialize};

use crate::kernels::RoiBox;

/// Sub-samples per pixel axis when estimating coverage.
pub const SUPERSAMPLE: usize = 4;

const RING_INNER: f32 = 0.55;
const BAR_THICKNESS: f32 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeClass {
    Disk,
    Square,
    Triangle,
    Ring,
    Bar,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 5] = [
        ShapeClass::Disk,
        ShapeClass::Square,
        ShapeClass::Triangle,
        ShapeClass::Ring,
        ShapeClass::Bar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Disk => "disk",
            ShapeClass::Square => "square",
            ShapeClass::Triangle => "triangle",
            ShapeClass::Ring => "ring",
            ShapeClass::Bar => "bar",
        }
    }

    pub fn from_id(id: usize) -> Option<ShapeClass> {
        ShapeClass::ALL.get(id).copied()
    }

    pub fn id(self) -> usize {
        self as usize
    }
}

/// A shape placed in image coordinates. `size` is the extent along the
/// longest axis; bars may be rotated to vertical.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlacedShape {
    pub class: ShapeClass,
    pub cx: f32,
    pub cy: f32,
    pub size: f32,
    pub vertical: bool,
}

impl PlacedShape {
    /// Exact geometric bounds.
    pub fn bounds(&self) -> RoiBox {
        let h = self.size * 0.5;
        let (hx, hy) = match (self.class, self.vertical) {
            (ShapeClass::Bar, false) => (h, h * BAR_THICKNESS),
            (ShapeClass::Bar, true) => (h * BAR_THICKNESS, h),
            _ => (h, h),
        };
        RoiBox {
            x0: self.cx - hx,
            y0: self.cy - hy,
            x1: self.cx + hx,
            y1: self.cy + hy,
        }
    }

    /// Point membership in continuous coordinates.
    pub fn contains(&self, x: f32, y: f32) -> bool {
        let r = self.size * 0.5;
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.class {
            ShapeClass::Disk => dx * dx + dy * dy <= r * r,
            ShapeClass::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= (r * RING_INNER) * (r * RING_INNER)
            }
            ShapeClass::Square | ShapeClass::Bar => {
                let b = self.bounds();
                x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1
            }
            ShapeClass::Triangle => {
                // apex at the top, base at the bottom
                if dy < -r || dy > r {
                    return false;
                }
                let half_width = r * (dy + r) / (2.0 * r);
                dx.abs() <= half_width
            }
        }
    }

    /// Fraction of pixel `(px, py)` covered by the shape.
    pub fn coverage(&self, px: usize, py: usize) -> f32 {
        let mut hits = 0;
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let x = px as f32 + (sx as f32 + 0.5) / SUPERSAMPLE as f32;
                let y = py as f32 + (sy as f32 + 0.5) / SUPERSAMPLE as f32;
                if self.contains(x, y) {
                    hits += 1;
                }
            }
        }
        hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32
    }

    /// Pixel rectangle `[x0, x1) x [y0, y1)` that can have nonzero coverage.
    pub fn pixel_span(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let b = self.bounds();
        (
            (b.x0.floor().max(0.0) as usize).min(width),
            (b.y0.floor().max(0.0) as usize).min(height),
            (b.x1.ceil().max(0.0) as usize).min(width),
            (b.y1.ceil().max(0.0) as usize).min(height),
        )
    }
}
