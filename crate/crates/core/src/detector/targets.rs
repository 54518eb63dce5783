//! Center-cell target assignment and the box parameterization.

use crate::kernels::RoiBox;
use crate::scenes::Annotation;
use crate::tensor::Tensor;

/// Reference length for the log-size box values, in input pixels.
pub const BOX_REF: f32 = 96.0;

/// Regression target of one positive cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellTarget {
    /// Row-major cell index `gy * grid_w + gx`.
    pub cell: usize,
    pub class_id: usize,
    /// Center offset inside the cell, each in `[0,1)`.
    pub offset: [f32; 2],
    /// `ln(w / BOX_REF)`, `ln(h / BOX_REF)`.
    pub log_size: [f32; 2],
    /// Index of the annotation that owns the cell.
    pub annotation: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub stride: usize,
    /// `[1, grid_h, grid_w]` with 1 at positive cells.
    pub objectness: Tensor,
    /// Sorted by cell index.
    pub positives: Vec<CellTarget>,
    /// Annotations that lost a cell collision.
    pub dropped: Vec<usize>,
}

/// Cell and regression values of a box.
pub fn encode_box(b: &RoiBox, stride: usize, grid_h: usize, grid_w: usize) -> (usize, [f32; 2], [f32; 2]) {
    let (cx, cy) = b.center();
    let s = stride as f32;
    let gx = ((cx / s).floor().max(0.0) as usize).min(grid_w - 1);
    let gy = ((cy / s).floor().max(0.0) as usize).min(grid_h - 1);
    let offset = [cx / s - gx as f32, cy / s - gy as f32];
    let log_size = [(b.width() / BOX_REF).ln(), (b.height() / BOX_REF).ln()];
    (gy * grid_w + gx, offset, log_size)
}

/// Assigns each annotation to the cell containing its center. When centers
/// collide the larger box keeps the cell (earlier index on equal area).
pub fn assign_targets(annotations: &[Annotation], grid_h: usize, grid_w: usize, stride: usize) -> TargetMap {
    let mut owner: Vec<Option<usize>> = vec![None; grid_h * grid_w];
    let mut dropped = Vec::new();
    for (i, a) in annotations.iter().enumerate() {
        let (cell, _, _) = encode_box(&a.bbox, stride, grid_h, grid_w);
        match owner[cell] {
            Some(j) if annotations[j].bbox.area() >= a.bbox.area() => dropped.push(i),
            Some(j) => {
                dropped.push(j);
                owner[cell] = Some(i);
            }
            None => owner[cell] = Some(i),
        }
    }
    dropped.sort_unstable();
    let mut objectness = Tensor::zeros([1, grid_h, grid_w]);
    let mut positives = Vec::new();
    for (cell, o) in owner.iter().enumerate() {
        let Some(i) = *o else { continue };
        let a = &annotations[i];
        let (_, offset, log_size) = encode_box(&a.bbox, stride, grid_h, grid_w);
        objectness.data_mut()[cell] = 1.0;
        positives.push(CellTarget {
            cell,
            class_id: a.class_id,
            offset,
            log_size,
            annotation: i,
        });
    }
    TargetMap {
        grid_h,
        grid_w,
        stride,
        objectness,
        positives,
        dropped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(class_id: usize, x0: f32, y0: f32, x1: f32, y1: f32) -> Annotation {
        Annotation {
            class_id,
            bbox: RoiBox::new(x0, y0, x1, y1).unwrap(),
        }
    }

    #[test]
    fn centered_box_lands_in_cell_six_six() {
        let t = assign_targets(&[ann(1, 38.0, 38.0, 58.0, 58.0)], 12, 12, 8);
        assert_eq!(t.positives.len(), 1);
        assert_eq!(t.positives[0].cell, 6 * 12 + 6);
        assert_eq!(t.objectness.sum(), 1.0);
    }

    #[test]
    fn empty_is_all_negative() {
        let t = assign_targets(&[], 12, 12, 8);
        assert!(t.positives.is_empty());
        assert_eq!(t.objectness.sum(), 0.0);
    }

    #[test]
    fn collision_keeps_larger_box() {
        let small = ann(0, 45.0, 45.0, 51.0, 51.0);
        let large = ann(2, 30.0, 30.0, 66.0, 66.0);
        let t = assign_targets(&[small, large], 12, 12, 8);
        assert_eq!(t.positives.len(), 1);
        assert_eq!(t.positives[0].class_id, 2);
        assert_eq!(t.dropped, vec![0]);
    }
}
