//! Dense outputs to scored boxes, and greedy per-class suppression.

use serde::{Deserialize, Serialize};

use super::targets::BOX_REF;
use super::{DensePredictions, STRIDE};
use crate::kernels::{sigmoid, RoiBox};

pub const SCORE_THRESHOLD: f32 = 0.05;
pub const NMS_IOU: f32 = 0.5;
/// Detections kept per image after suppression.
pub const MAX_DETECTIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub score: f32,
    pub bbox: RoiBox,
}

/// One candidate per (cell, class) with `sigmoid(obj) * softmax(class)` at
/// least `score_thresh`, ordered by descending score.
pub fn decode(preds: &DensePredictions, score_thresh: f32) -> Vec<Detection> {
    let shape = preds.objectness.shape();
    let (gh, gw) = (shape[1], shape[2]);
    let cells = gh * gw;
    let k = preds.class_logits.shape()[0];
    let (obj, cls, bx) = (
        preds.objectness.data(),
        preds.class_logits.data(),
        preds.box_deltas.data(),
    );
    let (iw, ih) = (preds.image_width as f32, preds.image_height as f32);
    let s = STRIDE as f32;
    let mut out = Vec::new();
    for cell in 0..cells {
        let p_obj = sigmoid(obj[cell]);
        if p_obj < score_thresh {
            continue;
        }
        let (gy, gx) = (cell / gw, cell % gw);
        let cx = (gx as f32 + sigmoid(bx[cell])) * s;
        let cy = (gy as f32 + sigmoid(bx[cells + cell])) * s;
        let w = bx[2 * cells + cell].exp() * BOX_REF;
        let h = bx[3 * cells + cell].exp() * BOX_REF;
        let bbox = RoiBox {
            x0: cx - w / 2.0,
            y0: cy - h / 2.0,
            x1: cx + w / 2.0,
            y1: cy + h / 2.0,
        }
        .clipped(iw, ih);
        if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
            continue;
        }
        let logits: Vec<f32> = (0..k).map(|c| cls[c * cells + cell]).collect();
        let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let z: f32 = logits.iter().map(|&v| (v - m).exp()).sum();
        for (c, &v) in logits.iter().enumerate() {
            let score = p_obj * (v - m).exp() / z;
            if score >= score_thresh {
                out.push(Detection {
                    class_id: c,
                    score,
                    bbox,
                });
            }
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out
}

/// Greedy non-maximum suppression within each class; keeps at most
/// [`MAX_DETECTIONS`].
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f32) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept.len() == MAX_DETECTIONS {
            break;
        }
        if kept.iter().all(|k| k.class_id != d.class_id || k.bbox.iou(&d.bbox) <= iou_thresh) {
            kept.push(d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(class_id: usize, score: f32, x0: f32) -> Detection {
        Detection {
            class_id,
            score,
            bbox: RoiBox {
                x0,
                y0: 0.0,
                x1: x0 + 10.0,
                y1: 10.0,
            },
        }
    }

    #[test]
    fn identical_detections_collapse() {
        let kept = nms(vec![det(0, 0.9, 0.0), det(0, 0.9, 0.0)], 0.5);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn disjoint_and_cross_class_survive() {
        let kept = nms(vec![det(0, 0.9, 0.0), det(0, 0.8, 20.0), det(1, 0.7, 0.0)], 0.5);
        assert_eq!(kept.len(), 3);
    }
}
