//! Detection loss: objectness BCE over all cells, plus class cross-entropy
//! and box smooth-L1 over positive cells, summed with unit weights.

use super::targets::TargetMap;
use super::{DensePredictions, HeadVars};
use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub const SMOOTH_L1_BETA: f32 = 1.0 / 9.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub objectness: f32,
    pub class: f32,
    pub boxes: f32,
    pub total: f32,
}

pub struct DetLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Box term for positives: the smooth-L1 summed over the four box values
/// and averaged over positives. Center offsets go through a sigmoid first.
fn box_term(tape: &mut Tape, boxes: Var, targets: &TargetMap, cells: &[usize]) -> Result<Var> {
    let n = cells.len();
    let xy = tape.select(boxes, &[0, 1])?;
    let xy = tape.gather_cells(xy, cells)?;
    let xy = tape.sigmoid(xy)?;
    let wh = tape.select(boxes, &[2, 3])?;
    let wh = tape.gather_cells(wh, cells)?;
    let t_xy: Vec<f32> = targets.positives.iter().flat_map(|p| p.offset).collect();
    let t_wh: Vec<f32> = targets.positives.iter().flat_map(|p| p.log_size).collect();
    let t_xy = tape.constant(Tensor::new([n, 2], t_xy)?);
    let t_wh = tape.constant(Tensor::new([n, 2], t_wh)?);
    let l_xy = tape.smooth_l1(xy, t_xy, SMOOTH_L1_BETA)?;
    let l_wh = tape.smooth_l1(wh, t_wh, SMOOTH_L1_BETA)?;
    let l = tape.add(l_xy, l_wh)?;
    tape.scale(l, 2.0)
}

pub fn detection_loss(tape: &mut Tape, head: &HeadVars, targets: &TargetMap) -> Result<DetLoss> {
    let obj_t = tape.constant(targets.objectness.clone());
    let l_obj = tape.bce_with_logits(head.objectness, obj_t)?;
    let mut breakdown = LossBreakdown {
        objectness: tape.value(l_obj).item()?,
        ..LossBreakdown::default()
    };
    let total = if targets.positives.is_empty() {
        l_obj
    } else {
        let cells: Vec<usize> = targets.positives.iter().map(|p| p.cell).collect();
        let classes: Vec<usize> = targets.positives.iter().map(|p| p.class_id).collect();
        let logits = tape.gather_cells(head.class_logits, &cells)?;
        let l_cls = tape.softmax_ce(logits, &classes)?;
        let l_box = box_term(tape, head.box_deltas, targets, &cells)?;
        breakdown.class = tape.value(l_cls).item()?;
        breakdown.boxes = tape.value(l_box).item()?;
        let t = tape.add(l_obj, l_cls)?;
        tape.add(t, l_box)?
    };
    breakdown.total = tape.value(total).item()?;
    Ok(DetLoss { total, breakdown })
}

/// Loss of fixed predictions, without a gradient graph.
pub fn detection_loss_value(preds: &DensePredictions, targets: &TargetMap) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let head = HeadVars {
        objectness: tape.constant(preds.objectness.clone()),
        class_logits: tape.constant(preds.class_logits.clone()),
        box_deltas: tape.constant(preds.box_deltas.clone()),
    };
    detection_loss(&mut tape, &head, targets).map(|l| l.breakdown)
}
