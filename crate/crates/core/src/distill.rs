//! Cross-domain feature distillation.
//!
//! The frozen teacher sees the clean image; the student sees a corrupted,
//! downscaled copy. Besides the detection loss on its own predictions, the
//! student is pulled toward the teacher by two cosine losses:
//!
//! * global: student features, bilinearly resized to the teacher's grid,
//!   against the teacher features, one whole-map vector per image;
//! * instance: RoI-aligned features of each ground-truth box, the teacher
//!   pooling the original box and the student the rescaled box.
//!
//! Batch values are means (over images for the detection and global terms,
//! over non-skipped instances for the instance term) and the total is
//! `(l_det + alpha * l_global) + beta * l_instance`.

use serde::{Deserialize, Serialize};

use crate::autograd::{GradMap, Tape, Var};
use crate::corrupt::{DiversifyConfig, DiversifyDraw};
use crate::detector::{assign_targets, detection_loss, prepare_input, DetectorModel, Role};
use crate::error::{Error, Result};
use crate::kernels::{FeatureMap, RoiAlignConfig, RoiBox};
use crate::optim::{sgd_step, SgdConfig};
use crate::raster::Image;
use crate::scenes::Annotation;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub alpha: f32,
    pub beta: f32,
    pub roi_out: usize,
    pub roi_samples: usize,
    /// Instances whose box is narrower or shorter than this many feature
    /// cells on either side are skipped.
    pub min_feature_box: f32,
    pub global: bool,
    pub instance: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 1.0,
            beta: 1.0,
            roi_out: 7,
            roi_samples: 2,
            min_feature_box: 0.25,
            global: true,
            instance: true,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::invalid("distill config", "alpha and beta must be non-negative"));
        }
        if self.roi_out == 0 || self.roi_samples == 0 {
            return Err(Error::invalid("distill config", "roi_out and roi_samples must be positive"));
        }
        Ok(())
    }

    pub fn roi(&self) -> RoiAlignConfig {
        RoiAlignConfig {
            out: self.roi_out,
            samples: self.roi_samples,
            min_size: self.min_feature_box,
        }
    }
}

/// One clean/diversified training pair.
#[derive(Clone, Debug)]
pub struct DistillSample {
    pub clean: Image,
    pub diversified: Image,
    pub draw: DiversifyDraw,
    /// Ground truth in clean-image pixels.
    pub annotations: Vec<Annotation>,
    /// Ground truth in diversified-image pixels.
    pub scaled_annotations: Vec<Annotation>,
}

impl DistillSample {
    /// Diversifies `clean` with `draw` and rescales the boxes by the
    /// realized per-axis ratio.
    pub fn new(clean: Image, annotations: Vec<Annotation>, cfg: &DiversifyConfig, draw: DiversifyDraw) -> Result<Self> {
        let diversified = cfg.apply(&clean, &draw)?;
        let (rx, ry) = realized_ratio(&clean, &diversified);
        let scaled_annotations = annotations
            .iter()
            .map(|a| Annotation {
                class_id: a.class_id,
                bbox: a.bbox.scaled_xy(rx, ry),
            })
            .collect();
        Ok(DistillSample {
            clean,
            diversified,
            draw,
            annotations,
            scaled_annotations,
        })
    }

    /// Uncorrupted, unscaled pair.
    pub fn identity(clean: Image, annotations: Vec<Annotation>) -> Self {
        DistillSample {
            diversified: clean.clone(),
            clean,
            draw: DiversifyDraw {
                corruption: None,
                scale_ratio: 1.0,
                seed: 0,
            },
            scaled_annotations: annotations.clone(),
            annotations,
        }
    }
}

/// `(W'/W, H'/H)` between two images.
pub fn realized_ratio(from: &Image, to: &Image) -> (f32, f32) {
    (
        to.width() as f32 / from.width() as f32,
        to.height() as f32 / from.height() as f32,
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_det: f32,
    pub l_global: f32,
    pub l_instance: f32,
    pub l_total: f32,
    pub skipped_instances: usize,
}

/// Cosine loss between teacher features and student features resized to the
/// teacher grid. `f_t` should be a constant.
pub fn global_distill_loss(tape: &mut Tape, f_t: Var, f_s: Var) -> Result<Var> {
    let (ts, ss) = (tape.shape(f_t).to_vec(), tape.shape(f_s).to_vec());
    if ts.len() != 3 || ss.len() != 3 || ts[0] != ss[0] {
        return Err(Error::ShapeMismatch {
            op: "global_distill_loss",
            lhs: ts,
            rhs: ss,
        });
    }
    let resized = if ss[1..] == ts[1..] {
        f_s
    } else {
        tape.bilinear_resize(f_s, ts[1], ts[2])?
    };
    tape.cosine_loss(resized, f_t)
}

/// Per-instance cosine losses over RoI-aligned features, in annotation
/// order, for the instances that survive on both sides; plus the number
/// skipped.
pub fn instance_distill_terms(
    tape: &mut Tape,
    f_t: FeatureMap,
    f_s: FeatureMap,
    teacher_boxes: &[RoiBox],
    student_boxes: &[RoiBox],
    roi: &RoiAlignConfig,
) -> Result<(Vec<Var>, usize)> {
    if teacher_boxes.len() != student_boxes.len() {
        return Err(Error::invalid(
            "instance_distill_loss",
            format!("{} teacher boxes but {} student boxes", teacher_boxes.len(), student_boxes.len()),
        ));
    }
    if teacher_boxes.is_empty() {
        return Ok((Vec::new(), 0));
    }
    let ti = tape.roi_align(f_t, teacher_boxes, roi)?;
    let si = tape.roi_align(f_s, student_boxes, roi)?;
    let mut terms = Vec::new();
    let (mut a, mut b) = (0, 0);
    for j in 0..teacher_boxes.len() {
        let in_t = ti.kept.get(a) == Some(&j);
        let in_s = si.kept.get(b) == Some(&j);
        if in_t && in_s {
            let (Some(tf), Some(sf)) = (ti.features, si.features) else {
                unreachable!("kept instances imply pooled features");
            };
            let t = tape.select(tf, &[a])?;
            let s = tape.select(sf, &[b])?;
            terms.push(tape.cosine_loss(s, t)?);
        }
        a += in_t as usize;
        b += in_s as usize;
    }
    let skipped = teacher_boxes.len() - terms.len();
    if skipped > 0 {
        log::debug!("instance distillation skipped {skipped} degenerate instances");
    }
    Ok((terms, skipped))
}

/// Mean of the instance terms; `None` when every instance was skipped.
pub fn instance_distill_loss(
    tape: &mut Tape,
    f_t: FeatureMap,
    f_s: FeatureMap,
    teacher_boxes: &[RoiBox],
    student_boxes: &[RoiBox],
    roi: &RoiAlignConfig,
) -> Result<(Option<Var>, usize)> {
    let (terms, skipped) = instance_distill_terms(tape, f_t, f_s, teacher_boxes, student_boxes, roi)?;
    Ok((mean_of(tape, &terms)?, skipped))
}

pub(crate) fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Option<Var>> {
    let Some((&first, rest)) = terms.split_first() else {
        return Ok(None);
    };
    let mut acc = first;
    for &t in rest {
        acc = tape.add(acc, t)?;
    }
    Ok(Some(tape.scale(acc, 1.0 / terms.len() as f32)?))
}

fn ensure_frozen(teacher: &DetectorModel) -> Result<()> {
    if teacher.role() != Role::Teacher {
        return Err(Error::TrainableTeacher("model passed as teacher has the student role".into()));
    }
    if let Some(p) = teacher.params().iter().find(|p| p.trainable()) {
        return Err(Error::TrainableTeacher(format!("parameter {} is trainable", p.name())));
    }
    Ok(())
}

/// Teacher backbone features for each clean image of the batch.
pub fn teacher_features(teacher: &DetectorModel, samples: &[DistillSample]) -> Result<Vec<Tensor>> {
    ensure_frozen(teacher)?;
    samples.iter().map(|s| teacher.forward_backbone(&s.clean)).collect()
}

/// Records the full objective for a batch on `tape` and returns the total
/// loss node with its breakdown. `teacher_feats[i]` belongs to sample `i`.
pub fn distill_objective(
    tape: &mut Tape,
    student: &DetectorModel,
    samples: &[DistillSample],
    teacher_feats: &[Tensor],
    cfg: &DistillConfig,
) -> Result<(Var, LossBreakdown)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("distill", "empty batch"));
    }
    if teacher_feats.len() != samples.len() {
        return Err(Error::invalid("distill", "one teacher feature map per sample required"));
    }
    let roi = cfg.roi();
    let bound = student.bind(tape, true);
    let mut det_terms = Vec::with_capacity(samples.len());
    let mut glob_terms = Vec::with_capacity(samples.len());
    let mut inst_terms = Vec::new();
    let mut skipped = 0;
    for (s, ft) in samples.iter().zip(teacher_feats) {
        let fs = student.forward_backbone_on(tape, &bound, prepare_input(&s.diversified)?)?;
        let head = student.forward_head_on(tape, &bound, fs.var)?;
        let shape = tape.shape(fs.var).to_vec();
        let targets = assign_targets(&s.scaled_annotations, shape[1], shape[2], fs.stride);
        det_terms.push(detection_loss(tape, &head, &targets)?.total);

        if !(cfg.global || cfg.instance) {
            continue;
        }
        let ft_var = tape.constant(ft.clone());
        if cfg.global {
            glob_terms.push(global_distill_loss(tape, ft_var, fs.var)?);
        }
        if cfg.instance {
            let tb: Vec<RoiBox> = s.annotations.iter().map(|a| a.bbox).collect();
            let sb: Vec<RoiBox> = s.scaled_annotations.iter().map(|a| a.bbox).collect();
            let ft_map = FeatureMap {
                var: ft_var,
                stride: fs.stride,
            };
            let (terms, sk) = instance_distill_terms(tape, ft_map, fs, &tb, &sb, &roi)?;
            inst_terms.extend(terms);
            skipped += sk;
        }
    }

    let l_det = mean_of(tape, &det_terms)?.expect("batch is non-empty");
    let mut total = l_det;
    let mut b = LossBreakdown {
        l_det: tape.value(l_det).item()?,
        skipped_instances: skipped,
        ..LossBreakdown::default()
    };
    if let Some(g) = mean_of(tape, &glob_terms)? {
        b.l_global = tape.value(g).item()?;
        let weighted = tape.scale(g, cfg.alpha)?;
        total = tape.add(total, weighted)?;
    }
    if let Some(i) = mean_of(tape, &inst_terms)? {
        b.l_instance = tape.value(i).item()?;
        let weighted = tape.scale(i, cfg.beta)?;
        total = tape.add(total, weighted)?;
    }
    b.l_total = tape.value(total).item()?;
    Ok((total, b))
}

/// Objective value and student gradients for a batch, without updating.
pub fn distill_gradients(
    teacher: &DetectorModel,
    student: &DetectorModel,
    samples: &[DistillSample],
    teacher_feats: &[Tensor],
    cfg: &DistillConfig,
) -> Result<(LossBreakdown, GradMap)> {
    ensure_frozen(teacher)?;
    let mut tape = Tape::new();
    let (total, breakdown) = distill_objective(&mut tape, student, samples, teacher_feats, cfg)?;
    let grads = tape.backward(total)?.into_params();
    Ok((breakdown, grads))
}

/// One optimizer step on the student with precomputed teacher features.
pub fn distill_step_with_features(
    teacher: &DetectorModel,
    student: &mut DetectorModel,
    samples: &[DistillSample],
    teacher_feats: &[Tensor],
    cfg: &DistillConfig,
    sgd: &SgdConfig,
) -> Result<LossBreakdown> {
    let (breakdown, grads) = distill_gradients(teacher, student, samples, teacher_feats, cfg)?;
    sgd_step(student.params_mut(), &grads, sgd)?;
    Ok(breakdown)
}

/// One optimizer step on the student. Fails before any computation if the
/// teacher has a trainable parameter.
pub fn distill_step(
    teacher: &DetectorModel,
    student: &mut DetectorModel,
    samples: &[DistillSample],
    cfg: &DistillConfig,
    sgd: &SgdConfig,
) -> Result<LossBreakdown> {
    let feats = teacher_features(teacher, samples)?;
    distill_step_with_features(teacher, student, samples, &feats, cfg, sgd)
}

/// Global loss of two plain feature maps.
pub fn global_distill_value(f_t: &Tensor, f_s: &Tensor) -> Result<f32> {
    let mut tape = Tape::new();
    let (t, s) = (tape.constant(f_t.clone()), tape.constant(f_s.clone()));
    let l = global_distill_loss(&mut tape, t, s)?;
    tape.value(l).item()
}

/// Instance loss of two plain feature maps; `0` when every instance is skipped.
pub fn instance_distill_value(
    f_t: &Tensor,
    f_s: &Tensor,
    stride: usize,
    teacher_boxes: &[RoiBox],
    student_boxes: &[RoiBox],
    roi: &RoiAlignConfig,
) -> Result<(f32, usize)> {
    let mut tape = Tape::new();
    let t = FeatureMap {
        var: tape.constant(f_t.clone()),
        stride,
    };
    let s = FeatureMap {
        var: tape.constant(f_s.clone()),
        stride,
    };
    let (l, skipped) = instance_distill_loss(&mut tape, t, s, teacher_boxes, student_boxes, roi)?;
    Ok((l.map(|v| tape.value(v).item()).transpose()?.unwrap_or(0.0), skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{generate_scene, SceneConfig};

    fn batch(n: u64) -> Vec<DistillSample> {
        (0..n)
            .map(|i| {
                let s = generate_scene(i, &SceneConfig::default()).unwrap();
                DistillSample::identity(s.image, s.annotations)
            })
            .collect()
    }

    #[test]
    fn identical_models_on_clean_input_give_zero_distillation() {
        let student = DetectorModel::new(5, Role::Student, 3).unwrap();
        let teacher = student.with_role(Role::Teacher);
        let samples = batch(2);
        let feats = teacher_features(&teacher, &samples).unwrap();
        let (b, _) = distill_gradients(&teacher, &student, &samples, &feats, &DistillConfig::default()).unwrap();
        assert_eq!(b.l_global, 0.0);
        assert_eq!(b.l_instance, 0.0);
        assert_eq!(b.l_total, b.l_det + 1.0 * b.l_global + 1.0 * b.l_instance);
    }

    #[test]
    fn trainable_teacher_is_rejected() {
        let student = DetectorModel::new(5, Role::Student, 3).unwrap();
        let mut s2 = student.clone();
        let err = distill_step(&student, &mut s2, &batch(1), &DistillConfig::default(), &SgdConfig::default());
        assert!(matches!(err, Err(Error::TrainableTeacher(_))));
    }

    #[test]
    fn scaled_features_have_zero_global_loss() {
        let f = Tensor::new([2, 3, 3], (0..18).map(|v| v as f32 - 4.0).collect()).unwrap();
        assert_eq!(global_distill_value(&f, &f.map(|v| v * 2.0)).unwrap(), 0.0);
        let g = Tensor::zeros([3, 3, 3]);
        assert!(global_distill_value(&f, &g).is_err());
    }
}
