//! Dense single-stage detector shared by teacher and student.
//!
//! Backbone: four 3×3 conv + ReLU blocks (3→16→32→64→64), each of the first
//! three followed by a 2×2 max pool, giving a stride-8 feature map.
//! Head: a shared 1×1 conv + ReLU, then 1×1 convs for objectness (1),
//! class logits (K) and box values (4).
//!
//! Inputs narrower or shorter than [`MIN_INPUT`] are rejected; others are
//! reflect-padded on the bottom and right to a multiple of the stride.

mod decode;
mod loss;
mod targets;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::kernels::FeatureMap;
use crate::optim::Parameter;
use crate::raster::Image;
use crate::seed::derive_named;
use crate::tensor::Tensor;

pub use decode::{decode, nms, Detection, MAX_DETECTIONS, NMS_IOU, SCORE_THRESHOLD};
pub use loss::{detection_loss, detection_loss_value, DetLoss, LossBreakdown, SMOOTH_L1_BETA};
pub use targets::{assign_targets, encode_box, CellTarget, TargetMap, BOX_REF};

pub const STRIDE: usize = 8;
pub const MIN_INPUT: usize = 32;
pub const FEATURE_CHANNELS: usize = 64;
/// Initial foreground probability encoded in the objectness bias.
pub const OBJECTNESS_PRIOR: f32 = 0.02;

const BACKBONE: [(&str, usize, usize); 4] = [("conv1", 3, 16), ("conv2", 16, 32), ("conv3", 32, 64), ("conv4", 64, 64)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel {
    role: Role,
    classes: usize,
    params: Vec<Parameter>,
}

/// Raw head outputs for one image, over the padded grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DensePredictions {
    pub objectness: Tensor,
    pub class_logits: Tensor,
    pub box_deltas: Tensor,
    /// Unpadded input extent, used for clipping.
    pub image_width: usize,
    pub image_height: usize,
}

/// Head outputs still on a tape.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub objectness: Var,
    pub class_logits: Var,
    pub box_deltas: Var,
}

/// Parameters bound to one tape.
pub struct BoundModel {
    vars: Vec<Var>,
}

/// `(name, shape)` of every parameter, in storage order.
pub fn parameter_manifest(classes: usize) -> Vec<(String, Vec<usize>)> {
    let mut m = Vec::new();
    for (name, cin, cout) in BACKBONE {
        m.push((format!("backbone.{name}.weight"), vec![cout, cin, 3, 3]));
        m.push((format!("backbone.{name}.bias"), vec![cout]));
    }
    let f = FEATURE_CHANNELS;
    for (name, cout) in [("shared", f), ("objectness", 1), ("class", classes), ("box", 4)] {
        m.push((format!("head.{name}.weight"), vec![cout, f, 1, 1]));
        m.push((format!("head.{name}.bias"), vec![cout]));
    }
    m
}

impl DetectorModel {
    /// He-normal weights, zero biases except the objectness prior.
    pub fn new(classes: usize, role: Role, seed: u64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("detector", "need at least one class"));
        }
        let params = parameter_manifest(classes)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with(".weight") {
                    let fan_in: usize = shape[1..].iter().product();
                    let std = (2.0 / fan_in as f32).sqrt();
                    let normal = Normal::new(0.0, std).expect("positive std");
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_named(seed, &name));
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                } else if name == "head.objectness.bias" {
                    vec![-((1.0 - OBJECTNESS_PRIOR) / OBJECTNESS_PRIOR).ln(); n]
                } else {
                    vec![0.0; n]
                };
                Parameter::new(name, Tensor::from_parts(shape, data), true)
            })
            .collect();
        let mut model = DetectorModel { role, classes, params };
        model.apply_role();
        Ok(model)
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(role: Role, params: Vec<Parameter>) -> Result<Self> {
        let classes = params
            .iter()
            .find(|p| p.name() == "head.class.bias")
            .map(|p| p.value().numel())
            .ok_or_else(|| Error::ManifestMismatch("missing head.class.bias".into()))?;
        let want = parameter_manifest(classes);
        let got = checkpoint::manifest(&params);
        if want != got {
            return Err(Error::ManifestMismatch(format!(
                "expected {} parameters for {classes} classes, got {:?}",
                want.len(),
                got.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>()
            )));
        }
        let mut model = DetectorModel { role, classes, params };
        model.apply_role();
        Ok(model)
    }

    pub fn load(path: &std::path::Path, role: Role) -> Result<Self> {
        Self::from_params(role, checkpoint::load(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(path, &self.params)
    }

    fn apply_role(&mut self) {
        let trainable = self.role == Role::Student;
        for p in &mut self.params {
            p.set_trainable(trainable);
        }
    }

    /// Copy with a different role; a teacher copy is fully frozen.
    pub fn with_role(&self, role: Role) -> Self {
        let mut m = DetectorModel {
            role,
            classes: self.classes,
            params: self.params.iter().map(|p| Parameter::new(p.name(), p.value().clone(), true)).collect(),
        };
        m.apply_role();
        m
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn any_trainable(&self) -> bool {
        self.params.iter().any(|p| p.trainable())
    }

    pub fn digest(&self) -> String {
        checkpoint::digest(&self.params)
    }

    /// Binds parameters to `tape`. Trainable parameters track gradients only
    /// when `track` is set; otherwise everything is a constant.
    pub fn bind(&self, tape: &mut Tape, track: bool) -> BoundModel {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if track {
                    tape.parameter(p)
                } else {
                    tape.constant(p.value().clone())
                }
            })
            .collect();
        BoundModel { vars }
    }

    pub fn forward_backbone_on(&self, tape: &mut Tape, bound: &BoundModel, input: Tensor) -> Result<FeatureMap> {
        let mut x = tape.constant(input);
        for i in 0..BACKBONE.len() {
            let (w, b) = (bound.vars[2 * i], bound.vars[2 * i + 1]);
            x = tape.conv2d(x, w, b, 1, 1)?;
            x = tape.relu(x)?;
            if i < 3 {
                x = tape.max_pool2d(x, 2, 2)?;
            }
        }
        Ok(FeatureMap { var: x, stride: STRIDE })
    }

    pub fn forward_head_on(&self, tape: &mut Tape, bound: &BoundModel, features: Var) -> Result<HeadVars> {
        let h = 2 * BACKBONE.len();
        let v = &bound.vars[h..];
        let shared = tape.conv2d(features, v[0], v[1], 1, 0)?;
        let shared = tape.relu(shared)?;
        Ok(HeadVars {
            objectness: tape.conv2d(shared, v[2], v[3], 1, 0)?,
            class_logits: tape.conv2d(shared, v[4], v[5], 1, 0)?,
            box_deltas: tape.conv2d(shared, v[6], v[7], 1, 0)?,
        })
    }

    /// Backbone features of one image, without a gradient graph.
    pub fn forward_backbone(&self, img: &Image) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let fm = self.forward_backbone_on(&mut tape, &bound, prepare_input(img)?)?;
        Ok(tape.value(fm.var).clone())
    }

    /// Features and head outputs of one image, without a gradient graph.
    pub fn predict_with_features(&self, img: &Image) -> Result<(Tensor, DensePredictions)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let fm = self.forward_backbone_on(&mut tape, &bound, prepare_input(img)?)?;
        let head = self.forward_head_on(&mut tape, &bound, fm.var)?;
        let preds = DensePredictions {
            objectness: tape.value(head.objectness).clone(),
            class_logits: tape.value(head.class_logits).clone(),
            box_deltas: tape.value(head.box_deltas).clone(),
            image_width: img.width(),
            image_height: img.height(),
        };
        Ok((tape.value(fm.var).clone(), preds))
    }

    pub fn predict(&self, img: &Image) -> Result<DensePredictions> {
        self.predict_with_features(img).map(|(_, p)| p)
    }

    /// Decoded, non-maximum-suppressed detections with default thresholds.
    pub fn detect(&self, img: &Image) -> Result<Vec<Detection>> {
        Ok(nms(decode(&self.predict(img)?, SCORE_THRESHOLD), NMS_IOU))
    }
}

/// Grid extent for an input extent: `ceil(len / STRIDE)`.
pub fn grid_extent(len: usize) -> usize {
    len.div_ceil(STRIDE)
}

fn reflect(i: usize, len: usize) -> usize {
    if i < len {
        i
    } else {
        2 * (len - 1) - i
    }
}

/// Normalized `[3,H',W']` input, reflect-padded to stride multiples.
pub fn prepare_input(img: &Image) -> Result<Tensor> {
    let (w, h) = (img.width(), img.height());
    if w < MIN_INPUT || h < MIN_INPUT {
        return Err(Error::invalid(
            "detector input",
            format!("{w}x{h} image is smaller than {MIN_INPUT}x{MIN_INPUT}"),
        ));
    }
    let t = img.to_tensor();
    let (pw, ph) = (grid_extent(w) * STRIDE, grid_extent(h) * STRIDE);
    if (pw, ph) == (w, h) {
        return Ok(t);
    }
    let src = t.data();
    let mut out = Vec::with_capacity(3 * pw * ph);
    for c in 0..3 {
        for y in 0..ph {
            let sy = reflect(y, h);
            for x in 0..pw {
                out.push(src[(c * h + sy) * w + reflect(x, w)]);
            }
        }
    }
    Tensor::new([3, ph, pw], out)
}
