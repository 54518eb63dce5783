//! Detection loss, box decoding and head gradients.

mod common;

use cdfkd::autograd::{Tape, Var};
use cdfkd::detector::{
    assign_targets, decode, detection_loss, detection_loss_value, DensePredictions, HeadVars, TargetMap,
    SMOOTH_L1_BETA,
};
use cdfkd::kernels::{conv2d_forward, sigmoid, RoiBox};
use cdfkd::scenes::{generate_scenes, Annotation, SceneConfig};
use cdfkd::Tensor;
use common::{gradcheck, random_tensor, rng};

const SATURATION: f32 = 10.0;

fn logit(p: f32) -> f32 {
    (p / (1.0 - p)).ln().clamp(-SATURATION, SATURATION)
}

/// Head outputs that reproduce `targets` up to logit saturation.
fn perfect_predictions(targets: &TargetMap, classes: usize, width: usize, height: usize) -> DensePredictions {
    let (gh, gw) = (targets.grid_h, targets.grid_w);
    let cells = gh * gw;
    let mut obj = vec![-SATURATION; cells];
    let mut cls = vec![0.0; classes * cells];
    let mut bx = vec![0.0; 4 * cells];
    for p in &targets.positives {
        obj[p.cell] = SATURATION;
        for c in 0..classes {
            cls[c * cells + p.cell] = if c == p.class_id { SATURATION } else { -SATURATION };
        }
        for a in 0..2 {
            bx[a * cells + p.cell] = logit(p.offset[a]);
            bx[(2 + a) * cells + p.cell] = p.log_size[a];
        }
    }
    DensePredictions {
        objectness: Tensor::new([1, gh, gw], obj).unwrap(),
        class_logits: Tensor::new([classes, gh, gw], cls).unwrap(),
        box_deltas: Tensor::new([4, gh, gw], bx).unwrap(),
        image_width: width,
        image_height: height,
    }
}

#[test]
fn near_perfect_logits_give_a_small_loss() {
    let cfg = SceneConfig::default();
    for s in generate_scenes(31, 50, &cfg).unwrap() {
        let targets = assign_targets(&s.annotations, 12, 12, 8);
        let preds = perfect_predictions(&targets, cfg.classes, 96, 96);
        let l = detection_loss_value(&preds, &targets).unwrap();
        assert!(l.total < 0.01, "{l:?}");
    }
}

#[test]
fn saturated_positives_decode_to_their_boxes() {
    let cfg = SceneConfig::default();
    for s in generate_scenes(32, 50, &cfg).unwrap() {
        let targets = assign_targets(&s.annotations, 12, 12, 8);
        let preds = perfect_predictions(&targets, cfg.classes, 96, 96);
        let dets = decode(&preds, 0.5);
        assert_eq!(dets.len(), targets.positives.len());
        for p in &targets.positives {
            let gt = s.annotations[p.annotation];
            let d = dets.iter().find(|d| d.class_id == gt.class_id && d.bbox.iou(&gt.bbox) > 0.9).unwrap();
            // decoded boxes are clipped to the image, as are generated boxes
            for (a, b) in [(d.bbox.x0, gt.bbox.x0), (d.bbox.y0, gt.bbox.y0), (d.bbox.x1, gt.bbox.x1), (d.bbox.y1, gt.bbox.y1)] {
                assert!((a - b).abs() < 0.5, "{:?} vs {:?}", d.bbox, gt.bbox);
            }
        }
    }
}

#[test]
fn all_negative_image_has_zero_class_and_box_terms() {
    let targets = assign_targets(&[], 4, 4, 8);
    let mut r = rng(33);
    let preds = DensePredictions {
        objectness: random_tensor(&mut r, &[1, 4, 4], -2.0, 2.0),
        class_logits: random_tensor(&mut r, &[5, 4, 4], -2.0, 2.0),
        box_deltas: random_tensor(&mut r, &[4, 4, 4], -2.0, 2.0),
        image_width: 32,
        image_height: 32,
    };
    let l = detection_loss_value(&preds, &targets).unwrap();
    assert_eq!(l.class, 0.0);
    assert_eq!(l.boxes, 0.0);
    assert!(l.objectness > 0.0);
}

/// Shared 1x1 conv, ReLU, then the three 1x1 output convs, as in the model.
fn head(t: &mut Tape, v: &[Var], features: Var) -> cdfkd::Result<HeadVars> {
    let shared = t.conv2d(features, v[0], v[1], 1, 0)?;
    let shared = t.relu(shared)?;
    Ok(HeadVars {
        objectness: t.conv2d(shared, v[2], v[3], 1, 0)?,
        class_logits: t.conv2d(shared, v[4], v[5], 1, 0)?,
        box_deltas: t.conv2d(shared, v[6], v[7], 1, 0)?,
    })
}

/// Whether every ReLU input and smooth-L1 residual keeps `margin` from its
/// kink. The loss is an f32 mean over the grid, so a large step is needed to
/// keep rounding below tolerance, and the margin must exceed its effect.
fn clear_of_kinks(params: &[Tensor], features: &Tensor, targets: &TargetMap, margin: f32) -> bool {
    let pre = conv2d_forward(features, &params[0], &params[1], 1, 0).unwrap();
    if pre.data().iter().any(|v| v.abs() < margin) {
        return false;
    }
    let shared = pre.map(|v| v.max(0.0));
    let bx = conv2d_forward(&shared, &params[6], &params[7], 1, 0).unwrap();
    let cells = targets.grid_h * targets.grid_w;
    targets.positives.iter().all(|p| {
        (0..2).all(|a| {
            let xy = sigmoid(bx.data()[a * cells + p.cell]) - p.offset[a];
            let wh = bx.data()[(2 + a) * cells + p.cell] - p.log_size[a];
            (xy.abs() - SMOOTH_L1_BETA).abs() > margin && (wh.abs() - SMOOTH_L1_BETA).abs() > margin
        })
    })
}

#[test]
fn detection_loss_gradient_wrt_head_parameters() {
    let (c, hidden, k, g) = (4, 4, 3, 3);
    let mut r = rng(34);
    let mut worst = 0.0f64;
    let mut instances = 0;
    while instances < 10 {
        let annotations: Vec<Annotation> = (0..2)
            .map(|i| Annotation {
                class_id: i % k,
                bbox: RoiBox::new(2.0 + 10.0 * i as f32, 3.0, 12.0 + 10.0 * i as f32, 20.0).unwrap(),
            })
            .collect();
        let targets = assign_targets(&annotations, g, g, 8);
        let features = random_tensor(&mut r, &[c, g, g], 0.0, 1.0);
        let params = vec![
            random_tensor(&mut r, &[hidden, c, 1, 1], -0.5, 0.5),
            random_tensor(&mut r, &[hidden], -0.2, 0.2),
            random_tensor(&mut r, &[1, hidden, 1, 1], -0.5, 0.5),
            random_tensor(&mut r, &[1], -0.5, 0.5),
            random_tensor(&mut r, &[k, hidden, 1, 1], -0.5, 0.5),
            random_tensor(&mut r, &[k], -0.5, 0.5),
            random_tensor(&mut r, &[4, hidden, 1, 1], -0.5, 0.5),
            random_tensor(&mut r, &[4], -0.5, 0.5),
        ];
        if !clear_of_kinks(&params, &features, &targets, 0.15) {
            continue;
        }
        instances += 1;
        let err = gradcheck(&params, 0.1, |t, v| {
            let f = t.constant(features.clone());
            let h = head(t, v, f)?;
            Ok(detection_loss(t, &h, &targets)?.total)
        });
        worst = worst.max(err);
    }
    println!("head parameter gradient max rel err {worst:.2e}");
    assert!(worst < 1e-3);
}
