//! Detection metrics: IoU, all-point average precision at IoU 0.5, per-domain
//! reports, per-size AP, and backbone heatmaps.

mod heatmap;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{DetectorModel, Detection};
use crate::error::{Error, Result};
use crate::kernels::RoiBox;
use crate::scenes::{read_dataset, DomainVariant, Scene};

pub use heatmap::{export_feature_heatmap, feature_heatmap, heat_in_boxes_mean, heat_in_boxes_ratio};

pub const IOU_THRESHOLD: f64 = 0.5;
/// Score cut for the TP/FP/FN diagnostics.
pub const COUNT_SCORE: f32 = 0.5;

/// Intersection over union in `f64`.
pub fn iou(a: &RoiBox, b: &RoiBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = (a.x0 as f64, a.y0 as f64, a.x1 as f64, a.y1 as f64);
    let (bx0, by0, bx1, by1) = (b.x0 as f64, b.y0 as f64, b.x1 as f64, b.y1 as f64);
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// A detection of one class, tagged with the image it came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredBox {
    pub image: usize,
    pub score: f32,
    pub bbox: RoiBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

/// Descending score; ties broken by image then coordinates so the result
/// does not depend on input order.
fn ranked(dets: &[ScoredBox]) -> Vec<ScoredBox> {
    let mut d = dets.to_vec();
    d.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.image.cmp(&b.image))
            .then(a.bbox.x0.total_cmp(&b.bbox.x0))
            .then(a.bbox.y0.total_cmp(&b.bbox.y0))
            .then(a.bbox.x1.total_cmp(&b.bbox.x1))
            .then(a.bbox.y1.total_cmp(&b.bbox.y1))
    });
    d
}

/// Greedy matching of ranked detections. Each detection takes the
/// highest-IoU unmatched counted GT at or above the threshold; failing that,
/// overlapping an ignored GT, or lying outside `keep_det`, marks it ignored.
fn match_detections(
    ranked: &[ScoredBox],
    gts: &[Vec<RoiBox>],
    ignore: &dyn Fn(&RoiBox) -> bool,
    iou_thresh: f64,
) -> Vec<Outcome> {
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    ranked
        .iter()
        .map(|d| {
            let Some(img_gts) = gts.get(d.image) else {
                return if ignore(&d.bbox) { Outcome::Ignored } else { Outcome::Fp };
            };
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in img_gts.iter().enumerate() {
                if used[d.image][j] || ignore(g) {
                    continue;
                }
                let v = iou(&d.bbox, g);
                if v >= iou_thresh && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                used[d.image][j] = true;
                return Outcome::Tp;
            }
            let hits_ignored = img_gts.iter().any(|g| ignore(g) && iou(&d.bbox, g) >= iou_thresh);
            if hits_ignored || ignore(&d.bbox) {
                Outcome::Ignored
            } else {
                Outcome::Fp
            }
        })
        .collect()
}

/// All-point interpolated area under the precision envelope.
fn ap_from_outcomes(outcomes: &[Outcome], positives: usize) -> Option<f64> {
    if positives == 0 {
        return None;
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Tp => tp += 1,
            Outcome::Fp => fp += 1,
            Outcome::Ignored => continue,
        }
        recall.push(tp as f64 / positives as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    Some(ap)
}

/// AP of one class. `gts[i]` are the boxes of image `i`. `None` when there is
/// no ground truth.
pub fn average_precision(dets: &[ScoredBox], gts: &[Vec<RoiBox>], iou_thresh: f64) -> Option<f64> {
    let r = ranked(dets);
    let outcomes = match_detections(&r, gts, &|_| false, iou_thresh);
    ap_from_outcomes(&outcomes, gts.iter().map(Vec::len).sum())
}

/// AP restricted to GT (and unmatched detections) with area in `[lo, hi)`.
pub fn average_precision_in_area(
    dets: &[ScoredBox],
    gts: &[Vec<RoiBox>],
    iou_thresh: f64,
    lo: f64,
    hi: f64,
) -> Option<f64> {
    let outside = |b: &RoiBox| {
        let a = b.area() as f64;
        a < lo || a >= hi
    };
    let r = ranked(dets);
    let outcomes = match_detections(&r, gts, &outside, iou_thresh);
    let positives = gts.iter().flatten().filter(|b| !outside(b)).count();
    ap_from_outcomes(&outcomes, positives)
}

/// Per-size AP with GT-area tercile buckets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    /// Area cut points between small/medium and medium/large.
    pub thresholds: [f64; 2],
    pub small: f64,
    pub medium: f64,
    pub large: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub domain: String,
    pub images: usize,
    pub ground_truth: usize,
    /// `None` for classes without ground truth; they are left out of `map`.
    pub class_ap: Vec<Option<f64>>,
    pub map: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub size: Option<SizeReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub domains: Vec<DomainReport>,
    /// Mean mAP over the four target domains, when all were evaluated.
    pub target_average: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn class_split(
    dets: &[Vec<Detection>],
    gts: &[Vec<(usize, RoiBox)>],
    class: usize,
    min_score: f32,
) -> (Vec<ScoredBox>, Vec<Vec<RoiBox>>) {
    let d = dets
        .iter()
        .enumerate()
        .flat_map(|(i, ds)| {
            ds.iter().filter(move |d| d.class_id == class && d.score >= min_score).map(move |d| ScoredBox {
                image: i,
                score: d.score,
                bbox: d.bbox,
            })
        })
        .collect();
    let g = gts
        .iter()
        .map(|g| g.iter().filter(|(c, _)| *c == class).map(|(_, b)| *b).collect())
        .collect();
    (d, g)
}

/// Report for one domain from per-image detections and ground truth.
pub fn domain_report(domain: &str, classes: usize, dets: &[Vec<Detection>], gts: &[Vec<(usize, RoiBox)>]) -> DomainReport {
    let mut class_ap = Vec::with_capacity(classes);
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for c in 0..classes {
        let (d, g) = class_split(dets, gts, c, 0.0);
        class_ap.push(average_precision(&d, &g, IOU_THRESHOLD));
        let (d, g) = class_split(dets, gts, c, COUNT_SCORE);
        let outcomes = match_detections(&ranked(&d), &g, &|_| false, IOU_THRESHOLD);
        let hits = outcomes.iter().filter(|o| **o == Outcome::Tp).count();
        tp += hits;
        fp += outcomes.len() - hits;
        fn_ += g.iter().map(Vec::len).sum::<usize>() - hits;
    }
    let map = mean(class_ap.iter().flatten().copied());

    let mut areas: Vec<f64> = gts.iter().flatten().map(|(_, b)| b.area() as f64).collect();
    areas.sort_by(f64::total_cmp);
    let size = (areas.len() >= 3).then(|| {
        let t = [areas[areas.len() / 3], areas[2 * areas.len() / 3]];
        let bucket = |lo: f64, hi: f64| {
            mean((0..classes).filter_map(|c| {
                let (d, g) = class_split(dets, gts, c, 0.0);
                average_precision_in_area(&d, &g, IOU_THRESHOLD, lo, hi)
            }))
        };
        SizeReport {
            thresholds: t,
            small: bucket(0.0, t[0]),
            medium: bucket(t[0], t[1]),
            large: bucket(t[1], f64::INFINITY),
        }
    });
    DomainReport {
        domain: domain.to_string(),
        images: dets.len(),
        ground_truth: areas.len(),
        class_ap,
        map,
        tp,
        fp,
        fn_,
        size,
    }
}

/// Runs the detector over `scenes` and scores it.
pub fn evaluate_scenes(model: &DetectorModel, domain: &str, scenes: &[Scene]) -> Result<DomainReport> {
    let mut dets = Vec::with_capacity(scenes.len());
    let mut gts = Vec::with_capacity(scenes.len());
    for s in scenes {
        dets.push(model.detect(&s.image)?);
        gts.push(s.annotations.iter().map(|a| (a.class_id, a.bbox)).collect());
    }
    Ok(domain_report(domain, model.classes(), &dets, &gts))
}

impl EvalReport {
    pub fn from_domains(classes: Vec<String>, domains: Vec<DomainReport>) -> Self {
        let targets: Vec<f64> = DomainVariant::TARGETS
            .iter()
            .filter_map(|v| domains.iter().find(|d| d.domain == v.name()).map(|d| d.map))
            .collect();
        let target_average = (targets.len() == DomainVariant::TARGETS.len()).then(|| mean(targets.into_iter()));
        EvalReport {
            classes,
            domains,
            target_average,
        }
    }

    pub fn domain(&self, name: &str) -> Option<&DomainReport> {
        self.domains.iter().find(|d| d.domain == name)
    }

    /// Per-domain table with one AP column per class and a final mAP
    /// column, values in percent.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| domain |");
        for c in &self.classes {
            let _ = write!(s, " {c} |");
        }
        s.push_str(" **mAP** |\n|---|");
        s.push_str(&"---:|".repeat(self.classes.len() + 1));
        s.push('\n');
        for d in &self.domains {
            let _ = write!(s, "| {} |", d.domain);
            for ap in &d.class_ap {
                match ap {
                    Some(v) => {
                        let _ = write!(s, " {:.1} |", v * 100.0);
                    }
                    None => s.push_str(" - |"),
                }
            }
            let _ = writeln!(s, " **{:.1}** |", d.map * 100.0);
        }
        if let Some(t) = self.target_average {
            let _ = writeln!(s, "\nTarget average mAP: **{:.1}**", t * 100.0);
        }
        s
    }
}

/// Evaluates `model` on `<data_dir>/<variant>` for each variant.
pub fn evaluate_domains(model: &DetectorModel, data_dir: &Path, variants: &[DomainVariant]) -> Result<EvalReport> {
    let mut classes = None;
    let mut domains = Vec::with_capacity(variants.len());
    for v in variants {
        let dir = data_dir.join(v.name());
        if !dir.join("manifest.json").exists() {
            return Err(Error::MissingVariant(format!("{} (looked in {})", v.name(), dir.display())));
        }
        let data = read_dataset(&dir)?;
        if data.manifest.classes.len() != model.classes() {
            return Err(Error::invalid(
                "evaluate",
                format!("dataset has {} classes, model {}", data.manifest.classes.len(), model.classes()),
            ));
        }
        classes.get_or_insert(data.manifest.classes.clone());
        domains.push(evaluate_scenes(model, v.name(), &data.scenes)?);
    }
    Ok(EvalReport::from_domains(classes.unwrap_or_default(), domains))
}
