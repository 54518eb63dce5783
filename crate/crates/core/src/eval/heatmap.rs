//! Backbone activation heatmaps.

use std::path::Path;

use crate::detector::{DetectorModel, STRIDE};
use crate::error::Result;
use crate::kernels::{bilinear_resize_forward, RoiBox};
use crate::raster::{quantize, GrayImage, Image};
use crate::tensor::Tensor;

/// Channel-mean absolute activation, min-max normalized, resized to the
/// input resolution. A flat map becomes uniform mid-gray.
pub fn feature_heatmap(model: &DetectorModel, img: &Image) -> Result<GrayImage> {
    let f = model.forward_backbone(img)?;
    let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let mut heat = vec![0.0f64; h * w];
    for ch in 0..c {
        for (acc, v) in heat.iter_mut().zip(&f.data()[ch * h * w..(ch + 1) * h * w]) {
            *acc += v.abs() as f64;
        }
    }
    let (lo, hi) = heat
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let norm: Vec<f32> = if hi > lo {
        heat.iter().map(|&v| ((v - lo) / (hi - lo)) as f32).collect()
    } else {
        vec![0.5; h * w]
    };
    // the grid covers the padded input; resize to it and crop the image area
    let map = Tensor::new([1, h, w], norm)?;
    let (ph, pw) = (h * STRIDE, w * STRIDE);
    let up = bilinear_resize_forward(&map, ph, pw)?;
    let (iw, ih) = (img.width(), img.height());
    let mut data = Vec::with_capacity(iw * ih);
    for y in 0..ih {
        for x in 0..iw {
            data.push(quantize(up.data()[y * pw + x] * 255.0));
        }
    }
    Ok(GrayImage {
        width: iw,
        height: ih,
        data,
    })
}

pub fn export_feature_heatmap(model: &DetectorModel, img: &Image, out: &Path) -> Result<GrayImage> {
    let heat = feature_heatmap(model, img)?;
    heat.save(out)?;
    Ok(heat)
}

/// Sums of heat inside any box (by pixel center), the inside pixel count,
/// and the whole-image heat sum.
fn box_heat(heat: &GrayImage, boxes: &[RoiBox]) -> (f64, usize, f64) {
    let (mut inside, mut n_in, mut total) = (0.0f64, 0usize, 0.0f64);
    for y in 0..heat.height {
        for x in 0..heat.width {
            let v = heat.data[y * heat.width + x] as f64;
            total += v;
            let (cx, cy) = (x as f32 + 0.5, y as f32 + 0.5);
            if boxes.iter().any(|b| cx >= b.x0 && cx < b.x1 && cy >= b.y0 && cy < b.y1) {
                inside += v;
                n_in += 1;
            }
        }
    }
    (inside, n_in, total)
}

/// Mean heat, scaled to `[0,1]`, of pixels whose centers fall inside any
/// box. `None` when no pixel is inside a box.
pub fn heat_in_boxes_mean(heat: &GrayImage, boxes: &[RoiBox]) -> Option<f64> {
    let (inside, n_in, _) = box_heat(heat, boxes);
    (n_in > 0).then(|| inside / n_in as f64 / 255.0)
}

/// Mean heat of pixels whose centers fall inside any box, divided by the
/// mean heat of the whole image. `None` when no pixel is inside a box or
/// the image is all zero.
pub fn heat_in_boxes_ratio(heat: &GrayImage, boxes: &[RoiBox]) -> Option<f64> {
    let (inside, n_in, total) = box_heat(heat, boxes);
    let mean_all = total / (heat.width * heat.height) as f64;
    (n_in > 0 && mean_all > 0.0).then(|| inside / n_in as f64 / mean_all)
}
