//! Held-out test domains as fixed photometric recipes.
//!
//! Recipes have no free parameters. The few stochastic ops (sensor noise,
//! streak placement) draw from a generator seeded by the scene seed and the
//! variant name, so a variant image is a pure function of its scene.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Scene;
use crate::corrupt::filters::{gaussian_blur, Buf};
use crate::corrupt::scaled_extent;
use crate::error::{Error, Result};
use crate::seed::derive_named;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainVariant {
    SourceClean,
    TargetDark,
    TargetHazy,
    TargetDarkStreaks,
    TargetLowresNoisy,
}

/// One fixed-parameter step of a recipe. Intensities are on a `[0,1]` scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RecipeOp {
    /// `v -> gain * v^gamma`
    Gamma { gamma: f32, gain: f32 },
    /// Per-channel multiplier.
    Tint([f32; 3]),
    /// Additive zero-mean Gaussian noise.
    Noise { sigma: f32 },
    /// `v -> v t + airlight (1 - t)` with `t` linear from top to bottom row.
    Haze { t_top: f32, t_bottom: f32, airlight: f32 },
    Blur { sigma: f32 },
    /// Slanted bright line segments blended over the image.
    Streaks { count: usize, min_len: f32, max_len: f32, angle_deg: f32, alpha: f32 },
    /// Bilinear resize of the image; boxes follow.
    Rescale { ratio: f32 },
}

const DARK: RecipeOp = RecipeOp::Gamma { gamma: 2.0, gain: 0.5 };
const NIGHT_TINT: RecipeOp = RecipeOp::Tint([0.8, 0.9, 1.15]);

impl DomainVariant {
    pub const ALL: [DomainVariant; 5] = [
        DomainVariant::SourceClean,
        DomainVariant::TargetDark,
        DomainVariant::TargetHazy,
        DomainVariant::TargetDarkStreaks,
        DomainVariant::TargetLowresNoisy,
    ];

    pub const TARGETS: [DomainVariant; 4] = [
        DomainVariant::TargetDark,
        DomainVariant::TargetHazy,
        DomainVariant::TargetDarkStreaks,
        DomainVariant::TargetLowresNoisy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DomainVariant::SourceClean => "source-clean",
            DomainVariant::TargetDark => "target-dark",
            DomainVariant::TargetHazy => "target-hazy",
            DomainVariant::TargetDarkStreaks => "target-dark-streaks",
            DomainVariant::TargetLowresNoisy => "target-lowres-noisy",
        }
    }

    pub fn recipe(self) -> Vec<RecipeOp> {
        match self {
            DomainVariant::SourceClean => vec![],
            DomainVariant::TargetDark => vec![DARK, NIGHT_TINT, RecipeOp::Noise { sigma: 0.03 }],
            DomainVariant::TargetHazy => vec![
                RecipeOp::Haze {
                    t_top: 0.3,
                    t_bottom: 0.75,
                    airlight: 0.82,
                },
                RecipeOp::Blur { sigma: 0.8 },
            ],
            DomainVariant::TargetDarkStreaks => vec![
                DARK,
                NIGHT_TINT,
                RecipeOp::Streaks {
                    count: 70,
                    min_len: 10.0,
                    max_len: 18.0,
                    angle_deg: 100.0,
                    alpha: 0.35,
                },
                RecipeOp::Noise { sigma: 0.03 },
            ],
            DomainVariant::TargetLowresNoisy => vec![
                RecipeOp::Rescale { ratio: 0.5 },
                RecipeOp::Gamma { gamma: 1.3, gain: 0.75 },
                RecipeOp::Noise { sigma: 0.06 },
            ],
        }
    }
}

impl fmt::Display for DomainVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DomainVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DomainVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::MissingVariant(s.to_string()))
    }
}

fn streaks<R: Rng + ?Sized>(buf: &mut Buf, op: (usize, f32, f32, f32, f32), rng: &mut R) {
    let (count, min_len, max_len, angle_deg, alpha) = op;
    let (w, h) = (buf.w, buf.h);
    let mut layer = Buf {
        w,
        h,
        data: vec![0.0; w * h * 3],
    };
    for _ in 0..count {
        let theta = (angle_deg + rng.random_range(-5.0f32..5.0)).to_radians();
        let (dx, dy) = (theta.cos(), theta.sin());
        let len = rng.random_range(min_len..=max_len);
        let (x0, y0) = (rng.random_range(0.0..w as f32), rng.random_range(-len..h as f32));
        let steps = (len * 4.0) as usize;
        for s in 0..=steps {
            let t = s as f32 / 4.0;
            let (x, y) = (x0 + t * dx, y0 + t * dy);
            if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                let i = (y as usize * w + x as usize) * 3;
                layer.data[i..i + 3].fill(1.0);
            }
        }
    }
    let layer = gaussian_blur(&layer, 0.5);
    for (v, l) in buf.data.iter_mut().zip(&layer.data) {
        *v += l.min(1.0) * alpha * (230.0 - *v);
    }
}

/// Applies a variant's recipe. Photometric ops keep annotations; a rescale
/// maps them by the realized per-axis ratio.
pub fn render_domain_variant(scene: &Scene, variant: DomainVariant) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_named(scene.scene_seed, variant.name()));
    let mut buf = Buf::from_image(&scene.image);
    let mut annotations = scene.annotations.clone();
    for op in variant.recipe() {
        match op {
            RecipeOp::Gamma { gamma, gain } => {
                for v in &mut buf.data {
                    *v = gain * (*v / 255.0).powf(gamma) * 255.0;
                }
            }
            RecipeOp::Tint(t) => {
                for px in buf.data.chunks_exact_mut(3) {
                    for (v, m) in px.iter_mut().zip(t) {
                        *v *= m;
                    }
                }
            }
            RecipeOp::Noise { sigma } => {
                for v in &mut buf.data {
                    let n: f32 = StandardNormal.sample(&mut rng);
                    *v += n * sigma * 255.0;
                }
            }
            RecipeOp::Haze {
                t_top,
                t_bottom,
                airlight,
            } => {
                let (w, h) = (buf.w, buf.h);
                for y in 0..h {
                    let t = t_top + (t_bottom - t_top) * (y as f32 + 0.5) / h as f32;
                    for v in &mut buf.data[y * w * 3..(y + 1) * w * 3] {
                        *v = *v * t + airlight * 255.0 * (1.0 - t);
                    }
                }
            }
            RecipeOp::Blur { sigma } => buf = gaussian_blur(&buf, sigma),
            RecipeOp::Streaks {
                count,
                min_len,
                max_len,
                angle_deg,
                alpha,
            } => streaks(&mut buf, (count, min_len, max_len, angle_deg, alpha), &mut rng),
            RecipeOp::Rescale { ratio } => {
                let img = std::mem::replace(&mut buf, Buf { w: 0, h: 0, data: vec![] }).into_image();
                let (nw, nh) = (scaled_extent(img.width(), ratio), scaled_extent(img.height(), ratio));
                let (rx, ry) = (nw as f32 / img.width() as f32, nh as f32 / img.height() as f32);
                buf = Buf::from_image(&img.resized(nw, nh));
                for a in &mut annotations {
                    a.bbox = a.bbox.scaled_xy(rx, ry);
                }
            }
        }
    }
    Scene {
        image: buf.into_image(),
        annotations,
        scene_seed: scene.scene_seed,
    }
}
