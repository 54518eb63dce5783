//! Procedural labeled scenes and their held-out domain variants.
//!
//! A scene is a textured gradient background with one to a few
//! anti-aliased colored shapes. Boxes are the exact geometric bounds of each
//! shape. Everything is a pure function of a 64-bit scene seed.

mod io;
mod shapes;
mod variants;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corrupt::filters::{fractal_noise, hsv_to_rgb};
use crate::error::{Error, Result};
use crate::kernels::{lerp, RoiBox};
use crate::raster::Image;
use crate::seed::derive_seed;

pub use io::{read_dataset, read_manifest, write_dataset, Dataset, Manifest};
pub use shapes::{PlacedShape, ShapeClass, SUPERSAMPLE};
pub use variants::{render_domain_variant, DomainVariant, RecipeOp};

/// Placement attempts per object before the whole scene is redrawn.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Annotation {
    pub class_id: usize,
    pub bbox: RoiBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub annotations: Vec<Annotation>,
    pub scene_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Longest-axis extent range in pixels.
    pub min_size: f32,
    pub max_size: f32,
    /// Largest IoU allowed between two boxes of one scene.
    pub max_iou: f32,
    /// Largest fraction of the smaller box that another box may cover.
    pub max_cover: f32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 96,
            height: 96,
            classes: ShapeClass::ALL.len(),
            min_objects: 1,
            max_objects: 6,
            min_size: 10.0,
            max_size: 36.0,
            max_iou: 0.2,
            max_cover: 0.5,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("scene config", msg));
        if self.classes == 0 || self.classes > ShapeClass::ALL.len() {
            return bad(format!("classes must be in 1..={}", ShapeClass::ALL.len()));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects || self.max_objects > 8 {
            return bad("object count range must satisfy 1 <= min <= max <= 8".into());
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size) {
            return bad("size range must satisfy 0 < min <= max".into());
        }
        let smallest = self.width.min(self.height) as f32;
        if self.max_size + 2.0 > smallest {
            return bad(format!("max_size {} does not fit a {}x{} image", self.max_size, self.width, self.height));
        }
        // thinnest shape is a bar: size x 0.3 size
        if self.min_size * self.min_size * 0.3 < 16.0 {
            return bad("min_size too small for a 16 px^2 box".into());
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        ShapeClass::ALL[..self.classes].iter().map(|c| c.name().to_string()).collect()
    }
}

fn random_shape<R: Rng + ?Sized>(cfg: &SceneConfig, rng: &mut R) -> PlacedShape {
    let class = ShapeClass::ALL[rng.random_range(0..cfg.classes)];
    let size = rng.random_range(cfg.min_size..=cfg.max_size);
    let vertical = rng.random::<bool>();
    let mut shape = PlacedShape {
        class,
        cx: 0.0,
        cy: 0.0,
        size,
        vertical,
    };
    let b = shape.bounds();
    let (hw, hh) = (b.width() * 0.5, b.height() * 0.5);
    shape.cx = rng.random_range(1.0 + hw..=cfg.width as f32 - 1.0 - hw);
    shape.cy = rng.random_range(1.0 + hh..=cfg.height as f32 - 1.0 - hh);
    shape
}

fn compatible(cfg: &SceneConfig, a: &RoiBox, b: &RoiBox) -> bool {
    let inter = a.intersection(b);
    a.iou(b) <= cfg.max_iou && inter <= cfg.max_cover * a.area().min(b.area())
}

fn try_layout<R: Rng + ?Sized>(cfg: &SceneConfig, rng: &mut R) -> Option<Vec<PlacedShape>> {
    let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut placed: Vec<PlacedShape> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ok = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cand = random_shape(cfg, rng);
            let cb = cand.bounds();
            if placed.iter().all(|p| compatible(cfg, &p.bounds(), &cb)) {
                placed.push(cand);
                ok = true;
                break;
            }
        }
        if !ok {
            return None;
        }
    }
    Some(placed)
}

fn luma(rgb: [f32; 3]) -> f32 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

fn random_color<R: Rng + ?Sized>(rng: &mut R, avoid_luma: f32) -> [f32; 3] {
    let mut best = [0.0; 3];
    let mut best_gap = -1.0;
    for _ in 0..10 {
        let (r, g, b) = hsv_to_rgb(rng.random(), rng.random_range(0.55..1.0), rng.random_range(0.5..1.0));
        let c = [r * 255.0, g * 255.0, b * 255.0];
        let gap = (luma(c) - avoid_luma).abs();
        if gap > best_gap {
            best = c;
            best_gap = gap;
        }
        if gap >= 45.0 {
            break;
        }
    }
    best
}

fn render<R: Rng + ?Sized>(cfg: &SceneConfig, shapes: &[PlacedShape], rng: &mut R) -> Image {
    let (w, h) = (cfg.width, cfg.height);
    let ca: [f32; 3] = std::array::from_fn(|_| rng.random_range(30.0..190.0));
    let cb: [f32; 3] = std::array::from_fn(|_| rng.random_range(30.0..190.0));
    let angle = rng.random_range(0.0..std::f32::consts::TAU);
    let (ux, uy) = (angle.cos(), angle.sin());
    let texture = fractal_noise(w, h, 3, 1.8, rng);
    let diag = ((w * w + h * h) as f32).sqrt();
    let mut data = vec![0.0f32; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let t = ((x as f32 - w as f32 / 2.0) * ux + (y as f32 - h as f32 / 2.0) * uy) / diag + 0.5;
            let grain = (texture[y * w + x] - 0.5) * 40.0;
            for c in 0..3 {
                data[(y * w + x) * 3 + c] = lerp(ca[c], cb[c], t) + grain;
            }
        }
    }
    for s in shapes {
        let (cx, cy) = (s.cx as usize, s.cy as usize);
        let i = (cy.min(h - 1) * w + cx.min(w - 1)) * 3;
        let color = random_color(rng, luma([data[i], data[i + 1], data[i + 2]]));
        let (x0, y0, x1, y1) = s.pixel_span(w, h);
        for py in y0..y1 {
            for px in x0..x1 {
                let cov = s.coverage(px, py);
                if cov > 0.0 {
                    let j = (py * w + px) * 3;
                    for c in 0..3 {
                        data[j + c] = lerp(data[j + c], color[c], cov);
                    }
                }
            }
        }
    }
    Image::from_f32(w, h, &data)
}

/// Generates a scene together with the shapes it was rendered from.
/// An unsatisfiable layout is redrawn from a derived seed; the returned
/// scene keeps `seed` as its identity so it can be regenerated.
pub fn generate_scene_with_layout(seed: u64, cfg: &SceneConfig) -> Result<(Scene, Vec<PlacedShape>)> {
    cfg.validate()?;
    let mut attempt = 0u64;
    loop {
        let draw_seed = if attempt == 0 { seed } else { derive_seed(seed, attempt) };
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
        match try_layout(cfg, &mut rng) {
            Some(shapes) => {
                let image = render(cfg, &shapes, &mut rng);
                let annotations = shapes
                    .iter()
                    .map(|s| Annotation {
                        class_id: s.class.id(),
                        bbox: s.bounds(),
                    })
                    .collect();
                let scene = Scene {
                    image,
                    annotations,
                    scene_seed: seed,
                };
                return Ok((scene, shapes));
            }
            None => {
                attempt += 1;
                log::warn!("scene {seed:#x}: placement failed, redrawing (attempt {attempt})");
            }
        }
    }
}

pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene> {
    generate_scene_with_layout(seed, cfg).map(|(s, _)| s)
}

/// Scenes `0..count` of the stream rooted at `root_seed`.
pub fn generate_scenes(root_seed: u64, count: usize, cfg: &SceneConfig) -> Result<Vec<Scene>> {
    (0..count as u64).map(|i| generate_scene(derive_seed(root_seed, i), cfg)).collect()
}
