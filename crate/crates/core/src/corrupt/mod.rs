//! Source-data diversification: fifteen severity-graded corruptions and
//! resolution downscaling.
//!
//! Every kind carries a five-entry parameter table, ordered from mild to
//! harsh, exported as a `pub const` in its submodule. Transforms work on
//! floats in `[0,255]` and are quantized once at the end, so outputs are
//! always valid 8-bit pixels.

mod blur;
mod digital;
pub(crate) mod filters;
mod noise;
mod weather;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

pub use blur::{DEFOCUS_RADIUS, GLASS, MOTION_LENGTH, ZOOM_MAX};
pub use digital::{BLOCK_CODEC_QUALITY, CONTRAST, ELASTIC, PIXELATE};
pub use noise::{GAUSSIAN_SIGMA, IMPULSE_AMOUNT, SHOT_PHOTONS};
pub use weather::{BRIGHTNESS, FOG, FROST, SNOW};

use filters::Buf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    GlassBlur,
    MotionBlur,
    ZoomBlur,
    Snow,
    Frost,
    Fog,
    Brightness,
    Contrast,
    Elastic,
    Pixelate,
    BlockCodec,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 15] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::GlassBlur,
        CorruptionKind::MotionBlur,
        CorruptionKind::ZoomBlur,
        CorruptionKind::Snow,
        CorruptionKind::Frost,
        CorruptionKind::Fog,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Elastic,
        CorruptionKind::Pixelate,
        CorruptionKind::BlockCodec,
    ];

    pub fn id(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian-noise",
            CorruptionKind::ShotNoise => "shot-noise",
            CorruptionKind::ImpulseNoise => "impulse-noise",
            CorruptionKind::DefocusBlur => "defocus-blur",
            CorruptionKind::GlassBlur => "glass-blur",
            CorruptionKind::MotionBlur => "motion-blur",
            CorruptionKind::ZoomBlur => "zoom-blur",
            CorruptionKind::Snow => "snow",
            CorruptionKind::Frost => "frost",
            CorruptionKind::Fog => "fog",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Elastic => "elastic",
            CorruptionKind::Pixelate => "pixelate",
            CorruptionKind::BlockCodec => "block-codec",
        }
    }

    /// Human-readable parameter set for `severity` (1..=5).
    pub fn describe(self, severity: u8) -> Result<String> {
        let i = severity_index(severity)?;
        Ok(match self {
            CorruptionKind::GaussianNoise => format!("sigma={}", GAUSSIAN_SIGMA[i]),
            CorruptionKind::ShotNoise => format!("photons={}", SHOT_PHOTONS[i]),
            CorruptionKind::ImpulseNoise => format!("amount={}", IMPULSE_AMOUNT[i]),
            CorruptionKind::DefocusBlur => format!("radius={}", DEFOCUS_RADIUS[i]),
            CorruptionKind::GlassBlur => format!("sigma,delta,iterations={:?}", GLASS[i]),
            CorruptionKind::MotionBlur => format!("length={}", MOTION_LENGTH[i]),
            CorruptionKind::ZoomBlur => format!("max_zoom={}", ZOOM_MAX[i]),
            CorruptionKind::Snow => format!("density,sigma,blend={:?}", SNOW[i]),
            CorruptionKind::Frost => format!("image,frost={:?}", FROST[i]),
            CorruptionKind::Fog => format!("strength,decay={:?}", FOG[i]),
            CorruptionKind::Brightness => format!("shift={}", BRIGHTNESS[i]),
            CorruptionKind::Contrast => format!("factor={}", CONTRAST[i]),
            CorruptionKind::Elastic => format!("amplitude,sigma={:?}", ELASTIC[i]),
            CorruptionKind::Pixelate => format!("factor={}", PIXELATE[i]),
            CorruptionKind::BlockCodec => format!("quality={}", BLOCK_CODEC_QUALITY[i]),
        })
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::invalid("corruption", format!("unknown kind {s:?}")))
    }
}

fn severity_index(severity: u8) -> Result<usize> {
    if (1..=5).contains(&severity) {
        Ok(severity as usize - 1)
    } else {
        Err(Error::invalid("corruption", format!("severity {severity} outside 1..=5")))
    }
}

/// Applies one corruption. Deterministic given the image, parameters and rng state.
pub fn apply_corruption<R: Rng + ?Sized>(img: &Image, kind: CorruptionKind, severity: u8, rng: &mut R) -> Result<Image> {
    let i = severity_index(severity)?;
    let mut buf = Buf::from_image(img);
    let out = match kind {
        CorruptionKind::GaussianNoise => {
            noise::gaussian(&mut buf, GAUSSIAN_SIGMA[i], rng);
            buf
        }
        CorruptionKind::ShotNoise => {
            noise::shot(&mut buf, SHOT_PHOTONS[i], rng);
            buf
        }
        CorruptionKind::ImpulseNoise => {
            noise::impulse(&mut buf, IMPULSE_AMOUNT[i], rng);
            buf
        }
        CorruptionKind::DefocusBlur => blur::defocus(&buf, DEFOCUS_RADIUS[i]),
        CorruptionKind::GlassBlur => blur::glass(&buf, GLASS[i], rng),
        CorruptionKind::MotionBlur => blur::motion(&buf, MOTION_LENGTH[i], rng),
        CorruptionKind::ZoomBlur => blur::zoom(&buf, ZOOM_MAX[i]),
        CorruptionKind::Snow => weather::snow(&buf, SNOW[i], rng),
        CorruptionKind::Frost => weather::frost(&buf, FROST[i], rng),
        CorruptionKind::Fog => weather::fog(&buf, FOG[i], rng),
        CorruptionKind::Brightness => weather::brightness(&buf, BRIGHTNESS[i]),
        CorruptionKind::Contrast => digital::contrast(&buf, CONTRAST[i]),
        CorruptionKind::Elastic => digital::elastic(&buf, ELASTIC[i], rng),
        CorruptionKind::Pixelate => digital::pixelate(&buf, PIXELATE[i]),
        CorruptionKind::BlockCodec => digital::block_codec(&buf, BLOCK_CODEC_QUALITY[i]),
    };
    Ok(out.into_image())
}

/// Output extent for one axis: `round(len * ratio)`, at least 1.
pub fn scaled_extent(len: usize, ratio: f32) -> usize {
    ((len as f32 * ratio).round() as usize).max(1)
}

/// Bilinear downscale (half-pixel centers) to `round(dim * ratio)`.
pub fn downscale(img: &Image, ratio: f32) -> Result<Image> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid("downscale", format!("ratio {ratio} outside (0, 1]")));
    }
    Ok(img.resized(scaled_extent(img.width(), ratio), scaled_extent(img.height(), ratio)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corruption {
    pub kind: CorruptionKind,
    pub severity: u8,
}

/// Record of one diversification draw. `corruption` is `None` when the
/// corruption branch is disabled; `seed` seeds the corruption's own rng.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversifyDraw {
    pub corruption: Option<Corruption>,
    pub scale_ratio: f32,
    pub seed: u64,
}

/// Which diversifications are active and the lower end of the scale range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversifyConfig {
    pub corrupt: bool,
    pub scale_min: f32,
}

impl Default for DiversifyConfig {
    fn default() -> Self {
        DiversifyConfig {
            corrupt: true,
            scale_min: 0.6,
        }
    }
}

impl DiversifyConfig {
    /// Draws the parameters without touching an image. All random values are
    /// consumed regardless of the flags, so toggling them does not shift
    /// the stream for later draws.
    pub fn draw<R: RngCore + ?Sized>(&self, rng: &mut R) -> DiversifyDraw {
        let kind = CorruptionKind::ALL[rng.random_range(0..CorruptionKind::ALL.len())];
        let severity = rng.random_range(1..=5u8);
        let u: f32 = rng.random();
        let seed = rng.next_u64();
        let scale_ratio = if self.scale_min < 1.0 {
            self.scale_min + (1.0 - self.scale_min) * u
        } else {
            1.0
        };
        DiversifyDraw {
            corruption: self.corrupt.then_some(Corruption { kind, severity }),
            scale_ratio,
            seed,
        }
    }

    pub fn apply(&self, img: &Image, draw: &DiversifyDraw) -> Result<Image> {
        let corrupted = match draw.corruption {
            Some(c) => {
                let mut rng = ChaCha8Rng::seed_from_u64(draw.seed);
                apply_corruption(img, c.kind, c.severity, &mut rng)?
            }
            None => img.clone(),
        };
        downscale(&corrupted, draw.scale_ratio)
    }

    pub fn sample<R: RngCore + ?Sized>(&self, img: &Image, rng: &mut R) -> Result<(Image, DiversifyDraw)> {
        let draw = self.draw(rng);
        Ok((self.apply(img, &draw)?, draw))
    }
}

/// Uniform kind, uniform severity and a scale ratio in `[0.6, 1.0]`;
/// corruption first, then downscaling.
pub fn sample_diversify<R: RngCore + ?Sized>(img: &Image, rng: &mut R) -> (Image, DiversifyDraw) {
    DiversifyConfig::default()
        .sample(img, rng)
        .expect("drawn severity and ratio are always in range")
}
