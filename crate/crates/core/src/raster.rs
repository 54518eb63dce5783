//! 8-bit RGB rasters and their conversion to network input.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::kernels::{axis_taps, lerp};
use crate::tensor::Tensor;

/// Interleaved RGB image, row-major, 3 bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Image { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::invalid(
                "image",
                format!("{width}x{height} RGB needs {} bytes, got {}", width * height * 3, data.len()),
            ));
        }
        Ok(Image { width, height, data })
    }

    /// Quantizes interleaved float RGB in `[0,255]` (rounded, clamped).
    pub fn from_f32(width: usize, height: usize, data: &[f32]) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        Image {
            width,
            height,
            data: data.iter().map(|&v| quantize(v)).collect(),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Mean Rec. 601 luma.
    pub fn mean_luminance(&self) -> f64 {
        let s: f64 = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .sum();
        s / (self.width * self.height) as f64
    }

    /// Mean squared error over all channels; images must share dimensions.
    pub fn mse(&self, other: &Image) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        s / self.data.len() as f64
    }

    /// Bilinear resample to `width x height` with half-pixel centers.
    pub fn resized(&self, width: usize, height: usize) -> Image {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let (ty, tx) = (axis_taps(self.height, height), axis_taps(self.width, width));
        let mut out = Vec::with_capacity(width * height * 3);
        let w = self.width;
        for t in &ty {
            for s in &tx {
                for c in 0..3 {
                    let at = |y: usize, x: usize| self.data[(y * w + x) * 3 + c] as f32;
                    let top = lerp(at(t.lo, s.lo), at(t.lo, s.hi), s.w);
                    let bottom = lerp(at(t.hi, s.lo), at(t.hi, s.hi), s.w);
                    out.push(quantize(lerp(top, bottom, t.w)));
                }
            }
        }
        Image {
            width,
            height,
            data: out,
        }
    }

    /// Network input: planar `[3,H,W]`, each channel mapped to `(v/255 - 0.5) / 0.25`.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut out = vec![0.0f32; 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = (px[c] as f32 / 255.0 - 0.5) * 4.0;
            }
        }
        Tensor::from_parts(vec![3, self.height, self.width], out)
    }

    /// Reads any format the `image` crate understands (PPM, PNG, ...).
    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                line: 0,
                msg: e.to_string(),
            })?
            .into_rgb8();
        let (w, h) = img.dimensions();
        Image::from_raw(w as usize, h as usize, img.into_raw())
    }

    /// Writes binary PPM for `.ppm` paths, otherwise lets the extension pick.
    pub fn save(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction");
        save_with(path, |p| match pnm_subtype(p, false) {
            Some(sub) => write_pnm(p, buf.as_raw(), self.width, self.height, sub, ExtendedColorType::Rgb8),
            None => buf.save(p),
        })
    }
}

/// 8-bit grayscale image, used for heatmaps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    /// Writes binary PGM (P5) for `.pgm` paths.
    pub fn save(&self, path: &Path) -> Result<()> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .ok_or_else(|| Error::invalid("gray image", "buffer length mismatch"))?;
        save_with(path, |p| match pnm_subtype(p, true) {
            Some(sub) => write_pnm(p, buf.as_raw(), self.width, self.height, sub, ExtendedColorType::L8),
            None => buf.save(p),
        })
    }
}

/// Binary PPM/PGM for the matching extensions; the `image` crate would
/// otherwise pick the PAM container.
fn pnm_subtype(path: &Path, gray: bool) -> Option<PnmSubtype> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    match (ext.as_str(), gray) {
        ("ppm", false) => Some(PnmSubtype::Pixmap(SampleEncoding::Binary)),
        ("pgm", true) => Some(PnmSubtype::Graymap(SampleEncoding::Binary)),
        _ => None,
    }
}

fn write_pnm(
    path: &Path,
    data: &[u8],
    width: usize,
    height: usize,
    sub: PnmSubtype,
    color: ExtendedColorType,
) -> image::ImageResult<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(sub)
        .write_image(data, width as u32, height as u32, color)
}

fn save_with(path: &Path, f: impl FnOnce(&Path) -> image::ImageResult<()>) -> Result<()> {
    f(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            line: 0,
            msg: other.to_string(),
        },
    })
}

#[inline]
pub(crate) fn quantize(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_length_checked() {
        assert!(Image::from_raw(2, 2, vec![0; 12]).is_ok());
        assert!(Image::from_raw(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn tensor_layout_is_planar() {
        let mut img = Image::new(2, 1);
        img.set_pixel(1, 0, [255, 0, 128]);
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data()[1], 2.0);
        assert_eq!(t.data()[3], -2.0);
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let mut img = Image::filled(5, 3, [10, 20, 30]);
        img.set_pixel(4, 2, [255, 0, 7]);
        img.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..2], b"P6");
        assert_eq!(Image::load(&path).unwrap(), img);
    }
}
