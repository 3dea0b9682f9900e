//! Image representation, bilinear resampling, and the two-step resolution
//! degradation used to produce low-information training inputs.

use std::io;
use std::path::Path;

use thiserror::Error;

mod pnm;

pub use pnm::{encode_pnm, parse_pnm, read_pnm, write_pnm};

/// Side length of the canonical model input. Degraded images are enlarged
/// back to this size regardless of the intermediate resolution.
pub const MODEL_INPUT_SIDE: usize = 50;

/// Intermediate square resolutions of the degradation ladder, from least to
/// most destructive.
pub const RESOLUTION_LADDER: [usize; 9] = [50, 35, 25, 18, 13, 9, 7, 5, 3];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid image geometry {width}x{height} with {channels} channels")]
    InvalidGeometry {
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("pixel buffer holds {actual} values, geometry requires {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("intensity {value} at index {index} is outside [0, 1]")]
    IntensityRange { index: usize, value: f32 },
    #[error("sample point ({x}, {y}) lies outside a {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("channel {channel} out of range for an image with {channels} channels")]
    BadChannel { channel: usize, channels: usize },
    #[error("target size {width}x{height} must be at least 1x1")]
    BadTargetSize { width: usize, height: usize },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated image file: {0}")]
    Truncated(String),
    #[error("could not decode {path}: {message}")]
    Decode { path: String, message: String },
    #[error("i/o error")]
    Io(#[from] io::Error),
}

/// A dense interleaved raster with 1 (grayscale) or 3 (RGB) channels and
/// intensities normalized to [0, 1]. Construction validates the invariants;
/// the accessors never re-check them.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(ImageError::InvalidGeometry {
                width,
                height,
                channels,
            });
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImageError::DataLength {
                expected,
                actual: data.len(),
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ImageError::IntensityRange { index, value });
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn constant(
        width: usize,
        height: usize,
        channels: usize,
        value: f32,
    ) -> Result<Self, ImageError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Intensity at column `x`, row `y`, channel `c`.
    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Grayscale images become 3-channel by plane replication; RGB images
    /// are returned unchanged.
    pub fn replicate_to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width * self.height * 3);
        for &v in &self.data {
            data.extend_from_slice(&[v, v, v]);
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Mirror around the vertical axis: output column x reads input column
    /// width-1-x.
    pub fn flip_horizontal(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let sx = self.width - 1 - x;
                for c in 0..self.channels {
                    data.push(self.get(sx, y, c));
                }
            }
        }
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }
}

/// Interpolates along x at the two rows bracketing y, then along y between
/// those results. Neighbors past the last row or column are clamped to the
/// border, which also covers the degenerate 1-pixel-wide or -tall case.
#[inline]
fn bilinear_unchecked(img: &Image, x: f64, y: f64, c: usize) -> f32 {
    let xf = x.floor();
    let yf = y.floor();
    let xi = xf as usize;
    let yi = yf as usize;
    let xn = (xi + 1).min(img.width - 1);
    let yn = (yi + 1).min(img.height - 1);
    let fx = (x - xf) as f32;
    let fy = (y - yf) as f32;
    let f00 = img.get(xi, yi, c);
    let f10 = img.get(xn, yi, c);
    let f01 = img.get(xi, yn, c);
    let f11 = img.get(xn, yn, c);
    let row0 = (f10 - f00) * fx + f00;
    let row1 = (f11 - f01) * fx + f01;
    let value = (row1 - row0) * fy + row0;
    // The result is a convex combination of the four neighbors; pin it to
    // their range so float rounding can never push it outside.
    let lo = f00.min(f10).min(f01).min(f11);
    let hi = f00.max(f10).max(f01).max(f11);
    value.clamp(lo, hi)
}

/// Bilinear sample at fractional coordinates. `x` must lie in [0, width)
/// and `y` in [0, height); integer coordinates return the pixel exactly.
pub fn sample_bilinear(img: &Image, x: f64, y: f64, channel: usize) -> Result<f32, ImageError> {
    if channel >= img.channels {
        return Err(ImageError::BadChannel {
            channel,
            channels: img.channels,
        });
    }
    let in_x = x.is_finite() && x >= 0.0 && x < img.width as f64;
    let in_y = y.is_finite() && y >= 0.0 && y < img.height as f64;
    if !in_x || !in_y {
        return Err(ImageError::OutOfBounds {
            x,
            y,
            width: img.width,
            height: img.height,
        });
    }
    Ok(bilinear_unchecked(img, x, y, channel))
}

/// Resamples to `target_w` x `target_h`. Output pixel (row i, column j)
/// reads the source at ((j * src_w) / target_w, (i * src_h) / target_h),
/// an origin-aligned mapping that makes resizing to the same size the
/// identity, bit for bit.
pub fn resize(img: &Image, target_w: usize, target_h: usize) -> Result<Image, ImageError> {
    if target_w == 0 || target_h == 0 {
        return Err(ImageError::BadTargetSize {
            width: target_w,
            height: target_h,
        });
    }
    let src_w = img.width as f64;
    let src_h = img.height as f64;
    let mut data = Vec::with_capacity(target_w * target_h * img.channels);
    for row in 0..target_h {
        let y = (row as f64 * src_h) / target_h as f64;
        for col in 0..target_w {
            let x = (col as f64 * src_w) / target_w as f64;
            for c in 0..img.channels {
                data.push(bilinear_unchecked(img, x, y, c));
            }
        }
    }
    Ok(Image {
        width: target_w,
        height: target_h,
        channels: img.channels,
        data,
    })
}

/// Two-step degradation: shrink to `side` x `side`, then enlarge back to
/// the canonical input size. `side` = [`MODEL_INPUT_SIDE`] is the identity.
pub fn degrade(img: &Image, side: usize) -> Result<Image, ImageError> {
    let small = resize(img, side, side)?;
    resize(&small, MODEL_INPUT_SIDE, MODEL_INPUT_SIDE)
}

/// Reads an image from disk. PNM files go through the built-in codec;
/// anything else is handed to the `image` crate and converted to grayscale
/// or RGB.
pub fn read_image(path: &Path) -> Result<Image, ImageError> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    if matches!(ext.as_str(), "ppm" | "pgm" | "pnm") {
        return read_pnm(path);
    }
    let decoded = image::open(path).map_err(|e| ImageError::Decode {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let width = decoded.width() as usize;
    let height = decoded.height() as usize;
    use image::DynamicImage as D;
    let (channels, raw) = match &decoded {
        D::ImageLuma8(_) | D::ImageLuma16(_) | D::ImageLumaA8(_) | D::ImageLumaA16(_) => {
            (1, decoded.into_luma8().into_raw())
        }
        _ => (3, decoded.into_rgb8().into_raw()),
    };
    let data = raw.iter().map(|&b| b as f32 / 255.0).collect();
    Image::new(width, height, channels, data)
}
