//! 8-bit image export (binary PPM, PNG) and import.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ppm" => Some(ImageFormat::Ppm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }
}

impl std::str::FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppm" => Ok(ImageFormat::Ppm),
            "png" => Ok(ImageFormat::Png),
            _ => Err(Error::InvalidInput(format!("unknown image format '{s}' (ppm, png)"))),
        }
    }
}

/// Clamp to `[0, 1]` and round `255·v` half to even.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

pub fn quantized_bytes(image: &Image) -> Result<Vec<u8>> {
    if let Some(i) = image.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite pixel value at index {i}")));
    }
    Ok(image.data.iter().map(|&v| quantize(v)).collect())
}

/// Binary P6 encoding with maxval 255.
pub fn ppm_bytes(image: &Image) -> Result<Vec<u8>> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(quantized_bytes(image)?);
    Ok(out)
}

pub fn write_image(image: &Image, path: &Path, format: ImageFormat) -> Result<()> {
    match format {
        ImageFormat::Ppm => std::fs::write(path, ppm_bytes(image)?).map_err(|e| Error::io(path, e)),
        ImageFormat::Png => {
            let bytes = quantized_bytes(image)?;
            let (w, h) = (dim(image.width, path)?, dim(image.height, path)?);
            image::save_buffer_with_format(
                path,
                &bytes,
                w,
                h,
                image::ExtendedColorType::Rgb8,
                image::ImageFormat::Png,
            )
            .map_err(|e| codec_error(path, e))
        }
    }
}

fn dim(v: usize, path: &Path) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Image {
        path: path.into(),
        message: format!("dimension {v} too large"),
    })
}

fn codec_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.into(),
            message: other.to_string(),
        },
    }
}

/// Reads an 8-bit image as values in `[0, 1]`. Pixels with an alpha channel
/// are composited over `background`.
pub fn read_image(path: &Path, background: [f64; 3]) -> Result<Image> {
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| codec_error(path, e))?;
    let rgba = decoded.to_rgba32f();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let has_alpha = decoded.color().has_alpha();
    let mut data = Vec::with_capacity(w * h * 3);
    for px in rgba.pixels() {
        let a = if has_alpha { px[3] as f64 } else { 1.0 };
        for c in 0..3 {
            data.push(px[c] as f64 * a + background[c] * (1.0 - a));
        }
    }
    if !has_alpha {
        // Exact `byte / 255` rather than the decoder's float conversion.
        let bytes = decoded.to_rgb8();
        data = bytes.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    }
    Image::from_data(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_golden_bytes() {
        let img = Image::filled(1, 1, [1.0, 1.0, 1.0]);
        let mut want = b"P6\n1 1\n255\n".to_vec();
        want.extend([0xff, 0xff, 0xff]);
        assert_eq!(ppm_bytes(&img).unwrap(), want);
    }

    #[test]
    fn quantization_rounds_half_to_even() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.0), 255);
    }

    #[test]
    fn non_finite_pixels_are_rejected() {
        let mut img = Image::new(2, 1);
        img.data[4] = f64::NAN;
        assert!(ppm_bytes(&img).is_err());
    }
}
