use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::image::ImageTensor;

/// An 8-bit interleaved (HWC) image ready for encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisplayImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub bytes: Vec<u8>,
}

#[inline]
pub(crate) fn quantize_unit(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Maps a value to a byte. Unsigned mode maps `[0, 1]` onto `[0, 255]`;
/// signed mode maps `[-1, 1]` onto it so that zero renders mid-grey.
/// Out-of-range values clamp; halves round up.
#[inline]
pub(crate) fn quantize(v: f64, signed: bool) -> u8 {
    if signed {
        quantize_unit(v * 0.5 + 0.5)
    } else {
        quantize_unit(v)
    }
}

pub fn to_display_u8(img: &ImageTensor, signed: bool) -> DisplayImage {
    let (h, w, c) = img.dims();
    let mut bytes = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                bytes.push(quantize(img.get(ch, y, x), signed));
            }
        }
    }
    DisplayImage {
        height: h,
        width: w,
        channels: c,
        bytes,
    }
}

/// Writes a display image as PNG or binary PPM (`P6`), chosen by extension.
pub fn save_display(path: &Path, img: &DisplayImage) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => {
            let color = match img.channels {
                1 => image::ExtendedColorType::L8,
                3 => image::ExtendedColorType::Rgb8,
                n => return Err(Error::invalid(format!("cannot encode {n}-channel PNG"))),
            };
            image::save_buffer(path, &img.bytes, img.width as u32, img.height as u32, color)?;
            Ok(())
        }
        "ppm" => {
            let mut out = BufWriter::new(File::create(path)?);
            write!(out, "P6\n{} {}\n255\n", img.width, img.height)?;
            match img.channels {
                3 => out.write_all(&img.bytes)?,
                1 => {
                    for &b in &img.bytes {
                        out.write_all(&[b, b, b])?;
                    }
                }
                n => return Err(Error::invalid(format!("cannot encode {n}-channel PPM"))),
            }
            out.flush()?;
            Ok(())
        }
        other => Err(Error::invalid(format!(
            "unsupported image extension `{other}` (use .png or .ppm)"
        ))),
    }
}

/// Reads any PNG/PNM file as an RGB image with values in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let rgb = image::open(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(ImageTensor::from_fn(h, w, 3, |c, y, x| {
        f64::from(rgb.get_pixel(x as u32, y as u32)[c]) / 255.0
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ImageTensor {
        ImageTensor::new(1, 1, 1, vec![v]).unwrap()
    }

    #[test]
    fn unsigned_endpoints_and_clamp() {
        assert_eq!(to_display_u8(&single(0.0), false).bytes, [0]);
        assert_eq!(to_display_u8(&single(1.0), false).bytes, [255]);
        assert_eq!(to_display_u8(&single(1.7), false).bytes, [255]);
        assert_eq!(to_display_u8(&single(-0.2), false).bytes, [0]);
    }

    #[test]
    fn signed_zero_is_mid_grey() {
        assert_eq!(to_display_u8(&single(0.0), true).bytes, [128]);
        assert_eq!(to_display_u8(&single(-1.0), true).bytes, [0]);
        assert_eq!(to_display_u8(&single(1.0), true).bytes, [255]);
    }

    #[test]
    fn interleaves_channels() {
        let img =
            ImageTensor::from_fn(1, 2, 3, |c, _, x| if x == 1 { c as f64 * 0.5 } else { 0.0 });
        assert_eq!(to_display_u8(&img, false).bytes, [0, 0, 0, 0, 128, 255]);
    }

    #[test]
    fn png_and_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::from_fn(4, 5, 3, |c, y, x| ((c + y * 5 + x) % 7) as f64 / 6.0);
        let disp = to_display_u8(&img, false);
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            save_display(&p, &disp).unwrap();
            let back = load_image(&p).unwrap();
            assert_eq!(to_display_u8(&back, false), disp, "{name}");
        }
        assert!(save_display(&dir.path().join("a.gif"), &disp).is_err());
    }
}
