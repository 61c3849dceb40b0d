//! 8-bit grayscale image I/O (binary PGM and PNG) and resampling.
//!
//! Heightmaps travel as flattened row-major `[0, 1]` values; files store them
//! as 8-bit gray with 0 -> 0.0 and 255 -> 1.0.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// An owned 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage8 {
    pub pixels: Vec<u8>,
    pub width: usize,
    pub height: usize,
}

impl GrayImage8 {
    pub fn new(pixels: Vec<u8>, width: usize, height: usize) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::ImageFormat(format!(
                "pixel buffer has {} bytes for {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(Self {
            pixels,
            width,
            height,
        })
    }

    /// Quantize `[0, 1]` values (clamped) to 8-bit gray.
    pub fn from_values(values: &[f64], width: usize, height: usize) -> Result<Self> {
        let pixels = values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self::new(pixels, width, height)
    }

    /// Scale to `[0, 1]` floats.
    pub fn to_values(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }
}

/// Read a binary (P5) PGM with maxval 255.
pub fn read_pgm(path: &Path) -> Result<GrayImage8> {
    let data = fs::read(path)?;
    parse_pgm(&data).map_err(|m| Error::ImageFormat(format!("{}: {m}", path.display())))
}

fn parse_pgm(data: &[u8]) -> std::result::Result<GrayImage8, String> {
    let mut pos = 0usize;
    let mut token = || -> std::result::Result<Vec<u8>, String> {
        // skip whitespace and '#' comments
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(data[start..pos].to_vec())
    };

    if token()? != b"P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let parse_num = |t: Vec<u8>| -> std::result::Result<usize, String> {
        std::str::from_utf8(&t)
            .map_err(|_| "bad header".to_string())?
            .parse::<usize>()
            .map_err(|_| "bad header number".to_string())
    };
    let width = parse_num(token()?)?;
    let height = parse_num(token()?)?;
    let maxval = parse_num(token()?)?;
    if maxval != 255 {
        return Err(format!("unsupported bit depth: maxval {maxval}, want 255"));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let need = width * height;
    if data.len() < pos + need {
        return Err("truncated raster".into());
    }
    GrayImage8::new(data[pos..pos + need].to_vec(), width, height).map_err(|e| e.to_string())
}

/// Write a binary (P5) PGM with maxval 255.
pub fn write_pgm(path: &Path, img: &GrayImage8) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    fs::write(path, out)?;
    Ok(())
}

/// Read an 8-bit grayscale PNG; other color types or depths are rejected.
pub fn read_png_gray(path: &Path) -> Result<GrayImage8> {
    let img = image::open(path).map_err(|e| {
        Error::ImageFormat(format!("{}: {e}", path.display()))
    })?;
    match img {
        image::DynamicImage::ImageLuma8(gray) => {
            let (w, h) = (gray.width() as usize, gray.height() as usize);
            GrayImage8::new(gray.into_raw(), w, h)
        }
        other => Err(Error::ImageFormat(format!(
            "{}: wrong bit depth or color type {:?}, want 8-bit grayscale",
            path.display(),
            other.color()
        ))),
    }
}

/// Write an 8-bit grayscale PNG.
pub fn write_png_gray(path: &Path, img: &GrayImage8) -> Result<()> {
    let buf: image::GrayImage =
        image::ImageBuffer::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
            .ok_or_else(|| Error::ImageFormat("buffer size mismatch".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::ImageFormat(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Read a grayscale image, dispatching on the file extension
/// (`.pgm` or `.png`).
pub fn read_gray(path: &Path) -> Result<GrayImage8> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("pgm") => read_pgm(path),
        Some("png") => read_png_gray(path),
        other => Err(Error::ImageFormat(format!(
            "{}: unsupported extension {:?}, want .pgm or .png",
            path.display(),
            other
        ))),
    }
}

/// Bilinear resample of a row-major float image.
pub fn resample_bilinear(
    src: &[f64],
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<f64> {
    assert_eq!(src.len(), src_w * src_h);
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for r in 0..dst_h {
        // map destination pixel centers onto source pixel centers
        let sy = ((r as f64 + 0.5) * src_h as f64 / dst_h as f64 - 0.5)
            .clamp(0.0, (src_h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let fy = sy - y0 as f64;
        for c in 0..dst_w {
            let sx = ((c as f64 + 0.5) * src_w as f64 / dst_w as f64 - 0.5)
                .clamp(0.0, (src_w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let fx = sx - x0 as f64;
            let top = src[y0 * src_w + x0] * (1.0 - fx) + src[y0 * src_w + x1] * fx;
            let bot = src[y1 * src_w + x0] * (1.0 - fx) + src[y1 * src_w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Stack images horizontally with a light separator column between them.
/// All inputs must share one height.
pub fn hstack(images: &[&GrayImage8], separator_px: usize) -> Result<GrayImage8> {
    let Some(first) = images.first() else {
        return Err(Error::ImageFormat("nothing to stack".into()));
    };
    let height = first.height;
    if images.iter().any(|i| i.height != height) {
        return Err(Error::ImageFormat("mismatched heights in montage".into()));
    }
    let total_w: usize =
        images.iter().map(|i| i.width).sum::<usize>() + separator_px * (images.len() - 1);
    let mut pixels = vec![200u8; total_w * height];
    let mut x_off = 0usize;
    for img in images {
        for r in 0..height {
            let dst = r * total_w + x_off;
            let src = r * img.width;
            pixels[dst..dst + img.width].copy_from_slice(&img.pixels[src..src + img.width]);
        }
        x_off += img.width + separator_px;
    }
    GrayImage8::new(pixels, total_w, height)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let img = GrayImage8::new((0..=255u8).cycle().take(20 * 13).collect(), 20, 13).unwrap();
        write_pgm(&path, &img).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
    }

    #[test]
    fn pgm_rejects_wrong_depth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        std::fs::write(&path, b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0").unwrap();
        assert!(read_pgm(&path).is_err());
    }

    #[test]
    fn pgm_parses_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        std::fs::write(&path, b"P5 # format\n# a comment line\n2 2\n255\nabcd").unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.pixels, b"abcd");
    }

    #[test]
    fn png_round_trips_and_rejects_color() {
        let dir = tempfile::tempdir().unwrap();
        let gray_path = dir.path().join("g.png");
        let img = GrayImage8::new(vec![0, 64, 128, 255], 2, 2).unwrap();
        write_png_gray(&gray_path, &img).unwrap();
        assert_eq!(read_png_gray(&gray_path).unwrap(), img);

        let rgb_path = dir.path().join("c.png");
        let rgb = image::RgbImage::from_raw(1, 1, vec![1, 2, 3]).unwrap();
        rgb.save_with_format(&rgb_path, image::ImageFormat::Png).unwrap();
        let err = read_png_gray(&rgb_path).unwrap_err().to_string();
        assert!(err.contains("grayscale"), "{err}");
    }

    #[test]
    fn identity_resample_is_exact() {
        let src: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let out = resample_bilinear(&src, 6, 5, 6, 5);
        for (a, b) in src.iter().zip(&out) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn upsample_preserves_constant_and_range() {
        let src = vec![0.25; 16];
        let out = resample_bilinear(&src, 4, 4, 9, 9);
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn eight_bit_scaling_convention() {
        let img = GrayImage8::new(vec![128], 1, 1).unwrap();
        let v = img.to_values();
        assert!((v[0] - 128.0 / 255.0).abs() < 1e-15);
        assert!((v[0] - 0.50196).abs() < 1e-5);
    }
}
