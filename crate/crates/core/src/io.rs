//! PFM and PNG import/export plus small JSON helpers.
//!
//! PFM is little-endian with scale `-1.0`; rows are stored bottom-to-top as
//! the format prescribes. Samples are `f32` on disk. PNG stores linear
//! values scaled by 255 or 65535 with no transfer curve.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::image::{Image, MapKind, PlanarMap};

pub fn encode_pfm(img: &Image) -> Vec<u8> {
    let (h, w, c) = img.shape();
    let tag = if c == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * c * 4);
    for y in (0..h).rev() {
        let row = &img.data()[y * w * c..(y + 1) * w * c];
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Image> {
    let mut reader = BufReader::new(bytes);
    let mut header = Vec::new();
    // Three whitespace-separated header lines: tag, dims, scale.
    for _ in 0..3 {
        let mut line = String::new();
        reader
            .read_line(&mut line)
            .map_err(|e| Error::Format(format!("pfm header: {e}")))?;
        header.push(line.trim().to_string());
    }
    let channels = match header[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::Format(format!("not a PFM file (tag {other:?})"))),
    };
    let dims: Vec<usize> = header[1]
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("pfm dimensions: {e}")))?;
    ensure!(dims.len() == 2, Error::Format("pfm dimensions line".into()));
    let (w, h) = (dims[0], dims[1]);
    let scale: f64 = header[2]
        .parse()
        .map_err(|e| Error::Format(format!("pfm scale: {e}")))?;
    ensure!(scale != 0.0, Error::Format("pfm scale is zero".into()));
    let little = scale < 0.0;
    let mut raw = Vec::new();
    reader
        .read_to_end(&mut raw)
        .map_err(|e| Error::Format(format!("pfm body: {e}")))?;
    ensure!(
        raw.len() >= h * w * channels * 4,
        Error::Format(format!("pfm body too short: {} bytes", raw.len()))
    );
    let mut data = vec![0.0; h * w * channels];
    for (i, chunk) in raw.chunks_exact(4).take(h * w * channels).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let file_row = i / (w * channels);
        let y = h - 1 - file_row;
        data[y * w * channels + i % (w * channels)] = v as f64;
    }
    Image::new(h, w, channels, data)
}

pub fn write_pfm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

pub fn write_map_pfm(path: impl AsRef<Path>, map: &PlanarMap) -> Result<()> {
    write_pfm(path, &map.to_image())
}

pub fn read_map_pfm(path: impl AsRef<Path>, kind: MapKind) -> Result<PlanarMap> {
    let img = read_pfm(path)?;
    ensure!(
        img.channels() == 1,
        Error::Format("planar map PFM must be single-channel".into())
    );
    PlanarMap::new(img.height(), img.width(), kind, img.into_data())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngDepth {
    Eight,
    Sixteen,
}

pub fn write_png(path: impl AsRef<Path>, img: &Image, depth: PngDepth) -> Result<()> {
    use image::{ImageBuffer, Luma, Rgb};
    let path = path.as_ref();
    let (h, w, c) = img.shape();
    let (w32, h32) = (w as u32, h as u32);
    let fmt_err = |e: image::ImageError| Error::Format(format!("png encode {}: {e}", path.display()));
    match depth {
        PngDepth::Eight => {
            let px: Vec<u8> = img
                .data()
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            if c == 1 {
                ImageBuffer::<Luma<u8>, _>::from_raw(w32, h32, px)
                    .expect("buffer size")
                    .save(path)
                    .map_err(fmt_err)
            } else {
                ImageBuffer::<Rgb<u8>, _>::from_raw(w32, h32, px)
                    .expect("buffer size")
                    .save(path)
                    .map_err(fmt_err)
            }
        }
        PngDepth::Sixteen => {
            let px: Vec<u16> = img
                .data()
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
                .collect();
            if c == 1 {
                ImageBuffer::<Luma<u16>, _>::from_raw(w32, h32, px)
                    .expect("buffer size")
                    .save(path)
                    .map_err(fmt_err)
            } else {
                ImageBuffer::<Rgb<u16>, _>::from_raw(w32, h32, px)
                    .expect("buffer size")
                    .save(path)
                    .map_err(fmt_err)
            }
        }
    }
}

/// Reads an 8- or 16-bit PNG as linear values in `[0, 1]`. Alpha is dropped.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    use image::DynamicImage;
    let path = path.as_ref();
    let dynimg = image::open(path)
        .map_err(|e| Error::Format(format!("png decode {}: {e}", path.display())))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let gray = matches!(
        dynimg,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let sixteen = matches!(
        dynimg,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    let data: Vec<f64> = match (gray, sixteen) {
        (true, false) => dynimg.to_luma8().into_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        (true, true) => dynimg.to_luma16().into_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        (false, false) => dynimg.to_rgb8().into_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        (false, true) => dynimg.to_rgb16().into_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
    };
    Image::new(h, w, if gray { 1 } else { 3 }, data)
}

/// Loads an image from PFM or PNG, chosen by extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "png" => read_png(path),
        _ => read_pfm(path),
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("json encode: {e}")))?;
    text.push('\n');
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("json {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pfm_roundtrip_is_f32_exact(h in 1usize..6, w in 1usize..6, rgb in any::<bool>(), seed in any::<u64>()) {
            let c = if rgb { 3 } else { 1 };
            let mut s = seed;
            let img = Image::from_fn(h, w, c, |_, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) as f32 as f64
            }).unwrap();
            let back = decode_pfm(&encode_pfm(&img)).unwrap();
            prop_assert_eq!(back, img);
        }
    }

    #[test]
    fn pfm_header_and_row_order() {
        let img = Image::new(2, 1, 1, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&img);
        assert!(bytes.starts_with(b"Pf\n1 2\n-1.0\n"));
        // bottom row first
        let body = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes(body[0..4].try_into().unwrap()), 2.0);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_pfm(b"P6\n1 1\n255\n").is_err());
        assert!(decode_pfm(b"Pf\n2 2\n-1.0\n\0\0").is_err());
    }

    #[test]
    fn png_roundtrip_16bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::from_fn(3, 4, 3, |y, x, c| (y * 12 + x * 3 + c) as f64 / 40.0).unwrap();
        write_png(&p, &img, PngDepth::Sixteen).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
        write_png(&p, &img.channel(0), PngDepth::Eight).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!(back.channels(), 1);
        assert!((back.get(2, 3, 0) - img.get(2, 3, 0)).abs() <= 0.5 / 255.0 + 1e-12);
    }
}
