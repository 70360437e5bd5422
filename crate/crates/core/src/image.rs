//! Dense rasters shared by every stage of the pipeline.
//!
//! Layout is row-major and channel-interleaved: the sample for pixel
//! `(y, x)` and channel `c` lives at `(y * width + x) * channels + c`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// A dense `H x W x C` float raster, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            height > 0 && width > 0,
            Error::InvalidArgument(format!("image dimensions must be positive, got {height}x{width}"))
        );
        ensure!(
            channels == 1 || channels == 3,
            Error::InvalidArgument(format!("channels must be 1 or 3, got {channels}"))
        );
        ensure!(
            data.len() == height * width * channels,
            Error::Shape(format!(
                "data length {} != {height}*{width}*{channels}",
                data.len()
            ))
        );
        ensure!(data.iter().all(|v| v.is_finite()), Error::NonFinite("image data"));
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds an image by evaluating `f(y, x, c)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    pub fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        ensure!(
            self.same_shape(other),
            Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            ))
        );
        Ok(())
    }

    /// Checks that the spatial size matches a planar map.
    pub fn check_plane(&self, map_h: usize, map_w: usize, what: &str) -> Result<()> {
        ensure!(
            self.height == map_h && self.width == map_w,
            Error::Shape(format!(
                "{what}: image {}x{} vs map {map_h}x{map_w}",
                self.height, self.width
            ))
        );
        Ok(())
    }

    /// Applies `f` to every sample, re-validating finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Image> {
        Image::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn clamp01(&self) -> Image {
        Image {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        let n = self.height * self.width;
        self.data.iter().skip(c).step_by(self.channels).sum::<f64>() / n as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mean over channels, producing a single-channel image.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let c = self.channels as f64;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / c)
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Repeats a single-channel image across `channels`.
    pub fn broadcast(&self, channels: usize) -> Result<Image> {
        if channels == self.channels {
            return Ok(self.clone());
        }
        ensure!(
            self.channels == 1,
            Error::Shape(format!(
                "cannot broadcast {} channels to {channels}",
                self.channels
            ))
        );
        let data = self
            .data
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, channels))
            .collect();
        Image::new(self.height, self.width, channels, data)
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Top-left crop.
    pub fn crop(&self, height: usize, width: usize) -> Result<Image> {
        ensure!(
            height <= self.height && width <= self.width,
            Error::Shape(format!(
                "crop {height}x{width} larger than {}x{}",
                self.height, self.width
            ))
        );
        Image::from_fn(height, width, self.channels, |y, x, c| self.get(y, x, c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Depth,
    Disparity,
}

/// Dense scalar field: scene depth (scene units) or disparity (pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarMap {
    height: usize,
    width: usize,
    kind: MapKind,
    data: Vec<f64>,
}

impl PlanarMap {
    pub fn new(height: usize, width: usize, kind: MapKind, data: Vec<f64>) -> Result<Self> {
        ensure!(
            height > 0 && width > 0,
            Error::InvalidArgument(format!("map dimensions must be positive, got {height}x{width}"))
        );
        ensure!(
            data.len() == height * width,
            Error::Shape(format!("map data length {} != {height}*{width}", data.len()))
        );
        ensure!(data.iter().all(|v| v.is_finite()), Error::NonFinite("planar map"));
        if kind == MapKind::Depth {
            ensure!(
                data.iter().all(|&v| v > 0.0),
                Error::InvalidArgument("depth values must be strictly positive".into())
            );
        }
        Ok(Self {
            height,
            width,
            kind,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, kind: MapKind, value: f64) -> Result<Self> {
        Self::new(height, width, kind, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        kind: MapKind,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, kind, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn check_same_shape(&self, other: &PlanarMap, what: &str) -> Result<()> {
        ensure!(
            self.height == other.height && self.width == other.width,
            Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            ))
        );
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<PlanarMap> {
        PlanarMap::new(
            self.height,
            self.width,
            self.kind,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Views the field as a single-channel image (for export).
    pub fn to_image(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.clone(),
        }
    }
}

/// Binary per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        ensure!(
            data.len() == height * width,
            Error::Shape(format!("mask length {} != {height}*{width}", data.len()))
        );
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_image(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}
