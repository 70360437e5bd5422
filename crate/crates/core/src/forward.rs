//! Image formation: depth to disparity, pattern warping, inverse-square
//! attenuation, albedo modulation, and heteroscedastic sensor noise.
//!
//! A capture is `clamp01(W_d[P] * A / d^2 + n)` where `W_d` shifts the
//! reference pattern horizontally by the per-pixel disparity and `n` has
//! variance `sigma_r^2 + sigma_s^2 * I0` plus a per-row offset.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::{Image, MapKind, PlanarMap};
use crate::pattern::Pattern;
use crate::rng::Seed;

/// Camera/projector geometry defining the depth-to-disparity map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub baseline: f64,
    pub focal_px: f64,
    pub ref_distance: f64,
    pub disparity_sign: f64,
}

impl CameraRig {
    pub fn new(baseline: f64, focal_px: f64, ref_distance: f64, disparity_sign: f64) -> Result<Self> {
        let rig = CameraRig {
            baseline,
            focal_px,
            ref_distance,
            disparity_sign,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.baseline >= 0.0 && self.baseline.is_finite(),
            Error::InvalidArgument(format!("baseline must be >= 0, got {}", self.baseline))
        );
        ensure!(
            self.focal_px > 0.0 && self.focal_px.is_finite(),
            Error::InvalidArgument(format!("focal_px must be > 0, got {}", self.focal_px))
        );
        ensure!(
            self.ref_distance > 0.0 && self.ref_distance.is_finite(),
            Error::InvalidArgument(format!("ref_distance must be > 0, got {}", self.ref_distance))
        );
        ensure!(
            self.disparity_sign == 1.0 || self.disparity_sign == -1.0,
            Error::InvalidArgument(format!("disparity_sign must be +1 or -1, got {}", self.disparity_sign))
        );
        Ok(())
    }

    /// Disparity in pixels of a surface at `depth`.
    pub fn disparity_at(&self, depth: f64) -> f64 {
        self.disparity_sign * self.baseline * self.focal_px * (1.0 / depth - 1.0 / self.ref_distance)
    }

    pub fn with_sign(mut self, sign: f64) -> Self {
        self.disparity_sign = sign;
        self
    }

    pub fn with_baseline(mut self, baseline: f64) -> Self {
        self.baseline = baseline;
        self
    }
}

/// Sensor noise parameters in normalized intensity units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sigma_r: f64,
    pub sigma_s: f64,
    pub sigma_row: f64,
    /// Optional uniform quantizer applied after clamping. Off by default.
    #[serde(default)]
    pub quantization_bits: Option<u32>,
}

impl NoiseParams {
    pub fn new(sigma_r: f64, sigma_s: f64, sigma_row: f64) -> Self {
        NoiseParams {
            sigma_r,
            sigma_s,
            sigma_row,
            quantization_bits: None,
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_r", self.sigma_r),
            ("sigma_s", self.sigma_s),
            ("sigma_row", self.sigma_row),
        ] {
            ensure!(
                v >= 0.0 && v.is_finite(),
                Error::InvalidArgument(format!("{name} must be >= 0, got {v}"))
            );
        }
        if let Some(b) = self.quantization_bits {
            ensure!(
                (1..=24).contains(&b),
                Error::InvalidArgument(format!("quantization bits must be in 1..=24, got {b}"))
            );
        }
        Ok(())
    }

    /// Per-pixel variance at pre-noise intensity `clean` (row term excluded).
    pub fn variance(&self, clean: f64) -> f64 {
        self.sigma_r * self.sigma_r + self.sigma_s * self.sigma_s * clean.max(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_r == 0.0 && self.sigma_s == 0.0 && self.sigma_row == 0.0
    }
}

/// How inverse-square fall-off is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Attenuation {
    /// `1 / d(x)^2` from the depth map.
    PerPixel,
    /// One scalar `1 / distance^2` for the whole scene.
    Uniform { distance: f64 },
}

impl Attenuation {
    fn validate(&self) -> Result<()> {
        if let Attenuation::Uniform { distance } = *self {
            ensure!(
                distance > 0.0 && distance.is_finite(),
                Error::InvalidArgument(format!("attenuation distance must be > 0, got {distance}"))
            );
        }
        Ok(())
    }
}

pub fn disparity_from_depth(depth: &PlanarMap, rig: &CameraRig) -> Result<PlanarMap> {
    rig.validate()?;
    ensure!(
        depth.data().iter().all(|&d| d > 0.0),
        Error::InvalidArgument("depth must be strictly positive".into())
    );
    PlanarMap::new(
        depth.height(),
        depth.width(),
        MapKind::Disparity,
        depth.data().iter().map(|&d| rig.disparity_at(d)).collect(),
    )
}

/// Horizontal backward warp with linear interpolation between columns:
/// `out(y, x) = img(y, x - disparity(y, x))`, source clamped to the border.
pub fn warp_image(img: &Image, disparity: &PlanarMap) -> Result<Image> {
    img.check_plane(disparity.height(), disparity.width(), "warp")?;
    ensure!(
        disparity.data().iter().all(|v| v.is_finite()),
        Error::NonFinite("disparity")
    );
    let (h, w, c) = img.shape();
    let mut out = vec![0.0; h * w * c];
    out.par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let (x0, x1, t) = warp_taps(x as f64 - disparity.get(y, x), w);
            for ch in 0..c {
                let a = img.get(y, x0, ch);
                let b = img.get(y, x1, ch);
                row[x * c + ch] = if t == 0.0 { a } else { a + t * (b - a) };
            }
        }
    });
    Image::new(h, w, c, out)
}

/// Source column pair and blend weight for a clamped linear sample at `sx`.
#[inline]
pub(crate) fn warp_taps(sx: f64, w: usize) -> (usize, usize, f64) {
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let x0 = sx.floor() as usize;
    let t = sx - x0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    (x0, x1, t)
}

pub fn warp_by_disparity(p: &Pattern, disparity: &PlanarMap) -> Result<Image> {
    warp_image(p.image(), disparity)
}

/// Noiseless radiance `W_d[P] * A * atten` (before noise and clamping).
pub fn render_clean(
    scene: &Image,
    depth: &PlanarMap,
    p: &Pattern,
    rig: &CameraRig,
    attenuation: Attenuation,
) -> Result<Image> {
    attenuation.validate()?;
    scene.check_plane(depth.height(), depth.width(), "render scene/depth")?;
    scene.check_plane(p.height(), p.width(), "render scene/pattern")?;
    let disparity = disparity_from_depth(depth, rig)?;
    let warped = warp_by_disparity(p, &disparity)?.broadcast(scene.channels())?;
    let (h, w, c) = scene.shape();
    let data = (0..h * w * c)
        .map(|i| {
            let pix = i / c;
            let inv_d2 = match attenuation {
                Attenuation::PerPixel => {
                    let d = depth.data()[pix];
                    1.0 / (d * d)
                }
                Attenuation::Uniform { distance } => 1.0 / (distance * distance),
            };
            warped.data()[i] * scene.data()[i] * inv_d2
        })
        .collect();
    Image::new(h, w, c, data)
}

/// Patterned-flash capture.
#[allow(clippy::too_many_arguments)]
pub fn render_pf(
    scene: &Image,
    depth: &PlanarMap,
    p: &Pattern,
    rig: &CameraRig,
    attenuation: Attenuation,
    noise: &NoiseParams,
    seed: Seed,
) -> Result<Image> {
    let clean = render_clean(scene, depth, p, rig, attenuation)?;
    add_sensor_noise(&clean, noise, seed)
}

/// Uniform-flash capture with the same per-channel average power as `p`.
#[allow(clippy::too_many_arguments)]
pub fn render_uf(
    scene: &Image,
    depth: &PlanarMap,
    p: &Pattern,
    rig: &CameraRig,
    attenuation: Attenuation,
    noise: &NoiseParams,
    seed: Seed,
) -> Result<Image> {
    let matched = p.matched_uniform()?;
    render_pf(scene, depth, &matched, rig, attenuation, noise, seed)
}

/// Adds read + shot noise and a per-row offset, then clamps to `[0, 1]`.
///
/// Each row draws from its own stream seeded by `(seed, row)`: first the
/// row offset, then one standard normal per sample in raster order. Serial
/// and parallel execution therefore agree bit for bit.
pub fn add_sensor_noise(clean: &Image, noise: &NoiseParams, seed: Seed) -> Result<Image> {
    noise.validate()?;
    ensure!(
        clean.data().iter().all(|&v| v >= 0.0),
        Error::InvalidArgument("clean radiance must be non-negative".into())
    );
    if noise.is_zero() && noise.quantization_bits.is_none() {
        return Ok(clean.clone());
    }
    let (h, w, c) = clean.shape();
    let mut out = clean.data().to_vec();
    out.par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        let mut rng = seed.derive(y as u64).rng();
        let z: f64 = StandardNormal.sample(&mut rng);
        let offset = noise.sigma_row * z;
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            let noisy = *v + noise.variance(*v).sqrt() * z + offset;
            *v = quantize(noisy.clamp(0.0, 1.0), noise.quantization_bits);
        }
    });
    Image::new(h, w, c, out)
}

fn quantize(v: f64, bits: Option<u32>) -> f64 {
    match bits {
        None => v,
        Some(b) => {
            let levels = ((1u64 << b) - 1) as f64;
            (v * levels).round() / levels
        }
    }
}
