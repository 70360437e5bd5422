//! Deterministic procedural scene sets: textured albedo plus layered
//! fronto-parallel depth, with per-scene noise and rig parameters drawn
//! from the training-data ranges.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::forward::{CameraRig, NoiseParams};
use crate::image::{Image, MapKind, PlanarMap};
use crate::io::{read_image, write_map_pfm, write_pfm};
use crate::recon::upsample_bilinear;
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextureSource {
    #[default]
    Procedural,
    Directory { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub distance_range: [f64; 2],
    pub sigma_r_range: [f64; 2],
    pub sigma_s_range: [f64; 2],
    pub sigma_row: f64,
    pub baseline_range: [f64; 2],
    pub focal_px: f64,
    pub ref_distance: f64,
    pub texture_source: TextureSource,
    pub seed: Seed,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 128,
            height: 256,
            width: 256,
            distance_range: [8.0, 16.0],
            sigma_r_range: [0.002, 0.005],
            sigma_s_range: [0.015, 0.04],
            sigma_row: 0.0005,
            baseline_range: [0.5, 5.0],
            focal_px: 8.0,
            ref_distance: 8.0,
            texture_source: TextureSource::Procedural,
            seed: Seed(0),
        }
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    ensure!(
        r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= min,
        Error::InvalidArgument(format!("{name} range [{}, {}] is empty or out of bounds", r[0], r[1]))
    );
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.height >= 8 && self.width >= 8,
            Error::InvalidArgument("scenes must be at least 8x8".into())
        );
        check_range("distance", self.distance_range, f64::MIN_POSITIVE)?;
        check_range("sigma_r", self.sigma_r_range, 0.0)?;
        check_range("sigma_s", self.sigma_s_range, 0.0)?;
        check_range("baseline", self.baseline_range, 0.0)?;
        ensure!(self.sigma_row >= 0.0, Error::InvalidArgument("sigma_row must be >= 0".into()));
        ensure!(
            self.focal_px > 0.0 && self.ref_distance > 0.0,
            Error::InvalidArgument("focal_px and ref_distance must be > 0".into())
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub index: usize,
    pub seed: Seed,
    pub albedo: Image,
    pub depth: PlanarMap,
    /// Drawn scene distance; also the uniform attenuation distance.
    pub distance: f64,
    pub noise: NoiseParams,
    pub rig: CameraRig,
    /// Number of distinct depth planes.
    pub layers: usize,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Disc { cy: f64, cx: f64, r: f64 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Shape {
        let (hf, wf) = (h as f64, w as f64);
        if rng.random::<bool>() {
            let cy = rng.random_range(0.0..hf);
            let cx = rng.random_range(0.0..wf);
            let hh = rng.random_range(0.08..0.3) * hf;
            let hw = rng.random_range(0.08..0.3) * wf;
            Shape::Rect { y0: cy - hh, x0: cx - hw, y1: cy + hh, x1: cx + hw }
        } else {
            Shape::Disc {
                cy: rng.random_range(0.0..hf),
                cx: rng.random_range(0.0..wf),
                r: rng.random_range(0.06..0.25) * hf.min(wf),
            }
        }
    }

    fn contains(&self, y: usize, x: usize) -> bool {
        let (y, x) = (y as f64 + 0.5, x as f64 + 0.5);
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Disc { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
        }
    }
}

/// Sum of random low-frequency sinusoids per channel.
fn band_limited(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    let terms: Vec<Vec<(f64, f64, f64, f64)>> = (0..3)
        .map(|_| {
            (0..8)
                .map(|_| {
                    let f = rng.random_range(0.01..0.12);
                    let th = rng.random_range(0.0..std::f64::consts::TAU);
                    let ph = rng.random_range(0.0..std::f64::consts::TAU);
                    let a = rng.random_range(0.02..0.08);
                    (f * th.cos(), f * th.sin(), ph, a)
                })
                .collect()
        })
        .collect();
    let base: Vec<f64> = (0..3).map(|_| rng.random_range(0.3..0.7)).collect();
    Image::from_fn(h, w, 3, |y, x, c| {
        let s: f64 = terms[c]
            .iter()
            .map(|&(fy, fx, ph, a)| a * (fy * y as f64 + fx * x as f64 + ph).sin())
            .sum();
        base[c] + s
    })
    .expect("valid dims")
}

fn procedural_albedo(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    let mut img = band_limited(rng, h, w).into_data();
    let shapes = rng.random_range(3..10);
    for _ in 0..shapes {
        let s = Shape::random(rng, h, w);
        let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        // shapes keep a little of the underlying texture
        let keep = rng.random_range(0.0..0.4);
        for y in 0..h {
            for x in 0..w {
                if s.contains(y, x) {
                    for c in 0..3 {
                        let i = (y * w + x) * 3 + c;
                        img[i] = keep * img[i] + (1.0 - keep) * color[c];
                    }
                }
            }
        }
    }
    Image::new(h, w, 3, img.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()).expect("valid dims")
}

fn texture_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                Some("png" | "pfm")
            )
        })
        .collect();
    files.sort();
    ensure!(
        !files.is_empty(),
        Error::InvalidArgument(format!("no .png or .pfm textures in {}", dir.display()))
    );
    Ok(files)
}

fn texture_albedo(files: &[PathBuf], rng: &mut ChaCha8Rng, h: usize, w: usize) -> Result<Image> {
    let path = &files[rng.random_range(0..files.len())];
    let img = read_image(path)?;
    let img = upsample_bilinear(&img, h, w)?.broadcast(3)?;
    Ok(img.clamp01())
}

/// 2-6 fronto-parallel layers: a background plane plus shapes drawn on top,
/// each at a depth within +-20% of `distance`.
fn layered_depth(rng: &mut ChaCha8Rng, h: usize, w: usize, distance: f64) -> (PlanarMap, usize) {
    let layers = rng.random_range(2..=6usize);
    let mut levels: Vec<f64> = Vec::with_capacity(layers);
    while levels.len() < layers {
        let z = distance * rng.random_range(0.8..=1.2);
        if levels.iter().all(|&l| (l - z).abs() > 1e-6 * distance) {
            levels.push(z);
        }
    }
    let mut data = vec![levels[0]; h * w];
    for &z in &levels[1..] {
        // each foreground layer must leave a visible footprint
        loop {
            let s = Shape::random(rng, h, w);
            let mut hit = 0usize;
            for y in 0..h {
                for x in 0..w {
                    if s.contains(y, x) {
                        data[y * w + x] = z;
                        hit += 1;
                    }
                }
            }
            if hit > 0 {
                break;
            }
        }
    }
    let present = levels.iter().filter(|&&z| data.contains(&z)).count();
    (PlanarMap::new(h, w, MapKind::Depth, data).expect("valid depth"), present)
}

fn sample_with(cfg: &SynthConfig, index: usize, files: Option<&[PathBuf]>) -> Result<SceneSample> {
    let seed = cfg.seed.derive(index as u64);
    let mut rng = seed.rng();
    let distance = uniform(&mut rng, cfg.distance_range);
    let noise = NoiseParams::new(
        uniform(&mut rng, cfg.sigma_r_range),
        uniform(&mut rng, cfg.sigma_s_range),
        cfg.sigma_row,
    );
    let baseline = uniform(&mut rng, cfg.baseline_range);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let rig = CameraRig::new(baseline, cfg.focal_px, cfg.ref_distance, sign)?;
    let (h, w) = (cfg.height, cfg.width);
    let albedo = match files {
        None => procedural_albedo(&mut rng, h, w),
        Some(f) => texture_albedo(f, &mut rng, h, w)?,
    };
    let (depth, layers) = layered_depth(&mut rng, h, w, distance);
    Ok(SceneSample { index, seed, albedo, depth, distance, noise, rig, layers })
}

/// The scene at `index`; depends only on `(cfg, index)`.
pub fn sample(cfg: &SynthConfig, index: usize) -> Result<SceneSample> {
    cfg.validate()?;
    match &cfg.texture_source {
        TextureSource::Procedural => sample_with(cfg, index, None),
        TextureSource::Directory { path } => sample_with(cfg, index, Some(&texture_files(path)?)),
    }
}

pub fn generate_set(cfg: &SynthConfig) -> Result<Vec<SceneSample>> {
    cfg.validate()?;
    let files = match &cfg.texture_source {
        TextureSource::Procedural => None,
        TextureSource::Directory { path } => Some(texture_files(path)?),
    };
    (0..cfg.count)
        .into_par_iter()
        .map(|i| sample_with(cfg, i, files.as_deref()))
        .collect()
}

/// One line of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub index: usize,
    pub seed: Seed,
    pub albedo: PathBuf,
    pub depth: PathBuf,
    pub distance: f64,
    pub noise: NoiseParams,
    pub rig: CameraRig,
    pub layers: usize,
}

/// Writes every scene as PFM plus a `manifest.jsonl` in `dir`; returns the
/// manifest path.
pub fn write_set(dir: &Path, samples: &[SceneSample]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut lines = String::new();
    for s in samples {
        let albedo = PathBuf::from(format!("scene_{:04}_albedo.pfm", s.index));
        let depth = PathBuf::from(format!("scene_{:04}_depth.pfm", s.index));
        write_pfm(dir.join(&albedo), &s.albedo)?;
        write_map_pfm(dir.join(&depth), &s.depth)?;
        let rec = SceneRecord {
            index: s.index,
            seed: s.seed,
            albedo,
            depth,
            distance: s.distance,
            noise: s.noise,
            rig: s.rig,
            layers: s.layers,
        };
        lines.push_str(&serde_json::to_string(&rec).map_err(|e| Error::Format(e.to_string()))?);
        lines.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    fs::write(&path, lines).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<SceneRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}
