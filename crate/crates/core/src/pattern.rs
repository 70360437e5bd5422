//! Dot-array flash patterns: regular lattices, jittered variants, calibrated
//! imports, and their occupancy / gap statistics.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::{Image, Mask};
use crate::rng::Seed;

/// Default dot-membership threshold, as a fraction of the pattern maximum.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Regular,
    Jittered,
    Uniform,
    Imported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DotCenter {
    pub y: usize,
    pub x: usize,
}

/// Sidecar metadata stored next to a pattern PFM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMeta {
    pub period_m: usize,
    pub dot_sigma: f64,
    pub floor_level: f64,
    pub occupancy: f64,
    #[serde(default = "default_peak")]
    pub peak: f64,
    #[serde(default = "default_kind")]
    pub kind: PatternKind,
}

fn default_peak() -> f64 {
    1.0
}

fn default_kind() -> PatternKind {
    PatternKind::Imported
}

/// The reference pattern `P_r` together with its lattice description.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    image: Image,
    period_m: usize,
    dot_sigma: f64,
    peak: f64,
    floor_level: f64,
    occupancy: f64,
    kind: PatternKind,
    dots: Vec<DotCenter>,
}

impl Pattern {
    /// One dot per `period_m x period_m` cell, centred at offset `period_m / 2`.
    pub fn regular(
        height: usize,
        width: usize,
        period_m: usize,
        dot_sigma: f64,
        peak: f64,
        floor_level: f64,
    ) -> Result<Pattern> {
        ensure!(
            period_m >= 1,
            Error::InvalidArgument("period must be at least 1".into())
        );
        ensure!(
            period_m <= height && period_m <= width,
            Error::InvalidArgument(format!(
                "period {period_m} exceeds image {height}x{width}"
            ))
        );
        ensure!(
            dot_sigma >= 0.0 && dot_sigma.is_finite(),
            Error::InvalidArgument(format!("dot_sigma must be >= 0, got {dot_sigma}"))
        );
        ensure!(
            0.0 <= floor_level && floor_level < peak && peak <= 1.0,
            Error::InvalidArgument(format!(
                "need 0 <= floor ({floor_level}) < peak ({peak}) <= 1"
            ))
        );
        let off = period_m / 2;
        let mut dots = Vec::new();
        for cy in (0..height).step_by(period_m) {
            for cx in (0..width).step_by(period_m) {
                let (y, x) = (cy + off, cx + off);
                if y < height && x < width {
                    dots.push(DotCenter { y, x });
                }
            }
        }
        Self::from_dots(
            height,
            width,
            period_m,
            dot_sigma,
            peak,
            floor_level,
            PatternKind::Regular,
            dots,
        )
    }

    /// Displaces every dot of a regular pattern by an independent uniform
    /// draw from `{-1, 0, 1}^2`. Centres are clamped to the image.
    pub fn jittered(base: &Pattern, seed: Seed) -> Result<Pattern> {
        ensure!(
            base.kind == PatternKind::Regular,
            Error::InvalidArgument("jitter requires a regular base pattern".into())
        );
        let (h, w) = (base.height(), base.width());
        let mut rng = seed.rng();
        let dots = base
            .dots
            .iter()
            .map(|d| {
                let dy: i64 = rng.random_range(-1..=1);
                let dx: i64 = rng.random_range(-1..=1);
                DotCenter {
                    y: (d.y as i64 + dy).clamp(0, h as i64 - 1) as usize,
                    x: (d.x as i64 + dx).clamp(0, w as i64 - 1) as usize,
                }
            })
            .collect();
        Self::from_dots(
            h,
            w,
            base.period_m,
            base.dot_sigma,
            base.peak,
            base.floor_level,
            PatternKind::Jittered,
            dots,
        )
    }

    /// Constant pattern, e.g. the power-matched uniform flash.
    pub fn uniform(height: usize, width: usize, levels: &[f64]) -> Result<Pattern> {
        let channels = levels.len();
        ensure!(
            levels.iter().all(|&l| (0.0..=1.0).contains(&l)),
            Error::InvalidArgument("uniform levels must lie in [0, 1]".into())
        );
        let image = Image::from_fn(height, width, channels, |_, _, c| levels[c])?;
        let occupancy = image.mean();
        let floor = levels.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Pattern {
            image,
            period_m: 1,
            dot_sigma: 0.0,
            peak: levels.iter().copied().fold(0.0, f64::max),
            floor_level: floor,
            occupancy,
            kind: PatternKind::Uniform,
            dots: Vec::new(),
        })
    }

    /// Wraps a measured reference pattern. Dot centres are recovered as local
    /// maxima above the default membership threshold.
    pub fn imported(image: Image, meta: &PatternMeta) -> Result<Pattern> {
        ensure!(
            image.max() <= 1.0 + 1e-9 && image.min() >= -1e-9,
            Error::InvalidArgument("imported pattern values must lie in [0, 1]".into())
        );
        ensure!(
            meta.period_m >= 1,
            Error::InvalidArgument("period must be at least 1".into())
        );
        let gray = image.to_gray();
        let thr = DEFAULT_THRESHOLD_FRACTION * gray.max();
        let (h, w) = (gray.height(), gray.width());
        let mut dots = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let v = gray.get(y, x, 0);
                if v < thr || v <= 0.0 {
                    continue;
                }
                let mut is_max = true;
                'nb: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        let nv = gray.get(ny, nx, 0);
                        // ties resolve to the first pixel in raster order
                        if nv > v || (nv == v && (ny, nx) < (y, x)) {
                            is_max = false;
                            break 'nb;
                        }
                    }
                }
                if is_max {
                    dots.push(DotCenter { y, x });
                }
            }
        }
        Ok(Pattern {
            occupancy: image.mean(),
            peak: image.max(),
            image,
            period_m: meta.period_m,
            dot_sigma: meta.dot_sigma,
            floor_level: meta.floor_level,
            kind: PatternKind::Imported,
            dots,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn from_dots(
        height: usize,
        width: usize,
        period_m: usize,
        dot_sigma: f64,
        peak: f64,
        floor_level: f64,
        kind: PatternKind,
        dots: Vec<DotCenter>,
    ) -> Result<Pattern> {
        let mut acc = vec![0.0f64; height * width];
        let kernel = dot_kernel(dot_sigma);
        for d in &dots {
            for &(ky, kx, v) in &kernel {
                let y = d.y as i64 + ky;
                let x = d.x as i64 + kx;
                if y >= 0 && x >= 0 && (y as usize) < height && (x as usize) < width {
                    acc[y as usize * width + x as usize] += v;
                }
            }
        }
        let data = acc
            .into_iter()
            .map(|a| floor_level + (peak - floor_level) * a.min(1.0))
            .collect();
        let image = Image::new(height, width, 1, data)?;
        Ok(Pattern {
            occupancy: image.mean(),
            image,
            period_m,
            dot_sigma,
            peak,
            floor_level,
            kind,
            dots,
        })
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn period_m(&self) -> usize {
        self.period_m
    }

    pub fn dot_sigma(&self) -> f64 {
        self.dot_sigma
    }

    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn floor_level(&self) -> f64 {
        self.floor_level
    }

    pub fn occupancy(&self) -> f64 {
        self.occupancy
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    pub fn dots(&self) -> &[DotCenter] {
        &self.dots
    }

    pub fn meta(&self) -> PatternMeta {
        PatternMeta {
            period_m: self.period_m,
            dot_sigma: self.dot_sigma,
            floor_level: self.floor_level,
            occupancy: self.occupancy,
            peak: self.peak,
            kind: self.kind,
        }
    }

    /// Per-channel mean of the pattern, i.e. the equal-power uniform level.
    pub fn channel_means(&self) -> Vec<f64> {
        (0..self.image.channels())
            .map(|c| self.image.channel_mean(c))
            .collect()
    }

    /// The constant pattern delivering the same per-channel average power.
    pub fn matched_uniform(&self) -> Result<Pattern> {
        Pattern::uniform(self.height(), self.width(), &self.channel_means())
    }

    /// Pattern image expanded to `channels` for per-sample arithmetic.
    pub fn image_for_channels(&self, channels: usize) -> Result<Image> {
        self.image.broadcast(channels)
    }

    /// Sidecar path used by [`Pattern::save`]: the PFM path with a `.json`
    /// extension.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Writes the pattern image as PFM and its metadata as a JSON sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::io::write_pfm(path, &self.image)?;
        crate::io::write_json(Self::sidecar_path(path), &self.meta())
    }

    /// Reads a pattern written by [`Pattern::save`], or any PFM with a
    /// hand-written sidecar. Dot centres are re-detected from the image.
    pub fn load(path: impl AsRef<Path>) -> Result<Pattern> {
        let path = path.as_ref();
        let meta: PatternMeta = crate::io::read_json(Self::sidecar_path(path))?;
        let image = crate::io::read_pfm(path)?;
        let mut p = Pattern::imported(image, &meta)?;
        p.kind = meta.kind;
        Ok(p)
    }

    /// Largest distance from any pixel to its nearest dot centre. Large values
    /// flag unsampled "gap" regions.
    pub fn max_dot_gap(&self) -> Result<f64> {
        ensure!(
            !self.dots.is_empty(),
            Error::Degenerate("pattern has no dots".into())
        );
        let (h, w) = (self.height(), self.width());
        let cell = self.period_m.max(1);
        let gh = h.div_ceil(cell);
        let gw = w.div_ceil(cell);
        let mut buckets: Vec<Vec<DotCenter>> = vec![Vec::new(); gh * gw];
        for d in &self.dots {
            buckets[(d.y / cell) * gw + d.x / cell].push(*d);
        }
        let mut worst = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                let (cy, cx) = ((y / cell) as i64, (x / cell) as i64);
                let mut best = f64::INFINITY;
                let mut ring = 0i64;
                loop {
                    for by in cy - ring..=cy + ring {
                        for bx in cx - ring..=cx + ring {
                            if (by - cy).abs() != ring && (bx - cx).abs() != ring {
                                continue;
                            }
                            if by < 0 || bx < 0 || by >= gh as i64 || bx >= gw as i64 {
                                continue;
                            }
                            for d in &buckets[by as usize * gw + bx as usize] {
                                let dy = d.y as f64 - y as f64;
                                let dx = d.x as f64 - x as f64;
                                best = best.min((dy * dy + dx * dx).sqrt());
                            }
                        }
                    }
                    // every unvisited bucket is at least `ring * cell` away
                    if best <= (ring * cell as i64) as f64 || ring as usize > gh.max(gw) {
                        break;
                    }
                    ring += 1;
                }
                worst = worst.max(best);
            }
        }
        Ok(worst)
    }
}

/// Kernel taps `(dy, dx, weight)` of one dot: a unit-peak Gaussian sampled at
/// pixel centres and truncated at radius `3 sigma`. `sigma == 0` is a single pixel.
pub fn dot_kernel(sigma: f64) -> Vec<(i64, i64, f64)> {
    if sigma <= 0.0 {
        return vec![(0, 0, 1.0)];
    }
    let r = (3.0 * sigma).floor() as i64;
    let r2 = 9.0 * sigma * sigma;
    let mut taps = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dy * dy + dx * dx) as f64;
            if d2 <= r2 {
                taps.push((dy, dx, (-d2 / (2.0 * sigma * sigma)).exp()));
            }
        }
    }
    taps
}

/// Pixels whose (channel-mean) pattern value reaches `threshold_fraction` of
/// the pattern maximum.
pub fn in_pattern_mask(p: &Pattern, threshold_fraction: f64) -> Result<Mask> {
    ensure!(
        threshold_fraction > 0.0 && threshold_fraction < 1.0,
        Error::InvalidArgument(format!(
            "threshold fraction must be in (0, 1), got {threshold_fraction}"
        ))
    );
    let gray = p.image.to_gray();
    let max = gray.max();
    ensure!(max > 0.0, Error::Degenerate("pattern is all zero".into()));
    let thr = threshold_fraction * max;
    Mask::new(
        gray.height(),
        gray.width(),
        gray.data().iter().map(|&v| v >= thr).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_one_in_sixteen() {
        let p = Pattern::regular(16, 16, 4, 0.0, 1.0, 0.0).unwrap();
        let ones = p.image().data().iter().filter(|&&v| v == 1.0).count();
        let zeros = p.image().data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!((ones, zeros), (16, 240));
        assert_eq!(p.occupancy(), 1.0 / 16.0);
        assert_eq!(p.dots().len(), 16);
        assert!(p.dots().iter().all(|d| d.y % 4 == 2 && d.x % 4 == 2));
    }

    #[test]
    fn period_one_is_uniform_flash() {
        let p = Pattern::regular(8, 8, 1, 0.0, 1.0, 0.0).unwrap();
        assert!(p.image().data().iter().all(|&v| v == 1.0));
        assert_eq!(p.occupancy(), 1.0);
    }

    #[test]
    fn blurred_occupancy_matches_kernel_sum() {
        let (h, w, m, s) = (16usize, 16usize, 4usize, 0.7f64);
        let p = Pattern::regular(h, w, m, s, 1.0, 0.0).unwrap();
        // independent oracle: every dot adds exp(-r^2/2s^2) to in-bounds
        // pixels with r <= 3s; no pixel saturates at this spacing
        let mut total = 0.0;
        for cy in 0..4 {
            for cx in 0..4 {
                let (py, px) = ((cy * 4 + 2) as f64, (cx * 4 + 2) as f64);
                for y in 0..h {
                    for x in 0..w {
                        let d2 = (y as f64 - py).powi(2) + (x as f64 - px).powi(2);
                        if d2 <= 9.0 * s * s {
                            total += (-d2 / (2.0 * s * s)).exp();
                        }
                    }
                }
            }
        }
        assert!((p.occupancy() - total / (h * w) as f64).abs() < 1e-12);
        assert!((p.occupancy() - p.image().mean()).abs() < 1e-9);
    }

    #[test]
    fn floor_and_peak_bounds() {
        let p = Pattern::regular(32, 32, 4, 1.2, 0.9, 0.02).unwrap();
        assert!(p.image().max() <= 0.9 + 1e-12);
        assert!(p.image().min() >= 0.02 - 1e-9);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Pattern::regular(8, 8, 9, 0.0, 1.0, 0.0).is_err());
        assert!(Pattern::regular(8, 8, 0, 0.0, 1.0, 0.0).is_err());
        assert!(Pattern::regular(8, 8, 4, 0.0, 0.5, 0.5).is_err());
        assert!(Pattern::regular(8, 8, 4, -1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn jitter_is_deterministic_and_local() {
        let base = Pattern::regular(64, 64, 4, 0.0, 1.0, 0.0).unwrap();
        let a = Pattern::jittered(&base, Seed(11)).unwrap();
        let b = Pattern::jittered(&base, Seed(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dots().len(), base.dots().len());
        for (j, d) in a.dots().iter().zip(base.dots()) {
            assert!((j.y as i64 - d.y as i64).abs() <= 1);
            assert!((j.x as i64 - d.x as i64).abs() <= 1);
        }
        assert_ne!(a, Pattern::jittered(&base, Seed(12)).unwrap());
        assert!(Pattern::jittered(&a, Seed(1)).is_err());
    }

    #[test]
    fn single_dot_jitter_support() {
        let base = Pattern::regular(4, 4, 4, 0.0, 1.0, 0.0).unwrap();
        for s in 0..20 {
            let j = Pattern::jittered(&base, Seed(s)).unwrap();
            let d = j.dots()[0];
            assert!((d.y as i64 - 2).abs() <= 1 && (d.x as i64 - 2).abs() <= 1);
            let lit: Vec<usize> = (0..16).filter(|&i| j.image().data()[i] == 1.0).collect();
            assert_eq!(lit, vec![d.y * 4 + d.x]);
        }
    }

    #[test]
    fn jitter_preserves_occupancy_for_point_dots() {
        let base = Pattern::regular(64, 64, 4, 0.0, 1.0, 0.0).unwrap();
        let mean_dev: f64 = (0..10)
            .map(|s| (Pattern::jittered(&base, Seed(s)).unwrap().occupancy() - base.occupancy()).abs())
            .sum::<f64>()
            / 10.0;
        assert!(mean_dev < 1e-6);
    }

    #[test]
    fn mask_counts() {
        let p = Pattern::regular(16, 16, 4, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(in_pattern_mask(&p, 0.5).unwrap().count(), 16);
        let u = Pattern::uniform(5, 5, &[0.3]).unwrap();
        assert_eq!(in_pattern_mask(&u, 0.5).unwrap().count(), 25);
        let z = Pattern::uniform(5, 5, &[0.0]).unwrap();
        assert!(in_pattern_mask(&z, 0.5).is_err());
        assert!(in_pattern_mask(&p, 1.0).is_err());
    }

    #[test]
    fn blurred_mask_matches_threshold_sweep() {
        let p = Pattern::regular(32, 32, 4, 0.7, 1.0, 0.0).unwrap();
        let max = p.image().data().iter().copied().fold(0.0, f64::max);
        for frac in [0.1, 0.3, 0.5, 0.9] {
            let oracle = p.image().data().iter().filter(|&&v| v >= frac * max).count();
            assert_eq!(in_pattern_mask(&p, frac).unwrap().count(), oracle);
        }
        // at 0.5 only the centre tap survives (exp(-1/0.98) < 0.5)
        assert_eq!(in_pattern_mask(&p, 0.5).unwrap().count(), 64);
    }

    #[test]
    fn regular_gap_is_half_cell_diagonal() {
        let p = Pattern::regular(32, 32, 4, 0.0, 1.0, 0.0).unwrap();
        // interior corners sit 2*sqrt(2) from the four surrounding dots
        assert!((p.max_dot_gap().unwrap() - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gap_matches_brute_force() {
        let base = Pattern::regular(24, 20, 4, 0.0, 1.0, 0.0).unwrap();
        let j = Pattern::jittered(&base, Seed(3)).unwrap();
        let mut worst = 0.0f64;
        for y in 0..24 {
            for x in 0..20 {
                let best = j
                    .dots()
                    .iter()
                    .map(|d| ((d.y as f64 - y as f64).powi(2) + (d.x as f64 - x as f64).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                worst = worst.max(best);
            }
        }
        assert_eq!(j.max_dot_gap().unwrap(), worst);
    }

    #[test]
    fn imported_recovers_dots() {
        let p = Pattern::regular(16, 16, 4, 0.7, 1.0, 0.02).unwrap();
        let q = Pattern::imported(p.image().clone(), &p.meta()).unwrap();
        assert_eq!(q.dots(), p.dots());
        assert!((q.occupancy() - p.occupancy()).abs() < 1e-12);
    }
}
