use super::objective::{Censoring, Problem};
use super::solver::{censoring, solve_problem};
use super::ReconConfig;
use crate::error::{ensure, Error, Result};
use crate::image::Image;
use crate::snr::pixel_bin_uf;

/// Bilinear resize with pixel-centre alignment and border clamping.
pub fn upsample_bilinear(img: &Image, height: usize, width: usize) -> Result<Image> {
    ensure!(height > 0 && width > 0, Error::Shape("zero-sized upsample target".into()));
    let (h, w, c) = img.shape();
    let sy = h as f64 / height as f64;
    let sx = w as f64 / width as f64;
    let tap = |v: f64, n: usize| -> (usize, usize, f64) {
        let v = v.clamp(0.0, (n - 1) as f64);
        let i0 = v.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, v - i0 as f64)
    };
    Image::from_fn(height, width, c, |y, x, ch| {
        let (y0, y1, ty) = tap((y as f64 + 0.5) * sy - 0.5, h);
        let (x0, x1, tx) = tap((x as f64 + 0.5) * sx - 0.5, w);
        let top = img.get(y0, x0, ch) * (1.0 - tx) + img.get(y0, x1, ch) * tx;
        let bot = img.get(y1, x0, ch) * (1.0 - tx) + img.get(y1, x1, ch) * tx;
        top * (1.0 - ty) + bot * ty
    })
}

/// Uniform-flash baseline: box-average the capture into `m x m` cells, solve
/// the same TV-regularised inversion at that resolution with the flat flash
/// `levels` (one per channel, or one shared), then upsample to full size.
///
/// The TV weight is divided by `m` so that the prior has the same strength
/// per unit of image area as at full resolution.
pub fn reconstruct_uf(capture: &Image, levels: &[f64], m: usize, cfg: &ReconConfig) -> Result<Image> {
    cfg.validate()?;
    let (h, w, c) = capture.shape();
    ensure!(
        levels.len() == 1 || levels.len() == c,
        Error::Shape(format!("{} flash levels for {c} channels", levels.len()))
    );
    ensure!(
        levels.iter().all(|&l| l > 0.0 && l.is_finite()),
        Error::InvalidArgument("flash levels must be > 0".into())
    );
    let binned = pixel_bin_uf(capture, m)?.image;
    let (bh, bw, _) = binned.shape();
    let d2 = cfg.distance * cfg.distance;
    let level = |ch: usize| levels[if levels.len() == 1 { 0 } else { ch }];
    let modulation = Image::from_fn(bh, bw, c, |_, _, ch| level(ch) / d2)?;
    let cens = censoring(cfg).map(Censoring::from_noise);
    let x0 = Image::from_fn(bh, bw, c, |y, x, ch| {
        let v = binned.get(y, x, ch);
        (cens.map_or(v, |c| c.invert(v)) * d2 / level(ch)).clamp(0.0, 1.0)
    })?;
    let prob = Problem::new(&modulation, &binned, cfg.tv_weight / m as f64, cfg.tv_epsilon)?.with_censoring(censoring(cfg));
    let low = solve_problem(&prob, &x0, cfg)?.image;
    upsample_bilinear(&low, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_of_constant_is_constant() {
        let img = Image::filled(4, 5, 3, 0.3).unwrap();
        let up = upsample_bilinear(&img, 16, 20).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn upsample_identity_and_ramp() {
        let img = Image::from_fn(3, 4, 1, |y, x, _| (y * 4 + x) as f64 / 12.0).unwrap();
        assert_eq!(upsample_bilinear(&img, 3, 4).unwrap(), img);
        // a horizontal ramp stays a ramp in the interior
        let ramp = Image::from_fn(1, 4, 1, |_, x, _| x as f64).unwrap();
        let up = upsample_bilinear(&ramp, 1, 8).unwrap();
        for x in 1..7 {
            let want = (x as f64 + 0.5) * 0.5 - 0.5;
            assert!((up.get(0, x, 0) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_scene_uf_recovery() {
        let a = 0.37;
        let (level, dist) = (1.0 / 16.0, 4.0);
        let cap = Image::filled(32, 32, 3, a * level / (dist * dist)).unwrap();
        let cfg = ReconConfig { distance: dist, ..Default::default() };
        let out = reconstruct_uf(&cap, &[level], 4, &cfg).unwrap();
        assert_eq!(out.shape(), (32, 32, 3));
        assert!(out.data().iter().all(|&v| (v - a).abs() < 1e-6));
    }

    #[test]
    fn level_count_must_match() {
        let cap = Image::filled(8, 8, 3, 0.1).unwrap();
        assert!(reconstruct_uf(&cap, &[0.1, 0.1], 4, &ReconConfig::default()).is_err());
        assert!(reconstruct_uf(&cap, &[0.0], 4, &ReconConfig::default()).is_err());
    }
}
