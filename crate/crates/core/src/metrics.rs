//! Reconstruction-quality metrics on linear intensities.

use crate::error::{ensure, Error, Result};
use crate::image::{Image, Mask, PlanarMap};

pub const DEFAULT_PEAK: f64 = 1.0;
pub const SSIM_WINDOW: usize = 7;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB. Returns `f64::INFINITY` when the
/// images are identical.
pub fn psnr(estimate: &Image, reference: &Image, peak: f64) -> Result<f64> {
    estimate.check_same_shape(reference, "psnr")?;
    ensure!(
        peak > 0.0 && peak.is_finite(),
        Error::InvalidArgument(format!("psnr peak must be positive, got {peak}"))
    );
    let mse = mse(estimate, reference);
    ensure!(mse.is_finite(), Error::NonFinite("psnr input"));
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn mse(a: &Image, b: &Image) -> f64 {
    let n = a.data().len() as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Mean structural similarity with a 7x7 uniform window over all fully
/// contained window positions. RGB inputs are reduced to their channel mean.
/// Local statistics use population (1/N) moments.
pub fn ssim(estimate: &Image, reference: &Image) -> Result<f64> {
    estimate.check_same_shape(reference, "ssim")?;
    let (h, w, _) = estimate.shape();
    ensure!(
        h >= SSIM_WINDOW && w >= SSIM_WINDOW,
        Error::Shape(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"))
    );
    let a = estimate.to_gray();
    let b = reference.to_gray();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);

    // Summed-area tables for x, y, x², y², xy.
    let sat = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut t = vec![0.0; (h + 1) * (w + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(y * w + x);
                t[(y + 1) * (w + 1) + x + 1] = t[y * (w + 1) + x + 1] + row;
            }
        }
        t
    };
    let ad = a.data();
    let bd = b.data();
    let sx = sat(&|i| ad[i]);
    let sy = sat(&|i| bd[i]);
    let sxx = sat(&|i| ad[i] * ad[i]);
    let syy = sat(&|i| bd[i] * bd[i]);
    let sxy = sat(&|i| ad[i] * bd[i]);
    let boxsum = |t: &[f64], y: usize, x: usize| {
        let (y1, x1) = (y + SSIM_WINDOW, x + SSIM_WINDOW);
        t[y1 * (w + 1) + x1] - t[y * (w + 1) + x1] - t[y1 * (w + 1) + x] + t[y * (w + 1) + x]
    };

    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let mx = boxsum(&sx, y, x) / n;
            let my = boxsum(&sy, y, x) / n;
            let vx = (boxsum(&sxx, y, x) / n - mx * mx).max(0.0);
            let vy = (boxsum(&syy, y, x) / n - my * my).max(0.0);
            let cxy = boxsum(&sxy, y, x) / n - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    let v = total / count as f64;
    ensure!(v.is_finite(), Error::NonFinite("ssim input"));
    Ok(v)
}

/// Mean absolute error between two planar maps, optionally restricted to a mask.
pub fn mae(estimate: &PlanarMap, reference: &PlanarMap, mask: Option<&Mask>) -> Result<f64> {
    estimate.check_same_shape(reference, "mae")?;
    let (mut sum, mut n) = (0.0, 0usize);
    match mask {
        Some(m) => {
            ensure!(
                m.height() == estimate.height() && m.width() == estimate.width(),
                Error::Shape("mae mask shape".into())
            );
            for ((a, b), &keep) in estimate.data().iter().zip(reference.data()).zip(m.data()) {
                if keep {
                    sum += (a - b).abs();
                    n += 1;
                }
            }
        }
        None => {
            for (a, b) in estimate.data().iter().zip(reference.data()) {
                sum += (a - b).abs();
            }
            n = estimate.data().len();
        }
    }
    ensure!(n > 0, Error::Degenerate("mae mask selects no pixels".into()));
    Ok(sum / n as f64)
}
