//! Input-SNR analysis of patterned versus uniform flash.
//!
//! Closed forms for a single pixel and for an `M x M` patch, the occupancy
//! bound on the gain, resolution-matched pixel binning, and a Monte-Carlo
//! estimate of the gain achieved by a concrete pattern and noise model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::forward::{self, Attenuation, CameraRig, NoiseParams};
use crate::image::{Image, MapKind, Mask, PlanarMap};
use crate::pattern::{in_pattern_mask, Pattern, DEFAULT_THRESHOLD_FRACTION};
use crate::rng::Seed;

/// Linear ratio to decibels (amplitude convention, `20 log10`).
pub fn to_db(ratio: f64) -> f64 {
    20.0 * ratio.log10()
}

/// Per-pixel SNR under uniform flash: `s / sqrt(s + sigma_r^2)`.
pub fn snr_uniform(s: f64, sigma_r: f64) -> Result<f64> {
    check_signal(s, sigma_r)?;
    Ok(s / (s + sigma_r * sigma_r).sqrt())
}

/// SNR of the single lit pixel that collects an `m x m` patch's signal.
pub fn snr_patterned(s: f64, sigma_r: f64, m: usize) -> Result<f64> {
    check_signal(s, sigma_r)?;
    ensure!(m >= 1, Error::InvalidArgument("m must be >= 1".into()));
    let m2 = (m * m) as f64;
    Ok(m2 * s / (m2 * s + sigma_r * sigma_r).sqrt())
}

/// SNR of an `m x m` uniform-flash patch after averaging.
pub fn snr_uniform_binned(s: f64, sigma_r: f64, m: usize) -> Result<f64> {
    check_signal(s, sigma_r)?;
    ensure!(m >= 1, Error::InvalidArgument("m must be >= 1".into()));
    let m2 = (m * m) as f64;
    Ok(m2 * s / (m2 * s + m2 * sigma_r * sigma_r).sqrt())
}

fn check_signal(s: f64, sigma_r: f64) -> Result<()> {
    ensure!(
        s >= 0.0 && sigma_r >= 0.0 && s.is_finite() && sigma_r.is_finite(),
        Error::InvalidArgument(format!("need s >= 0 and sigma_r >= 0, got {s}, {sigma_r}"))
    );
    ensure!(
        s > 0.0 || sigma_r > 0.0,
        Error::Degenerate("s and sigma_r are both zero".into())
    );
    Ok(())
}

/// Upper bound on the input-SNR gain of a pattern with the given average
/// occupancy: `sqrt(1 / occupancy)`.
pub fn theoretical_gain(occupancy: f64) -> Result<f64> {
    ensure!(
        occupancy > 0.0 && occupancy <= 1.0,
        Error::InvalidArgument(format!("occupancy must be in (0, 1], got {occupancy}"))
    );
    Ok((1.0 / occupancy).sqrt())
}

/// A resolution-reduced image with a per-cell validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Binned {
    pub image: Image,
    pub valid: Mask,
    /// Number of source pixels that contributed to each cell.
    pub counts: Vec<usize>,
}

/// Keeps only the in-dot pixels of each `M x M` cell and averages them.
/// Trailing rows/columns that do not fill a whole cell are cropped. Cells
/// without any in-dot pixel are zero and flagged invalid.
pub fn pixel_bin_pf(capture: &Image, p: &Pattern, threshold_fraction: f64) -> Result<Binned> {
    capture.check_plane(p.height(), p.width(), "pixel_bin_pf")?;
    let mask = in_pattern_mask(p, threshold_fraction)?;
    bin_cells(capture, p.period_m(), Some(&mask))
}

/// Plain `m x m` box average (cropped to whole cells).
pub fn pixel_bin_uf(capture: &Image, m: usize) -> Result<Binned> {
    bin_cells(capture, m, None)
}

fn bin_cells(capture: &Image, m: usize, mask: Option<&Mask>) -> Result<Binned> {
    ensure!(m >= 1, Error::InvalidArgument("bin size must be >= 1".into()));
    let (h, w, c) = capture.shape();
    let (bh, bw) = (h / m, w / m);
    ensure!(
        bh >= 1 && bw >= 1,
        Error::Shape(format!("image {h}x{w} smaller than bin {m}"))
    );
    let mut data = vec![0.0; bh * bw * c];
    let mut valid = vec![false; bh * bw];
    let mut counts = vec![0usize; bh * bw];
    for by in 0..bh {
        for bx in 0..bw {
            let cell = by * bw + bx;
            let mut acc = vec![0.0; c];
            let mut n = 0usize;
            for y in by * m..(by + 1) * m {
                for x in bx * m..(bx + 1) * m {
                    if mask.is_none_or(|mk| mk.get(y, x)) {
                        for (ch, a) in acc.iter_mut().enumerate() {
                            *a += capture.get(y, x, ch);
                        }
                        n += 1;
                    }
                }
            }
            counts[cell] = n;
            if n > 0 {
                valid[cell] = true;
                for ch in 0..c {
                    data[cell * c + ch] = acc[ch] / n as f64;
                }
            }
        }
    }
    Ok(Binned {
        image: Image::new(bh, bw, c, data)?,
        valid: Mask::new(bh, bw, valid)?,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseRegime {
    ReadDominated,
    ShotDominated,
    Mixed,
}

/// Monte-Carlo input-SNR comparison. SNRs are per binned sample
/// (mean / std over trials), averaged over the image in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    /// Full-resolution uniform-flash pixels.
    pub snr_uf: f64,
    /// Pattern-binned patterned-flash samples.
    pub snr_pf: f64,
    /// Box-binned uniform-flash samples.
    pub snr_uf_avg: f64,
    /// `snr_pf - snr_uf_avg`, over all channels.
    pub gain_db: f64,
    /// Gain computed on channel-mean (luminance) bins.
    pub gain_db_luminance: f64,
    /// Gain computed separately for each channel.
    pub gain_db_per_channel: Vec<f64>,
    pub regime: NoiseRegime,
    pub trials: usize,
    pub distance: f64,
    pub aggregation: String,
}

/// Per-sample squared deviation from the noiseless value, accumulated
/// over trials. Measuring against the clean value rather than the sample
/// mean charges clamping and quantization bias to the noise: near black,
/// clamped read noise otherwise looks like signal with a small spread.
struct Deviation {
    n: usize,
    clean: Vec<f64>,
    sq: Vec<f64>,
}

impl Deviation {
    fn new(clean: Vec<f64>) -> Self {
        Deviation {
            n: 0,
            sq: vec![0.0; clean.len()],
            clean,
        }
    }

    fn push(&mut self, xs: &[f64]) {
        self.n += 1;
        for ((s, &c), &x) in self.sq.iter_mut().zip(&self.clean).zip(xs) {
            *s += (x - c) * (x - c);
        }
    }

    /// Per-sample SNR; `None` where the sample should not enter the average.
    fn snr(&self, i: usize) -> Option<f64> {
        let signal = self.clean[i];
        let mse = self.sq[i] / self.n as f64;
        if signal <= 0.0 {
            return None;
        }
        Some(if mse <= 0.0 { f64::INFINITY } else { signal / mse.sqrt() })
    }

    /// Mean dB SNR over selected samples. `Ok(None)` when any selected
    /// sample has zero variance (infinite SNR).
    fn mean_db(&self, keep: impl Fn(usize) -> bool) -> Result<Option<f64>> {
        let (mut sum, mut n) = (0.0, 0usize);
        for i in 0..self.clean.len() {
            if !keep(i) {
                continue;
            }
            match self.snr(i) {
                Some(v) if v.is_infinite() => return Ok(None),
                Some(v) => {
                    sum += to_db(v);
                    n += 1;
                }
                None => {}
            }
        }
        ensure!(
            n > 0,
            Error::Degenerate("no binned sample has positive mean signal".into())
        );
        Ok(Some(sum / n as f64))
    }
}

struct TrialBins {
    pf: Vec<f64>,
    uf: Vec<f64>,
    pf_gray: Vec<f64>,
    uf_gray: Vec<f64>,
    uf_full: Vec<f64>,
}

/// Renders `trials` independent PF and power-matched UF captures of `scene`
/// at a uniform `distance` (no parallax), bins both to the pattern period,
/// and compares their per-sample SNR.
pub fn measure_empirical_gain(
    scene: &Image,
    p: &Pattern,
    distance: f64,
    noise: &NoiseParams,
    trials: usize,
    seed: Seed,
) -> Result<SnrReport> {
    ensure!(trials >= 10, Error::InvalidArgument(format!("need at least 10 trials, got {trials}")));
    ensure!(scene.max() > 0.0, Error::Degenerate("scene is all zero".into()));
    scene.check_plane(p.height(), p.width(), "measure_empirical_gain")?;
    let (h, w, c) = scene.shape();
    let m = p.period_m();
    let depth = PlanarMap::filled(h, w, MapKind::Depth, distance)?;
    let rig = CameraRig::new(0.0, 1.0, distance, 1.0)?;
    let att = Attenuation::Uniform { distance };
    let mask = in_pattern_mask(p, DEFAULT_THRESHOLD_FRACTION)?;
    let uniform = p.matched_uniform()?;

    // the PF bin layout (validity) does not depend on the noise draw
    let clean_pf = forward::render_clean(scene, &depth, p, &rig, att)?;
    let clean_uf = forward::render_clean(scene, &depth, &uniform, &rig, att)?;
    let layout = bin_cells(&clean_pf, m, Some(&mask))?;
    let clean_ufb = bin_cells(&clean_uf, m, None)?;

    let run_trial = |t: usize| -> Result<TrialBins> {
        let pf = forward::render_pf(scene, &depth, p, &rig, att, noise, seed.derive_all(&[0, t as u64]))?;
        let uf = forward::render_pf(scene, &depth, &uniform, &rig, att, noise, seed.derive_all(&[1, t as u64]))?;
        let pfb = bin_cells(&pf, m, Some(&mask))?;
        let ufb = bin_cells(&uf, m, None)?;
        Ok(TrialBins {
            pf_gray: pfb.image.to_gray().into_data(),
            uf_gray: ufb.image.to_gray().into_data(),
            pf: pfb.image.into_data(),
            uf: ufb.image.into_data(),
            uf_full: uf.into_data(),
        })
    };

    let mut pf_m = Deviation::new(layout.image.data().to_vec());
    let mut uf_m = Deviation::new(clean_ufb.image.data().to_vec());
    let mut pfg_m = Deviation::new(layout.image.to_gray().into_data());
    let mut ufg_m = Deviation::new(clean_ufb.image.to_gray().into_data());
    let mut full_m = Deviation::new(clean_uf.data().to_vec());
    const BATCH: usize = 16;
    let mut t0 = 0;
    while t0 < trials {
        let t1 = (t0 + BATCH).min(trials);
        let batch: Vec<TrialBins> = (t0..t1)
            .into_par_iter()
            .map(run_trial)
            .collect::<Result<_>>()?;
        for tb in &batch {
            pf_m.push(&tb.pf);
            uf_m.push(&tb.uf);
            pfg_m.push(&tb.pf_gray);
            ufg_m.push(&tb.uf_gray);
            full_m.push(&tb.uf_full);
        }
        t0 = t1;
    }

    let valid = layout.valid.data();
    let undefined = || Error::Degenerate("zero-variance captures: SNR is infinite and the gain undefined".into());
    let snr_pf = pf_m.mean_db(|i| valid[i / c])?.ok_or_else(undefined)?;
    let snr_uf_avg = uf_m.mean_db(|i| valid[i / c])?.ok_or_else(undefined)?;
    let snr_uf = full_m.mean_db(|_| true)?.ok_or_else(undefined)?;
    let luma_pf = pfg_m.mean_db(|i| valid[i])?.ok_or_else(undefined)?;
    let luma_uf = ufg_m.mean_db(|i| valid[i])?.ok_or_else(undefined)?;
    let mut per_channel = Vec::with_capacity(c);
    for ch in 0..c {
        let a = pf_m.mean_db(|i| i % c == ch && valid[i / c])?.ok_or_else(undefined)?;
        let b = uf_m.mean_db(|i| i % c == ch && valid[i / c])?.ok_or_else(undefined)?;
        per_channel.push(a - b);
    }

    // regime from the mean clean signal at in-dot pixels
    let (mut s_sum, mut s_n) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                for ch in 0..c {
                    s_sum += clean_pf.get(y, x, ch);
                    s_n += 1;
                }
            }
        }
    }
    let shot = noise.sigma_s.powi(2) * s_sum / s_n.max(1) as f64;
    let read = noise.sigma_r.powi(2);
    let regime = if read >= 4.0 * shot {
        NoiseRegime::ReadDominated
    } else if shot >= 4.0 * read {
        NoiseRegime::ShotDominated
    } else {
        NoiseRegime::Mixed
    };

    Ok(SnrReport {
        snr_uf,
        snr_pf,
        snr_uf_avg,
        gain_db: snr_pf - snr_uf_avg,
        gain_db_luminance: luma_pf - luma_uf,
        gain_db_per_channel: per_channel,
        regime,
        trials,
        distance,
        aggregation: "per-bin clean signal / rms deviation over trials, 20*log10, averaged over valid bins".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_pixel_snr() {
        assert!((snr_uniform(1.0, 1.0).unwrap() - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((snr_uniform(9.0, 0.0).unwrap() - 3.0).abs() < 1e-15);
        assert!(snr_uniform(0.0, 0.0).is_err());
        assert!(snr_uniform(-1.0, 0.1).is_err());
    }

    #[test]
    fn single_pixel_snr_high_precision() {
        // 0.01 / sqrt(0.01 + 0.000016) = 0.01 / sqrt(0.010016), evaluated to
        // 20 digits with an arbitrary-precision calculator
        let oracle = 0.099_920_095_872_178_94_f64;
        assert!((snr_uniform(0.01, 0.004).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn patch_snr_limits() {
        let r = snr_patterned(1e-9, 0.004, 4).unwrap() / snr_uniform_binned(1e-9, 0.004, 4).unwrap();
        // closed form gives 3.998126..., i.e. 4.7e-4 relative to M
        assert!((r / 4.0 - 1.0).abs() < 1e-3);
        let s = 0.3;
        assert_eq!(snr_patterned(s, 0.01, 1).unwrap(), snr_uniform(s, 0.01).unwrap());
        assert_eq!(snr_uniform_binned(s, 0.01, 1).unwrap(), snr_uniform(s, 0.01).unwrap());
        let r = snr_patterned(100.0, 0.004, 4).unwrap() / snr_uniform_binned(100.0, 0.004, 4).unwrap();
        assert!((r - 1.0).abs() < 1e-6);
        assert!(snr_patterned(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn gain_bound() {
        assert_eq!(theoretical_gain(1.0 / 16.0).unwrap(), 4.0);
        assert!((to_db(theoretical_gain(1.0 / 16.0).unwrap()) - 12.041_199_826_559_248).abs() < 1e-9);
        assert_eq!(theoretical_gain(1.0).unwrap(), 1.0);
        assert!((theoretical_gain(1.0 / 9.0).unwrap() - 3.0).abs() < 1e-15);
        assert!(theoretical_gain(0.0).is_err());
        assert!(theoretical_gain(1.5).is_err());
    }

    #[test]
    fn pf_binning_of_ideal_pattern_samples_dots() {
        let p = Pattern::regular(16, 16, 4, 0.0, 1.0, 0.0).unwrap();
        let scene = Image::from_fn(16, 16, 1, |y, x, _| 0.01 * (y * 16 + x) as f64 / 2.56).unwrap();
        let rig = CameraRig::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let depth = PlanarMap::filled(16, 16, MapKind::Depth, 8.0).unwrap();
        let cap = forward::render_clean(&scene, &depth, &p, &rig, Attenuation::Uniform { distance: 8.0 }).unwrap();
        let b = pixel_bin_pf(&cap, &p, 0.5).unwrap();
        for by in 0..4 {
            for bx in 0..4 {
                let v = scene.get(by * 4 + 2, bx * 4 + 2, 0) / 64.0;
                assert_eq!(b.image.get(by, bx, 0), v);
            }
        }
        assert!(b.valid.data().iter().all(|&v| v));
    }

    #[test]
    fn uf_binning_of_constant() {
        let img = Image::filled(12, 12, 3, 0.37).unwrap();
        let b = pixel_bin_uf(&img, 4).unwrap();
        assert_eq!(b.image.shape(), (3, 3, 3));
        assert!(b.image.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
        // crop when not divisible
        assert_eq!(pixel_bin_uf(&Image::filled(13, 10, 1, 0.0).unwrap(), 4).unwrap().image.shape(), (3, 2, 1));
    }

    #[test]
    fn jittered_cell_counts_match_exhaustive_scan() {
        let base = Pattern::regular(32, 32, 4, 0.0, 1.0, 0.0).unwrap();
        let j = Pattern::jittered(&base, Seed(5)).unwrap();
        let img = Image::filled(32, 32, 1, 0.2).unwrap();
        let b = pixel_bin_pf(&img, &j, 0.5).unwrap();
        for by in 0..8 {
            for bx in 0..8 {
                let mut n = 0;
                for y in by * 4..by * 4 + 4 {
                    for x in bx * 4..bx * 4 + 4 {
                        if j.image().get(y, x, 0) >= 0.5 {
                            n += 1;
                        }
                    }
                }
                assert_eq!(b.counts[by * 8 + bx], n);
                assert_eq!(b.valid.get(by, bx), n > 0);
            }
        }
        // with +-1 jitter around offset 2 every dot stays in its own cell
        assert!(b.valid.data().iter().all(|&v| v));
    }

    #[test]
    fn empty_cells_are_flagged() {
        let p = Pattern::regular(8, 8, 4, 0.0, 1.0, 0.0).unwrap();
        // a 2-pixel bin leaves three of every four cells without a dot
        let mask = in_pattern_mask(&p, 0.5).unwrap();
        let b = bin_cells(&Image::filled(8, 8, 1, 1.0).unwrap(), 2, Some(&mask)).unwrap();
        assert_eq!(b.valid.count(), 4);
        assert!(b.image.data().iter().zip(b.valid.data()).all(|(&v, &ok)| ok || v == 0.0));
    }

    #[test]
    fn zero_noise_gain_is_undefined() {
        let p = Pattern::regular(16, 16, 4, 0.0, 1.0, 0.0).unwrap();
        let scene = Image::filled(16, 16, 1, 0.5).unwrap();
        assert!(measure_empirical_gain(&scene, &p, 1.0, &NoiseParams::zero(), 10, Seed(0)).is_err());
        let black = Image::filled(16, 16, 1, 0.0).unwrap();
        assert!(measure_empirical_gain(&black, &p, 1.0, &NoiseParams::new(0.004, 0.0, 0.0), 10, Seed(0)).is_err());
        assert!(measure_empirical_gain(&scene, &p, 1.0, &NoiseParams::new(0.004, 0.0, 0.0), 5, Seed(0)).is_err());
    }

    #[test]
    fn unclamped_gain_matches_closed_form() {
        // dot pixel 0.5 against a 4x4 mean of 0.5/16, read noise only
        let p = Pattern::regular(32, 32, 4, 0.0, 1.0, 0.0).unwrap();
        let scene = Image::filled(32, 32, 1, 0.5).unwrap();
        let r = measure_empirical_gain(&scene, &p, 1.0, &NoiseParams::new(0.004, 0.0, 0.0), 400, Seed(8)).unwrap();
        assert!((r.snr_pf - to_db(0.5 / 0.004)).abs() < 0.3, "{}", r.snr_pf);
        assert!((r.snr_uf_avg - to_db(0.5 / 16.0 / 0.001)).abs() < 0.3, "{}", r.snr_uf_avg);
        assert!((r.gain_db - 12.04).abs() < 0.3);
    }

    #[test]
    fn clamped_dark_signal_is_not_counted_as_signal() {
        // UF pixels sit a third of a read-noise sigma above black; half the
        // draws clamp, and the bias must count against the UF capture
        let p = Pattern::regular(32, 32, 4, 0.0, 1.0, 0.0).unwrap();
        let scene = Image::filled(32, 32, 1, 0.02).unwrap();
        let r = measure_empirical_gain(&scene, &p, 1.0, &NoiseParams::new(0.004, 0.0, 0.0), 200, Seed(8)).unwrap();
        let unclamped_uf = to_db(0.02 / 16.0 / 0.001);
        assert!(r.snr_uf_avg < unclamped_uf, "{} vs {unclamped_uf}", r.snr_uf_avg);
    }

    #[test]
    fn gain_decreases_with_shot_noise() {
        let p = Pattern::regular(32, 32, 4, 0.0, 1.0, 0.0).unwrap();
        let scene = Image::filled(32, 32, 1, 0.6).unwrap();
        let mut prev = f64::INFINITY;
        for sigma_s in [0.0, 0.02, 0.05, 0.1] {
            let n = NoiseParams::new(0.004, sigma_s, 0.0);
            let r = measure_empirical_gain(&scene, &p, 1.0, &n, 200, Seed(3)).unwrap();
            assert!(r.gain_db < prev + 0.2, "sigma_s {sigma_s}: {} vs {prev}", r.gain_db);
            prev = r.gain_db;
        }
    }

    proptest! {
        #[test]
        fn patterned_dominates_binned_uniform(s in 0.0f64..10.0, sigma in 1e-4f64..1.0, m in 1usize..9) {
            let pf = snr_patterned(s, sigma, m).unwrap();
            let uf = snr_uniform_binned(s, sigma, m).unwrap();
            if m == 1 || s == 0.0 {
                prop_assert!((pf - uf).abs() <= 1e-12 * pf.max(1.0));
            } else {
                prop_assert!(pf > uf);
            }
        }

        #[test]
        fn uf_binning_commutes_with_scaling(alpha in 0.0f64..4.0, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = Seed(seed).rng();
            let img = Image::from_fn(8, 8, 3, |_, _, _| rng.random::<f64>()).unwrap();
            let a = pixel_bin_uf(&img.map(|v| v * alpha).unwrap(), 4).unwrap();
            let b = pixel_bin_uf(&img, 4).unwrap();
            for (x, y) in a.image.data().iter().zip(b.image.data()) {
                prop_assert!((x - alpha * y).abs() < 1e-12);
            }
        }
    }
}
