use super::fill::inverse_distance_fill;
use super::{check_inputs, ReconConfig};
use crate::error::{ensure, Error, Result};
use crate::forward::warp_taps;
use crate::image::{Image, MapKind, PlanarMap};
use crate::pattern::{in_pattern_mask, Pattern};

#[derive(Debug, Clone, PartialEq)]
pub struct DisparityEstimate {
    pub disparity: PlanarMap,
    pub confidence: PlanarMap,
    /// Block-grid disparities before upsampling (row-major).
    pub block_disparity: Vec<f64>,
    pub block_rows: usize,
    pub block_cols: usize,
}

/// Window origins along one axis: every `stride` pixels, with the last
/// window flush against the far edge.
fn block_origins(len: usize, block: usize, stride: usize) -> Vec<usize> {
    if len <= block {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..=len - block).step_by(stride).collect();
    if *v.last().unwrap() != len - block {
        v.push(len - block);
    }
    v
}

/// Blockwise zero-mean NCC between the capture and horizontally shifted
/// copies of the reference pattern, with 3-point parabolic refinement
/// around the best integer shift inside the search window. With
/// `cfg.subpixel_polish` the refined shift is then polished by a
/// golden-section search on the NCC of the bilinearly warped pattern.
pub fn estimate_disparity(capture: &Image, p: &Pattern, cfg: &ReconConfig) -> Result<DisparityEstimate> {
    cfg.validate()?;
    check_inputs(capture, p)?;
    cfg.check_unambiguous(p.period_m())?;
    let pattern = p.image().to_gray();
    let dots = in_pattern_mask(p, cfg.threshold_fraction)?;
    ensure!(
        dots.count() < dots.data().len() && pattern.max() > pattern.min(),
        Error::Degenerate("pattern has no dots to match".into())
    );
    let img = capture.to_gray();
    let (h, w) = (img.height(), img.width());
    let block = cfg.block_size.min(h).min(w);
    let ys = block_origins(h, block, cfg.block_stride);
    let xs = block_origins(w, block, cfg.block_stride);
    let (rows, cols) = (ys.len(), xs.len());

    let (lo, hi) = cfg.window();
    // every integer whose rounding cell meets the window, so a narrow
    // window between two integers still gets candidates
    let k_lo = (lo - 0.5).ceil() as i64;
    let k_hi = (hi + 0.5).floor() as i64;
    // one extra shift on each side for the parabola
    let shifts: Vec<i64> = (k_lo - 1..=k_hi + 1).collect();
    let ns = shifts.len();

    // shifted templates T_k(y, x) = P(y, x - k), border-clamped like the warp
    let templates: Vec<Vec<f64>> = shifts
        .iter()
        .map(|&k| {
            let mut t = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    let (x0, _, _) = warp_taps(x as f64 - k as f64, w);
                    t[y * w + x] = pattern.get(y, x0, 0);
                }
            }
            t
        })
        .collect();

    let n = (block * block) as f64;
    let mut curves = vec![f64::NAN; rows * cols * ns];
    let mut has_dots = vec![false; rows * cols];
    for (bi, &y0) in ys.iter().enumerate() {
        for (bj, &x0) in xs.iter().enumerate() {
            let b = bi * cols + bj;
            let (mut si, mut sii) = (0.0, 0.0);
            for y in y0..y0 + block {
                for x in x0..x0 + block {
                    let v = img.get(y, x, 0);
                    si += v;
                    sii += v * v;
                }
            }
            let var_i = sii - si * si / n;
            for (ki, t) in templates.iter().enumerate() {
                let (mut st, mut stt, mut sit) = (0.0, 0.0, 0.0);
                let mut any = false;
                for y in y0..y0 + block {
                    let row = &t[y * w..(y + 1) * w];
                    for x in x0..x0 + block {
                        let tv = row[x];
                        let v = img.get(y, x, 0);
                        st += tv;
                        stt += tv * tv;
                        sit += v * tv;
                    }
                    if !any {
                        // in-dot pixels of the shifted template
                        any = (x0..x0 + block).any(|x| {
                            let (xs0, _, _) = warp_taps(x as f64 - shifts[ki] as f64, w);
                            dots.get(y, xs0)
                        });
                    }
                }
                let var_t = stt - st * st / n;
                if any {
                    has_dots[b] = true;
                }
                if var_i > 0.0 && var_t > 0.0 {
                    curves[b * ns + ki] = (sit - si * st / n) / (var_i * var_t).sqrt();
                }
            }
        }
    }

    // optional pooling of NCC curves over neighbouring blocks
    let r = cfg.cost_aggregation as i64;
    let pooled: Vec<f64> = if r == 0 {
        curves.clone()
    } else {
        let mut out = vec![f64::NAN; curves.len()];
        for bi in 0..rows as i64 {
            for bj in 0..cols as i64 {
                for ki in 0..ns {
                    let (mut s, mut cnt) = (0.0, 0usize);
                    for ni in (bi - r).max(0)..=(bi + r).min(rows as i64 - 1) {
                        for nj in (bj - r).max(0)..=(bj + r).min(cols as i64 - 1) {
                            let v = curves[(ni as usize * cols + nj as usize) * ns + ki];
                            if v.is_finite() {
                                s += v;
                                cnt += 1;
                            }
                        }
                    }
                    if cnt > 0 {
                        out[(bi as usize * cols + bj as usize) * ns + ki] = s / cnt as f64;
                    }
                }
            }
        }
        out
    };

    let mut block_disp = vec![0.0; rows * cols];
    let mut block_conf = vec![0.0; rows * cols];
    let mut known = vec![false; rows * cols];
    for b in 0..rows * cols {
        if !has_dots[b] {
            continue;
        }
        let curve = &pooled[b * ns..(b + 1) * ns];
        // candidates are the interior shifts; the estimate is clamped to the window below
        let mut best: Option<usize> = None;
        for ki in 1..ns - 1 {
            let v = curve[ki];
            if v.is_finite() && best.is_none_or(|bk| v > curve[bk]) {
                best = Some(ki);
            }
        }
        let Some(ki) = best else { continue };
        let (vm, v0, vp) = (curve[ki - 1], curve[ki], curve[ki + 1]);
        let mut delta = 0.0;
        if vm.is_finite() && vp.is_finite() {
            let denom = vm - 2.0 * v0 + vp;
            if denom < 0.0 {
                delta = (0.5 * (vm - vp) / denom).clamp(-0.5, 0.5);
            }
        }
        let mut est = (shifts[ki] as f64 + delta).clamp(lo, hi);
        let mut conf = v0;
        if cfg.subpixel_polish {
            let (bi, bj) = (b / cols, b % cols);
            let pad = cfg.cost_aggregation * cfg.block_stride;
            let region = Region {
                y0: ys[bi].saturating_sub(pad),
                y1: (ys[bi] + block + pad).min(h),
                x0: xs[bj].saturating_sub(pad),
                x1: (xs[bj] + block + pad).min(w),
            };
            let (d, c) = polish(&img, &pattern, region, (est - 0.5).max(lo), (est + 0.5).min(hi));
            if c.is_finite() {
                est = d;
                conf = c;
            }
        }
        block_disp[b] = est;
        block_conf[b] = conf.clamp(0.0, 1.0);
        known[b] = true;
    }
    ensure!(
        known.iter().any(|&k| k),
        Error::Degenerate("no block could be matched".into())
    );
    let block_disp = inverse_distance_fill(&block_disp, &known, rows, cols, 1, 1)?;
    let block_conf = inverse_distance_fill(&block_conf, &known, rows, cols, 1, 1)?;

    // bilinear upsampling on the grid of window centres
    let cy: Vec<f64> = ys.iter().map(|&y| y as f64 + (block as f64 - 1.0) / 2.0).collect();
    let cx: Vec<f64> = xs.iter().map(|&x| x as f64 + (block as f64 - 1.0) / 2.0).collect();
    let disparity = PlanarMap::from_fn(h, w, MapKind::Disparity, |y, x| {
        bilinear_on_grid(&block_disp, &cy, &cx, y as f64, x as f64).clamp(lo, hi)
    })?;
    let confidence = PlanarMap::from_fn(h, w, MapKind::Disparity, |y, x| {
        bilinear_on_grid(&block_conf, &cy, &cx, y as f64, x as f64).clamp(0.0, 1.0)
    })?;
    Ok(DisparityEstimate {
        disparity,
        confidence,
        block_disparity: block_disp,
        block_rows: rows,
        block_cols: cols,
    })
}

#[derive(Debug, Clone, Copy)]
struct Region {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

/// ZNCC between `img` and the pattern warped by a fractional shift `d`.
fn zncc_at(img: &Image, pattern: &Image, r: Region, d: f64) -> f64 {
    let w = img.width();
    let n = ((r.y1 - r.y0) * (r.x1 - r.x0)) as f64;
    let (mut si, mut sii, mut st, mut stt, mut sit) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let taps: Vec<_> = (r.x0..r.x1).map(|x| warp_taps(x as f64 - d, w)).collect();
    for y in r.y0..r.y1 {
        for (x, &(a, b, t)) in (r.x0..r.x1).zip(&taps) {
            let tv = pattern.get(y, a, 0) * (1.0 - t) + pattern.get(y, b, 0) * t;
            let v = img.get(y, x, 0);
            si += v;
            sii += v * v;
            st += tv;
            stt += tv * tv;
            sit += v * tv;
        }
    }
    let var = (sii - si * si / n) * (stt - st * st / n);
    if var > 0.0 {
        (sit - si * st / n) / var.sqrt()
    } else {
        f64::NAN
    }
}

/// Golden-section search for the ZNCC maximum on `[a, b]`.
fn polish(img: &Image, pattern: &Image, r: Region, mut a: f64, mut b: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_895;
    let f = |d: f64| {
        let v = zncc_at(img, pattern, r, d);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-3 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, zncc_at(img, pattern, r, x))
}

fn axis_weight(centres: &[f64], v: f64) -> (usize, usize, f64) {
    let n = centres.len();
    if n == 1 || v <= centres[0] {
        return (0, 0, 0.0);
    }
    if v >= centres[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let i = centres.partition_point(|&c| c <= v) - 1;
    let t = (v - centres[i]) / (centres[i + 1] - centres[i]);
    (i, i + 1, t)
}

fn bilinear_on_grid(vals: &[f64], cy: &[f64], cx: &[f64], y: f64, x: f64) -> f64 {
    let cols = cx.len();
    let (y0, y1, ty) = axis_weight(cy, y);
    let (x0, x1, tx) = axis_weight(cx, x);
    let top = vals[y0 * cols + x0] * (1.0 - tx) + vals[y0 * cols + x1] * tx;
    let bot = vals[y1 * cols + x0] * (1.0 - tx) + vals[y1 * cols + x1] * tx;
    top * (1.0 - ty) + bot * ty
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{render_clean, Attenuation, CameraRig};
    use crate::metrics::mae;
    use crate::rng::Seed;
    use rand::Rng;

    fn textured(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = Seed(seed).rng();
        let f: Vec<(f64, f64, f64)> = (0..6)
            .map(|_| (rng.random::<f64>() * 0.3, rng.random::<f64>() * 0.3, rng.random::<f64>() * 6.0))
            .collect();
        Image::from_fn(h, w, 1, |y, x, _| {
            let s: f64 = f.iter().map(|(a, b, ph)| (a * y as f64 + b * x as f64 + ph).sin()).sum();
            (0.5 + 0.07 * s).clamp(0.05, 0.95)
        })
        .unwrap()
    }

    /// Capture with exact constant disparity `d` (rig with b*f = 1, d_ref = 1).
    fn capture_with(a: &Image, p: &Pattern, d: f64) -> Image {
        let (h, w, _) = a.shape();
        let rig = CameraRig::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let depth = PlanarMap::filled(h, w, MapKind::Depth, 1.0 / (1.0 + d)).unwrap();
        render_clean(a, &depth, p, &rig, Attenuation::Uniform { distance: 1.0 }).unwrap()
    }

    #[test]
    fn zero_disparity_autocorrelation() {
        let p = Pattern::regular(64, 64, 4, 0.7, 1.0, 0.02).unwrap();
        let cap = capture_with(&textured(64, 64, 1), &p, 0.0);
        let est = estimate_disparity(&cap, &p, &ReconConfig::default()).unwrap();
        let zero = PlanarMap::filled(64, 64, MapKind::Disparity, 0.0).unwrap();
        assert!(mae(&est.disparity, &zero, None).unwrap() < 0.02);
    }

    #[test]
    fn constant_subpixel_shift() {
        let p = Pattern::regular(64, 64, 4, 0.7, 1.0, 0.02).unwrap();
        let cap = capture_with(&textured(64, 64, 2), &p, 1.7);
        let cfg = ReconConfig { search_center: 1.4, search_range: 1.5, ..Default::default() };
        let est = estimate_disparity(&cap, &p, &cfg).unwrap();
        let truth = PlanarMap::filled(64, 64, MapKind::Disparity, 1.7).unwrap();
        let err = mae(&est.disparity, &truth, None).unwrap();
        assert!(err < 0.1, "mae {err}");
    }

    #[test]
    fn sharp_dots_need_the_polish() {
        // bilinear splitting of one-pixel dots biases the 3-point parabola
        let p = Pattern::regular(64, 64, 4, 0.0, 1.0, 0.0).unwrap();
        let cap = capture_with(&textured(64, 64, 5), &p, 1.6667);
        let truth = PlanarMap::filled(64, 64, MapKind::Disparity, 1.6667).unwrap();
        let base = ReconConfig { search_center: 1.4, search_range: 1.6, ..Default::default() };
        let rough = ReconConfig { subpixel_polish: false, ..base.clone() };
        let e_rough = mae(&estimate_disparity(&cap, &p, &rough).unwrap().disparity, &truth, None).unwrap();
        let e_fine = mae(&estimate_disparity(&cap, &p, &base).unwrap().disparity, &truth, None).unwrap();
        assert!(e_rough > 0.05, "parabola alone {e_rough}");
        assert!(e_fine < 0.01, "polished {e_fine}");
    }

    #[test]
    fn window_between_integers() {
        let p = Pattern::regular(64, 64, 4, 0.0, 1.0, 0.0).unwrap();
        let cap = capture_with(&textured(64, 64, 3), &p, 1.6667);
        let cfg = ReconConfig { search_center: 1.6667, search_range: 0.5, ..Default::default() };
        let est = estimate_disparity(&cap, &p, &cfg).unwrap();
        let truth = PlanarMap::filled(64, 64, MapKind::Disparity, 1.6667).unwrap();
        assert!(mae(&est.disparity, &truth, None).unwrap() < 0.01);
    }

    #[test]
    fn brightness_scaling_is_invisible() {
        let p = Pattern::regular(48, 48, 4, 0.7, 1.0, 0.02).unwrap();
        let cap = capture_with(&textured(48, 48, 3), &p, 0.6);
        let a = estimate_disparity(&cap, &p, &ReconConfig::default()).unwrap();
        let b = estimate_disparity(&cap.map(|v| v * 0.25).unwrap(), &p, &ReconConfig::default()).unwrap();
        for (x, y) in a.disparity.data().iter().zip(b.disparity.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_ambiguous_window_and_flat_pattern() {
        let p = Pattern::regular(32, 32, 4, 0.7, 1.0, 0.02).unwrap();
        let cap = capture_with(&textured(32, 32, 4), &p, 0.0);
        let cfg = ReconConfig { search_range: 2.0, ..Default::default() };
        assert!(estimate_disparity(&cap, &p, &cfg).is_err());
        let u = Pattern::uniform(32, 32, &[0.0625]).unwrap();
        let cfg = ReconConfig { search_range: 0.4, ..Default::default() };
        assert!(estimate_disparity(&cap, &u, &cfg).is_err());
    }

    #[test]
    fn origins_cover_edges() {
        assert_eq!(block_origins(40, 16, 8), vec![0, 8, 16, 24]);
        assert_eq!(block_origins(41, 16, 8), vec![0, 8, 16, 24, 25]);
        assert_eq!(block_origins(10, 16, 8), vec![0]);
    }
}
