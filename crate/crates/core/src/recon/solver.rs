use super::fill::inverse_distance_fill;
use super::objective::{modulation, Censoring, Problem};
use super::uf::upsample_bilinear;
use super::{check_inputs, ReconConfig, StepRule};
use crate::error::{ensure, Error, Result};
use crate::forward::warp_by_disparity;
use crate::image::{Image, PlanarMap};
use crate::pattern::Pattern;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 20;
/// Demodulation guard, as a fraction of the pattern maximum.
const DEMOD_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutput {
    pub image: Image,
    /// Objective at the start and after every accepted iteration.
    pub trace: Vec<f64>,
}

/// Initial albedo estimate: `capture * D^2 / max(W[P], eps_p)` at in-dot
/// pixels, inverse-distance interpolated elsewhere, clamped to `[0, 1]`.
pub fn demodulate(capture: &Image, p: &Pattern, disparity: &PlanarMap, cfg: &ReconConfig) -> Result<Image> {
    check_inputs(capture, p)?;
    let (h, w, c) = capture.shape();
    let warped = warp_by_disparity(p, disparity)?;
    let pmax = p.image().max();
    ensure!(pmax > 0.0, Error::Degenerate("pattern is all zero".into()));
    let gray = warped.to_gray();
    let known: Vec<bool> = gray.data().iter().map(|&v| v >= cfg.threshold_fraction * pmax).collect();
    ensure!(
        known.iter().any(|&k| k),
        Error::Degenerate("no in-pattern pixels to demodulate".into())
    );
    let wc = warped.broadcast(c)?;
    let d2 = cfg.distance * cfg.distance;
    let eps = DEMOD_FLOOR * pmax;
    let cens = censoring(cfg).map(Censoring::from_noise);
    let raw: Vec<f64> = capture
        .data()
        .iter()
        .zip(wc.data())
        .map(|(&i, &wp)| cens.map_or(i, |c| c.invert(i)) * d2 / wp.max(eps))
        .collect();
    let filled = inverse_distance_fill(&raw, &known, h, w, c, p.period_m().max(2))?;
    Image::new(h, w, c, filled.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Starting image for clamp-aware solves. Each `m x m` cell gets the
/// albedo in `[0, 1]` that best explains its samples in expectation; the
/// cell grid is then TV-smoothed against a quadratic expansion of those
/// fits and bilinearly upsampled. At low SNR the smooth modes of the full
/// problem converge very slowly, so starting from the coarse solution
/// matters far more than the per-pixel detail.
fn coarse_init(prob: &Problem, cens: &Censoring, m: usize, cfg: &ReconConfig) -> Result<Image> {
    let (h, w, c) = (prob.height, prob.width, prob.channels);
    let (ch_, cw) = (h.div_ceil(m), w.div_ceil(m));
    let mut fit = vec![0.0; ch_ * cw * c];
    let mut weight = vec![0.0; ch_ * cw * c];
    for cy in 0..ch_ {
        for cx in 0..cw {
            for ch in 0..c {
                let idx: Vec<usize> = (cy * m..((cy + 1) * m).min(h))
                    .flat_map(|y| (cx * m..((cx + 1) * m).min(w)).map(move |x| (y * w + x) * c + ch))
                    .collect();
                // derivative of the cell's squared error in `a`
                let slope = |a: f64| -> f64 {
                    idx.iter()
                        .map(|&i| {
                            let mi = prob.modulation[i];
                            let (e, de) = cens.expect(mi * a);
                            (e - prob.observed[i]) * de * mi
                        })
                        .sum()
                };
                let (mut lo, mut hi) = (0.0, 1.0);
                let a = if slope(lo) >= 0.0 {
                    lo
                } else if slope(hi) <= 0.0 {
                    hi
                } else {
                    for _ in 0..40 {
                        let mid = 0.5 * (lo + hi);
                        if slope(mid) < 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    0.5 * (lo + hi)
                };
                let q: f64 = idx
                    .iter()
                    .map(|&i| {
                        let mi = prob.modulation[i];
                        (cens.expect(mi * a).1 * mi).powi(2)
                    })
                    .sum();
                let k = (cy * cw + cx) * c + ch;
                fit[k] = a;
                weight[k] = q.sqrt();
            }
        }
    }
    let modulation = Image::new(ch_, cw, c, weight.clone())?;
    let observed = Image::new(ch_, cw, c, fit.iter().zip(&weight).map(|(a, q)| a * q).collect())?;
    let coarse = Problem::new(&modulation, &observed, prob.tv_weight / m as f64, prob.tv_epsilon)?;
    let start = Image::new(ch_, cw, c, fit)?;
    let solved = solve_problem(&coarse, &start, &ReconConfig { max_iters: 4 * cfg.max_iters, ..cfg.clone() })?;
    upsample_bilinear(&solved.image, h, w)
}

/// Approximately solves `H d = r` for the majorizer Hessian `H` by
/// Jacobi-preconditioned conjugate gradients.
fn majorizer_solve(prob: &Problem, q: &[f64], k: &[f64], r: &[f64], iters: usize, d: &mut [f64]) {
    let n = r.len();
    let mut diag = vec![0.0; n];
    prob.majorizer_diag(q, k, &mut diag);
    let inv: Vec<f64> = diag.iter().map(|&v| if v > 0.0 { 1.0 / v } else { 0.0 }).collect();
    d.fill(0.0);
    let mut res = r.to_vec();
    let mut zr: Vec<f64> = res.iter().zip(&inv).map(|(a, b)| a * b).collect();
    let mut p = zr.clone();
    let mut hp = vec![0.0; n];
    let mut rz: f64 = res.iter().zip(&zr).map(|(a, b)| a * b).sum();
    let r0 = rz;
    for _ in 0..iters {
        if rz <= 1e-30 * r0 || rz == 0.0 {
            break;
        }
        prob.majorizer_apply(q, k, &p, &mut hp);
        let php: f64 = p.iter().zip(&hp).map(|(a, b)| a * b).sum();
        if php <= 0.0 {
            break;
        }
        let a = rz / php;
        for i in 0..n {
            d[i] += a * p[i];
            res[i] -= a * hp[i];
            zr[i] = res[i] * inv[i];
        }
        let rz_new: f64 = res.iter().zip(&zr).map(|(a, b)| a * b).sum();
        let b = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = zr[i] + b * p[i];
        }
    }
}

/// Box-constrained (`[0, 1]`) preconditioned projected gradient descent.
///
/// The search direction is `-H^-1 g`, with `H` the Hessian of the
/// lagged-diffusivity quadratic majorizer of the objective at the current
/// iterate (solved by `cfg.cg_iters` conjugate-gradient steps). With
/// `cg_iters == 0` the diagonal of `H` alone is used. Steps are projected
/// onto the box and accepted only when the objective decreases.
pub fn solve_problem(prob: &Problem, x0: &Image, cfg: &ReconConfig) -> Result<SolveOutput> {
    let n = prob.len();
    ensure!(x0.data().len() == n, Error::Shape("initial image vs problem".into()));
    let mut x: Vec<f64> = x0.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut g = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut k = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut f = prob.value_grad(&x, &mut g, Some(&mut diag));
    let mut trace = vec![f];
    let mut alpha = match cfg.step_rule {
        StepRule::Fixed { step } => step,
        StepRule::Backtracking => 1.0,
    };

    for _ in 0..cfg.max_iters {
        if cfg.cg_iters > 0 {
            prob.edge_weights(&x, &mut k);
            prob.data_curvature(&x, &mut q);
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            majorizer_solve(prob, &q, &k, &neg, cfg.cg_iters, &mut dir);
        } else {
            for i in 0..n {
                dir[i] = if diag[i] > 0.0 { -g[i] / diag[i] } else { 0.0 };
            }
        }
        // the direction is only used where it stays feasible to first order
        for i in 0..n {
            if (x[i] <= 0.0 && dir[i] < 0.0 && g[i] > 0.0) || (x[i] >= 1.0 && dir[i] > 0.0 && g[i] < 0.0) {
                dir[i] = 0.0;
            }
        }
        let start = match cfg.step_rule {
            StepRule::Fixed { step } => step,
            StepRule::Backtracking => (2.0 * alpha).min(1.0),
        };
        alpha = start;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut decrease = 0.0;
            for i in 0..n {
                trial[i] = (x[i] + alpha * dir[i]).clamp(0.0, 1.0);
                decrease += g[i] * (trial[i] - x[i]);
            }
            if decrease >= 0.0 {
                // projected direction vanished or is not a descent direction
                accepted = Some(f);
                break;
            }
            let ft = prob.value(&trial);
            let ok = match cfg.step_rule {
                StepRule::Fixed { .. } => ft <= f,
                StepRule::Backtracking => ft <= f + ARMIJO * decrease,
            };
            if ok {
                accepted = Some(ft);
                break;
            }
            alpha *= 0.5;
        }
        let Some(f_new) = accepted else {
            match cfg.step_rule {
                StepRule::Fixed { step } => {
                    return Err(Error::Diverged(format!(
                        "objective increased for step {step} after {MAX_HALVINGS} halvings"
                    )))
                }
                // no representable descent left
                StepRule::Backtracking => break,
            }
        };
        if f_new >= f {
            break;
        }
        std::mem::swap(&mut x, &mut trial);
        let rel = (f - f_new) / f.abs().max(f64::MIN_POSITIVE);
        f = prob.value_grad(&x, &mut g, Some(&mut diag));
        trace.push(f);
        if rel < cfg.rel_tol {
            break;
        }
    }
    let (h, w, c) = x0.shape();
    Ok(SolveOutput {
        image: Image::new(h, w, c, x)?,
        trace,
    })
}

/// Noise model to fit the clamped response against, if enabled.
pub(crate) fn censoring(cfg: &ReconConfig) -> Option<&crate::forward::NoiseParams> {
    if cfg.clamp_aware {
        cfg.noise.as_ref()
    } else {
        None
    }
}

/// Minimizes the photometric objective over the image for a fixed disparity.
pub fn solve_image(capture: &Image, p: &Pattern, disparity_hat: &PlanarMap, cfg: &ReconConfig) -> Result<SolveOutput> {
    cfg.validate()?;
    check_inputs(capture, p)?;
    let (lo, hi) = cfg.window();
    ensure!(
        disparity_hat.data().iter().all(|&d| d >= lo - 1e-9 && d <= hi + 1e-9),
        Error::InvalidArgument(format!("disparity outside the search window [{lo}, {hi}]"))
    );
    let m = modulation(p, disparity_hat, cfg.distance, capture.channels())?;
    let prob = Problem::new(&m, capture, cfg.tv_weight, cfg.tv_epsilon)?.with_censoring(censoring(cfg));
    let x0 = match prob.censoring {
        Some(cens) => coarse_init(&prob, &cens, p.period_m().max(1), cfg)?,
        None => demodulate(capture, p, disparity_hat, cfg)?,
    };
    solve_problem(&prob, &x0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{render_clean, render_pf, Attenuation, CameraRig, NoiseParams};
    use crate::image::MapKind;
    use crate::rng::Seed;
    use rand::Rng;

    fn zero_disp(h: usize, w: usize) -> PlanarMap {
        PlanarMap::filled(h, w, MapKind::Disparity, 0.0).unwrap()
    }

    fn capture(a: &Image, p: &Pattern, dist: f64, noise: &NoiseParams, seed: u64) -> Image {
        let (h, w, _) = a.shape();
        let rig = CameraRig::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let depth = PlanarMap::filled(h, w, MapKind::Depth, dist).unwrap();
        render_pf(a, &depth, p, &rig, Attenuation::Uniform { distance: dist }, noise, Seed(seed)).unwrap()
    }

    #[test]
    fn constant_scene_is_recovered_exactly() {
        let p = Pattern::regular(32, 32, 4, 0.0, 1.0, 0.0).unwrap();
        let a = Image::filled(32, 32, 3, 0.42).unwrap();
        let cap = capture(&a, &p, 8.0, &NoiseParams::zero(), 0);
        let cfg = ReconConfig { distance: 8.0, ..Default::default() };
        let out = solve_image(&cap, &p, &zero_disp(32, 32), &cfg).unwrap();
        let rmse = crate::metrics::mse(&out.image, &a).sqrt();
        assert!(rmse < 1e-4, "rmse {rmse}");
    }

    #[test]
    fn demodulation_matches_division_at_dots() {
        let p = Pattern::regular(32, 32, 4, 0.7, 1.0, 0.02).unwrap();
        let mut rng = Seed(4).rng();
        let a = Image::from_fn(32, 32, 1, |_, _, _| 0.2 + 0.6 * rng.random::<f64>()).unwrap();
        let noise = NoiseParams::new(0.004, 0.02, 0.0);
        let cap = capture(&a, &p, 2.0, &noise, 9);
        let cfg = ReconConfig { distance: 2.0, tv_weight: 0.0, ..Default::default() };
        let x0 = demodulate(&cap, &p, &zero_disp(32, 32), &cfg).unwrap();
        for d in p.dots() {
            let oracle = (cap.get(d.y, d.x, 0) * 4.0 / p.image().get(d.y, d.x, 0)).clamp(0.0, 1.0);
            assert!((x0.get(d.y, d.x, 0) - oracle).abs() < 1e-12);
        }
        // with no prior the solve keeps in-dot pixels at the per-pixel optimum
        let out = solve_image(&cap, &p, &zero_disp(32, 32), &cfg).unwrap();
        for d in p.dots() {
            let oracle = (cap.get(d.y, d.x, 0) * 4.0).clamp(0.0, 1.0);
            assert!((out.image.get(d.y, d.x, 0) - oracle).abs() < 1e-3);
        }
    }

    #[test]
    fn traces_never_increase() {
        for s in 0..5u64 {
            let p = Pattern::regular(24, 24, 4, 0.7, 1.0, 0.02).unwrap();
            let mut rng = Seed(s).rng();
            let a = Image::from_fn(24, 24, 1, |_, _, _| rng.random::<f64>()).unwrap();
            let cap = capture(&a, &p, 4.0, &NoiseParams::new(0.004, 0.02, 0.0005), s);
            let cfg = ReconConfig { distance: 4.0, max_iters: 60, ..Default::default() };
            let out = solve_image(&cap, &p, &zero_disp(24, 24), &cfg).unwrap();
            assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
            assert!(out.image.min() >= 0.0 && out.image.max() <= 1.0);
        }
    }

    #[test]
    fn fixed_step_descends_or_reports_divergence() {
        let p = Pattern::regular(16, 16, 4, 0.7, 1.0, 0.02).unwrap();
        let a = Image::filled(16, 16, 1, 0.5).unwrap();
        let cap = capture(&a, &p, 2.0, &NoiseParams::new(0.01, 0.0, 0.0), 1);
        let cfg = ReconConfig {
            distance: 2.0,
            step_rule: StepRule::Fixed { step: 0.5 },
            max_iters: 30,
            ..Default::default()
        };
        let out = solve_image(&cap, &p, &zero_disp(16, 16), &cfg).unwrap();
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.trace.len() > 1);
    }

    #[test]
    fn rejects_out_of_window_disparity() {
        let p = Pattern::regular(16, 16, 4, 0.0, 1.0, 0.0).unwrap();
        let a = Image::filled(16, 16, 1, 0.5).unwrap();
        let cap = render_clean(
            &a,
            &PlanarMap::filled(16, 16, MapKind::Depth, 1.0).unwrap(),
            &p,
            &CameraRig::new(0.0, 1.0, 1.0, 1.0).unwrap(),
            Attenuation::PerPixel,
        )
        .unwrap();
        let far = PlanarMap::filled(16, 16, MapKind::Disparity, 1.9).unwrap();
        assert!(solve_image(&cap, &p, &far, &ReconConfig::default()).is_err());
    }
}
