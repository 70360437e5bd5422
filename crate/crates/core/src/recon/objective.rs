use crate::error::{ensure, Error, Result};
use crate::forward::{warp_by_disparity, NoiseParams};
use crate::image::{Image, PlanarMap};
use crate::pattern::Pattern;

/// Default Charbonnier smoothing of the TV term.
pub const TV_EPSILON: f64 = 1e-3;

/// Per-sample modulation `W_d[P] / D^2`, broadcast to `channels`.
pub fn modulation(p: &Pattern, disparity: &PlanarMap, distance: f64, channels: usize) -> Result<Image> {
    ensure!(
        distance > 0.0 && distance.is_finite(),
        Error::InvalidArgument(format!("attenuation distance must be > 0, got {distance}"))
    );
    let warped = warp_by_disparity(p, disparity)?.broadcast(channels)?;
    let inv = 1.0 / (distance * distance);
    warped.map(|v| v * inv)
}

/// Expected sensor response to a clean level `mu` once Gaussian noise is
/// added and the result clamped to `[0, 1]`. Near black the clamp lifts the
/// mean above `mu`; fitting against this curve instead of `mu` itself keeps
/// dim captures from biasing the solve upward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Censoring {
    /// Signal-independent variance (read plus row noise).
    pub var_fixed: f64,
    /// Shot-noise variance per unit signal.
    pub var_shot: f64,
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl Censoring {
    pub fn from_noise(noise: &NoiseParams) -> Self {
        Censoring {
            var_fixed: noise.sigma_r.powi(2) + noise.sigma_row.powi(2),
            var_shot: noise.sigma_s.powi(2),
        }
    }

    /// `(E[clamp01(mu + n)], d/dmu)`.
    pub fn expect(&self, mu: f64) -> (f64, f64) {
        let var = self.var_fixed + self.var_shot * mu.max(0.0);
        if var < 1e-24 {
            let d = if (0.0..=1.0).contains(&mu) { 1.0 } else { 0.0 };
            return (mu.clamp(0.0, 1.0), d);
        }
        let s = var.sqrt();
        let (a, b) = (-mu / s, (1.0 - mu) / s);
        let (ca, cb) = (norm_cdf(a), norm_cdf(b));
        let (pa, pb) = (norm_pdf(a), norm_pdf(b));
        let e = mu * (cb - ca) + s * (pa - pb) + (1.0 - cb);
        let ds = if mu > 0.0 { self.var_shot / (2.0 * s) } else { 0.0 };
        (e, (cb - ca) + (pa - pb) * ds)
    }

    /// Clean level in `[0, 1]` whose expected response is closest to `y`.
    pub fn invert(&self, y: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        if y <= self.expect(lo).0 {
            return lo;
        }
        if y >= self.expect(hi).0 {
            return hi;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.expect(mid).0 < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub data: f64,
    pub tv: f64,
    pub total: f64,
}

/// `sum (m * a - y)^2 + tv_weight * sum_c sum_px (sqrt(dx^2 + dy^2 + eps^2) - eps)`
/// with forward differences (zero across the last row / column).
///
/// With [`Problem::with_censoring`] the prediction `m * a` in the data term
/// is replaced by its expected clamped response.
#[derive(Debug, Clone)]
pub struct Problem {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub modulation: Vec<f64>,
    pub observed: Vec<f64>,
    pub tv_weight: f64,
    pub tv_epsilon: f64,
    pub censoring: Option<Censoring>,
}

impl Problem {
    pub fn new(modulation: &Image, observed: &Image, tv_weight: f64, tv_epsilon: f64) -> Result<Problem> {
        modulation.check_same_shape(observed, "objective modulation/capture")?;
        ensure!(
            tv_weight >= 0.0 && tv_epsilon > 0.0,
            Error::InvalidArgument("tv_weight must be >= 0 and tv_epsilon > 0".into())
        );
        let (h, w, c) = observed.shape();
        Ok(Problem {
            height: h,
            width: w,
            channels: c,
            modulation: modulation.data().to_vec(),
            observed: observed.data().to_vec(),
            tv_weight,
            tv_epsilon,
            censoring: None,
        })
    }

    pub fn with_censoring(mut self, noise: Option<&NoiseParams>) -> Self {
        self.censoring = noise.map(Censoring::from_noise);
        self
    }

    /// Prediction at sample `i` and its derivative with respect to `x[i]`.
    #[inline]
    fn predict(&self, i: usize, a: f64) -> (f64, f64) {
        let m = self.modulation[i];
        match &self.censoring {
            None => (m * a, m),
            Some(c) => {
                let (e, de) = c.expect(m * a);
                (e, de * m)
            }
        }
    }

    /// Gauss-Newton curvature of the data term, `2 (d pred / d a)^2`.
    pub fn data_curvature(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let (_, j) = self.predict(i, x[i]);
            *o = 2.0 * j * j;
        }
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn terms(&self, x: &[f64]) -> ObjectiveTerms {
        let data: f64 = x
            .iter()
            .zip(&self.observed)
            .enumerate()
            .map(|(i, (&a, y))| {
                let r = self.predict(i, a).0 - y;
                r * r
            })
            .sum();
        let tv = if self.tv_weight > 0.0 { self.tv(x) } else { 0.0 };
        ObjectiveTerms {
            data,
            tv,
            total: data + self.tv_weight * tv,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms(x).total
    }

    fn tv(&self, x: &[f64]) -> f64 {
        let (h, w, c) = (self.height, self.width, self.channels);
        let eps = self.tv_epsilon;
        let mut total = 0.0;
        for y in 0..h {
            for xx in 0..w {
                let i = (y * w + xx) * c;
                for ch in 0..c {
                    let v = x[i + ch];
                    let dx = if xx + 1 < w { x[i + c + ch] - v } else { 0.0 };
                    let dy = if y + 1 < h { x[i + w * c + ch] - v } else { 0.0 };
                    total += (dx * dx + dy * dy + eps * eps).sqrt() - eps;
                }
            }
        }
        total
    }

    /// Objective value; writes the exact gradient into `grad`. When `diag`
    /// is given it receives a diagonal curvature estimate used as a
    /// Jacobi preconditioner.
    pub fn value_grad(&self, x: &[f64], grad: &mut [f64], mut diag: Option<&mut [f64]>) -> f64 {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = 0.0;
        for i in 0..x.len() {
            let (pred, j) = self.predict(i, x[i]);
            let r = pred - self.observed[i];
            data += r * r;
            grad[i] = 2.0 * j * r;
            if let Some(d) = diag.as_deref_mut() {
                d[i] = 2.0 * j * j;
            }
        }
        if self.tv_weight == 0.0 {
            return data;
        }
        let lam = self.tv_weight;
        let eps = self.tv_epsilon;
        let mut tv = 0.0;
        for y in 0..h {
            for xx in 0..w {
                let i = (y * w + xx) * c;
                let has_r = xx + 1 < w;
                let has_d = y + 1 < h;
                for ch in 0..c {
                    let p = i + ch;
                    let v = x[p];
                    let dx = if has_r { x[p + c] - v } else { 0.0 };
                    let dy = if has_d { x[p + w * c] - v } else { 0.0 };
                    let t = (dx * dx + dy * dy + eps * eps).sqrt();
                    tv += t - eps;
                    let gx = lam * dx / t;
                    let gy = lam * dy / t;
                    grad[p] -= gx + gy;
                    if has_r {
                        grad[p + c] += gx;
                    }
                    if has_d {
                        grad[p + w * c] += gy;
                    }
                    if let Some(d) = diag.as_deref_mut() {
                        let k = lam / t;
                        d[p] += 2.0 * k;
                        if has_r {
                            d[p + c] += k;
                        }
                        if has_d {
                            d[p + w * c] += k;
                        }
                    }
                }
            }
        }
        data + lam * tv
    }

    /// Per-sample TV edge weights `tv_weight / t` at `x`, where `t` is the
    /// smoothed gradient magnitude at that sample. They define the
    /// quadratic majorizer of the TV term used by [`Problem::majorizer_apply`].
    pub fn edge_weights(&self, x: &[f64], out: &mut [f64]) {
        let (h, w, c) = (self.height, self.width, self.channels);
        let eps = self.tv_epsilon;
        for y in 0..h {
            for xx in 0..w {
                let i = (y * w + xx) * c;
                for ch in 0..c {
                    let p = i + ch;
                    let v = x[p];
                    let dx = if xx + 1 < w { x[p + c] - v } else { 0.0 };
                    let dy = if y + 1 < h { x[p + w * c] - v } else { 0.0 };
                    out[p] = self.tv_weight / (dx * dx + dy * dy + eps * eps).sqrt();
                }
            }
        }
    }

    /// `out = H v` for the majorizer Hessian
    /// `H = diag(q) + sum_p k_p (e_x e_x^T + e_y e_y^T)`, where `q` is the
    /// data curvature from [`Problem::data_curvature`] (`2 m^2` without
    /// censoring) and `k` the TV edge weights.
    pub fn majorizer_apply(&self, q: &[f64], k: &[f64], v: &[f64], out: &mut [f64]) {
        let (h, w, c) = (self.height, self.width, self.channels);
        for i in 0..v.len() {
            out[i] = q[i] * v[i];
        }
        if self.tv_weight == 0.0 {
            return;
        }
        for y in 0..h {
            for xx in 0..w {
                let i = (y * w + xx) * c;
                for ch in 0..c {
                    let p = i + ch;
                    if xx + 1 < w {
                        let d = k[p] * (v[p + c] - v[p]);
                        out[p] -= d;
                        out[p + c] += d;
                    }
                    if y + 1 < h {
                        let d = k[p] * (v[p + w * c] - v[p]);
                        out[p] -= d;
                        out[p + w * c] += d;
                    }
                }
            }
        }
    }

    /// Diagonal of the majorizer Hessian.
    pub fn majorizer_diag(&self, q: &[f64], k: &[f64], out: &mut [f64]) {
        let (h, w, c) = (self.height, self.width, self.channels);
        out.copy_from_slice(q);
        for y in 0..h {
            for xx in 0..w {
                let i = (y * w + xx) * c;
                for ch in 0..c {
                    let p = i + ch;
                    if xx + 1 < w {
                        out[p] += k[p];
                        out[p + c] += k[p];
                    }
                    if y + 1 < h {
                        out[p] += k[p];
                        out[p + w * c] += k[p];
                    }
                }
            }
        }
    }
}

fn build_problem(
    image_hat: &Image,
    disparity_hat: &PlanarMap,
    capture: &Image,
    p: &Pattern,
    distance: f64,
    tv_weight: f64,
) -> Result<Problem> {
    image_hat.check_same_shape(capture, "image_hat/capture")?;
    ensure!(
        image_hat.data().iter().all(|v| v.is_finite()),
        Error::NonFinite("image_hat")
    );
    let m = modulation(p, disparity_hat, distance, capture.channels())?;
    Problem::new(&m, capture, tv_weight, TV_EPSILON)
}

/// Photometric consistency of `(image_hat, disparity_hat)` with `capture`
/// under uniform attenuation at `distance`, plus the TV prior.
pub fn photometric_objective(
    image_hat: &Image,
    disparity_hat: &PlanarMap,
    capture: &Image,
    p: &Pattern,
    distance: f64,
    tv_weight: f64,
) -> Result<f64> {
    let prob = build_problem(image_hat, disparity_hat, capture, p, distance, tv_weight)?;
    Ok(prob.value(image_hat.data()))
}

/// Exact gradient of [`photometric_objective`] with respect to `image_hat`.
pub fn photometric_gradient(
    image_hat: &Image,
    disparity_hat: &PlanarMap,
    capture: &Image,
    p: &Pattern,
    distance: f64,
    tv_weight: f64,
) -> Result<Image> {
    let prob = build_problem(image_hat, disparity_hat, capture, p, distance, tv_weight)?;
    let mut g = vec![0.0; prob.len()];
    prob.value_grad(image_hat.data(), &mut g, None);
    let (h, w, c) = image_hat.shape();
    Image::new(h, w, c, g)
}
