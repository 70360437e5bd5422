//! PF-vs-UF benchmark: distance sweeps, pattern comparisons and the
//! close-range crossover search.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::forward::{render_clean, render_pf, render_uf, Attenuation, CameraRig, NoiseParams};
use crate::image::{Image, MapKind, PlanarMap};
use crate::metrics::{mae, psnr, ssim, DEFAULT_PEAK};
use crate::pattern::Pattern;
use crate::recon::{joint_reconstruct, reconstruct_uf, ReconConfig, RigPrior};
use crate::rng::Seed;
use crate::snr::{pixel_bin_pf, pixel_bin_uf, to_db};

pub const SWEEP_DISTANCES: [f64; 6] = [8.0, 10.0, 12.0, 14.0, 16.0, 18.0];
/// Closer distances tried when the sweep itself shows no crossover.
pub const PROBE_DISTANCES: [f64; 6] = [6.0, 4.0, 2.0, 1.0, 0.5, 0.25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    PF,
    UF,
}

impl Method {
    pub fn key(self) -> u64 {
        match self {
            Method::PF => 0,
            Method::UF => 1,
        }
    }
}

/// One (scene, method, distance, baseline) cell. Metrics are empty when the
/// cell failed; `status` then carries the error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub pattern: String,
    pub scene: usize,
    pub method: Method,
    pub distance: f64,
    pub baseline: f64,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    /// Disparity MAE in pixels; PF only.
    pub disparity_mae: Option<f64>,
    /// Single-capture binned input-SNR gain of PF over UF, dB.
    pub input_gain_db: Option<f64>,
    pub wall_time_s: f64,
    pub status: String,
}

impl BenchRecord {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepParams {
    pub distances: Vec<f64>,
    pub baseline: f64,
    pub focal_px: f64,
    pub ref_distance: f64,
    pub disparity_sign: f64,
    pub noise: NoiseParams,
    pub recon: ReconConfig,
    /// Padding of the rig-derived disparity search window, pixels.
    pub window_margin: f64,
    pub methods: Vec<Method>,
    pub seed: Seed,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            distances: SWEEP_DISTANCES.to_vec(),
            baseline: 5.0,
            focal_px: 8.0,
            ref_distance: 8.0,
            disparity_sign: 1.0,
            noise: NoiseParams::new(0.004, 0.02, 0.0005),
            recon: ReconConfig { clamp_aware: true, ..ReconConfig::default() },
            window_margin: 0.25,
            methods: vec![Method::PF, Method::UF],
            seed: Seed(0),
        }
    }
}

impl SweepParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.distances.is_empty(), Error::InvalidArgument("no distances".into()));
        ensure!(
            self.distances.iter().all(|&d| d > 0.0 && d.is_finite()),
            Error::InvalidArgument("distances must be > 0".into())
        );
        ensure!(!self.methods.is_empty(), Error::InvalidArgument("no methods".into()));
        self.noise.validate()?;
        self.rig()?;
        self.recon.validate()
    }

    pub fn rig(&self) -> Result<CameraRig> {
        CameraRig::new(self.baseline, self.focal_px, self.ref_distance, self.disparity_sign)
    }

    /// Search-window prior covering every swept distance.
    pub fn prior(&self) -> Result<RigPrior> {
        let rig = self.rig()?;
        let near = self.distances.iter().copied().fold(f64::INFINITY, f64::min).min(self.ref_distance);
        let far = self.distances.iter().copied().fold(0.0, f64::max).max(self.ref_distance);
        Ok(RigPrior { rig, near, far, margin: self.window_margin })
    }
}

/// Bin-level input SNR of a capture against its clean render, dB.
fn binned_snr_db(noisy: &Image, clean: &Image) -> f64 {
    let (mut sig, mut err) = (0.0, 0.0);
    for (n, c) in noisy.data().iter().zip(clean.data()) {
        sig += c;
        err += (n - c) * (n - c);
    }
    let len = clean.data().len() as f64;
    to_db((sig / len) / (err / len).sqrt().max(f64::MIN_POSITIVE))
}

struct CellOutput {
    psnr: f64,
    ssim: f64,
    mae: Option<f64>,
    gain: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    scene: &Image,
    p: &Pattern,
    params: &SweepParams,
    prior: &RigPrior,
    method: Method,
    distance: f64,
    seed: Seed,
) -> Result<CellOutput> {
    let (h, w, _) = scene.shape();
    let rig = prior.rig;
    let depth = PlanarMap::filled(h, w, MapKind::Depth, distance)?;
    let att = Attenuation::Uniform { distance };
    let cfg = ReconConfig {
        distance,
        noise: Some(params.noise),
        ..params.recon.clone()
    };
    // both captures come from the same per-(scene, distance) seeds so the
    // input gain is identical on the PF and UF rows
    let pf_seed = seed.derive(Method::PF.key());
    let uf_seed = seed.derive(Method::UF.key());
    let pf = render_pf(scene, &depth, p, &rig, att, &params.noise, pf_seed)?;
    let uf = render_uf(scene, &depth, p, &rig, att, &params.noise, uf_seed)?;
    let m = p.period_m();
    // disparity only moves the dots, so the input gain is measured on
    // zero-baseline captures from the same seeds, where the reference
    // pattern's dot mask applies as is
    let gain = {
        let flat = CameraRig { baseline: 0.0, ..rig };
        let uniform = p.matched_uniform()?;
        let thr = cfg.threshold_fraction;
        let pf0 = render_pf(scene, &depth, p, &flat, att, &params.noise, pf_seed)?;
        let uf0 = render_uf(scene, &depth, p, &flat, att, &params.noise, uf_seed)?;
        let pf_clean = render_clean(scene, &depth, p, &flat, att)?;
        let uf_clean = render_clean(scene, &depth, &uniform, &flat, att)?;
        binned_snr_db(&pixel_bin_pf(&pf0, p, thr)?.image, &pixel_bin_pf(&pf_clean, p, thr)?.image)
            - binned_snr_db(&pixel_bin_uf(&uf0, m)?.image, &pixel_bin_uf(&uf_clean, m)?.image)
    };
    let (image_hat, mae_px) = match method {
        Method::PF => {
            let out = joint_reconstruct(&pf, p, Some(prior), &cfg)?;
            let truth = PlanarMap::filled(h, w, MapKind::Disparity, rig.disparity_at(distance))?;
            let e = mae(&out.disparity_hat, &truth, None)?;
            (out.image_hat, Some(e))
        }
        Method::UF => (reconstruct_uf(&uf, &p.channel_means(), m, &cfg)?, None),
    };
    Ok(CellOutput {
        psnr: psnr(&image_hat, scene, DEFAULT_PEAK)?,
        ssim: ssim(&image_hat, scene)?,
        mae: mae_px,
        gain,
    })
}

fn check_scenes(scenes: &[Image], p: &Pattern) -> Result<()> {
    ensure!(!scenes.is_empty(), Error::InvalidArgument("empty scene set".into()));
    for s in scenes {
        s.check_plane(p.height(), p.width(), "scene/pattern")?;
    }
    Ok(())
}

/// Renders and reconstructs every (scene, distance, method) cell. Planar
/// scenes sit at the swept distance, so the true disparity is the rig's
/// disparity at that distance. A failing cell is recorded, not fatal.
pub fn run_distance_sweep(scenes: &[Image], p: &Pattern, label: &str, params: &SweepParams) -> Result<Vec<BenchRecord>> {
    sweep_with_prior(scenes, p, label, params, &params.prior()?)
}

fn sweep_with_prior(
    scenes: &[Image],
    p: &Pattern,
    label: &str,
    params: &SweepParams,
    prior: &RigPrior,
) -> Result<Vec<BenchRecord>> {
    params.validate()?;
    check_scenes(scenes, p)?;
    let mut cells = Vec::new();
    for s in 0..scenes.len() {
        for &d in &params.distances {
            for &m in &params.methods {
                cells.push((s, d, m));
            }
        }
    }
    let records = cells
        .into_par_iter()
        .map(|(s, d, method)| {
            let seed = params.seed.derive_all(&[s as u64, d.to_bits()]);
            let t = Instant::now();
            let out = run_cell(&scenes[s], p, params, prior, method, d, seed);
            let wall = t.elapsed().as_secs_f64();
            let mut rec = BenchRecord {
                pattern: label.to_string(),
                scene: s,
                method,
                distance: d,
                baseline: params.baseline,
                psnr_db: None,
                ssim: None,
                disparity_mae: None,
                input_gain_db: None,
                wall_time_s: wall,
                status: "ok".into(),
            };
            match out {
                Ok(o) => {
                    rec.psnr_db = Some(o.psnr);
                    rec.ssim = Some(o.ssim);
                    rec.disparity_mae = o.mae;
                    rec.input_gain_db = Some(o.gain);
                }
                Err(e) => rec.status = format!("error: {e}"),
            }
            rec
        })
        .collect();
    Ok(records)
}

/// Means over successful cells for one (pattern, method, distance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub pattern: String,
    pub method: Method,
    pub distance: f64,
    pub cells: usize,
    pub failed: usize,
    pub mean_psnr_db: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_disparity_mae: Option<f64>,
    pub mean_input_gain_db: Option<f64>,
}

fn mean_of(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

pub fn summarize(records: &[BenchRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, Method, u64), Vec<&BenchRecord>> = BTreeMap::new();
    for r in records {
        // distances are positive, so their bit patterns sort numerically
        groups
            .entry((r.pattern.clone(), r.method, r.distance.to_bits()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((pattern, method, d), rs)| {
            let ok: Vec<&&BenchRecord> = rs.iter().filter(|r| r.ok()).collect();
            SummaryRow {
                pattern,
                method,
                distance: f64::from_bits(d),
                cells: rs.len(),
                failed: rs.len() - ok.len(),
                mean_psnr_db: mean_of(ok.iter().filter_map(|r| r.psnr_db)),
                mean_ssim: mean_of(ok.iter().filter_map(|r| r.ssim)),
                mean_disparity_mae: mean_of(ok.iter().filter_map(|r| r.disparity_mae)),
                mean_input_gain_db: mean_of(ok.iter().filter_map(|r| r.input_gain_db)),
            }
        })
        .collect()
}

/// Mean PF minus mean UF PSNR per distance, ascending in distance.
pub fn psnr_gaps(records: &[BenchRecord]) -> Vec<(f64, f64)> {
    let summary = summarize(records);
    let mut by_d: BTreeMap<u64, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for row in &summary {
        let e = by_d.entry(row.distance.to_bits()).or_default();
        match row.method {
            Method::PF => e.0 = row.mean_psnr_db,
            Method::UF => e.1 = row.mean_psnr_db,
        }
    }
    by_d.into_iter()
        .filter_map(|(d, (pf, uf))| Some((f64::from_bits(d), pf? - uf?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    /// Largest distance at which UF is at least as good as PF.
    pub below: f64,
    /// Next distance, from which PF stays ahead.
    pub above: f64,
    /// Linear interpolation of the zero of the PF-UF gap.
    pub estimate: f64,
}

/// Finds the distance beyond which PF stays ahead of UF, if UF wins (or
/// ties) somewhere closer.
pub fn find_crossover(gaps: &[(f64, f64)]) -> Option<Crossover> {
    let last = gaps.iter().rposition(|&(_, g)| g <= 0.0)?;
    let &(d0, g0) = &gaps[last];
    let &(d1, g1) = gaps.get(last + 1)?;
    let t = if g1 - g0 > 0.0 { -g0 / (g1 - g0) } else { 0.0 };
    Some(Crossover { below: d0, above: d1, estimate: d0 + t * (d1 - d0) })
}

/// Runs closer probe distances (nearest first) until the crossover is
/// bracketed, when the sweep alone does not show one. Returns the crossover,
/// if any, and the probe records that were needed.
///
/// Close-range disparities fall far outside the sweep's search window, so
/// each probe centres its window on the rig disparity at the probe distance,
/// padded by `probe_margin` pixels.
pub fn locate_crossover(
    scenes: &[Image],
    p: &Pattern,
    label: &str,
    params: &SweepParams,
    sweep: &[BenchRecord],
    probes: &[f64],
    probe_margin: f64,
) -> Result<(Option<Crossover>, Vec<BenchRecord>)> {
    let mut all = sweep.to_vec();
    let mut extra = Vec::new();
    if let Some(c) = find_crossover(&psnr_gaps(&all)) {
        return Ok((Some(c), extra));
    }
    let nearest = params.distances.iter().copied().fold(f64::INFINITY, f64::min);
    for &d in probes.iter().filter(|&&d| d < nearest) {
        let probe = SweepParams {
            distances: vec![d],
            ..params.clone()
        };
        let prior = RigPrior { rig: params.rig()?, near: d, far: d, margin: probe_margin };
        let recs = sweep_with_prior(scenes, p, label, &probe, &prior)?;
        all.extend(recs.iter().cloned());
        extra.extend(recs);
        if let Some(c) = find_crossover(&psnr_gaps(&all)) {
            return Ok((Some(c), extra));
        }
    }
    Ok((None, extra))
}

/// One row per (pattern, distance): mean PF PSNR and the pattern's largest
/// dot gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRow {
    pub pattern: String,
    pub distance: f64,
    pub mean_psnr_db: Option<f64>,
    pub failed: usize,
    pub max_gap: f64,
}

/// Runs the PF arm of the sweep for the regular pattern and each jittered
/// variant (labelled `jitter-<i>`).
pub fn run_pattern_comparison(
    scenes: &[Image],
    regular: &Pattern,
    jittered: &[Pattern],
    params: &SweepParams,
) -> Result<(Vec<PatternRow>, Vec<BenchRecord>)> {
    let pf_only = SweepParams {
        methods: vec![Method::PF],
        ..params.clone()
    };
    let mut named: Vec<(String, &Pattern)> = vec![("regular".into(), regular)];
    named.extend(jittered.iter().enumerate().map(|(i, p)| (format!("jitter-{i}"), p)));
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (label, p) in named {
        let gap = p.max_dot_gap()?;
        let recs = run_distance_sweep(scenes, p, &label, &pf_only)?;
        for s in summarize(&recs) {
            rows.push(PatternRow {
                pattern: label.clone(),
                distance: s.distance,
                mean_psnr_db: s.mean_psnr_db,
                failed: s.failed,
                max_gap: gap,
            });
        }
        records.extend(recs);
    }
    Ok((rows, records))
}
