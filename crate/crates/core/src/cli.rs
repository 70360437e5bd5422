//! Command-line front end.
//!
//! Every subcommand resolves its parameters as defaults, then the
//! `--config` JSON file, then explicit flags, and writes one
//! [`RunManifest`] holding the resolved parameters. `replay` re-runs a
//! manifest.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bench::{
    locate_crossover, run_distance_sweep, run_pattern_comparison, SweepParams,
    PROBE_DISTANCES, SWEEP_DISTANCES,
};
use crate::error::Error;
use crate::forward::{render_pf, render_uf, Attenuation, CameraRig, NoiseParams};
use crate::image::{Image, MapKind, PlanarMap};
use crate::io::{read_image, read_map_pfm, write_json, write_map_pfm, write_pfm, write_png, PngDepth};
use crate::manifest::{manifest_path_for, RunManifest};
use crate::pattern::Pattern;
use crate::recon::{joint_reconstruct, reconstruct_uf, ReconConfig, RigPrior};
use crate::report::emit_report;
use crate::rng::Seed;
use crate::snr::{
    measure_empirical_gain, pixel_bin_pf, pixel_bin_uf, snr_patterned, snr_uniform, snr_uniform_binned,
    theoretical_gain,
};
use crate::synth::{generate_set, read_manifest, write_set, SynthConfig};

/// Exit code for usage and validation errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failures while running.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
    /// The run finished and wrote its outputs, but some work items failed.
    Incomplete(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(Error::InvalidArgument(_) | Error::Shape(_)) => EXIT_USAGE,
            CliError::Run(_) | CliError::Incomplete(_) => EXIT_RUNTIME,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Incomplete(_) => "incomplete",
            CliError::Run(e) => match e {
                Error::Shape(_) => "shape",
                Error::NonFinite(_) => "non_finite",
                Error::InvalidArgument(_) => "invalid_argument",
                Error::Degenerate(_) => "degenerate",
                Error::Diverged(_) => "diverged",
                Error::Io { .. } => "io",
                Error::Format(_) => "format",
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Incomplete(m) => m.clone(),
            CliError::Run(e) => e.to_string(),
        }
    }

    /// One JSON object per line, for the error stream.
    pub fn diagnostic(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "message": self.message(),
            "exit_code": self.exit_code(),
        })
        .to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "pflash", version, about = "Patterned-flash imaging simulation, analysis and reconstruction")]
pub struct Cli {
    /// JSON file with parameters for the subcommand; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Where to write the run manifest (default: next to the output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a regular or jittered dot pattern (PFM plus JSON sidecar).
    Pattern(PatternFlags),
    /// Render a noisy PF or UF capture of a scene.
    Simulate(SimulateFlags),
    /// Closed-form and Monte-Carlo input-SNR analysis.
    Snr(SnrFlags),
    /// Pixel-bin a capture (PF: in-dot mean, UF: box mean).
    Bin(BinFlags),
    /// Recover the scene image (and disparity for PF) from a capture.
    Reconstruct(ReconstructFlags),
    /// PF-vs-UF distance sweep, optional crossover search and pattern comparison.
    Bench(BenchFlags),
    /// Write a procedural scene set.
    Synth(SynthFlags),
    /// Re-run a previous run from its manifest.
    Replay(ReplayFlags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Flash {
    #[default]
    Pf,
    Uf,
}

// ---------------------------------------------------------------- params

fn strip_nulls(v: &mut Value) {
    if let Value::Object(map) = v {
        map.retain(|_, x| !x.is_null());
        for x in map.values_mut() {
            strip_nulls(x);
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Defaults, overlaid by the config file, overlaid by set flags.
fn resolve<P: Serialize + DeserializeOwned + Default, F: Serialize>(config: Option<&Path>, flags: &F) -> CliResult<P> {
    let mut value = serde_json::to_value(P::default()).map_err(|e| usage(e.to_string()))?;
    if let Some(path) = config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let cfg: Value = serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        ensure_object(&cfg, path)?;
        merge(&mut value, cfg);
    }
    let mut over = serde_json::to_value(flags).map_err(|e| usage(e.to_string()))?;
    strip_nulls(&mut over);
    merge(&mut value, over);
    serde_json::from_value(value).map_err(|e| usage(format!("parameters: {e}")))
}

fn ensure_object(v: &Value, path: &Path) -> CliResult<()> {
    if v.is_object() {
        Ok(())
    } else {
        Err(usage(format!("config {} must hold a JSON object", path.display())))
    }
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a PathBuf> {
    p.as_ref().ok_or_else(|| usage(format!("--{flag} is required")))
}

/// Result of one subcommand: the paths it touched and its stdout summary.
struct Outcome {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    /// Main output, used to place the manifest.
    anchor: PathBuf,
    anchor_is_dir: bool,
    summary: Value,
    incomplete: Option<String>,
}

fn noise_from(sigma_r: f64, sigma_s: f64, sigma_row: f64, bits: Option<u32>) -> NoiseParams {
    NoiseParams {
        quantization_bits: bits,
        ..NoiseParams::new(sigma_r, sigma_s, sigma_row)
    }
}

fn parent_dir(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Run(Error::Io { path: dir.into(), source: e }))?;
    }
    Ok(())
}

fn with_ext(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

// ---------------------------------------------------------------- pattern

#[derive(Debug, Args, Serialize)]
pub struct PatternFlags {
    /// Square size; sets both height and width.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Dot pitch M, pixels.
    #[arg(long)]
    period: Option<usize>,
    /// Gaussian dot radius, pixels (0 = single-pixel dots).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    peak: Option<f64>,
    /// Background level between dots.
    #[arg(long)]
    floor: Option<f64>,
    /// Jitter every dot by up to one pixel with this seed.
    #[arg(long)]
    jitter_seed: Option<u64>,
    /// Output PFM; the sidecar goes next to it with a .json extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternParams {
    pub size: Option<usize>,
    pub height: usize,
    pub width: usize,
    pub period: usize,
    pub sigma: f64,
    pub peak: f64,
    pub floor: f64,
    pub jitter_seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for PatternParams {
    fn default() -> Self {
        PatternParams {
            size: None,
            height: 256,
            width: 256,
            period: 4,
            sigma: 0.0,
            peak: 1.0,
            floor: 0.0,
            jitter_seed: None,
            out: None,
        }
    }
}

impl PatternParams {
    pub fn build(&self) -> crate::Result<Pattern> {
        let (h, w) = match self.size {
            Some(s) => (s, s),
            None => (self.height, self.width),
        };
        let base = Pattern::regular(h, w, self.period, self.sigma, self.peak, self.floor)?;
        match self.jitter_seed {
            Some(s) => Pattern::jittered(&base, Seed(s)),
            None => Ok(base),
        }
    }
}

fn run_pattern(p: &PatternParams) -> CliResult<Outcome> {
    let out = require(&p.out, "out")?;
    let pattern = p.build()?;
    parent_dir(out)?;
    pattern.save(out)?;
    let mut summary = serde_json::to_value(pattern.meta()).map_err(|e| usage(e.to_string()))?;
    summary["dots"] = pattern.dots().len().into();
    summary["max_dot_gap"] = pattern.max_dot_gap()?.into();
    Ok(Outcome {
        inputs: vec![],
        outputs: vec![out.clone(), Pattern::sidecar_path(out)],
        anchor: out.clone(),
        anchor_is_dir: false,
        summary,
        incomplete: None,
    })
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Args, Serialize)]
pub struct SimulateFlags {
    /// Scene albedo (PFM or PNG).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Depth map PFM; without it the scene is planar at --distance.
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Pattern PFM with its JSON sidecar.
    #[arg(long)]
    pattern: Option<PathBuf>,
    /// Uniform attenuation distance; without it attenuation is per pixel.
    #[arg(long)]
    distance: Option<f64>,
    #[arg(long, value_enum)]
    flash: Option<Flash>,
    #[arg(long)]
    baseline: Option<f64>,
    #[arg(long)]
    focal_px: Option<f64>,
    #[arg(long)]
    ref_distance: Option<f64>,
    #[arg(long)]
    disparity_sign: Option<f64>,
    #[arg(long)]
    sigma_r: Option<f64>,
    #[arg(long)]
    sigma_s: Option<f64>,
    #[arg(long)]
    sigma_row: Option<f64>,
    #[arg(long)]
    quantization_bits: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output capture PFM (a 16-bit PNG preview and JSON sidecar go next to it).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub scene: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub pattern: Option<PathBuf>,
    pub distance: Option<f64>,
    pub flash: Flash,
    pub baseline: f64,
    pub focal_px: f64,
    pub ref_distance: f64,
    pub disparity_sign: f64,
    pub sigma_r: f64,
    pub sigma_s: f64,
    pub sigma_row: f64,
    pub quantization_bits: Option<u32>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for SimulateParams {
    fn default() -> Self {
        SimulateParams {
            scene: None,
            depth: None,
            pattern: None,
            distance: None,
            flash: Flash::Pf,
            baseline: 5.0,
            focal_px: 8.0,
            ref_distance: 8.0,
            disparity_sign: 1.0,
            sigma_r: 0.004,
            sigma_s: 0.02,
            sigma_row: 0.0005,
            quantization_bits: None,
            seed: 0,
            out: None,
        }
    }
}

fn run_simulate(p: &SimulateParams) -> CliResult<Outcome> {
    let scene_path = require(&p.scene, "scene")?;
    let pattern_path = require(&p.pattern, "pattern")?;
    let out = require(&p.out, "out")?;
    if p.depth.is_none() && p.distance.is_none() {
        return Err(usage("either --depth or --distance is required"));
    }
    let scene = read_image(scene_path)?;
    let pattern = Pattern::load(pattern_path)?;
    let mut inputs = vec![scene_path.clone(), pattern_path.clone()];
    let depth = match &p.depth {
        Some(d) => {
            inputs.push(d.clone());
            read_map_pfm(d, MapKind::Depth)?
        }
        None => PlanarMap::filled(scene.height(), scene.width(), MapKind::Depth, p.distance.unwrap())?,
    };
    let rig = CameraRig::new(p.baseline, p.focal_px, p.ref_distance, p.disparity_sign)?;
    let att = match p.distance {
        Some(distance) => Attenuation::Uniform { distance },
        None => Attenuation::PerPixel,
    };
    let noise = noise_from(p.sigma_r, p.sigma_s, p.sigma_row, p.quantization_bits);
    let capture = match p.flash {
        Flash::Pf => render_pf(&scene, &depth, &pattern, &rig, att, &noise, Seed(p.seed))?,
        Flash::Uf => render_uf(&scene, &depth, &pattern, &rig, att, &noise, Seed(p.seed))?,
    };
    parent_dir(out)?;
    let preview = with_ext(out, ".png");
    let sidecar = with_ext(out, ".json");
    write_pfm(out, &capture)?;
    write_png(&preview, &capture, PngDepth::Sixteen)?;
    write_json(&sidecar, p)?;
    Ok(Outcome {
        inputs,
        outputs: vec![out.clone(), preview, sidecar],
        anchor: out.clone(),
        anchor_is_dir: false,
        summary: serde_json::json!({ "mean": capture.mean(), "max": capture.max() }),
        incomplete: None,
    })
}

// ---------------------------------------------------------------- snr

#[derive(Debug, Args, Serialize)]
pub struct SnrFlags {
    /// Per-pixel UF signal level for the closed-form comparison.
    #[arg(long)]
    signal: Option<f64>,
    /// Dot pitch M for the closed-form comparison.
    #[arg(long)]
    period: Option<usize>,
    /// Scene (PFM or PNG) for the Monte-Carlo comparison.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Pattern PFM for the Monte-Carlo comparison.
    #[arg(long)]
    pattern: Option<PathBuf>,
    #[arg(long)]
    distance: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    sigma_r: Option<f64>,
    #[arg(long)]
    sigma_s: Option<f64>,
    #[arg(long)]
    sigma_row: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for snr.json and the binned image pair.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnrParams {
    pub signal: Option<f64>,
    pub period: usize,
    pub scene: Option<PathBuf>,
    pub pattern: Option<PathBuf>,
    pub distance: f64,
    pub trials: usize,
    pub sigma_r: f64,
    pub sigma_s: f64,
    pub sigma_row: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for SnrParams {
    fn default() -> Self {
        SnrParams {
            signal: None,
            period: 4,
            scene: None,
            pattern: None,
            distance: 8.0,
            trials: 100,
            sigma_r: 0.004,
            sigma_s: 0.02,
            sigma_row: 0.0005,
            seed: 0,
            out: None,
        }
    }
}

fn run_snr(p: &SnrParams) -> CliResult<Outcome> {
    let out = require(&p.out, "out")?;
    if p.signal.is_none() && p.scene.is_none() {
        return Err(usage("give --signal (closed form), --scene with --pattern (Monte Carlo), or both"));
    }
    let mut summary = serde_json::Map::new();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    fs::create_dir_all(out).map_err(|e| CliError::Run(Error::Io { path: out.clone(), source: e }))?;
    if let Some(s) = p.signal {
        let uf = snr_uniform(s, p.sigma_r)?;
        let pf = snr_patterned(s, p.sigma_r, p.period)?;
        let binned = snr_uniform_binned(s, p.sigma_r, p.period)?;
        summary.insert(
            "closed_form".into(),
            serde_json::json!({
                "snr_uniform": uf,
                "snr_patterned": pf,
                "snr_uniform_binned": binned,
                "patterned_over_binned": pf / binned,
                "theoretical_gain": theoretical_gain(1.0 / (p.period * p.period) as f64)?,
            }),
        );
    }
    if let Some(scene_path) = &p.scene {
        let pattern_path = require(&p.pattern, "pattern")?;
        let scene = read_image(scene_path)?;
        let pattern = Pattern::load(pattern_path)?;
        inputs.extend([scene_path.clone(), pattern_path.clone()]);
        let noise = NoiseParams::new(p.sigma_r, p.sigma_s, p.sigma_row);
        let report = measure_empirical_gain(&scene, &pattern, p.distance, &noise, p.trials, Seed(p.seed))?;
        summary.insert("empirical".into(), serde_json::to_value(&report).map_err(|e| usage(e.to_string()))?);
        // one binned pair for side-by-side viewing
        let (h, w, _) = scene.shape();
        let depth = PlanarMap::filled(h, w, MapKind::Depth, p.distance)?;
        let rig = CameraRig::new(0.0, 1.0, p.distance, 1.0)?;
        let att = Attenuation::Uniform { distance: p.distance };
        let pf = render_pf(&scene, &depth, &pattern, &rig, att, &noise, Seed(p.seed).derive(0))?;
        let uf = render_uf(&scene, &depth, &pattern, &rig, att, &noise, Seed(p.seed).derive(1))?;
        let pfb = pixel_bin_pf(&pf, &pattern, crate::pattern::DEFAULT_THRESHOLD_FRACTION)?.image;
        let ufb = pixel_bin_uf(&uf, pattern.period_m())?.image;
        // shared display scale so the two previews compare directly
        let top = pfb.max().max(ufb.max()).max(f64::MIN_POSITIVE);
        for (name, img) in [("pf_binned", &pfb), ("uf_binned", &ufb)] {
            let pfm = out.join(format!("{name}.pfm"));
            let png = out.join(format!("{name}.png"));
            write_pfm(&pfm, img)?;
            write_png(&png, &img.map(|v| (v / top).clamp(0.0, 1.0))?, PngDepth::Sixteen)?;
            outputs.extend([pfm, png]);
        }
    }
    let summary = Value::Object(summary);
    let json = out.join("snr.json");
    write_json(&json, &summary)?;
    outputs.insert(0, json);
    Ok(Outcome {
        inputs,
        outputs,
        anchor: out.clone(),
        anchor_is_dir: true,
        summary,
        incomplete: None,
    })
}

// ---------------------------------------------------------------- bin

#[derive(Debug, Args, Serialize)]
pub struct BinFlags {
    #[arg(long)]
    capture: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Flash>,
    /// Pattern PFM; required for PF, supplies the period for UF.
    #[arg(long)]
    pattern: Option<PathBuf>,
    /// Bin size for UF when no pattern is given.
    #[arg(long)]
    period: Option<usize>,
    /// Dot-membership threshold as a fraction of the pattern maximum.
    #[arg(long)]
    threshold: Option<f64>,
    /// Output PFM.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinParams {
    pub capture: Option<PathBuf>,
    pub method: Flash,
    pub pattern: Option<PathBuf>,
    pub period: Option<usize>,
    pub threshold: f64,
    pub out: Option<PathBuf>,
}

impl Default for BinParams {
    fn default() -> Self {
        BinParams {
            capture: None,
            method: Flash::Pf,
            pattern: None,
            period: None,
            threshold: crate::pattern::DEFAULT_THRESHOLD_FRACTION,
            out: None,
        }
    }
}

fn run_bin(p: &BinParams) -> CliResult<Outcome> {
    let cap_path = require(&p.capture, "capture")?;
    let out = require(&p.out, "out")?;
    let capture = read_image(cap_path)?;
    let mut inputs = vec![cap_path.clone()];
    let pattern = match &p.pattern {
        Some(pp) => {
            inputs.push(pp.clone());
            Some(Pattern::load(pp)?)
        }
        None => None,
    };
    let binned = match p.method {
        Flash::Pf => {
            let pat = pattern.as_ref().ok_or_else(|| usage("--pattern is required for PF binning"))?;
            pixel_bin_pf(&capture, pat, p.threshold)?
        }
        Flash::Uf => {
            let m = p
                .period
                .or(pattern.as_ref().map(|x| x.period_m()))
                .ok_or_else(|| usage("UF binning needs --period or --pattern"))?;
            pixel_bin_uf(&capture, m)?
        }
    };
    parent_dir(out)?;
    write_pfm(out, &binned.image)?;
    let valid = binned.valid.count();
    Ok(Outcome {
        inputs,
        outputs: vec![out.clone()],
        anchor: out.clone(),
        anchor_is_dir: false,
        summary: serde_json::json!({
            "height": binned.image.height(),
            "width": binned.image.width(),
            "valid_cells": valid,
            "mean": binned.image.mean(),
        }),
        incomplete: None,
    })
}

// ---------------------------------------------------------------- reconstruct

/// Reconstruction settings exposed as flags; anything else goes through
/// the `recon` object of the config file.
#[derive(Debug, Args, Serialize)]
pub struct ReconFlags {
    #[arg(long)]
    block_size: Option<usize>,
    /// Half-width of the disparity search, px. Replaced by the rig window
    /// when a baseline and depth range are known (always in `bench`).
    #[arg(long)]
    search_range: Option<f64>,
    /// Centre of the disparity search, px (same caveat as --search-range).
    #[arg(long)]
    search_center: Option<f64>,
    #[arg(long)]
    tv_weight: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    cg_iters: Option<usize>,
    #[arg(long)]
    outer_rounds: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    clamp_aware: Option<bool>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructFlags {
    #[arg(long)]
    capture: Option<PathBuf>,
    #[arg(long)]
    pattern: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Flash>,
    /// Uniform attenuation distance of the capture.
    #[arg(long)]
    distance: Option<f64>,
    /// Rig baseline; with --near/--far it centres the disparity search.
    #[arg(long)]
    baseline: Option<f64>,
    #[arg(long)]
    focal_px: Option<f64>,
    #[arg(long)]
    ref_distance: Option<f64>,
    #[arg(long)]
    disparity_sign: Option<f64>,
    #[arg(long)]
    near: Option<f64>,
    #[arg(long)]
    far: Option<f64>,
    /// Noise model of the capture; enables whitening and clamp-aware fitting.
    #[arg(long)]
    sigma_r: Option<f64>,
    #[arg(long)]
    sigma_s: Option<f64>,
    #[arg(long)]
    sigma_row: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    recon: ReconFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructParams {
    pub capture: Option<PathBuf>,
    pub pattern: Option<PathBuf>,
    pub method: Flash,
    pub distance: f64,
    pub baseline: Option<f64>,
    pub focal_px: f64,
    pub ref_distance: f64,
    pub disparity_sign: f64,
    pub near: Option<f64>,
    pub far: Option<f64>,
    pub sigma_r: Option<f64>,
    pub sigma_s: f64,
    pub sigma_row: f64,
    pub out: Option<PathBuf>,
    pub recon: ReconConfig,
}

impl Default for ReconstructParams {
    fn default() -> Self {
        ReconstructParams {
            capture: None,
            pattern: None,
            method: Flash::Pf,
            distance: 1.0,
            baseline: None,
            focal_px: 8.0,
            ref_distance: 8.0,
            disparity_sign: 1.0,
            near: None,
            far: None,
            sigma_r: None,
            sigma_s: 0.0,
            sigma_row: 0.0,
            out: None,
            recon: ReconConfig::default(),
        }
    }
}

fn run_reconstruct(p: &ReconstructParams) -> CliResult<Outcome> {
    let cap_path = require(&p.capture, "capture")?;
    let pat_path = require(&p.pattern, "pattern")?;
    let out = require(&p.out, "out")?;
    let capture = read_image(cap_path)?;
    let pattern = Pattern::load(pat_path)?;
    let mut cfg = ReconConfig { distance: p.distance, ..p.recon.clone() };
    if let Some(sr) = p.sigma_r {
        cfg.noise = Some(NoiseParams::new(sr, p.sigma_s, p.sigma_row));
    }
    let prior = match (p.baseline, p.near, p.far) {
        (Some(b), near, far) => {
            let rig = CameraRig::new(b, p.focal_px, p.ref_distance, p.disparity_sign)?;
            let near = near.unwrap_or(p.distance);
            let far = far.unwrap_or(p.distance);
            Some(RigPrior::new(rig, near.min(far), near.max(far)))
        }
        (None, None, None) => None,
        _ => return Err(usage("--near/--far need --baseline")),
    };
    fs::create_dir_all(out).map_err(|e| CliError::Run(Error::Io { path: out.clone(), source: e }))?;
    let mut outputs = Vec::new();
    let mut summary = serde_json::Map::new();
    let image = match p.method {
        Flash::Pf => {
            let res = joint_reconstruct(&capture, &pattern, prior.as_ref(), &cfg)?;
            let dpath = out.join("disparity.pfm");
            let cpath = out.join("confidence.pfm");
            let tpath = out.join("trace.csv");
            write_map_pfm(&dpath, &res.disparity_hat)?;
            write_map_pfm(&cpath, &res.confidence)?;
            let mut trace = String::from("round,iteration,objective\n");
            for (r, t) in res.round_traces.iter().enumerate() {
                for (i, v) in t.iter().enumerate() {
                    trace.push_str(&format!("{r},{i},{v:e}\n"));
                }
            }
            fs::write(&tpath, trace).map_err(|e| CliError::Run(Error::Io { path: tpath.clone(), source: e }))?;
            summary.insert("mean_disparity".into(), res.disparity_hat.mean().into());
            summary.insert("final_objective".into(), res.objective_trace.last().copied().unwrap_or(f64::NAN).into());
            outputs.extend([dpath, cpath, tpath]);
            res.image_hat
        }
        Flash::Uf => reconstruct_uf(&capture, &pattern.channel_means(), pattern.period_m(), &cfg)?,
    };
    let ipfm = out.join("image.pfm");
    let ipng = out.join("image.png");
    write_pfm(&ipfm, &image)?;
    write_png(&ipng, &image, PngDepth::Sixteen)?;
    outputs.splice(0..0, [ipfm, ipng]);
    summary.insert("mean".into(), image.mean().into());
    Ok(Outcome {
        inputs: vec![cap_path.clone(), pat_path.clone()],
        outputs,
        anchor: out.clone(),
        anchor_is_dir: true,
        summary: Value::Object(summary),
        incomplete: None,
    })
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Args, Serialize)]
pub struct BenchFlags {
    /// Comma-separated distances.
    #[arg(long, value_delimiter = ',')]
    distances: Option<Vec<f64>>,
    #[arg(long)]
    baseline: Option<f64>,
    /// Number of procedural scenes.
    #[arg(long)]
    scenes: Option<usize>,
    /// Use the full 128-scene set.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    full: Option<bool>,
    /// Scene set written by `synth` (manifest.jsonl) instead of fresh scenes.
    #[arg(long)]
    scene_manifest: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    /// Pattern PFM; default is a generated regular lattice.
    #[arg(long)]
    pattern: Option<PathBuf>,
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    dot_sigma: Option<f64>,
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long)]
    sigma_r: Option<f64>,
    #[arg(long)]
    sigma_s: Option<f64>,
    #[arg(long)]
    sigma_row: Option<f64>,
    /// Probe closer distances for the PF/UF crossover if the sweep has none.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    crossover: Option<bool>,
    /// Also compare the regular pattern against this many jittered ones.
    #[arg(long)]
    jitter_seeds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    recon: ReconFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchParams {
    pub distances: Vec<f64>,
    pub baseline: f64,
    pub scenes: usize,
    pub full: bool,
    pub scene_manifest: Option<PathBuf>,
    pub size: usize,
    pub pattern: Option<PathBuf>,
    pub period: usize,
    pub dot_sigma: f64,
    pub floor: f64,
    pub sigma_r: f64,
    pub sigma_s: f64,
    pub sigma_row: f64,
    pub crossover: bool,
    pub jitter_seeds: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub recon: ReconConfig,
}

impl Default for BenchParams {
    fn default() -> Self {
        let sweep = SweepParams::default();
        BenchParams {
            distances: SWEEP_DISTANCES.to_vec(),
            baseline: sweep.baseline,
            scenes: 32,
            full: false,
            scene_manifest: None,
            size: 256,
            pattern: None,
            period: 4,
            dot_sigma: 0.0,
            floor: 0.0,
            sigma_r: sweep.noise.sigma_r,
            sigma_s: sweep.noise.sigma_s,
            sigma_row: sweep.noise.sigma_row,
            crossover: false,
            jitter_seeds: 0,
            seed: 0,
            out: None,
            recon: sweep.recon,
        }
    }
}

impl BenchParams {
    pub fn sweep(&self) -> SweepParams {
        SweepParams {
            distances: self.distances.clone(),
            baseline: self.baseline,
            noise: NoiseParams::new(self.sigma_r, self.sigma_s, self.sigma_row),
            recon: self.recon.clone(),
            seed: Seed(self.seed),
            ..SweepParams::default()
        }
    }

    pub fn scene_count(&self) -> usize {
        if self.full {
            128
        } else {
            self.scenes
        }
    }

    /// Procedural albedos for the run; seeded from the run seed.
    pub fn make_scenes(&self) -> crate::Result<Vec<Image>> {
        if let Some(m) = &self.scene_manifest {
            let dir = m.parent().unwrap_or(Path::new("."));
            return read_manifest(m)?
                .into_iter()
                .take(self.scene_count())
                .map(|r| crate::io::read_pfm(dir.join(r.albedo)))
                .collect();
        }
        let cfg = SynthConfig {
            count: self.scene_count(),
            height: self.size,
            width: self.size,
            seed: Seed(self.seed).derive(u64::from_le_bytes(*b"scenes\0\0")),
            ..SynthConfig::default()
        };
        Ok(generate_set(&cfg)?.into_iter().map(|s| s.albedo).collect())
    }

    pub fn make_pattern(&self, h: usize, w: usize) -> crate::Result<Pattern> {
        match &self.pattern {
            Some(p) => Pattern::load(p),
            None => Pattern::regular(h, w, self.period, self.dot_sigma, 1.0, self.floor),
        }
    }
}

fn run_bench(p: &BenchParams) -> CliResult<Outcome> {
    let out = require(&p.out, "out")?;
    if p.scene_count() == 0 {
        return Err(usage("--scenes must be at least 1"));
    }
    let sweep = p.sweep();
    sweep.validate()?;
    let scenes = p.make_scenes()?;
    let (h, w) = (scenes[0].height(), scenes[0].width());
    let pattern = p.make_pattern(h, w)?;
    let label = if p.pattern.is_some() { "imported" } else { "regular" };
    let mut records = run_distance_sweep(&scenes, &pattern, label, &sweep)?;
    let mut summary = serde_json::Map::new();
    if p.crossover {
        let (c, extra) = locate_crossover(&scenes, &pattern, label, &sweep, &records, &PROBE_DISTANCES, sweep.window_margin)?;
        records.extend(extra);
        summary.insert("crossover".into(), serde_json::to_value(c).map_err(|e| usage(e.to_string()))?);
    }
    let mut files = emit_report(&records, out)?;
    if p.jitter_seeds > 0 {
        let jittered = (0..p.jitter_seeds)
            .map(|i| Pattern::jittered(&pattern, Seed(p.seed).derive_all(&[u64::from_le_bytes(*b"jitter\0\0"), i as u64])))
            .collect::<crate::Result<Vec<_>>>()?;
        let (rows, recs) = run_pattern_comparison(&scenes, &pattern, &jittered, &sweep)?;
        let cmp = out.join("patterns");
        let f = emit_report(&recs, &cmp)?;
        let table = cmp.join("patterns.csv");
        let mut w = csv::Writer::from_path(&table).map_err(|e| CliError::Run(Error::Format(e.to_string())))?;
        for r in &rows {
            w.serialize(r).map_err(|e| CliError::Run(Error::Format(e.to_string())))?;
        }
        w.flush().map_err(|e| CliError::Run(Error::io(&table, e)))?;
        files.charts.extend(f.charts);
        files.charts.push(table);
        records.extend(recs);
    }
    let failed = records.iter().filter(|r| !r.ok()).count();
    summary.insert("cells".into(), records.len().into());
    summary.insert("failed".into(), failed.into());
    summary.insert("results".into(), files.results.display().to_string().into());
    let mut outputs = vec![files.results, files.timings, files.summary];
    outputs.extend(files.charts);
    Ok(Outcome {
        inputs: p.scene_manifest.iter().chain(&p.pattern).cloned().collect(),
        outputs,
        anchor: out.clone(),
        anchor_is_dir: true,
        summary: Value::Object(summary),
        incomplete: (failed > 0).then(|| format!("{failed} of {} bench cells failed", records.len())),
    })
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Args, Serialize)]
pub struct SynthFlags {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    #[serde(flatten)]
    pub cfg: SynthConfig,
    pub out: Option<PathBuf>,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { cfg: SynthConfig::default(), out: None }
    }
}

fn run_synth(p: &SynthParams) -> CliResult<Outcome> {
    let out = require(&p.out, "out")?;
    p.cfg.validate()?;
    let samples = generate_set(&p.cfg)?;
    let manifest = write_set(out, &samples)?;
    Ok(Outcome {
        inputs: vec![],
        outputs: vec![manifest.clone()],
        anchor: out.clone(),
        anchor_is_dir: true,
        summary: serde_json::json!({ "scenes": samples.len(), "manifest": manifest }),
        incomplete: None,
    })
}

// ---------------------------------------------------------------- replay

#[derive(Debug, Args)]
pub struct ReplayFlags {
    /// Manifest written by an earlier run.
    #[arg(long = "from")]
    from: PathBuf,
}

// ---------------------------------------------------------------- dispatch

fn params_of<T: Serialize>(p: &T) -> CliResult<Value> {
    serde_json::to_value(p).map_err(|e| usage(e.to_string()))
}

fn seed_of(v: &Value) -> Option<u64> {
    v.get("seed").and_then(Value::as_u64)
}

/// Runs one subcommand from resolved parameters.
fn execute(sub: &str, params: Value) -> CliResult<(Value, Outcome)> {
    fn go<P: Serialize + DeserializeOwned>(params: Value, f: fn(&P) -> CliResult<Outcome>) -> CliResult<(Value, Outcome)> {
        let p: P = serde_json::from_value(params).map_err(|e| usage(format!("parameters: {e}")))?;
        let o = f(&p)?;
        Ok((params_of(&p)?, o))
    }
    match sub {
        "pattern" => go::<PatternParams>(params, run_pattern),
        "simulate" => go::<SimulateParams>(params, run_simulate),
        "snr" => go::<SnrParams>(params, run_snr),
        "bin" => go::<BinParams>(params, run_bin),
        "reconstruct" => go::<ReconstructParams>(params, run_reconstruct),
        "bench" => go::<BenchParams>(params, run_bench),
        "synth" => go::<SynthParams>(params, run_synth),
        other => Err(usage(format!("unknown subcommand {other:?}"))),
    }
}

fn resolved(cli: &Cli) -> CliResult<(String, Value)> {
    let cfg = cli.config.as_deref();
    Ok(match &cli.command {
        Command::Pattern(f) => ("pattern".into(), params_of(&resolve::<PatternParams, _>(cfg, f)?)?),
        Command::Simulate(f) => ("simulate".into(), params_of(&resolve::<SimulateParams, _>(cfg, f)?)?),
        Command::Snr(f) => ("snr".into(), params_of(&resolve::<SnrParams, _>(cfg, f)?)?),
        Command::Bin(f) => ("bin".into(), params_of(&resolve::<BinParams, _>(cfg, f)?)?),
        Command::Reconstruct(f) => ("reconstruct".into(), params_of(&resolve::<ReconstructParams, _>(cfg, f)?)?),
        Command::Bench(f) => ("bench".into(), params_of(&resolve::<BenchParams, _>(cfg, f)?)?),
        Command::Synth(f) => ("synth".into(), params_of(&resolve::<SynthParams, _>(cfg, f)?)?),
        Command::Replay(f) => {
            if cli.config.is_some() {
                return Err(usage("replay takes its parameters from the manifest, not --config"));
            }
            let m = RunManifest::read(&f.from)?;
            (m.subcommand, m.params)
        }
    })
}

/// Parses nothing; runs an already parsed command line and writes its
/// manifest. Returns the stdout summary.
pub fn run(cli: &Cli) -> CliResult<Value> {
    if cli.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    let (sub, params) = resolved(cli)?;
    let start = Instant::now();
    let body = || execute(&sub, params.clone());
    let (params, outcome) = match cli.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| usage(format!("thread pool: {e}")))?
            .install(body)?,
        None => body()?,
    };
    let mut manifest = RunManifest::new(&sub, params.clone(), seed_of(&params));
    manifest.inputs = outcome.inputs;
    manifest.outputs = outcome.outputs;
    manifest.jobs = cli.jobs;
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    let path = cli
        .manifest
        .clone()
        .unwrap_or_else(|| manifest_path_for(&outcome.anchor, outcome.anchor_is_dir));
    parent_dir(&path)?;
    manifest.write(&path)?;
    match outcome.incomplete {
        Some(msg) => Err(CliError::Incomplete(msg)),
        None => Ok(serde_json::json!({ "subcommand": sub, "manifest": path, "result": outcome.summary })),
    }
}

/// Full entry point: parse `argv`, run, report. Returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(summary) => {
            let _ = writeln!(std::io::stdout(), "{summary}");
            0
        }
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "{}", e.diagnostic());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"period": 8, "sigma": 0.5, "floor": 0.01}"#).unwrap();
        let cli = Cli::try_parse_from(["pflash", "pattern", "--config", cfg.to_str().unwrap(), "--sigma", "0.7"]).unwrap();
        let Command::Pattern(f) = &cli.command else { panic!() };
        let p: PatternParams = resolve(cli.config.as_deref(), f).unwrap();
        assert_eq!((p.period, p.sigma, p.floor, p.height), (8, 0.7, 0.01, 256));
    }

    #[test]
    fn nested_recon_flags_merge() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"recon": {"block_size": 24, "tv_weight": 0.5}}"#).unwrap();
        let cli = Cli::try_parse_from(["pflash", "bench", "--config", cfg.to_str().unwrap(), "--tv-weight", "0.25"]).unwrap();
        let Command::Bench(f) = &cli.command else { panic!() };
        let p: BenchParams = resolve(cli.config.as_deref(), f).unwrap();
        assert_eq!(p.recon.block_size, 24);
        assert_eq!(p.recon.tv_weight, 0.25);
        assert!(p.recon.clamp_aware);
    }

    #[test]
    fn unknown_config_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"perod": 8}"#).unwrap();
        let cli = Cli::try_parse_from(["pflash", "pattern", "--config", cfg.to_str().unwrap()]).unwrap();
        let Command::Pattern(f) = &cli.command else { panic!() };
        let e = resolve::<PatternParams, _>(cli.config.as_deref(), f).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_USAGE);
    }

    #[test]
    fn diagnostics_are_json() {
        let e = CliError::Run(Error::Degenerate("x".into()));
        let v: Value = serde_json::from_str(&e.diagnostic()).unwrap();
        assert_eq!(v["error"], "degenerate");
        assert_eq!(v["exit_code"], 1);
    }
}
