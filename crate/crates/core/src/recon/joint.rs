use serde::{Deserialize, Serialize};

use super::disparity::estimate_disparity;
use super::objective::modulation;
use super::solver::solve_image;
use super::{check_inputs, ReconConfig, ReconResult};
use crate::error::Result;
use crate::forward::CameraRig;
use crate::image::Image;
use crate::pattern::Pattern;

/// Rig geometry and the depth span the scene is expected to occupy; used to
/// centre the disparity search window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigPrior {
    pub rig: CameraRig,
    pub near: f64,
    pub far: f64,
    /// Padding of the window beyond the rig's disparity span, pixels.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    0.25
}

impl RigPrior {
    pub fn new(rig: CameraRig, near: f64, far: f64) -> Self {
        RigPrior { rig, near, far, margin: default_margin() }
    }
}

/// Capture divided by the modeled per-pixel noise std, so bright dots with
/// large shot noise weigh less when matching.
fn whiten(capture: &Image, model: &Image, cfg: &ReconConfig) -> Result<Image> {
    let Some(noise) = cfg.noise else {
        return Ok(capture.clone());
    };
    let floor = noise.sigma_r.max(1e-6);
    let data = capture
        .data()
        .iter()
        .zip(model.data())
        .map(|(&i, &m)| i / noise.variance(m.max(0.0)).sqrt().max(floor))
        .collect();
    let (h, w, c) = capture.shape();
    Image::new(h, w, c, data)
}

/// Alternates disparity matching and the image solve for
/// `cfg.outer_rounds` rounds. Rounds after the first re-match on the
/// noise-whitened capture when `cfg.noise` is set.
pub fn joint_reconstruct(capture: &Image, p: &Pattern, prior: Option<&RigPrior>, cfg: &ReconConfig) -> Result<ReconResult> {
    check_inputs(capture, p)?;
    let cfg = match prior {
        Some(pr) => cfg.clone().with_rig_window(&pr.rig, pr.near, pr.far, pr.margin),
        None => cfg.clone(),
    };
    cfg.validate()?;
    cfg.check_unambiguous(p.period_m())?;

    let mut est = estimate_disparity(capture, p, &cfg)?;
    let mut round_traces = Vec::with_capacity(cfg.outer_rounds);
    let mut image = solve_image(capture, p, &est.disparity, &cfg)?;
    round_traces.push(image.trace.clone());
    for _ in 1..cfg.outer_rounds {
        let model = modulation(p, &est.disparity, cfg.distance, capture.channels())?;
        let model = Image::new(
            capture.height(),
            capture.width(),
            capture.channels(),
            model.data().iter().zip(image.image.data()).map(|(m, a)| m * a).collect(),
        )?;
        let target = whiten(capture, &model, &cfg)?;
        est = estimate_disparity(&target, p, &cfg)?;
        image = solve_image(capture, p, &est.disparity, &cfg)?;
        round_traces.push(image.trace.clone());
    }
    Ok(ReconResult {
        image_hat: image.image,
        disparity_hat: est.disparity,
        confidence: est.confidence,
        objective_trace: image.trace,
        round_traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{render_clean, render_pf, Attenuation, NoiseParams};
    use crate::image::{MapKind, PlanarMap};
    use crate::recon::solve_image;
    use crate::rng::Seed;

    fn scene(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 1, |y, x, _| {
            (0.5 + 0.3 * ((x as f64) * 0.31).sin() * ((y as f64) * 0.23).cos()).clamp(0.0, 1.0)
        })
        .unwrap()
    }

    #[test]
    fn zero_disparity_composes() {
        let p = Pattern::regular(48, 48, 4, 0.7, 1.0, 0.02).unwrap();
        let a = scene(48, 48);
        let rig = CameraRig::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let depth = PlanarMap::filled(48, 48, MapKind::Depth, 1.0).unwrap();
        let cap = render_clean(&a, &depth, &p, &rig, Attenuation::Uniform { distance: 1.0 }).unwrap();
        let cfg = ReconConfig { outer_rounds: 1, ..Default::default() };
        let out = joint_reconstruct(&cap, &p, None, &cfg).unwrap();
        let direct = solve_image(&cap, &p, &out.disparity_hat, &cfg).unwrap();
        assert_eq!(out.image_hat, direct.image);
        assert!(out.disparity_hat.data().iter().all(|d| d.abs() < 0.05));
    }

    #[test]
    fn sign_flip_mirrors_disparity() {
        let p = Pattern::regular(64, 64, 4, 0.7, 1.0, 0.02).unwrap();
        let a = scene(64, 64);
        let noise = NoiseParams::new(0.002, 0.0, 0.0);
        let depth = PlanarMap::filled(64, 64, MapKind::Depth, 1.0 / 2.2).unwrap();
        let cfg = ReconConfig { noise: Some(noise), ..Default::default() };
        let mut outs = Vec::new();
        for sign in [1.0, -1.0] {
            let rig = CameraRig::new(1.0, 1.0, 1.0, sign).unwrap();
            let cap = render_pf(&a, &depth, &p, &rig, Attenuation::Uniform { distance: 1.0 }, &noise, Seed(3)).unwrap();
            let prior = RigPrior::new(rig, 1.0 / 2.5, 1.0);
            outs.push(joint_reconstruct(&cap, &p, Some(&prior), &cfg).unwrap());
        }
        let (pos, neg) = (&outs[0], &outs[1]);
        assert!((pos.disparity_hat.mean() - 1.2).abs() < 0.1);
        assert!((pos.disparity_hat.mean() + neg.disparity_hat.mean()).abs() < 0.1);
        for t in &pos.round_traces {
            assert!(t.windows(2).all(|w| w[1] <= w[0]));
        }
        assert_eq!(pos.round_traces.len(), 2);
        assert_eq!(pos.objective_trace, *pos.round_traces.last().unwrap());
    }
}
