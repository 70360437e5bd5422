//! Joint recovery of the scene image and a sub-pixel disparity map from a
//! single patterned-flash capture.
//!
//! Two classical stages share the image-formation model: blockwise
//! zero-mean NCC against the reference pattern gives disparity, then a
//! box-constrained descent on the photometric objective (data term plus
//! Charbonnier-smoothed TV) gives the image.

mod disparity;
mod fill;
mod joint;
mod objective;
mod solver;
mod uf;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::forward::{CameraRig, NoiseParams};
use crate::image::{Image, PlanarMap};
use crate::pattern::Pattern;

pub use disparity::{estimate_disparity, DisparityEstimate};
pub use fill::inverse_distance_fill;
pub use joint::{joint_reconstruct, RigPrior};
pub use objective::{
    modulation, photometric_gradient, photometric_objective, Censoring, ObjectiveTerms, Problem,
};
pub use solver::{demodulate, solve_image, solve_problem, SolveOutput};
pub use uf::{reconstruct_uf, upsample_bilinear};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    /// Constant step, halved (at most 20 times) only when it would ascend.
    Fixed { step: f64 },
    /// Armijo backtracking with a step that may regrow between iterations.
    Backtracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    /// Matching window side, pixels.
    pub block_size: usize,
    /// Spacing of matching windows, pixels.
    pub block_stride: usize,
    /// Half-width of the disparity search window, pixels.
    pub search_range: f64,
    /// Centre of the disparity search window, pixels.
    pub search_center: f64,
    /// Blocks within this Chebyshev radius pool their NCC curves.
    pub cost_aggregation: usize,
    /// Refine the parabolic sub-pixel estimate by maximizing the NCC of
    /// the bilinearly warped pattern directly.
    pub subpixel_polish: bool,
    /// TV weight.
    pub tv_weight: f64,
    /// Charbonnier smoothing of the TV term.
    pub tv_epsilon: f64,
    pub max_iters: usize,
    pub step_rule: StepRule,
    /// Conjugate-gradient steps per search direction; 0 uses the diagonal
    /// preconditioner only.
    pub cg_iters: usize,
    /// Relative objective decrease below which descent stops.
    pub rel_tol: f64,
    /// Disparity / image alternations.
    pub outer_rounds: usize,
    /// Uniform attenuation distance assumed by the data term.
    pub distance: f64,
    /// Dot-membership threshold as a fraction of the pattern maximum.
    pub threshold_fraction: f64,
    /// Noise model used to whiten the capture before re-matching.
    pub noise: Option<NoiseParams>,
    /// Fit the capture against the expected clamped sensor response under
    /// `noise` rather than the linear prediction. Has no effect without
    /// `noise`.
    pub clamp_aware: bool,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            block_size: 16,
            block_stride: 8,
            search_range: 1.5,
            search_center: 0.0,
            cost_aggregation: 1,
            subpixel_polish: true,
            tv_weight: 1e-5,
            tv_epsilon: 1e-3,
            max_iters: 10,
            step_rule: StepRule::Backtracking,
            cg_iters: 30,
            rel_tol: 1e-6,
            outer_rounds: 2,
            distance: 1.0,
            threshold_fraction: crate::pattern::DEFAULT_THRESHOLD_FRACTION,
            noise: None,
            clamp_aware: false,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.block_size >= 2 && self.block_stride >= 1,
            Error::InvalidArgument("block_size must be >= 2 and block_stride >= 1".into())
        );
        ensure!(
            self.search_range >= 0.0 && self.search_range.is_finite() && self.search_center.is_finite(),
            Error::InvalidArgument(format!("bad search window {} +- {}", self.search_center, self.search_range))
        );
        ensure!(
            self.tv_weight >= 0.0 && self.tv_epsilon > 0.0,
            Error::InvalidArgument("tv_weight must be >= 0 and tv_epsilon > 0".into())
        );
        ensure!(self.outer_rounds >= 1, Error::InvalidArgument("outer_rounds must be >= 1".into()));
        ensure!(
            self.distance > 0.0 && self.distance.is_finite(),
            Error::InvalidArgument(format!("distance must be > 0, got {}", self.distance))
        );
        ensure!(
            self.threshold_fraction > 0.0 && self.threshold_fraction < 1.0,
            Error::InvalidArgument("threshold_fraction must be in (0, 1)".into())
        );
        if let StepRule::Fixed { step } = self.step_rule {
            ensure!(step > 0.0 && step.is_finite(), Error::InvalidArgument("fixed step must be > 0".into()));
        }
        Ok(())
    }

    /// Largest admissible half-width for a lattice of period `m`: a regular
    /// dot array only matches unambiguously within less than half a period.
    pub fn check_unambiguous(&self, period_m: usize) -> Result<()> {
        let limit = period_m as f64 / 2.0;
        ensure!(
            self.search_range < limit,
            Error::InvalidArgument(format!(
                "search range {} is not below the unambiguous range {limit} of period {period_m}",
                self.search_range
            ))
        );
        Ok(())
    }

    /// Centres the search window on the disparity span a rig can produce
    /// between two distances, padded by `margin` pixels.
    pub fn with_rig_window(mut self, rig: &CameraRig, near: f64, far: f64, margin: f64) -> Self {
        let a = rig.disparity_at(near);
        let b = rig.disparity_at(far);
        self.search_center = 0.5 * (a + b);
        self.search_range = 0.5 * (a - b).abs() + margin;
        self
    }

    pub fn window(&self) -> (f64, f64) {
        (self.search_center - self.search_range, self.search_center + self.search_range)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub image_hat: Image,
    pub disparity_hat: PlanarMap,
    pub confidence: PlanarMap,
    /// Objective after every accepted iteration of the final image solve.
    pub objective_trace: Vec<f64>,
    /// Traces of every image solve, one per outer round.
    pub round_traces: Vec<Vec<f64>>,
}

pub(crate) fn check_inputs(capture: &Image, p: &Pattern) -> Result<()> {
    capture.check_plane(p.height(), p.width(), "capture/pattern")
}
