use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{sh, ParamFamily};

/// Which pixels supervise training and what sits behind the splats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Full-image loss against a fixed background.
    Baseline,
    /// Foreground-masked loss with a random background every iteration.
    ObjectCentric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Initial position rate, multiplied by the scene extent.
    pub position: f64,
    /// Position rate reached at the last iteration (log-linear decay).
    pub position_final: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            log_scale: 5e-3,
            opacity: 0.05,
            sh_dc: 2.5e-3,
            sh_rest: 2.5e-3 / 20.0,
        }
    }
}

impl LearningRates {
    pub fn zero() -> Self {
        Self {
            position: 0.0,
            position_final: 0.0,
            rotation: 0.0,
            log_scale: 0.0,
            opacity: 0.0,
            sh_dc: 0.0,
            sh_rest: 0.0,
        }
    }

    /// Position rate at `iteration` of `total`, before extent scaling.
    pub fn position_at(&self, iteration: u64, total: u64) -> f64 {
        if self.position == 0.0 || self.position_final == 0.0 {
            return self.position;
        }
        let t = (iteration as f64 / total.max(1) as f64).clamp(0.0, 1.0);
        (self.position.ln() * (1.0 - t) + self.position_final.ln() * t).exp()
    }

    pub fn for_family(&self, family: ParamFamily) -> f64 {
        match family {
            ParamFamily::Position => self.position,
            ParamFamily::Rotation => self.rotation,
            ParamFamily::LogScale => self.log_scale,
            ParamFamily::Opacity => self.opacity,
            ParamFamily::ShDc => self.sh_dc,
            ParamFamily::ShRest => self.sh_rest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Weight of the D-SSIM term.
    pub lambda: f64,
    pub iterations: u64,
    pub refine_every: u64,
    pub warmup_iters: u64,
    /// No densification at or after this iteration.
    pub densify_until: u64,
    pub grad_densify_threshold: f64,
    pub prune_opacity_threshold: f64,
    /// World-space scale separating clones from splits; `None` uses
    /// `percent_dense` times the scene extent.
    pub split_scale_threshold: Option<f64>,
    pub percent_dense: f64,
    /// Refinement also prunes splats larger than this fraction of the extent.
    pub prune_scale_fraction: f64,
    /// Densification stops adding splats beyond this count.
    pub max_splats: usize,
    pub lr: LearningRates,
    pub sh_degree: usize,
    /// Active SH degree grows by one every this many iterations.
    pub sh_increase_every: u64,
    /// Random background per iteration; `None` follows the mode.
    pub random_background: Option<bool>,
    pub seed: u64,
    /// Seeds drawn when the dataset has no sparse points.
    pub init_random_points: usize,
    pub init_opacity: f64,
    pub tile_size: usize,
    /// Held-out evaluation period; 0 disables it.
    pub eval_every: u64,
    /// Checkpoint period; 0 disables it.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::ObjectCentric,
            lambda: 0.2,
            iterations: 30_000,
            refine_every: 100,
            warmup_iters: 500,
            densify_until: 15_000,
            grad_densify_threshold: 2e-4,
            prune_opacity_threshold: 0.1,
            split_scale_threshold: None,
            percent_dense: 0.01,
            prune_scale_fraction: 0.1,
            max_splats: 1_000_000,
            lr: LearningRates::default(),
            sh_degree: 3,
            sh_increase_every: 1000,
            random_background: None,
            seed: 0,
            init_random_points: 5_000,
            init_opacity: 0.1,
            tile_size: 16,
            eval_every: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn for_mode(mode: TrainMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn masked(&self) -> bool {
        self.mode == TrainMode::ObjectCentric
    }

    pub fn randomizes_background(&self) -> bool {
        self.random_background.unwrap_or(self.masked())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.iterations == 0 {
            return fail("iterations must be positive".into());
        }
        if self.refine_every == 0 {
            return fail("refine_every must be positive".into());
        }
        if self.sh_increase_every == 0 {
            return fail("sh_increase_every must be positive".into());
        }
        for (name, v) in [
            ("grad_densify_threshold", self.grad_densify_threshold),
            ("prune_opacity_threshold", self.prune_opacity_threshold),
            ("percent_dense", self.percent_dense),
            ("prune_scale_fraction", self.prune_scale_fraction),
            ("split_scale_threshold", self.split_scale_threshold.unwrap_or(1.0)),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if self.prune_opacity_threshold >= 1.0 {
            return fail("prune_opacity_threshold must be below 1".into());
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return fail(format!("init_opacity {} outside (0, 1)", self.init_opacity));
        }
        if self.sh_degree > sh::MAX_SH_DEGREE {
            return fail(format!("sh_degree {} exceeds {}", self.sh_degree, sh::MAX_SH_DEGREE));
        }
        if self.tile_size == 0 {
            return fail("tile_size must be positive".into());
        }
        let lr = &self.lr;
        for (name, v) in [
            ("lr.position", lr.position),
            ("lr.position_final", lr.position_final),
            ("lr.rotation", lr.rotation),
            ("lr.log_scale", lr.log_scale),
            ("lr.opacity", lr.opacity),
            ("lr.sh_dc", lr.sh_dc),
            ("lr.sh_rest", lr.sh_rest),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::for_mode(TrainMode::Baseline).validate().unwrap();
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut c = TrainConfig {
            lambda: 1.2,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.lambda = 0.2;
        c.iterations = 0;
        assert!(c.validate().is_err());
        c.iterations = 10;
        c.grad_densify_threshold = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn background_follows_mode() {
        assert!(TrainConfig::for_mode(TrainMode::ObjectCentric).randomizes_background());
        assert!(!TrainConfig::for_mode(TrainMode::Baseline).randomizes_background());
    }

    #[test]
    fn position_rate_decays_log_linearly() {
        let lr = LearningRates::default();
        assert_eq!(lr.position_at(0, 100), lr.position);
        assert!((lr.position_at(100, 100) - lr.position_final).abs() < 1e-18);
        let mid = lr.position_at(50, 100);
        assert!((mid - (lr.position * lr.position_final).sqrt()).abs() < 1e-15);
    }
}
