//! Photometric losses, analytic gradients and the training loop.

mod adam;
mod config;
mod densify;
mod loss;
pub mod ssim;
mod train;

pub use crate::render::GradientBuffer;
pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use config::{LearningRates, TrainConfig, TrainMode};
pub use densify::{densify_and_prune, DensifyParams, RefinementReport, SPLIT_FACTOR};
pub use loss::{loss_masked, loss_unmasked, photometric_loss, LossTerms};
pub use ssim::{ssim, ssim_map, SsimMap};
pub use train::{
    evaluate_view, fit, initialize_scene, mostly_foreground, train_step, EvalTarget, FitEvent, FitResult, LogRecord, StepStats,
    Trainer, ViewScore,
};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::render::{self, RasterOptions};
use crate::scene::{CameraView, GaussianScene};

/// Renders `scene`, evaluates the (optionally masked) loss against `target`
/// and returns the loss together with its gradient for every splat parameter.
#[allow(clippy::too_many_arguments)]
pub fn backward(
    scene: &GaussianScene,
    camera: &CameraView,
    target: &Image,
    mask: Option<&Image>,
    lambda: f64,
    background: [f64; 3],
    options: &RasterOptions,
    iteration: u64,
) -> Result<(LossTerms, GradientBuffer)> {
    let fwd = render::forward(scene, camera, background, options)?;
    let (terms, d_rgb) = photometric_loss(target, mask, &fwd.output.rgb, lambda, true)?;
    if !terms.total.is_finite() {
        return Err(Error::Numerical {
            iteration,
            message: format!("loss evaluated to {}", terms.total),
        });
    }
    let d_rgb = d_rgb.expect("gradient requested");
    let grads = render::backward(scene, camera, &fwd, &d_rgb)?;
    if !grads.is_finite() {
        return Err(Error::Numerical {
            iteration,
            message: "non-finite parameter gradient".into(),
        });
    }
    Ok((terms, grads))
}
