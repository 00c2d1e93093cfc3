use std::time::Instant;

use log::{debug, warn};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, View};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics;
use crate::render::{self, GradientBuffer, RasterOptions};
use crate::scene::{logit, sh, GaussianScene, GaussianSplat, ParamFamily, family_of};

use super::adam::Adam;
use super::config::{TrainConfig, TrainMode};
use super::densify::{densify_and_prune, DensifyParams, RefinementReport};
use super::loss::LossTerms;

/// Result of one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub iteration: u64,
    pub loss: LossTerms,
    pub splats: usize,
    pub background: [f64; 3],
    /// Views of the batch whose mask selected nothing.
    pub skipped_views: usize,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: u64,
    pub loss: f64,
    pub l1: f64,
    pub dssim: f64,
    pub splats: usize,
    pub pruned: usize,
    pub cloned: usize,
    pub split: usize,
    pub wall_time_s: f64,
}

/// Per-view evaluation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub view_id: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// What a rendering is compared against during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTarget {
    /// Render against the unmodified image.
    Full,
    /// Ground truth multiplied by its mask.
    MaskedTarget,
    /// Both render and ground truth multiplied by the mask.
    MaskedBoth,
}

impl EvalTarget {
    /// Masked models are scored only where they were supervised.
    pub fn for_mode(mode: TrainMode) -> Self {
        match mode {
            TrainMode::Baseline => EvalTarget::Full,
            TrainMode::ObjectCentric => EvalTarget::MaskedBoth,
        }
    }
}

pub enum FitEvent<'a> {
    Log(&'a LogRecord),
    Refined { iteration: u64, report: &'a RefinementReport },
    Eval { iteration: u64, scores: &'a [ViewScore] },
    Checkpoint(&'a Trainer<'a>),
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub scene: GaussianScene,
    pub adam: Adam,
    pub log: Vec<LogRecord>,
    pub wall_time_s: f64,
}

fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

/// Learning rate for every offset of the flat per-splat layout.
fn rates_per_offset(config: &TrainConfig, stride: usize, iteration: u64, extent: f64) -> Vec<f64> {
    let position = config.lr.position_at(iteration, config.iterations) * extent;
    (0..stride)
        .map(|i| match family_of(i) {
            ParamFamily::Position => position,
            f => config.lr.for_family(f),
        })
        .collect()
}

/// One Adam step on the averaged gradient of `batch`. The background is drawn
/// from `rng` when randomization is on, else `fixed_background` is used.
/// Densification statistics are accumulated when `track_stats` is set.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    scene: &mut GaussianScene,
    adam: &mut Adam,
    batch: &[&View],
    config: &TrainConfig,
    iteration: u64,
    extent: f64,
    track_stats: bool,
    fixed_background: [f64; 3],
    rng: &mut impl Rng,
) -> Result<StepStats> {
    let background = if config.randomizes_background() {
        [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]
    } else {
        fixed_background
    };
    let active = config.sh_degree.min((iteration / config.sh_increase_every) as usize).min(scene.sh_degree());
    let options = RasterOptions {
        tile_size: config.tile_size,
        sh_degree: Some(active),
        ..RasterOptions::default()
    };
    let stride = scene.param_stride();
    let mut total = GradientBuffer::zeros(scene.len(), stride);
    let mut loss = LossTerms::default();
    let mut skipped = 0;
    let weight = 1.0 / batch.len().max(1) as f64;
    for view in batch {
        let mask = if config.masked() { view.mask.as_ref() } else { None };
        let (terms, grads) = super::backward(
            scene,
            &view.camera,
            &view.image,
            mask,
            config.lambda,
            background,
            &options,
            iteration,
        )?;
        if terms.empty_mask {
            warn!("iteration {iteration}: view {} has an empty mask, skipped", view.id);
            skipped += 1;
            continue;
        }
        loss.total += weight * terms.total;
        loss.l1 += weight * terms.l1;
        loss.dssim += weight * terms.dssim;
        if track_stats {
            for i in 0..scene.len() {
                if grads.visible[i] {
                    scene.stats.grad_accum[i] += grads.mean2d_norm[i];
                    scene.stats.observations[i] += 1;
                }
            }
        }
        total.accumulate(&grads, weight);
    }
    if skipped < batch.len() {
        let lr = rates_per_offset(config, stride, iteration, extent);
        let mut params = scene.flat_params();
        adam.update(&mut params, &total.params, &lr);
        scene.set_flat_params(&params);
    }
    Ok(StepStats {
        iteration,
        loss,
        splats: scene.len(),
        background,
        skipped_views: skipped,
    })
}

/// Renders `view` on `background` and scores it.
pub fn evaluate_view(
    scene: &GaussianScene,
    view: &View,
    background: [f64; 3],
    target: EvalTarget,
) -> Result<(ViewScore, Image)> {
    let out = render::render(scene, &view.camera, background, &RasterOptions::default())?;
    let (render, truth) = match (target, &view.mask) {
        (EvalTarget::Full, _) | (_, None) => (out.rgb, view.image.clone()),
        (EvalTarget::MaskedTarget, Some(m)) => (out.rgb, view.image.masked(m)?),
        (EvalTarget::MaskedBoth, Some(m)) => (out.rgb.masked(m)?, view.image.masked(m)?),
    };
    let render = render.map(|v| v.clamp(0.0, 1.0));
    let score = ViewScore {
        view_id: view.id.clone(),
        psnr: metrics::psnr(&render, &truth)?,
        ssim: metrics::ssim(&render, &truth)?,
    };
    Ok((score, render))
}

/// Initial splats: sparse points when available, else uniform seeds around the
/// cameras' focus. Object-centric training keeps only seeds that project onto
/// the foreground in most training views that see them.
pub fn initialize_scene(dataset: &Dataset, config: &TrainConfig) -> Result<GaussianScene> {
    let mut points: Vec<([f64; 3], [f64; 3])> = dataset.points.iter().map(|p| (p.position, p.color)).collect();
    if points.is_empty() {
        let (center, radius) = dataset.camera_extent();
        let mut rng = iteration_rng(config.seed, u64::MAX);
        let half = 0.5 * radius;
        for _ in 0..config.init_random_points {
            let p: [f64; 3] = std::array::from_fn(|k| center[k] + rng.random_range(-half..half));
            points.push((p, [0.5; 3]));
        }
    }
    if config.masked() {
        let before = points.len();
        points.retain(|(p, _)| mostly_foreground(&dataset.train, p));
        debug!("foreground filter kept {} of {before} initial points", points.len());
    }
    if points.is_empty() {
        return Err(Error::Dataset("no initial points survived initialization".into()));
    }
    let positions: Vec<[f64; 3]> = points.iter().map(|(p, _)| *p).collect();
    let spacing = mean_neighbor_distance(&positions, 3);
    let splats = points
        .iter()
        .zip(spacing)
        .map(|((p, color), d)| {
            let mut s = GaussianSplat::isotropic(*p, d.max(1e-7), config.init_opacity, *color, config.sh_degree);
            s.opacity_logit = logit(config.init_opacity);
            s
        })
        .collect();
    GaussianScene::from_splats(config.sh_degree, splats)
}

/// True when `p` projects onto the foreground in more than half of the masked
/// `views` that see it.
pub fn mostly_foreground<'a>(views: impl IntoIterator<Item = &'a View>, p: &[f64; 3]) -> bool {
    let mut seen = 0;
    let mut fg = 0;
    for view in views {
        let Some(mask) = &view.mask else { continue };
        let cam = &view.camera;
        let pc = cam.to_camera(&Vector3::from(*p));
        if pc.z <= 0.0 {
            continue;
        }
        let [u, v] = cam.project(&pc);
        if !(u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64) {
            continue;
        }
        seen += 1;
        if mask.get(u as usize, v as usize, 0) >= 0.5 {
            fg += 1;
        }
    }
    seen > 0 && 2 * fg > seen
}

/// Mean distance to the `k` nearest other points, brute force.
fn mean_neighbor_distance(points: &[[f64; 3]], k: usize) -> Vec<f64> {
    use rayon::prelude::*;
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = vec![f64::INFINITY; k];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d2 = (0..3).map(|a| (p[a] - q[a]) * (p[a] - q[a])).sum::<f64>();
                if d2 < best[k - 1] {
                    best[k - 1] = d2;
                    best.sort_by(f64::total_cmp);
                }
            }
            let found: Vec<f64> = best.into_iter().filter(|d| d.is_finite()).map(f64::sqrt).collect();
            if found.is_empty() {
                0.01
            } else {
                found.iter().sum::<f64>() / found.len() as f64
            }
        })
        .collect()
}

/// Stateful training loop; iterations are numbered from 1.
pub struct Trainer<'a> {
    pub dataset: &'a Dataset,
    pub config: TrainConfig,
    pub scene: GaussianScene,
    pub adam: Adam,
    /// Last completed iteration.
    pub iteration: u64,
    extent: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self> {
        let scene = {
            check_dataset(dataset, &config)?;
            initialize_scene(dataset, &config)?
        };
        Self::resume(dataset, config, scene, None, 0)
    }

    /// Continues from a saved state; `adam` defaults to fresh moments.
    pub fn resume(
        dataset: &'a Dataset,
        config: TrainConfig,
        mut scene: GaussianScene,
        adam: Option<Adam>,
        iteration: u64,
    ) -> Result<Self> {
        check_dataset(dataset, &config)?;
        let adam = adam.unwrap_or_else(|| Adam::new(scene.len(), scene.param_stride()));
        if adam.len() != scene.len() || adam.stride != scene.param_stride() {
            return Err(Error::DimensionMismatch(format!(
                "optimizer state for {} splats, scene has {}",
                adam.len(),
                scene.len()
            )));
        }
        if scene.stats.observations.len() != scene.len() {
            let n = scene.len();
            scene.stats.reset(n);
        }
        let (_, extent) = dataset.camera_extent();
        Ok(Self {
            dataset,
            config,
            scene,
            adam,
            iteration,
            extent,
        })
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    fn densify_params(&self) -> DensifyParams {
        DensifyParams {
            grad_threshold: self.config.grad_densify_threshold,
            prune_opacity: self.config.prune_opacity_threshold,
            split_scale: self
                .config
                .split_scale_threshold
                .unwrap_or(self.config.percent_dense * self.extent),
            max_scale: self.config.prune_scale_fraction * self.extent,
            max_splats: self.config.max_splats,
        }
    }

    /// Runs the next iteration and any refinement due after it.
    pub fn advance(&mut self) -> Result<(StepStats, Option<RefinementReport>)> {
        let it = self.iteration + 1;
        let cfg = &self.config;
        let mut rng = iteration_rng(cfg.seed, it);
        let view = &self.dataset.train[rng.random_range(0..self.dataset.train.len())];
        let densifying = it < cfg.densify_until;
        let stats = train_step(
            &mut self.scene,
            &mut self.adam,
            &[view],
            cfg,
            it,
            self.extent,
            densifying,
            self.dataset.background,
            &mut rng,
        )?;
        let mut report = None;
        if densifying && it > cfg.warmup_iters && it.is_multiple_of(cfg.refine_every) {
            let params = self.densify_params();
            let r = densify_and_prune(&mut self.scene, &params, &mut rng);
            self.adam.remap(&r.origin);
            report = Some(r);
        }
        self.iteration = it;
        Ok((stats, report))
    }

    pub fn evaluate(&self, target: EvalTarget) -> Result<Vec<ViewScore>> {
        self.dataset
            .test
            .iter()
            .map(|v| evaluate_view(&self.scene, v, self.dataset.background, target).map(|(s, _)| s))
            .collect()
    }

    /// Trains until `config.iterations`, reporting progress to `observer`.
    pub fn run(&mut self, observer: &mut dyn FnMut(FitEvent)) -> Result<Vec<LogRecord>> {
        let start = Instant::now();
        let mut log = Vec::new();
        let eval_target = EvalTarget::for_mode(self.config.mode);
        while self.iteration < self.config.iterations {
            let (stats, report) = self.advance()?;
            let it = stats.iteration;
            let (pruned, cloned, split) = report.as_ref().map_or((0, 0, 0), |r| (r.pruned, r.cloned, r.split));
            let record = LogRecord {
                iteration: it,
                loss: stats.loss.total,
                l1: stats.loss.l1,
                dssim: stats.loss.dssim,
                splats: self.scene.len(),
                pruned,
                cloned,
                split,
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            observer(FitEvent::Log(&record));
            log.push(record);
            if let Some(r) = &report {
                observer(FitEvent::Refined { iteration: it, report: r });
            }
            if self.config.eval_every > 0 && it % self.config.eval_every == 0 && !self.dataset.test.is_empty() {
                let scores = self.evaluate(eval_target)?;
                observer(FitEvent::Eval { iteration: it, scores: &scores });
            }
            if self.config.checkpoint_every > 0 && it % self.config.checkpoint_every == 0 {
                observer(FitEvent::Checkpoint(self));
            }
        }
        Ok(log)
    }
}

fn check_dataset(dataset: &Dataset, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if dataset.train.len() < 2 {
        return Err(Error::Dataset(format!(
            "training needs at least 2 posed views, got {}",
            dataset.train.len()
        )));
    }
    if config.masked() {
        if let Some(v) = dataset.train.iter().find(|v| v.mask.is_none()) {
            return Err(Error::Dataset(format!("object-centric training needs a mask for view {}", v.id)));
        }
    }
    if config.sh_degree > sh::MAX_SH_DEGREE {
        return Err(Error::Config(format!("SH degree {} too large", config.sh_degree)));
    }
    Ok(())
}

/// Initializes from `dataset` and trains for `config.iterations`.
pub fn fit(dataset: &Dataset, config: TrainConfig, observer: &mut dyn FnMut(FitEvent)) -> Result<FitResult> {
    let start = Instant::now();
    let mut trainer = Trainer::new(dataset, config)?;
    let log = trainer.run(observer)?;
    Ok(FitResult {
        scene: trainer.scene,
        adam: trainer.adam,
        log,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
