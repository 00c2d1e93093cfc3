//! Subcommand arguments and implementations.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use log::{debug, info, warn};
use serde::Serialize;

use plantsplat::dataset::{Dataset, View};
use plantsplat::image::Image;
use plantsplat::io::checkpoint::load_checkpoint;
use plantsplat::io::ply::ply_files;
use plantsplat::io::reports::{
    read_truth_csv, trait_report_toml, write_csv, write_eval_csv, write_text, write_training_log, write_traits_csv,
    EvalRow, TruthRow,
};
use plantsplat::io::synth::{read_spec, write_capture};
use plantsplat::io::{load_dataset, prepare_dataset, read_ply, save_checkpoint, write_gray16, write_rgb, write_scene_ply};
use plantsplat::io::{Manifest, PlyFormat, PlyImport};
use plantsplat::metrics::{self, lpips_from_features, FeatureStack, TraitSeries};
use plantsplat::optim::{evaluate_view, mostly_foreground, EvalTarget, FitEvent, TrainConfig, Trainer};
use plantsplat::phenotype::{extract_traits, extract_traits_from_scene, TraitConfig, TraitReport};
use plantsplat::render::{render as render_scene, RasterOptions};
use plantsplat::scene::GaussianScene;
use plantsplat::synth::{generate_dataset, SynthSpec};
use plantsplat::{Error, Result};

use crate::{Globals, RunMode};

pub const DEFAULT_FACTOR: usize = 4;

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub images: PathBuf,
    /// COLMAP text model (`cameras.txt`, `images.txt`, `points3D.txt`).
    #[arg(long)]
    pub colmap: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FACTOR)]
    pub factor: usize,
    /// Fail on frames without an alpha mask.
    #[arg(long)]
    pub require_masks: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Checkpoint directory to continue from. Its config is used unless
    /// `--config` is given.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    /// Checkpoint directory or scene PLY.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest whose cameras are rendered.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitChoice::All)]
    pub split: SplitChoice,
    /// Also write accumulated alpha as 16-bit grayscale.
    #[arg(long)]
    pub alpha: bool,
    /// `r,g,b` in [0, 1]; defaults to the manifest background.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub background: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory of `<view>.render.feat` and `<view>.target.feat` stacks for LPIPS.
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TraitsArgs {
    /// Scene or point PLY, checkpoint directory, or a directory of PLYs.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV with `plant_id,height_cm,width1_cm,width2_cm` for aggregate scores.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Manifest whose camera centers are used for the cube up axis.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// TOML synthetic scene spec; defaults apply to missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PbrArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn prepare(g: &Globals, a: &PrepareArgs) -> Result<()> {
    let m = prepare_dataset(&a.images, &a.colmap, &a.out, a.factor, g.seed.unwrap_or(0), a.require_masks)?;
    info!(
        "prepared {} frames ({} train, {} test)",
        m.frames.len(),
        m.count(plantsplat::io::Split::Train),
        m.count(plantsplat::io::Split::Test)
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalLogRow<'a> {
    iteration: u64,
    view_id: &'a str,
    psnr: f64,
    ssim: f64,
}

pub fn train(g: &Globals, a: &TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.manifest)?;
    let resume = a.resume.as_deref().map(load_checkpoint).transpose()?;
    let mut file = g.config_file()?;
    if g.config.is_none() {
        if let Some(ck) = &resume {
            file.train = ck.config.clone();
        }
    }
    let cfg = &mut file.train;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(m) = g.mode {
        cfg.mode = m.train_mode();
    }
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if let Some(n) = a.checkpoint_every {
        cfg.checkpoint_every = n;
    }
    cfg.validate()?;
    let cfg = cfg.clone();
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_text(&a.out.join("config.toml"), &file.to_toml())?;

    let mut trainer = match resume {
        Some(ck) => {
            if cfg.iterations <= ck.iteration {
                return Err(Error::Config(format!(
                    "checkpoint is at iteration {}, nothing left to reach {}",
                    ck.iteration, cfg.iterations
                )));
            }
            info!("resuming from iteration {}", ck.iteration);
            Trainer::resume(&ds, cfg, ck.scene, Some(ck.adam), ck.iteration)?
        }
        None => Trainer::new(&ds, cfg)?,
    };
    info!("training {} splats in {:?} mode", trainer.scene.len(), trainer.config.mode);

    let ck_root = a.out.join("checkpoints");
    let mut failure: Option<Error> = None;
    let mut evals: Vec<(u64, plantsplat::optim::ViewScore)> = Vec::new();
    let log = trainer.run(&mut |event| match event {
        FitEvent::Log(r) if r.iteration % 100 == 0 => {
            info!("iter {} loss {:.5} splats {}", r.iteration, r.loss, r.splats)
        }
        FitEvent::Refined { iteration, report } => debug!(
            "iter {iteration}: cloned {} split {} pruned {}",
            report.cloned, report.split, report.pruned
        ),
        FitEvent::Eval { iteration, scores } => {
            let mean = scores.iter().map(|s| s.psnr).sum::<f64>() / scores.len() as f64;
            info!("iter {iteration}: held-out PSNR {mean:.2} dB");
            evals.extend(scores.iter().map(|s| (iteration, s.clone())));
        }
        FitEvent::Checkpoint(t) if failure.is_none() => {
            let dir = ck_root.join(format!("iter_{:06}", t.iteration));
            if let Err(e) = save_checkpoint(&dir, &t.scene, &t.adam, t.iteration, &t.config) {
                failure = Some(e);
            }
        }
        _ => {}
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    save_checkpoint(
        &a.out.join("checkpoint"),
        &trainer.scene,
        &trainer.adam,
        trainer.iteration,
        &trainer.config,
    )?;
    write_training_log(&a.out.join("train_log.tsv"), &log)?;
    if !evals.is_empty() {
        let rows: Vec<EvalLogRow> = evals
            .iter()
            .map(|(it, s)| EvalLogRow {
                iteration: *it,
                view_id: &s.view_id,
                psnr: s.psnr,
                ssim: s.ssim,
            })
            .collect();
        write_csv(&a.out.join("eval_log.csv"), &rows)?;
    }
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        info!("loss {:.5} -> {:.5}, {} splats", first.loss, last.loss, last.splats);
    }
    Ok(())
}

/// Scene from a checkpoint directory or a scene PLY, with the training config
/// when there is one.
pub fn load_scene(path: &Path) -> Result<(GaussianScene, Option<TrainConfig>)> {
    if path.is_dir() {
        let ck = load_checkpoint(path)?;
        Ok((ck.scene, Some(ck.config)))
    } else {
        Ok((read_ply(path)?.into_scene(path)?, None))
    }
}

fn view_stem(view: &View) -> String {
    Path::new(&view.id)
        .file_stem()
        .map_or_else(|| view.id.clone(), |s| s.to_string_lossy().into_owned())
}

pub fn render(_g: &Globals, a: &RenderArgs) -> Result<()> {
    let (scene, _) = load_scene(&a.checkpoint)?;
    let ds = load_dataset(&a.manifest)?;
    let background = match &a.background {
        Some(b) => {
            if b.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!("background {b:?} outside [0, 1]")));
            }
            [b[0], b[1], b[2]]
        }
        None => ds.background,
    };
    let views: Vec<&View> = match a.split {
        SplitChoice::Train => ds.train.iter().collect(),
        SplitChoice::Test => ds.test.iter().collect(),
        SplitChoice::All => ds.all_views().collect(),
    };
    for v in &views {
        let out = render_scene(&scene, &v.camera, background, &RasterOptions::default())?;
        let stem = view_stem(v);
        write_rgb(&a.out.join("renders").join(format!("{stem}.png")), &out.rgb)?;
        if a.alpha {
            write_gray16(&a.out.join("alpha").join(format!("{stem}.png")), &out.alpha_acc)?;
        }
    }
    info!("rendered {} views", views.len());
    Ok(())
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Scores a view on the render as it would be saved: clamped and quantized
/// to 8 bits, like the ground truth it is compared with.
fn score_view(scene: &GaussianScene, view: &View, background: [f64; 3], target: EvalTarget) -> Result<(EvalRow, Image)> {
    let (_, render) = evaluate_view(scene, view, background, target)?;
    let render = render.map(quantize);
    let truth = match (target, &view.mask) {
        (EvalTarget::Full, _) | (_, None) => view.image.clone(),
        (_, Some(m)) => view.image.masked(m)?,
    };
    let row = EvalRow {
        view_id: view.id.clone(),
        psnr: metrics::psnr(&render, &truth)?,
        ssim: metrics::ssim(&render, &truth)?,
        lpips: None,
    };
    Ok((row, render))
}

#[derive(Debug, Serialize)]
struct MetricSummary {
    target: String,
    views: usize,
    psnr: f64,
    ssim: f64,
    lpips: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn target_name(t: EvalTarget) -> &'static str {
    match t {
        EvalTarget::Full => "full",
        EvalTarget::MaskedTarget => "masked-target",
        EvalTarget::MaskedBoth => "masked-both",
    }
}

fn require_test_split(ds: &Dataset, manifest: &Path) -> Result<()> {
    if ds.test.is_empty() {
        return Err(Error::Dataset(format!("{} has no test split", manifest.display())));
    }
    Ok(())
}

fn require_test_masks(ds: &Dataset) -> Result<()> {
    match ds.test.iter().find(|v| v.mask.is_none()) {
        Some(v) => Err(Error::MissingMask(PathBuf::from(&v.id))),
        None => Ok(()),
    }
}

/// Scores every test view, writes the compared renders, `eval.csv` and
/// `metrics.toml`, and returns the rows.
fn score_test_views(
    scene: &GaussianScene,
    ds: &Dataset,
    target: EvalTarget,
    out: &Path,
    features: Option<&Path>,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::with_capacity(ds.test.len());
    for v in &ds.test {
        let (mut row, render) = score_view(scene, v, ds.background, target)?;
        let stem = view_stem(v);
        write_rgb(&out.join("renders").join(format!("{stem}.png")), &render)?;
        if let Some(dir) = features {
            let fr = FeatureStack::read(&dir.join(format!("{stem}.render.feat")))?;
            let ft = FeatureStack::read(&dir.join(format!("{stem}.target.feat")))?;
            row.lpips = Some(lpips_from_features(&fr, &ft)?);
        }
        rows.push(row);
    }
    write_eval_csv(&out.join("eval.csv"), &rows)?;
    let summary = MetricSummary {
        target: target_name(target).into(),
        views: rows.len(),
        psnr: mean(rows.iter().map(|r| r.psnr)),
        ssim: mean(rows.iter().map(|r| r.ssim)),
        lpips: features.map(|_| mean(rows.iter().filter_map(|r| r.lpips))),
    };
    write_text(&out.join("metrics.toml"), &toml::to_string_pretty(&summary).expect("summary serializes"))?;
    info!(
        "{} test views ({}): PSNR {:.2} dB, SSIM {:.4}",
        summary.views, summary.target, summary.psnr, summary.ssim
    );
    Ok(rows)
}

pub fn eval(g: &Globals, a: &EvalArgs) -> Result<()> {
    let (scene, config) = load_scene(&a.checkpoint)?;
    let ds = load_dataset(&a.manifest)?;
    require_test_split(&ds, &a.manifest)?;
    let target = match g.mode {
        Some(m) => m.eval_target(),
        None => config.map_or(EvalTarget::Full, |c| EvalTarget::for_mode(c.mode)),
    };
    if g.mode == Some(RunMode::PostBackgroundRemoval) {
        require_test_masks(&ds)?;
    }
    score_test_views(&scene, &ds, target, &a.out, a.features.as_deref())?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct PbrSummary {
    raw_splats: usize,
    kept_splats: usize,
    psnr: f64,
    ssim: f64,
}

pub fn pbr(_g: &Globals, a: &PbrArgs) -> Result<()> {
    let (scene, _) = load_scene(&a.checkpoint)?;
    let ds = load_dataset(&a.manifest)?;
    require_test_split(&ds, &a.manifest)?;
    require_test_masks(&ds)?;
    let rows = score_test_views(&scene, &ds, EvalTarget::MaskedBoth, &a.out, None)?;

    let masked: Vec<&View> = ds.all_views().filter(|v| v.mask.is_some()).collect();
    let kept = scene
        .splats
        .iter()
        .filter(|s| mostly_foreground(masked.iter().copied(), &s.position))
        .cloned()
        .collect();
    let pruned = GaussianScene::from_splats(scene.sh_degree(), kept)?;
    write_scene_ply(&a.out.join("raw.ply"), &scene, PlyFormat::BinaryLittleEndian)?;
    write_scene_ply(&a.out.join("pruned.ply"), &pruned, PlyFormat::BinaryLittleEndian)?;
    let summary = PbrSummary {
        raw_splats: scene.len(),
        kept_splats: pruned.len(),
        psnr: mean(rows.iter().map(|r| r.psnr)),
        ssim: mean(rows.iter().map(|r| r.ssim)),
    };
    write_text(&a.out.join("pbr.toml"), &toml::to_string_pretty(&summary).expect("summary serializes"))?;
    info!("kept {} of {} splats after mask reprojection", pruned.len(), scene.len());
    Ok(())
}

fn camera_centers(manifest: &Path) -> Result<Vec<[f64; 3]>> {
    let m = Manifest::read(manifest)?;
    m.frames
        .iter()
        .map(|f| {
            let c = m.camera_view(f)?.center();
            Ok([c.x, c.y, c.z])
        })
        .collect()
}

fn extract_one(path: &Path, config: &TraitConfig, centers: Option<&[[f64; 3]]>) -> Result<TraitReport> {
    if path.is_dir() {
        let ck = load_checkpoint(path)?;
        return extract_traits_from_scene(&ck.scene, config, centers);
    }
    match read_ply(path)? {
        PlyImport::Scene(s) => extract_traits_from_scene(&s, config, centers),
        PlyImport::Points(p) => extract_traits(&p, config, centers),
    }
}

fn plant_id(path: &Path) -> String {
    let name = if path.is_dir() { path.file_name() } else { path.file_stem() };
    name.map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

#[derive(Debug, Serialize)]
struct FailureRow {
    plant_id: String,
    stage: String,
    error: String,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    trait_name: &'static str,
    n: usize,
    r2: Option<f64>,
    rmse: f64,
    mape: Option<f64>,
    mae: f64,
    accuracy: Option<f64>,
}

fn summary_rows(reports: &[TraitReport], truth: &[TruthRow]) -> Result<Vec<SummaryRow>> {
    let mut pairs = Vec::new();
    for r in reports {
        let id = r.plant_id.as_deref().unwrap_or_default();
        match truth.iter().find(|t| t.plant_id == id) {
            Some(t) => pairs.push((t, r)),
            None => warn!("no ground truth for plant {id}"),
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidSeries("no plant has a ground-truth row".into()));
    }
    let traits: [(&str, fn(&TruthRow) -> f64, fn(&TraitReport) -> f64); 3] = [
        ("height_cm", |t| t.height_cm, |r| r.height_cm),
        ("width1_cm", |t| t.width1_cm, |r| r.width1_cm),
        ("width2_cm", |t| t.width2_cm, |r| r.width2_cm),
    ];
    traits
        .iter()
        .map(|(name, truth_of, est_of)| {
            let series = TraitSeries::new(
                pairs.iter().map(|(t, _)| truth_of(t)).collect(),
                pairs.iter().map(|(_, r)| est_of(r)).collect(),
            )?;
            Ok(SummaryRow {
                trait_name: name,
                n: series.len(),
                r2: series.r2().ok(),
                rmse: series.rmse(),
                mape: series.mape().ok(),
                mae: series.mae(),
                accuracy: series.accuracy().ok(),
            })
        })
        .collect()
}

pub fn traits(g: &Globals, a: &TraitsArgs) -> Result<()> {
    let config = g.config_file()?.traits;
    let centers = a.manifest.as_deref().map(camera_centers).transpose()?;
    let batch = a.input.is_dir() && !a.input.join("state.json").exists();
    let inputs = if batch {
        let files = ply_files(&a.input)?;
        if files.is_empty() {
            return Err(Error::Dataset(format!("no PLY files in {}", a.input.display())));
        }
        files
    } else {
        vec![a.input.clone()]
    };

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for path in &inputs {
        let id = plant_id(path);
        match extract_one(path, &config, centers.as_deref()) {
            Ok(mut r) => {
                r.plant_id = Some(id);
                reports.push(r);
            }
            Err(e) if batch => {
                warn!("{id}: {e}");
                failures.push((id, e));
            }
            Err(e) => return Err(e),
        }
    }
    if reports.is_empty() {
        let (_, e) = failures.swap_remove(0);
        return Err(e);
    }

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    if batch {
        for r in &reports {
            let id = r.plant_id.as_deref().unwrap_or_default();
            write_text(&a.out.join("reports").join(format!("{id}.toml")), &trait_report_toml(r))?;
        }
    } else {
        write_text(&a.out.join("traits.toml"), &trait_report_toml(&reports[0]))?;
    }
    write_traits_csv(&a.out.join("traits.csv"), &reports)?;
    if !failures.is_empty() {
        let rows: Vec<FailureRow> = failures
            .iter()
            .map(|(id, e)| FailureRow {
                plant_id: id.clone(),
                stage: e.stage().map_or_else(String::new, |s| s.to_string()),
                error: e.to_string(),
            })
            .collect();
        write_csv(&a.out.join("failures.csv"), &rows)?;
    }
    if let Some(truth) = &a.truth {
        let rows = summary_rows(&reports, &read_truth_csv(truth)?)?;
        for r in &rows {
            info!("{}: R2 {:?} RMSE {:.3} MAPE {:?}", r.trait_name, r.r2, r.rmse, r.mape);
        }
        write_csv(&a.out.join("summary.csv"), &rows)?;
    }
    info!("measured {} of {} plants", reports.len(), inputs.len());
    Ok(())
}

pub fn synth(g: &Globals, a: &SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => read_spec(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = g.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let capture = generate_dataset(&spec)?;
    let m = write_capture(&a.out, &capture)?;
    info!("wrote {} synthetic frames", m.frames.len());
    Ok(())
}
