//! Run configuration files and tabular outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{LogRecord, TrainConfig, ViewScore};
use crate::phenotype::{TraitConfig, TraitReport, CSV_HEADER};

/// Everything a config file can override; missing keys keep their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub train: TrainConfig,
    pub traits: TraitConfig,
}

impl ConfigFile {
    pub fn from_toml(path: &Path, text: &str) -> Result<Self> {
        let cfg: ConfigFile = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].lines().count().max(1));
            Error::Config(format!("{}:{line}: {}", path.display(), e.message()))
        })?;
        cfg.train.validate()?;
        cfg.traits.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(path, &text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, 0, format!("{other:?}")),
    }
}

fn write_rows<S: Serialize>(path: &Path, delimiter: u8, rows: &[S]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Tab-separated training log with a header line.
pub fn write_training_log(path: &Path, log: &[LogRecord]) -> Result<()> {
    write_rows(path, b'\t', log)
}

pub fn read_training_log(path: &Path) -> Result<Vec<LogRecord>> {
    let mut r = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub view_id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
}

impl From<&ViewScore> for EvalRow {
    fn from(s: &ViewScore) -> Self {
        Self {
            view_id: s.view_id.clone(),
            psnr: s.psnr,
            ssim: s.ssim,
            lpips: None,
        }
    }
}

/// One row per view; identical images have PSNR `inf`.
pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    write_csv(path, rows)
}

/// Comma-separated rows with a header taken from the field names.
pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    write_rows(path, b',', rows)
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

pub fn trait_report_toml(report: &TraitReport) -> String {
    toml::to_string_pretty(report).expect("report serializes")
}

pub fn read_trait_report(path: &Path) -> Result<TraitReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::parse(path, 0, e.message().to_string()))
}

pub fn write_traits_csv(path: &Path, reports: &[TraitReport]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for r in reports {
        w.write_record(r.csv_record()).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ground-truth traits for batch evaluation, keyed by plant id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub plant_id: String,
    pub height_cm: f64,
    pub width1_cm: f64,
    pub width2_cm: f64,
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<TruthRow>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

pub fn write_truth_csv(path: &Path, rows: &[TruthRow]) -> Result<()> {
    write_rows(path, b',', rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let p = Path::new("run.toml");
        let cfg = ConfigFile::from_toml(p, "[train]\nlambda = 0.5\nmode = \"baseline\"\n[train.lr]\nopacity = 0.01\n[traits]\nmin_pts = 4\nup = { custom = [0.0, 1.0, 0.0] }\n").unwrap();
        assert_eq!(cfg.train.lambda, 0.5);
        assert_eq!(cfg.train.lr.opacity, 0.01);
        assert_eq!(cfg.train.lr.rotation, crate::optim::LearningRates::default().rotation);
        assert_eq!(cfg.traits.min_pts, 4);
        let back = ConfigFile::from_toml(p, &cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(matches!(ConfigFile::from_toml(p, "[train]\nlambda = 2.0\n"), Err(Error::Config(_))));
        assert!(matches!(ConfigFile::from_toml(p, "[train]\nlamda = 0.1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.tsv");
        let rows = vec![LogRecord {
            iteration: 1,
            loss: 0.5,
            l1: 0.25,
            dssim: 1.5,
            splats: 10,
            pruned: 0,
            cloned: 2,
            split: 1,
            wall_time_s: 0.125,
        }];
        write_training_log(&p, &rows).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("iteration\tloss\t"));
        assert_eq!(read_training_log(&p).unwrap(), rows);
    }

    #[test]
    fn eval_rows_keep_infinity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eval.csv");
        let rows = vec![EvalRow {
            view_id: "a".into(),
            psnr: f64::INFINITY,
            ssim: 1.0,
            lpips: None,
        }];
        write_eval_csv(&p, &rows).unwrap();
        assert_eq!(read_eval_csv(&p).unwrap(), rows);
    }
}
