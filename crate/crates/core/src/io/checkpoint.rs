//! Training checkpoints: `scene.ply` for interchange, `state.json` with the
//! iteration and config, and `state.bin` holding the exact f64 parameters,
//! optimizer moments and refinement counters so training resumes bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Adam, TrainConfig};
use crate::scene::{sh, GaussianScene, GaussianSplat, RefinementStats};

use super::ply::{write_scene_ply, PlyFormat};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PSPLATCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub iteration: u64,
    pub sh_degree: usize,
    pub splats: usize,
    pub adam_step: u64,
    pub config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub scene: GaussianScene,
    pub adam: Adam,
    pub iteration: u64,
    pub config: TrainConfig,
}

fn state_bytes(scene: &GaussianScene, adam: &Adam) -> Vec<u8> {
    let params = scene.flat_params();
    let mut out = Vec::with_capacity(24 + 8 * (3 * params.len() + 2 * scene.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(scene.len() as u64).to_le_bytes());
    out.extend_from_slice(&(scene.param_stride() as u64).to_le_bytes());
    for v in params.iter().chain(&adam.m).chain(&adam.v).chain(&scene.stats.grad_accum) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for o in &scene.stats.observations {
        out.extend_from_slice(&o.to_le_bytes());
    }
    out
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(dir: &Path, scene: &GaussianScene, adam: &Adam, iteration: u64, config: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = CheckpointMeta {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        iteration,
        sh_degree: scene.sh_degree(),
        splats: scene.len(),
        adam_step: adam.step,
        config: config.clone(),
    };
    let mut json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    json.push('\n');
    write(&dir.join("state.json"), json.as_bytes())?;
    write(&dir.join("state.bin"), &state_bytes(scene, adam))?;
    write_scene_ply(&dir.join("scene.ply"), scene, PlyFormat::BinaryLittleEndian)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| Error::Binary {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            message: format!("truncated while reading {what}"),
        })?;
        self.pos = end;
        Ok(chunk.try_into().expect("sized chunk"))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.take::<8>(what).map(f64::from_le_bytes)).collect()
    }
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let meta_path = dir.join("state.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, e.line(), e.to_string()))?;
    if meta.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::Dataset(format!(
            "{}: checkpoint schema {} (expected {CHECKPOINT_SCHEMA_VERSION})",
            meta_path.display(),
            meta.schema_version
        )));
    }
    let bin_path = dir.join("state.bin");
    let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut c = Cursor {
        path: &bin_path,
        bytes: &bytes,
        pos: 0,
    };
    if &c.take::<8>("magic")? != MAGIC {
        return Err(Error::Binary {
            path: bin_path.clone(),
            offset: 0,
            message: "not a checkpoint state file".into(),
        });
    }
    let n = u64::from_le_bytes(c.take::<8>("splat count")?) as usize;
    let stride = u64::from_le_bytes(c.take::<8>("stride")?) as usize;
    let expected = crate::scene::param_stride(meta.sh_degree);
    if n != meta.splats || stride != expected {
        return Err(Error::Binary {
            path: bin_path.clone(),
            offset: 8,
            message: format!("state holds {n} x {stride}, metadata says {} x {expected}", meta.splats),
        });
    }
    let params = c.f64s(n * stride, "parameters")?;
    let m = c.f64s(n * stride, "first moments")?;
    let v = c.f64s(n * stride, "second moments")?;
    let grad_accum = c.f64s(n, "gradient accumulators")?;
    let observations = (0..n)
        .map(|_| c.take::<4>("observation counts").map(u32::from_le_bytes))
        .collect::<Result<Vec<_>>>()?;
    if c.pos != bytes.len() {
        return Err(Error::Binary {
            path: bin_path.clone(),
            offset: c.pos as u64,
            message: "trailing bytes".into(),
        });
    }
    let template = GaussianSplat {
        position: [0.0; 3],
        rotation: [1.0, 0.0, 0.0, 0.0],
        log_scale: [0.0; 3],
        opacity_logit: 0.0,
        sh: vec![[0.0; 3]; sh::coeff_count(meta.sh_degree)],
    };
    let mut scene = GaussianScene::from_splats(meta.sh_degree, vec![template; n])?;
    scene.set_flat_params(&params);
    scene.stats = RefinementStats { grad_accum, observations };
    Ok(Checkpoint {
        scene,
        adam: Adam {
            stride,
            m,
            v,
            step: meta.adam_step,
        },
        iteration: meta.iteration,
        config: meta.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn exact_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut scene = crate::synth::random::random_scene(&mut rng, 5, 2, 1.0);
        scene.stats.grad_accum[3] = 0.125;
        scene.stats.observations[1] = 7;
        let mut adam = Adam::new(5, scene.param_stride());
        adam.m[4] = 1e-300;
        adam.v[9] = std::f64::consts::PI;
        adam.step = 42;
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &scene, &adam, 77, &TrainConfig::default()).unwrap();
        let ck = load_checkpoint(dir.path()).unwrap();
        assert_eq!(ck.scene, scene);
        assert_eq!(ck.adam, adam);
        assert_eq!(ck.iteration, 77);
        assert!(dir.path().join("scene.ply").exists());

        let bin = dir.path().join("state.bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Binary { .. })));
    }
}
