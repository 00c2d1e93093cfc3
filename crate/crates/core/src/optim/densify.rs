//! Adaptive density control: opacity pruning, cloning and splitting.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scene::{unit_quaternion_to_matrix, GaussianScene, GaussianSplat};

/// Scale divisor applied to the children of a split.
pub const SPLIT_FACTOR: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensifyParams {
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    pub split_scale: f64,
    /// Splats whose largest world-space scale exceeds this are pruned.
    pub max_scale: f64,
    pub max_splats: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub before: usize,
    pub after: usize,
    pub pruned: usize,
    pub cloned: usize,
    pub split: usize,
    /// For each splat of the new scene, the old splat whose optimizer state
    /// it inherits; `None` for newly created splats.
    #[serde(skip)]
    pub origin: Vec<Option<usize>>,
}

/// Prunes, clones and splits `scene` in place based on its refinement
/// statistics, then resets the statistics.
///
/// The resulting order is: surviving originals, clones, split children.
pub fn densify_and_prune(scene: &mut GaussianScene, params: &DensifyParams, rng: &mut impl Rng) -> RefinementReport {
    let n = scene.len();
    let keep: Vec<bool> = scene
        .splats
        .iter()
        .map(|s| !(s.opacity() < params.prune_opacity) && s.max_scale() <= params.max_scale && s.is_finite())
        .collect();

    let mut clone = Vec::new();
    let mut split = Vec::new();
    for i in 0..n {
        if !keep[i] || scene.stats.observations.get(i).copied().unwrap_or(0) == 0 {
            continue;
        }
        if scene.stats.mean_gradient(i) > params.grad_threshold {
            if scene.splats[i].max_scale() <= params.split_scale {
                clone.push(i);
            } else {
                split.push(i);
            }
        }
    }

    let survivors = keep.iter().filter(|&&k| k).count();
    let mut budget = params.max_splats.saturating_sub(survivors);
    if clone.len() + split.len() > budget {
        // Clones and splits both add one splat net. Keep the strongest
        // candidates; ties go to the lower index.
        let mut cand: Vec<usize> = clone.iter().chain(&split).copied().collect();
        cand.sort_by(|&a, &b| {
            scene.stats.mean_gradient(b).total_cmp(&scene.stats.mean_gradient(a)).then(a.cmp(&b))
        });
        let mut chosen = vec![false; n];
        for &i in &cand {
            if budget > 0 {
                chosen[i] = true;
                budget -= 1;
            }
        }
        clone.retain(|&i| chosen[i]);
        split.retain(|&i| chosen[i]);
    }

    let mut splats = Vec::with_capacity(survivors + clone.len() + 2 * split.len());
    let mut origin = Vec::with_capacity(splats.capacity());
    let mut is_split = vec![false; n];
    for &i in &split {
        is_split[i] = true;
    }
    for i in 0..n {
        if keep[i] && !is_split[i] {
            splats.push(scene.splats[i].clone());
            origin.push(Some(i));
        }
    }
    for &i in &clone {
        splats.push(scene.splats[i].clone());
        origin.push(None);
    }
    for &i in &split {
        for child in split_children(&scene.splats[i], rng) {
            splats.push(child);
            origin.push(None);
        }
    }

    let report = RefinementReport {
        before: n,
        after: splats.len(),
        pruned: n - survivors,
        cloned: clone.len(),
        split: split.len(),
        origin,
    };
    scene.splats = splats;
    let len = scene.len();
    scene.stats.reset(len);
    report
}

fn split_children(parent: &GaussianSplat, rng: &mut impl Rng) -> [GaussianSplat; 2] {
    let rot = crate::scene::normalize_quaternion(parent.rotation)
        .map(unit_quaternion_to_matrix)
        .unwrap_or_else(|_| nalgebra::Matrix3::identity());
    let scales = Vector3::from(parent.scales());
    std::array::from_fn(|_| {
        let z = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let offset = rot * scales.component_mul(&z);
        let mut child = parent.clone();
        for k in 0..3 {
            child.position[k] += offset[k];
            child.log_scale[k] -= SPLIT_FACTOR.ln();
        }
        child
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(opacities: &[f64], sigma: f64) -> GaussianScene {
        let splats = opacities
            .iter()
            .enumerate()
            .map(|(i, &o)| GaussianSplat::isotropic([i as f64, 0.0, 0.0], sigma, o, [0.5; 3], 0))
            .collect();
        GaussianScene::from_splats(0, splats).unwrap()
    }

    fn params() -> DensifyParams {
        DensifyParams {
            grad_threshold: 2e-4,
            prune_opacity: 0.1,
            split_scale: 0.05,
            max_scale: f64::INFINITY,
            max_splats: 1000,
        }
    }

    #[test]
    fn low_opacity_everywhere_empties_scene() {
        let mut s = scene(&[0.05; 5], 0.01);
        let r = densify_and_prune(&mut s, &params(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(s.is_empty());
        assert_eq!(r.pruned, 5);
    }

    #[test]
    fn no_trigger_leaves_scene_unchanged() {
        let mut s = scene(&[0.9; 4], 0.01);
        let before = s.splats.clone();
        let r = densify_and_prune(&mut s, &params(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s.splats, before);
        assert_eq!((r.pruned, r.cloned, r.split), (0, 0, 0));
        assert_eq!(r.origin, vec![Some(0), Some(1), Some(2), Some(3)]);
    }

    #[test]
    fn small_high_gradient_splat_is_cloned() {
        let mut s = scene(&[0.5, 0.9], 0.01);
        s.stats.grad_accum[0] = 1e-3;
        s.stats.observations[0] = 1;
        let r = densify_and_prune(&mut s, &params(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s.len(), 3);
        assert_eq!(r.cloned, 1);
        assert_eq!(s.splats[2], s.splats[0]);
        assert_eq!(s.stats.observations, vec![0; 3]);
    }

    #[test]
    fn large_high_gradient_splat_is_split() {
        let mut s = scene(&[0.5], 0.2);
        s.stats.grad_accum[0] = 1e-3;
        s.stats.observations[0] = 2;
        let r = densify_and_prune(&mut s, &params(), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!((r.split, s.len()), (1, 2));
        assert_eq!(r.origin, vec![None, None]);
        for child in &s.splats {
            assert!((child.scales()[0] - 0.2 / SPLIT_FACTOR).abs() < 1e-12);
        }
    }

    #[test]
    fn budget_limits_growth() {
        let mut s = scene(&[0.5; 4], 0.01);
        for i in 0..4 {
            s.stats.grad_accum[i] = 1e-3 * (i + 1) as f64;
            s.stats.observations[i] = 1;
        }
        let p = DensifyParams { max_splats: 5, ..params() };
        let r = densify_and_prune(&mut s, &p, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(r.cloned, 1);
        assert_eq!(s.splats[4].position[0], 3.0);
    }
}
