use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::grid::Grid;

pub const NOISE: i32 = -1;

/// Points with a cluster label each; labels run over `0..cluster_count()`
/// plus [`NOISE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCloud {
    pub points: Vec<[f64; 3]>,
    pub labels: Vec<i32>,
}

impl LabeledCloud {
    pub fn cluster_count(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn cluster_points(&self, id: usize) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == id as i32)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.cluster_count()];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }
}

/// Density-based clustering. Neighborhoods are closed balls of radius `eps`
/// that include the point itself. Clusters are numbered in order of their
/// lowest-index core point and a border point joins the first cluster that
/// reaches it.
pub fn dbscan(points: &[[f64; 3]], eps: f64, min_pts: usize) -> LabeledCloud {
    let n = points.len();
    let mut labels = vec![NOISE; n];
    let mut visited = vec![false; n];
    let grid = Grid::new(points, eps);
    let mut neighbors = Vec::new();
    let mut cluster = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        grid.within(&points[i], eps, &mut neighbors);
        if neighbors.len() < min_pts {
            continue;
        }
        labels[i] = cluster;
        let mut queue: VecDeque<u32> = neighbors.iter().copied().collect();
        while let Some(j) = queue.pop_front() {
            let j = j as usize;
            if labels[j] == NOISE {
                labels[j] = cluster;
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            grid.within(&points[j], eps, &mut neighbors);
            if neighbors.len() >= min_pts {
                queue.extend(neighbors.iter().copied());
            }
        }
        cluster += 1;
    }
    LabeledCloud {
        points: points.to_vec(),
        labels,
    }
}

/// Median over points of the distance to their `k`-th nearest neighbor.
pub fn median_knn_distance(points: &[[f64; 3]], k: usize) -> Option<f64> {
    if points.len() < 2 || k == 0 {
        return None;
    }
    let grid = Grid::new(points, Grid::auto_cell(points));
    let mut d: Vec<f64> = (0..points.len())
        .map(|i| *grid.knn_distances(i, k).last().expect("at least one neighbor"))
        .collect();
    d.sort_by(f64::total_cmp);
    Some(d[d.len() / 2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_blobs() {
        let mut pts = Vec::new();
        for i in 0..20 {
            let o = (i % 5) as f64 * 0.01;
            pts.push([o, (i / 5) as f64 * 0.01, 0.0]);
            pts.push([1.0 + o, (i / 5) as f64 * 0.01, 0.0]);
        }
        let c = dbscan(&pts, 0.02, 3);
        assert_eq!(c.cluster_count(), 2);
        assert_eq!(c.noise_count(), 0);
        assert_eq!(c.labels[0], 0);
        assert_eq!(c.labels[1], 1);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let c = dbscan(&[[0.5; 3]; 12], 0.1, 10);
        assert!(c.labels.iter().all(|&l| l == 0));
        let c = dbscan(&[[0.5; 3]; 5], 0.1, 10);
        assert!(c.labels.iter().all(|&l| l == NOISE));
    }

    #[test]
    fn isolated_point_is_noise() {
        let mut pts = vec![[0.0; 3]; 6];
        pts.push([5.0, 0.0, 0.0]);
        let c = dbscan(&pts, 0.1, 4);
        assert_eq!(c.labels[6], NOISE);
    }

    #[test]
    fn median_spacing_of_a_line() {
        let pts: Vec<[f64; 3]> = (0..50).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect();
        assert!((median_knn_distance(&pts, 2).unwrap() - 0.1).abs() < 1e-12);
    }
}
