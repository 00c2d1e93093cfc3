//! Uniform hash grid for radius and nearest-neighbor queries.

use std::collections::HashMap;

pub(crate) struct Grid<'a> {
    points: &'a [[f64; 3]],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

impl<'a> Grid<'a> {
    pub fn new(points: &'a [[f64; 3]], cell: f64) -> Self {
        let cell = if cell > 0.0 && cell.is_finite() { cell } else { 1.0 };
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key_for(p, cell)).or_default().push(i as u32);
        }
        Self { points, cell, cells }
    }

    /// Cell size giving a few points per cell for roughly uniform clouds.
    pub fn auto_cell(points: &[[f64; 3]]) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let ext: Vec<f64> = (0..3).map(|k| (hi[k] - lo[k]).max(0.0)).collect();
        let max = ext.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return 1.0;
        }
        // Treat the cloud as a 2D surface spread over its largest extents.
        let mut sorted = ext.clone();
        sorted.sort_by(f64::total_cmp);
        let area = sorted[2] * sorted[1].max(max * 1e-3);
        (4.0 * area / points.len().max(1) as f64).sqrt().max(max * 1e-4)
    }

    fn key_for(p: &[f64; 3], cell: f64) -> [i64; 3] {
        p.map(|v| (v / cell).floor() as i64)
    }

    /// Indices within distance `r` of `q` (inclusive), in ascending order.
    pub fn within(&self, q: &[f64; 3], r: f64, out: &mut Vec<u32>) {
        out.clear();
        let r2 = r * r;
        let lo = Self::key_for(&q.map(|v| v - r), self.cell);
        let hi = Self::key_for(&q.map(|v| v + r), self.cell);
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    if let Some(list) = self.cells.get(&[x, y, z]) {
                        out.extend(list.iter().filter(|&&j| dist2(q, &self.points[j as usize]) <= r2));
                    }
                }
            }
        }
        out.sort_unstable();
    }

    /// Distances to the `k` nearest other points of point `i`, ascending.
    /// Fewer are returned when the cloud is smaller than `k + 1`.
    pub fn knn_distances(&self, i: usize, k: usize) -> Vec<f64> {
        let q = &self.points[i];
        let center = Self::key_for(q, self.cell);
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        let mut ring = 0i64;
        loop {
            let block = (2 * ring + 1).pow(3) as usize;
            if block > 8 * self.cells.len() + 27 {
                // Sparse neighborhood: scanning every point is cheaper than more rings.
                best = (0..self.points.len())
                    .filter(|&j| j != i)
                    .map(|j| dist2(q, &self.points[j]))
                    .collect();
                best.sort_by(f64::total_cmp);
                best.truncate(k);
                break;
            }
            for x in -ring..=ring {
                for y in -ring..=ring {
                    for z in -ring..=ring {
                        if x.abs().max(y.abs()).max(z.abs()) != ring {
                            continue;
                        }
                        let key = [center[0] + x, center[1] + y, center[2] + z];
                        let Some(list) = self.cells.get(&key) else { continue };
                        for &j in list {
                            if j as usize == i {
                                continue;
                            }
                            best.push(dist2(q, &self.points[j as usize]));
                        }
                    }
                }
            }
            best.sort_by(f64::total_cmp);
            best.truncate(k);
            // Everything outside the scanned block is at least `ring * cell` away.
            let covered = ring as f64 * self.cell;
            let done = best.len() == k && best[k - 1] <= covered * covered;
            if done || best.len() + 1 >= self.points.len() {
                break;
            }
            ring += 1;
        }
        best.into_iter().map(f64::sqrt).collect()
    }
}
