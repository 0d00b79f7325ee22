use super::OrientedBox;
use crate::geometry::PointCloud;

pub const GRID_CELLS: usize = 8;

/// Point counts over an 8×8×8 grid aligned to an oriented box.
/// Index order follows the box axes: (length, width, height).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DensityGrid {
    counts: Vec<u32>,
}

impl DensityGrid {
    /// Bins every point; coordinates outside the box are clamped to the
    /// nearest boundary cell, so the counts always sum to the point count.
    pub fn build(points: &PointCloud, bbox: &OrientedBox) -> Self {
        let mut counts = vec![0u32; GRID_CELLS.pow(3)];
        for p in points.iter() {
            let t = bbox.normalized(p);
            let c = t.map(|v| ((v * GRID_CELLS as f64).floor().max(0.0) as usize).min(GRID_CELLS - 1));
            counts[Self::index(c[0], c[1], c[2])] += 1;
        }
        Self { counts }
    }

    /// Grid from raw counts in (i, j, k) order with k fastest.
    pub fn from_counts(counts: Vec<u32>) -> Self {
        assert_eq!(counts.len(), GRID_CELLS.pow(3));
        Self { counts }
    }

    fn index(i: usize, j: usize, k: usize) -> usize {
        (i * GRID_CELLS + j) * GRID_CELLS + k
    }

    pub fn count(&self, i: usize, j: usize, k: usize) -> u32 {
        self.counts[Self::index(i, j, k)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Mean count over non-empty cells; zero if every cell is empty.
    pub fn global_density(&self) -> f64 {
        mean_nonzero(self.counts.iter().copied())
    }

    /// Mean count over non-empty cells of the slab at `layer` along `axis`.
    pub fn slab_density(&self, axis: usize, layer: usize) -> f64 {
        let cells = (0..GRID_CELLS).flat_map(|a| (0..GRID_CELLS).map(move |b| (a, b)));
        mean_nonzero(cells.map(|(a, b)| match axis {
            0 => self.count(layer, a, b),
            1 => self.count(a, layer, b),
            _ => self.count(a, b, layer),
        }))
    }

    /// η per box axis: sqrt(ρ_head·ρ_tail)/ρ_global.
    pub fn confidence(&self) -> [f64; 3] {
        let g = self.global_density();
        if g == 0.0 {
            return [0.0; 3];
        }
        [0, 1, 2].map(|axis| {
            let head = self.slab_density(axis, 0);
            let tail = self.slab_density(axis, GRID_CELLS - 1);
            (head * tail).sqrt() / g
        })
    }
}

fn mean_nonzero(counts: impl Iterator<Item = u32>) -> f64 {
    let (sum, n) = counts
        .filter(|&c| c > 0)
        .fold((0u64, 0u64), |(s, n), c| (s + c as u64, n + 1));
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

/// Per-axis confidence (length, width, height) of `points` within `bbox`.
pub fn dimension_confidence(points: &PointCloud, bbox: &OrientedBox) -> [f64; 3] {
    DensityGrid::build(points, bbox).confidence()
}

/// Per-axis reliability flags: η ≥ threshold.
pub fn select_reliable(confidence: [f64; 3], threshold: f64) -> [bool; 3] {
    confidence.map(|c| c >= threshold)
}
