use super::kdtree::KdTree;
use super::PointCloud;
use crate::error::{Error, Result};

/// Mean nearest-neighbor distance from the smaller cloud to the larger one:
/// D(A, B) = (1/M) Σᵢ min_j ‖aᵢ − bⱼ‖ with |A| = M ≤ |B| = N.
///
/// Arguments are swapped so that A is the smaller cloud; equal sizes are
/// ordered lexicographically by coordinates, making the result symmetric.
pub fn cloud_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (small, large) = if smaller_first(a, b) { (a, b) } else { (b, a) };
    Ok(mean_nearest(small, &KdTree::new(large.points())))
}

/// (1/|A|) Σ_{a∈A} min_b ‖a − b‖ over the points indexed by `tree`.
pub(crate) fn mean_nearest(a: &PointCloud, tree: &KdTree<'_>) -> f64 {
    let sum: f64 = a
        .iter()
        .map(|p| tree.nearest(p).expect("non-empty tree").1.sqrt())
        .sum();
    sum / a.len() as f64
}

/// True when `a` plays the role of the smaller cloud.
pub(crate) fn smaller_first(a: &PointCloud, b: &PointCloud) -> bool {
    if a.len() != b.len() {
        return a.len() < b.len();
    }
    for (p, q) in a.iter().zip(b.iter()) {
        for k in 0..3 {
            match p[k].total_cmp(&q[k]) {
                std::cmp::Ordering::Less => return true,
                std::cmp::Ordering::Greater => return false,
                std::cmp::Ordering::Equal => {}
            }
        }
    }
    true
}
