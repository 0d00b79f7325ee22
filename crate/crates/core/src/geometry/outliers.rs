//! Outlier filters for merged object clouds: k-nearest-neighbor distance
//! statistics and an isolation forest, both behind [`OutlierFilter`].

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kdtree::KdTree;
use super::PointCloud;
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Mean distance from each point to its `k` nearest other points.
pub fn knn_mean_distances(cloud: &PointCloud, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if cloud.len() <= k {
        return Err(Error::CloudTooSmall {
            got: cloud.len(),
            need: k + 1,
        });
    }
    let tree = KdTree::new(cloud.points());
    Ok(cloud
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = tree.knn(p, k, Some(i));
            nn.iter().map(|(d, _)| d.sqrt()).sum::<f64>() / k as f64
        })
        .collect())
}

/// Drops points whose mean k-NN distance exceeds mean + `stddev_mult`·stddev
/// of that statistic over the cloud.
pub fn remove_outliers_knn(cloud: &PointCloud, k: usize, stddev_mult: f64) -> Result<PointCloud> {
    if !(stddev_mult.is_finite() && stddev_mult >= 0.0) {
        return Err(Error::InvalidParameter(format!("stddev_mult {stddev_mult}")));
    }
    let stats = knn_mean_distances(cloud, k)?;
    let n = stats.len() as f64;
    let mean = stats.iter().sum::<f64>() / n;
    let var = stats.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    let limit = mean + stddev_mult * var.sqrt();
    Ok(cloud.select(|i| stats[i] <= limit))
}

/// Average path length of an unsuccessful search in a binary search tree of `n` items.
fn c_factor(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + 0.577_215_664_901_532_9) - 2.0 * (n - 1.0) / n
        }
    }
}

enum INode {
    External { size: usize },
    Internal { axis: usize, split: f64, left: usize, right: usize },
}

struct ITree {
    nodes: Vec<INode>,
}

impl ITree {
    fn build(cloud: &PointCloud, sample: &mut [usize], limit: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut tree = ITree { nodes: Vec::new() };
        tree.grow(cloud, sample, 0, limit, rng);
        tree
    }

    fn grow(&mut self, cloud: &PointCloud, sample: &mut [usize], depth: usize, limit: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(INode::External { size: sample.len() });
        if depth >= limit || sample.len() <= 1 {
            return id;
        }
        let pts = cloud.points();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in sample.iter() {
            for a in 0..3 {
                lo[a] = lo[a].min(pts[i][a]);
                hi[a] = hi[a].max(pts[i][a]);
            }
        }
        let axes: Vec<usize> = (0..3).filter(|&a| hi[a] > lo[a]).collect();
        if axes.is_empty() {
            return id;
        }
        let axis = axes[rng.random_range(0..axes.len())];
        let split = rng.random_range(lo[axis]..hi[axis]);
        let mut mid = 0;
        for j in 0..sample.len() {
            if pts[sample[j]][axis] < split {
                sample.swap(mid, j);
                mid += 1;
            }
        }
        let (l, r) = sample.split_at_mut(mid);
        let left = self.grow(cloud, l, depth + 1, limit, rng);
        let right = self.grow(cloud, r, depth + 1, limit, rng);
        self.nodes[id] = INode::Internal {
            axis,
            split,
            left,
            right,
        };
        id
    }

    fn path_length(&self, p: &super::Point) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                INode::External { size } => return depth + c_factor(size),
                INode::Internal {
                    axis,
                    split,
                    left,
                    right,
                } => {
                    node = if p[axis] < split { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

/// Isolation-forest anomaly scores in (0, 1]; larger is more anomalous.
pub fn iforest_scores(cloud: &PointCloud, n_trees: usize, subsample: usize, seed: u64) -> Result<Vec<f64>> {
    if n_trees == 0 || subsample < 2 {
        return Err(Error::InvalidParameter(
            "isolation forest needs n_trees ≥ 1 and subsample ≥ 2".into(),
        ));
    }
    if cloud.len() < subsample {
        return Err(Error::CloudTooSmall {
            got: cloud.len(),
            need: subsample,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = (subsample as f64).log2().ceil() as usize;
    let trees: Vec<ITree> = (0..n_trees)
        .map(|_| {
            let mut sample = index::sample(&mut rng, cloud.len(), subsample).into_vec();
            ITree::build(cloud, &mut sample, limit, &mut rng)
        })
        .collect();
    let norm = c_factor(subsample);
    Ok(cloud
        .iter()
        .map(|p| {
            let mean = trees.iter().map(|t| t.path_length(p)).sum::<f64>() / n_trees as f64;
            2f64.powf(-mean / norm)
        })
        .collect())
}

/// Removes the ⌊contamination·n⌋ highest-scoring points.
pub fn remove_outliers_iforest(
    cloud: &PointCloud,
    n_trees: usize,
    subsample: usize,
    contamination: f64,
    seed: u64,
) -> Result<PointCloud> {
    if !(0.0..0.5).contains(&contamination) {
        return Err(Error::InvalidParameter(format!(
            "contamination {contamination} outside [0, 0.5)"
        )));
    }
    let scores = iforest_scores(cloud, n_trees, subsample, seed)?;
    let remove = (contamination * cloud.len() as f64).floor() as usize;
    if remove == 0 {
        return Ok(cloud.clone());
    }
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut drop = vec![false; cloud.len()];
    for &i in &order[..remove] {
        drop[i] = true;
    }
    Ok(cloud.select(|i| !drop[i]))
}

/// Parameters shared by the built-in outlier filters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OutlierParams {
    pub k: usize,
    pub stddev_mult: f64,
    pub n_trees: usize,
    pub subsample: usize,
    pub contamination: f64,
}

impl Default for OutlierParams {
    fn default() -> Self {
        Self {
            k: 10,
            stddev_mult: 2.0,
            n_trees: 100,
            subsample: 256,
            contamination: 0.02,
        }
    }
}

/// A cleaning pass over one merged object cloud.
pub trait OutlierFilter: Send + Sync {
    fn name(&self) -> &'static str;
    /// Returns a subset of `cloud`. Clouds too small for the method pass through.
    fn filter(&self, cloud: &PointCloud, seed: u64) -> Result<PointCloud>;
}

struct KnnFilter {
    k: usize,
    stddev_mult: f64,
}

impl OutlierFilter for KnnFilter {
    fn name(&self) -> &'static str {
        "knn"
    }
    fn filter(&self, cloud: &PointCloud, _seed: u64) -> Result<PointCloud> {
        if cloud.len() <= self.k {
            return Ok(cloud.clone());
        }
        remove_outliers_knn(cloud, self.k, self.stddev_mult)
    }
}

struct IsolationForestFilter {
    n_trees: usize,
    subsample: usize,
    contamination: f64,
}

impl OutlierFilter for IsolationForestFilter {
    fn name(&self) -> &'static str {
        "iforest"
    }
    fn filter(&self, cloud: &PointCloud, seed: u64) -> Result<PointCloud> {
        if cloud.len() < 2 {
            return Ok(cloud.clone());
        }
        let subsample = self.subsample.min(cloud.len());
        remove_outliers_iforest(cloud, self.n_trees, subsample, self.contamination, seed)
    }
}

struct NoFilter;

impl OutlierFilter for NoFilter {
    fn name(&self) -> &'static str {
        "none"
    }
    fn filter(&self, cloud: &PointCloud, _seed: u64) -> Result<PointCloud> {
        Ok(cloud.clone())
    }
}

pub type OutlierRegistry = Registry<dyn OutlierFilter, OutlierParams>;

impl OutlierRegistry {
    /// Registry holding `knn`, `iforest` and `none`.
    pub fn with_builtins() -> Self {
        let mut reg = Registry::new("outlier filter");
        reg.register("knn", |p: &OutlierParams| {
            if p.k == 0 || !(p.stddev_mult.is_finite() && p.stddev_mult >= 0.0) {
                return Err(Error::InvalidParameter(
                    "knn filter needs k ≥ 1 and a non-negative stddev multiplier".into(),
                ));
            }
            Ok(Box::new(KnnFilter {
                k: p.k,
                stddev_mult: p.stddev_mult,
            }) as Box<dyn OutlierFilter>)
        });
        reg.register("iforest", |p: &OutlierParams| {
            if p.n_trees == 0 || p.subsample < 2 || !(0.0..0.5).contains(&p.contamination) {
                return Err(Error::InvalidParameter(
                    "iforest needs n_trees ≥ 1, subsample ≥ 2, contamination in [0, 0.5)".into(),
                ));
            }
            Ok(Box::new(IsolationForestFilter {
                n_trees: p.n_trees,
                subsample: p.subsample,
                contamination: p.contamination,
            }) as Box<dyn OutlierFilter>)
        });
        reg.register("none", |_: &OutlierParams| Ok(Box::new(NoFilter) as Box<dyn OutlierFilter>));
        reg
    }
}
