//! MAP estimation of the metric scale s (mm per reconstruction unit).
//!
//! Each object contributes log φ(s·L), where L are its usable measured
//! dimensions and φ its category size prior marginalized to those dimensions.
//! The total is evaluated on a uniform grid of candidate scales.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dimensions::DimensionEstimate;
use crate::error::{Error, Result};
use crate::metric_tree::{lookup_path, CategoryNode, CategoryPath, Dim, Gmm};

/// Lower bound on a single object's log term.
pub const LOG_FLOOR: f64 = -1e12;
/// Largest grid `optimize_scale` will evaluate.
pub const MAX_GRID_POINTS: usize = 10_000_000;
/// Number of grid steps `auto_window` produces.
pub const AUTO_WINDOW_STEPS: f64 = 10_000.0;

/// One object ready for optimization.
#[derive(Debug, Clone)]
pub struct MeasuredObject {
    id: usize,
    category: CategoryPath,
    dims: Vec<Dim>,
    values: Vec<f64>,
    prior: Gmm,
}

impl MeasuredObject {
    /// `values[i]` is the measurement of `dims[i]`, and `prior` must be over
    /// exactly those dimensions in that order.
    pub fn new(id: usize, category: CategoryPath, dims: Vec<Dim>, values: Vec<f64>, prior: Gmm) -> Result<Self> {
        if dims.is_empty() || dims.len() != values.len() || prior.dims() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: prior.dims(),
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidInput(format!("measured dimension {v} is not positive")));
        }
        Ok(Self {
            id,
            category,
            dims,
            values,
            prior,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn category(&self) -> &CategoryPath {
        &self.category
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn prior(&self) -> &Gmm {
        &self.prior
    }

    /// log φ(s·L), floored at [`LOG_FLOOR`].
    pub fn log_likelihood(&self, s: f64) -> f64 {
        let mut x = [0.0; 3];
        for (xi, v) in x.iter_mut().zip(&self.values) {
            *xi = s * v;
        }
        let ll = self.prior.log_density_unchecked(&x[..self.values.len()]);
        if ll.is_nan() {
            LOG_FLOOR
        } else {
            ll.max(LOG_FLOOR)
        }
    }
}

/// Extracted dimensions of one merged object.
#[derive(Debug, Clone)]
pub struct ObjectDimensions {
    pub id: usize,
    pub category: CategoryPath,
    pub estimate: DimensionEstimate,
}

/// An object left out of optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedObject {
    pub id: usize,
    pub category: CategoryPath,
    pub reason: String,
}

/// Pairs each object's reliable dimensions with its category prior.
///
/// Used dimensions are the reliable ones that the category's mask also
/// prescribes. Objects with none, or whose category has no fitted prior, are
/// returned as dropped.
pub fn build_measured_objects(
    objects: &[ObjectDimensions],
    repo: &CategoryNode,
) -> Result<(Vec<MeasuredObject>, Vec<DroppedObject>)> {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for o in objects {
        let node = lookup_path(repo, &o.category)?;
        let drop = |reason: String| DroppedObject {
            id: o.id,
            category: o.category.clone(),
            reason,
        };
        let Some(prior) = node.prior() else {
            dropped.push(drop(format!(
                "category has {} samples, too few for a prior",
                node.sample_count()
            )));
            continue;
        };
        let mask = node.dim_mask();
        let used = mask.intersect(o.estimate.reliable_mask());
        if used.is_empty() {
            let reliable = o.estimate.reliable_mask();
            dropped.push(drop(if reliable.is_empty() {
                format!("no reliable dimension (confidence {:?})", o.estimate.confidence)
            } else {
                format!("reliable dimensions {{{reliable}}} not prescribed by category mask {{{mask}}}")
            }));
            continue;
        }
        let dims: Vec<Dim> = used.iter().collect();
        let keep: Vec<usize> = dims
            .iter()
            .map(|d| mask.position(*d).expect("used dims lie in the mask"))
            .collect();
        let values: Vec<f64> = dims.iter().map(|d| o.estimate.bbox.extent(*d)).collect();
        let marginal = prior.marginalize(&keep)?;
        kept.push(MeasuredObject::new(o.id, o.category.clone(), dims, values, marginal)?);
    }
    Ok((kept, dropped))
}

fn ordered(objects: &[MeasuredObject]) -> Vec<&MeasuredObject> {
    let mut v: Vec<&MeasuredObject> = objects.iter().collect();
    v.sort_by_key(|o| o.id);
    v
}

fn check_scale(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveScale(s))
    }
}

fn sum_terms(objects: &[&MeasuredObject], s: f64) -> f64 {
    objects.iter().map(|o| o.log_likelihood(s)).sum()
}

/// Σ log φ_i(s·L_i), summed in object-id order.
pub fn log_posterior(objects: &[MeasuredObject], s: f64) -> Result<f64> {
    check_scale(s)?;
    if objects.is_empty() {
        return Err(Error::NoObjects);
    }
    Ok(sum_terms(&ordered(objects), s))
}

/// Candidate grid s_min, s_min + Δs, … ≤ s_max.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleWindow {
    pub s_min: f64,
    pub s_max: f64,
    pub ds: f64,
}

impl ScaleWindow {
    pub fn new(s_min: f64, s_max: f64, ds: f64) -> Result<Self> {
        let w = Self { s_min, s_max, ds };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { s_min, s_max, ds } = *self;
        if !(s_min.is_finite() && s_max.is_finite() && ds.is_finite()) {
            return Err(Error::InvalidWindow("bounds and step must be finite".into()));
        }
        if !(s_min > 0.0 && s_max > s_min) {
            return Err(Error::InvalidWindow(format!("need 0 < s_min < s_max, got [{s_min}, {s_max}]")));
        }
        if !(ds > 0.0) {
            return Err(Error::InvalidWindow(format!("step must be positive, got {ds}")));
        }
        let n = (s_max - s_min) / ds;
        if n >= MAX_GRID_POINTS as f64 {
            return Err(Error::InvalidWindow(format!(
                "{n:.0} grid points exceed the limit of {MAX_GRID_POINTS}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.s_max - self.s_min) / self.ds + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn at(&self, i: usize) -> f64 {
        self.s_min + i as f64 * self.ds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimate {
    /// Grid argmax, smallest s on ties.
    pub s_hat: f64,
    /// Vertex of the parabola through the argmax and its neighbours, when
    /// the argmax is interior and the neighbourhood is concave.
    pub s_refined: Option<f64>,
    pub window: ScaleWindow,
    /// (s, total log-likelihood) at every grid point.
    pub grid: Vec<(f64, f64)>,
    /// (object id, log φ(ŝ·L)).
    pub per_object: Vec<(usize, f64)>,
}

/// Exhaustive grid search for the MAP scale.
pub fn optimize_scale(objects: &[MeasuredObject], window: &ScaleWindow) -> Result<ScaleEstimate> {
    if objects.is_empty() {
        return Err(Error::NoObjects);
    }
    window.validate()?;
    let objs = ordered(objects);
    let grid: Vec<(f64, f64)> = (0..window.len())
        .into_par_iter()
        .map(|i| {
            let s = window.at(i);
            (s, sum_terms(&objs, s))
        })
        .collect();
    let mut k = 0;
    for (i, g) in grid.iter().enumerate() {
        if g.1 > grid[k].1 {
            k = i;
        }
    }
    let s_hat = grid[k].0;
    let s_refined = (k > 0 && k + 1 < grid.len())
        .then(|| {
            let (y0, y1, y2) = (grid[k - 1].1, grid[k].1, grid[k + 1].1);
            let denom = y0 - 2.0 * y1 + y2;
            (denom < 0.0).then(|| s_hat + 0.5 * (y0 - y2) / denom * window.ds)
        })
        .flatten();
    let per_object = objs.iter().map(|o| (o.id, o.log_likelihood(s_hat))).collect();
    Ok(ScaleEstimate {
        s_hat,
        s_refined,
        window: *window,
        grid,
        per_object,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Scale candidates μ/L, one per object and prior component, taking the
/// median over the used dimensions.
pub fn scale_candidates(objects: &[MeasuredObject]) -> Vec<f64> {
    let mut out = Vec::new();
    for o in ordered(objects) {
        for k in 0..o.prior.n_components() {
            let mut ratios: Vec<f64> = o.prior.mean(k).iter().zip(&o.values).map(|(m, v)| m / v).collect();
            out.push(median(&mut ratios));
        }
    }
    out
}

/// Window [0.2·min, 5·max] over [`scale_candidates`], split into 10000 steps.
pub fn auto_window(objects: &[MeasuredObject]) -> Result<ScaleWindow> {
    if objects.is_empty() {
        return Err(Error::NoObjects);
    }
    let c = scale_candidates(objects);
    let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (s_min, s_max) = (0.2 * lo, 5.0 * hi);
    ScaleWindow::new(s_min, s_max, (s_max - s_min) / AUTO_WINDOW_STEPS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(mean: f64, sd: f64) -> Gmm {
        Gmm::new(vec![1.0], vec![vec![mean]], vec![vec![vec![sd * sd]]]).unwrap()
    }

    fn obj(id: usize, mean: f64, sd: f64, l: f64) -> MeasuredObject {
        MeasuredObject::new(id, CategoryPath::parse("thing").unwrap(), vec![Dim::L], vec![l], gauss(mean, sd)).unwrap()
    }

    #[test]
    fn single_gaussian_peak() {
        let objs = [obj(0, 1750.0, 70.0, 500.0)];
        let w = ScaleWindow::new(1.0, 10.0, 0.001).unwrap();
        let est = optimize_scale(&objs, &w).unwrap();
        assert!((est.s_hat - 3.5).abs() <= 0.001, "{}", est.s_hat);
        assert!((est.s_refined.unwrap() - 3.5).abs() < 1e-6);
        assert_eq!(est.grid.len(), 9001);
    }

    #[test]
    fn two_gaussians_closed_form() {
        let objs = [obj(0, 2000.0, 100.0, 1000.0), obj(1, 4000.0, 200.0, 2000.0)];
        let (m1, s1, l1, m2, s2, l2) = (2000.0, 100.0f64, 1000.0f64, 4000.0, 200.0f64, 2000.0f64);
        let star = (m1 * l1 / s1.powi(2) + m2 * l2 / s2.powi(2)) / (l1.powi(2) / s1.powi(2) + l2.powi(2) / s2.powi(2));
        let w = ScaleWindow::new(0.5, 5.0, 0.0005).unwrap();
        let est = optimize_scale(&objs, &w).unwrap();
        assert!((est.s_hat - star).abs() <= 0.0005);
    }

    #[test]
    fn duplicate_doubles_contribution() {
        let a = obj(0, 1750.0, 70.0, 500.0);
        let b = obj(1, 1750.0, 70.0, 500.0);
        let one = log_posterior(std::slice::from_ref(&a), 3.2).unwrap();
        let two = log_posterior(&[a, b], 3.2).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn order_does_not_matter() {
        let objs = vec![obj(2, 900.0, 40.0, 300.0), obj(0, 1750.0, 70.0, 500.0), obj(1, 400.0, 30.0, 110.0)];
        let mut rev = objs.clone();
        rev.reverse();
        let w = ScaleWindow::new(1.0, 6.0, 0.01).unwrap();
        let a = optimize_scale(&objs, &w).unwrap();
        let b = optimize_scale(&rev, &w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        let w = ScaleWindow::new(1.0, 2.0, 0.1).unwrap();
        assert!(matches!(optimize_scale(&[], &w), Err(Error::NoObjects)));
        assert!(ScaleWindow::new(2.0, 1.0, 0.1).is_err());
        assert!(ScaleWindow::new(0.0, 1.0, 0.1).is_err());
        assert!(ScaleWindow::new(1.0, 2.0, 0.0).is_err());
        assert!(ScaleWindow::new(1.0, 1e9, 1e-3).is_err());
        assert!(log_posterior(&[obj(0, 1.0, 1.0, 1.0)], 0.0).is_err());
    }

    #[test]
    fn far_tail_is_floored_not_infinite() {
        let o = obj(0, 1750.0, 1.0, 500.0);
        let v = o.log_likelihood(1e6);
        assert_eq!(v, LOG_FLOOR);
    }

    #[test]
    fn auto_window_bounds() {
        let w = auto_window(&[obj(0, 1750.0, 70.0, 500.0)]).unwrap();
        assert!((w.s_min - 0.7).abs() < 1e-12 && (w.s_max - 17.5).abs() < 1e-12);
        assert!((w.ds - (17.5 - 0.7) / 10000.0).abs() < 1e-15);
        let w = auto_window(&[obj(0, 200.0, 10.0, 100.0), obj(1, 400.0, 10.0, 100.0)]).unwrap();
        assert!((w.s_min - 0.4).abs() < 1e-12 && (w.s_max - 20.0).abs() < 1e-12);
        assert!(auto_window(&[]).is_err());
    }

    #[test]
    fn grid_length_counts_endpoint() {
        let w = ScaleWindow::new(1.0, 2.0, 0.1).unwrap();
        assert_eq!(w.len(), 11);
        assert!((w.at(10) - 2.0).abs() < 1e-12);
    }
}
