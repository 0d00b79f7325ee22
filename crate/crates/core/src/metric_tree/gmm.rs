//! Gaussian mixtures over object dimensions (millimeters), for 1 to 3 dimensions.
//!
//! Components keep a Cholesky factor and a log normalizer so that density
//! evaluation in the scale grid search does not allocate.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on covariance eigenvalues, (1 mm)².
pub const COV_FLOOR: f64 = 1.0;
pub const MAX_DIMS: usize = 3;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

type Vec3 = [f64; MAX_DIMS];
type Mat3 = [[f64; MAX_DIMS]; MAX_DIMS];

#[derive(Debug, Clone, PartialEq)]
struct Component {
    weight: f64,
    mean: Vec3,
    cov: Mat3,
    chol: Mat3,
    /// ln w − ½(d ln 2π + ln |Σ|)
    log_coef: f64,
}

/// A Gaussian mixture with `dims` ∈ {1, 2, 3}.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    dims: usize,
    components: Vec<Component>,
}

/// On-disk form of a mixture, as stored in the priors file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFile {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covs: Vec<Vec<Vec<f64>>>,
}

fn cholesky(a: &Mat3, d: usize) -> Option<Mat3> {
    let mut l = [[0.0; MAX_DIMS]; MAX_DIMS];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

fn min_eigenvalue(a: &Mat3, d: usize) -> f64 {
    let m = DMatrix::from_fn(d, d, |i, j| a[i][j]);
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

impl Component {
    fn new(weight: f64, mean: Vec3, cov: Mat3, d: usize) -> Result<Self> {
        let chol = cholesky(&cov, d)
            .ok_or_else(|| Error::InvalidGmm("covariance is not positive definite".into()))?;
        let log_det: f64 = (0..d).map(|i| 2.0 * chol[i][i].ln()).sum();
        let log_coef = weight.ln() - 0.5 * (d as f64 * LN_2PI + log_det);
        Ok(Self {
            weight,
            mean,
            cov,
            chol,
            log_coef,
        })
    }

    /// ln(w · N(x; μ, Σ)) without bounds checks.
    #[inline]
    fn log_weighted(&self, x: &[f64], d: usize) -> f64 {
        // Solve L z = x − μ by forward substitution; maha = |z|².
        let mut z = [0.0; MAX_DIMS];
        let mut maha = 0.0;
        for i in 0..d {
            let mut v = x[i] - self.mean[i];
            for k in 0..i {
                v -= self.chol[i][k] * z[k];
            }
            z[i] = v / self.chol[i][i];
            maha += z[i] * z[i];
        }
        self.log_coef - 0.5 * maha
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl Gmm {
    /// Builds a mixture from raw parameters. Weights are normalized to sum to 1;
    /// covariances must be symmetric with every eigenvalue at least [`COV_FLOOR`]
    /// and are taken from their upper triangle.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidGmm("no components".into()));
        }
        if means.len() != k || covs.len() != k {
            return Err(Error::InvalidGmm(format!(
                "{} weights but {} means and {} covariances",
                k,
                means.len(),
                covs.len()
            )));
        }
        let d = means[0].len();
        if d == 0 || d > MAX_DIMS {
            return Err(Error::InvalidGmm(format!("dimension {d} not in 1..=3")));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidGmm("weights must be positive and finite".into()));
        }
        let sum: f64 = weights.iter().sum();
        // weights read back from a file already sum to 1 up to rounding
        let total = if (sum - 1.0).abs() <= 1e-12 { 1.0 } else { sum };
        let mut components = Vec::with_capacity(k);
        for ((w, mean), cov) in weights.iter().zip(&means).zip(&covs) {
            if mean.len() != d || cov.len() != d || cov.iter().any(|row| row.len() != d) {
                return Err(Error::InvalidGmm("inconsistent component dimensions".into()));
            }
            if mean.iter().chain(cov.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidGmm("non-finite parameter".into()));
            }
            let mut m = [0.0; MAX_DIMS];
            m[..d].copy_from_slice(mean);
            let mut c = [[0.0; MAX_DIMS]; MAX_DIMS];
            for i in 0..d {
                for j in 0..d {
                    let (a, b) = (cov[i][j], cov[j][i]);
                    if (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0) {
                        return Err(Error::InvalidGmm("covariance is not symmetric".into()));
                    }
                    c[i][j] = cov[i.min(j)][i.max(j)];
                }
            }
            let min_eig = min_eigenvalue(&c, d);
            if min_eig < COV_FLOOR * (1.0 - 1e-9) {
                return Err(Error::InvalidGmm(format!(
                    "covariance eigenvalue {min_eig} below floor {COV_FLOOR}"
                )));
            }
            components.push(Component::new(w / total, m, c, d)?);
        }
        Ok(Self { dims: d, components })
    }

    /// Internal constructor for already-validated parameters (fitting, marginals).
    pub(crate) fn from_parts(dims: usize, parts: Vec<(f64, Vec3, Mat3)>) -> Result<Self> {
        let sum: f64 = parts.iter().map(|p| p.0).sum();
        let total = if (sum - 1.0).abs() <= 1e-12 { 1.0 } else { sum };
        let components = parts
            .into_iter()
            .map(|(w, m, c)| Component::new(w / total, m, c, dims))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dims, components })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.components[k].mean[..self.dims]
    }

    pub fn covariance(&self, k: usize) -> Vec<Vec<f64>> {
        let d = self.dims;
        (0..d)
            .map(|i| self.components[k].cov[i][..d].to_vec())
            .collect()
    }

    fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("evaluation point is not finite".into()));
        }
        Ok(())
    }

    /// Mixture log density, computed with log-sum-exp over components.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dims(x)?;
        Ok(self.log_density_unchecked(x))
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.dims;
        let mut terms = [0.0; 8];
        if self.components.len() <= terms.len() {
            let n = self.components.len();
            for (t, c) in terms.iter_mut().zip(&self.components) {
                *t = c.log_weighted(x, d);
            }
            log_sum_exp(&terms[..n])
        } else {
            let terms: Vec<f64> = self.components.iter().map(|c| c.log_weighted(x, d)).collect();
            log_sum_exp(&terms)
        }
    }

    /// Exact Gaussian marginal over the listed dimension indices, in the order given.
    pub fn marginalize(&self, keep: &[usize]) -> Result<Gmm> {
        if keep.is_empty() {
            return Err(Error::InvalidParameter("marginal keep set is empty".into()));
        }
        for (i, &k) in keep.iter().enumerate() {
            if k >= self.dims {
                return Err(Error::InvalidParameter(format!(
                    "dimension index {k} out of range for {}-D mixture",
                    self.dims
                )));
            }
            if keep[..i].contains(&k) {
                return Err(Error::InvalidParameter(format!("dimension index {k} repeated")));
            }
        }
        let d = keep.len();
        let parts = self
            .components
            .iter()
            .map(|c| {
                let mut m = [0.0; MAX_DIMS];
                let mut s = [[0.0; MAX_DIMS]; MAX_DIMS];
                for (i, &a) in keep.iter().enumerate() {
                    m[i] = c.mean[a];
                    for (j, &b) in keep.iter().enumerate() {
                        s[i][j] = c.cov[a][b];
                    }
                }
                (c.weight, m, s)
            })
            .collect();
        Gmm::from_parts(d, parts)
    }

    pub fn to_file(&self) -> GmmFile {
        GmmFile {
            weights: self.weights(),
            means: (0..self.n_components()).map(|k| self.mean(k).to_vec()).collect(),
            covs: (0..self.n_components()).map(|k| self.covariance(k)).collect(),
        }
    }

    pub fn from_file(file: &GmmFile) -> Result<Self> {
        Gmm::new(file.weights.clone(), file.means.clone(), file.covs.clone())
    }

    pub(crate) fn component_log_weighted(&self, k: usize, x: &[f64]) -> f64 {
        self.components[k].log_weighted(x, self.dims)
    }

    /// One draw from the mixture.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = k;
                break;
            }
        }
        let c = &self.components[pick];
        let d = self.dims;
        let z: Vec<f64> = (0..d).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        (0..d)
            .map(|i| c.mean[i] + (0..=i).map(|k| c.chol[i][k] * z[k]).sum::<f64>())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(mean: f64, var: f64) -> Gmm {
        Gmm::new(vec![1.0], vec![vec![mean]], vec![vec![vec![var]]]).unwrap()
    }

    #[test]
    fn sample_moments() {
        use rand::SeedableRng;
        let g = Gmm::new(vec![1.0], vec![vec![10.0, 20.0]], vec![vec![vec![4.0, 1.0], vec![1.0, 9.0]]]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 20000;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| g.sample(&mut rng)).collect();
        let m0 = xs.iter().map(|x| x[0]).sum::<f64>() / n as f64;
        let m1 = xs.iter().map(|x| x[1]).sum::<f64>() / n as f64;
        let c01 = xs.iter().map(|x| (x[0] - m0) * (x[1] - m1)).sum::<f64>() / n as f64;
        assert!((m0 - 10.0).abs() < 0.05 && (m1 - 20.0).abs() < 0.08);
        assert!((c01 - 1.0).abs() < 0.15);
    }

    #[test]
    fn standard_normal_peak() {
        let g = one_d(0.0, 1.0);
        assert!((g.density(&[0.0]).unwrap() - 0.398_942_280_4).abs() < 1e-9);
    }

    #[test]
    fn equal_weight_mixture_is_average() {
        let a = one_d(0.0, 4.0);
        let b = one_d(3.0, 9.0);
        let g = Gmm::new(
            vec![1.0, 1.0],
            vec![vec![0.0], vec![3.0]],
            vec![vec![vec![4.0]], vec![vec![9.0]]],
        )
        .unwrap();
        let x = [1.3];
        let expected = 0.5 * (a.density(&x).unwrap() + b.density(&x).unwrap());
        assert!((g.density(&x).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn weights_are_normalized() {
        let g = Gmm::new(
            vec![2.0, 6.0],
            vec![vec![0.0], vec![1.0]],
            vec![vec![vec![1.0]], vec![vec![1.0]]],
        )
        .unwrap();
        let w = g.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!((w[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Gmm::new(vec![], vec![], vec![]).is_err());
        assert!(Gmm::new(vec![-1.0], vec![vec![0.0]], vec![vec![vec![1.0]]]).is_err());
        // below the covariance floor
        assert!(Gmm::new(vec![1.0], vec![vec![0.0]], vec![vec![vec![0.25]]]).is_err());
        // asymmetric
        assert!(Gmm::new(
            vec![1.0],
            vec![vec![0.0, 0.0]],
            vec![vec![vec![4.0, 1.0], vec![0.0, 4.0]]]
        )
        .is_err());
        // 4-D
        assert!(Gmm::new(vec![1.0], vec![vec![0.0; 4]], vec![vec![vec![1.0; 4]; 4]]).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let g = one_d(0.0, 1.0);
        assert!(matches!(
            g.log_density(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn marginal_is_coordinate_restriction() {
        let g = Gmm::new(
            vec![1.0],
            vec![vec![10.0, 20.0, 30.0]],
            vec![vec![
                vec![4.0, 1.0, 0.5],
                vec![1.0, 9.0, 2.0],
                vec![0.5, 2.0, 16.0],
            ]],
        )
        .unwrap();
        let m = g.marginalize(&[2]).unwrap();
        assert_eq!(m.dims(), 1);
        assert_eq!(m.mean(0), &[30.0]);
        assert_eq!(m.covariance(0), vec![vec![16.0]]);
        assert_eq!(g.marginalize(&[0, 1, 2]).unwrap(), g);
        assert!(g.marginalize(&[]).is_err());
        assert!(g.marginalize(&[3]).is_err());
        assert!(g.marginalize(&[1, 1]).is_err());
    }

    #[test]
    fn log_density_survives_far_tails() {
        let g = one_d(0.0, 1.0);
        let ld = g.log_density(&[1e4]).unwrap();
        assert!(ld.is_finite());
        assert!((ld - (-0.5 * LN_2PI - 0.5e8)).abs() < 1e-6);
    }

    #[test]
    fn file_round_trip() {
        let g = Gmm::new(
            vec![0.3, 0.7],
            vec![vec![1.0, 2.0], vec![5.0, 1.0]],
            vec![
                vec![vec![2.0, 0.3], vec![0.3, 3.0]],
                vec![vec![5.0, 0.0], vec![0.0, 1.5]],
            ],
        )
        .unwrap();
        assert_eq!(Gmm::from_file(&g.to_file()).unwrap(), g);
    }
}
