//! EM fitting of size mixtures with BIC selection of the component count.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gmm::{log_sum_exp, Gmm, COV_FLOOR, MAX_DIMS};
use crate::error::{Error, Result};

/// Nodes with fewer samples carry no prior.
pub const MIN_SAMPLES: usize = 10;
pub const DEFAULT_MAX_COMPONENTS: usize = 3;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_components: usize,
    pub min_samples: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Relative log-likelihood change at which EM stops.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_components: DEFAULT_MAX_COMPONENTS,
            min_samples: MIN_SAMPLES,
            seed: 0x5eed,
            max_iter: 500,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub gmm: Gmm,
    /// (K, BIC) for every component count that was fitted.
    pub bic: Vec<(usize, f64)>,
    /// Log-likelihood after each E-step of the selected fit.
    pub log_likelihood_trace: Vec<f64>,
    /// True when every sample was identical and the covariance floor was used.
    pub degenerate: bool,
}

type Vec3 = [f64; MAX_DIMS];
type Mat3 = [[f64; MAX_DIMS]; MAX_DIMS];
type Params = Vec<(f64, Vec3, Mat3)>;

/// Fits a mixture to `samples` (all of equal length 1..=3) by EM, choosing
/// K in 1..=max_components with the lowest BIC. Deterministic for a given seed.
pub fn fit_gmm(samples: &[Vec<f64>], opts: &FitOptions) -> Result<FitReport> {
    if samples.len() < opts.min_samples.max(1) {
        return Err(Error::TooFewSamples {
            got: samples.len(),
            min: opts.min_samples.max(1),
        });
    }
    if opts.max_components == 0 {
        return Err(Error::InvalidParameter("max_components must be at least 1".into()));
    }
    let d = samples[0].len();
    if d == 0 || d > MAX_DIMS {
        return Err(Error::InvalidInput(format!("sample dimension {d} not in 1..=3")));
    }
    let mut data: Vec<Vec3> = Vec::with_capacity(samples.len());
    for s in samples {
        if s.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite sample".into()));
        }
        let mut p = [0.0; MAX_DIMS];
        p[..d].copy_from_slice(s);
        data.push(p);
    }

    let distinct = count_distinct(&data, 1 + opts.max_components);
    if distinct == 1 {
        log::warn!(
            "all {} samples are identical; using covariance floor",
            data.len()
        );
        let mut cov = [[0.0; MAX_DIMS]; MAX_DIMS];
        for (i, row) in cov.iter_mut().enumerate().take(d) {
            row[i] = COV_FLOOR;
        }
        let gmm = Gmm::from_parts(d, vec![(1.0, data[0], cov)])?;
        let ll = log_likelihood(&gmm, &data);
        return Ok(FitReport {
            gmm,
            bic: vec![(1, bic(ll, 1, d, data.len()))],
            log_likelihood_trace: vec![ll],
            degenerate: true,
        });
    }

    let n = data.len();
    let mut best: Option<(f64, Gmm, Vec<f64>)> = None;
    let mut bics = Vec::new();
    for k in 1..=opts.max_components.min(distinct).min(n) {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let init = kmeans_pp_init(&data, d, k, &mut rng);
        let (gmm, trace) = run_em(&data, d, init, opts)?;
        let ll = *trace.last().expect("trace is never empty");
        let score = bic(ll, gmm.n_components(), d, n);
        bics.push((k, score));
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, gmm, trace));
        }
    }
    let (_, gmm, trace) = best.expect("at least K = 1 is fitted");
    Ok(FitReport {
        gmm,
        bic: bics,
        log_likelihood_trace: trace,
        degenerate: false,
    })
}

fn bic(ll: f64, k: usize, d: usize, n: usize) -> f64 {
    let params = (k - 1) + k * d + k * d * (d + 1) / 2;
    -2.0 * ll + params as f64 * (n as f64).ln()
}

fn count_distinct(data: &[Vec3], cap: usize) -> usize {
    let mut seen: Vec<&Vec3> = Vec::new();
    for p in data {
        if !seen.contains(&p) {
            seen.push(p);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

fn sq_dist(a: &Vec3, b: &Vec3) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn log_likelihood(gmm: &Gmm, data: &[Vec3]) -> f64 {
    data.iter()
        .map(|x| gmm.log_density_unchecked(&x[..gmm.dims()]))
        .sum()
}

/// k-means++ seeding followed by a hard assignment M-step.
fn kmeans_pp_init(data: &[Vec3], d: usize, k: usize, rng: &mut ChaCha8Rng) -> Params {
    let n = data.len();
    let mut centers: Vec<Vec3> = vec![data[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = data.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, w) in d2.iter().enumerate() {
            if target < *w {
                pick = i;
                break;
            }
            target -= w;
        }
        let c = data[pick];
        centers.push(c);
        for (dist, p) in d2.iter_mut().zip(data) {
            *dist = dist.min(sq_dist(p, &c));
        }
    }

    let mut resp = vec![vec![0.0; centers.len()]; n];
    for (r, p) in resp.iter_mut().zip(data) {
        let nearest = centers
            .iter()
            .enumerate()
            .map(|(j, c)| (j, sq_dist(p, c)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
            .unwrap_or(0);
        r[nearest] = 1.0;
    }
    m_step(data, d, &resp)
}

/// Weighted means and scatter matrices; covariance eigenvalues are clamped at
/// the floor, which is the exact constrained maximizer and keeps EM monotone.
fn m_step(data: &[Vec3], d: usize, resp: &[Vec<f64>]) -> Params {
    let k = resp.first().map_or(0, |r| r.len());
    let mut params = Vec::with_capacity(k);
    for j in 0..k {
        let nk: f64 = resp.iter().map(|r| r[j]).sum();
        if nk <= f64::MIN_POSITIVE {
            continue;
        }
        let mut mean = [0.0; MAX_DIMS];
        for (r, p) in resp.iter().zip(data) {
            for a in 0..d {
                mean[a] += r[j] * p[a];
            }
        }
        for m in mean.iter_mut().take(d) {
            *m /= nk;
        }
        let mut scatter = DMatrix::<f64>::zeros(d, d);
        for (r, p) in resp.iter().zip(data) {
            if r[j] == 0.0 {
                continue;
            }
            for a in 0..d {
                for b in 0..d {
                    scatter[(a, b)] += r[j] * (p[a] - mean[a]) * (p[b] - mean[b]);
                }
            }
        }
        scatter /= nk;
        let eig = SymmetricEigen::new(scatter);
        let clamped = eig.eigenvalues.map(|v| v.max(COV_FLOOR));
        let cov_m = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        let mut cov = [[0.0; MAX_DIMS]; MAX_DIMS];
        for a in 0..d {
            for b in 0..d {
                cov[a][b] = 0.5 * (cov_m[(a, b)] + cov_m[(b, a)]);
            }
        }
        params.push((nk, mean, cov));
    }
    params
}

fn run_em(data: &[Vec3], d: usize, init: Params, opts: &FitOptions) -> Result<(Gmm, Vec<f64>)> {
    let mut gmm = Gmm::from_parts(d, init)?;
    let mut trace: Vec<f64> = Vec::new();
    let mut resp = vec![Vec::new(); data.len()];
    for _ in 0..opts.max_iter {
        // E-step
        let kk = gmm.n_components();
        let mut ll = 0.0;
        let mut terms = vec![0.0; kk];
        for (r, x) in resp.iter_mut().zip(data) {
            for (j, t) in terms.iter_mut().enumerate() {
                *t = gmm.component_log_weighted(j, &x[..d]);
            }
            let lse = log_sum_exp(&terms);
            ll += lse;
            r.clear();
            r.extend(terms.iter().map(|t| (t - lse).exp()));
        }
        let converged = trace
            .last()
            .is_some_and(|prev| (ll - prev).abs() <= opts.tol * ll.abs().max(1.0));
        trace.push(ll);
        if converged {
            break;
        }
        gmm = Gmm::from_parts(d, m_step(data, d, &resp))?;
    }
    Ok((gmm, trace))
}
