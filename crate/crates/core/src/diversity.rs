//! Diversity and divergence scores: transport and Jensen-Shannon
//! distances on label histograms, covariance trace ratios and Gaussian KL
//! for cluster summaries.

use serde::{Deserialize, Serialize};

use crate::data::{CountVector, ThresholdVector};
use crate::error::{ensure_len, invalid, Error, Result};
use crate::linalg::{cholesky, trace, Matrix, Vector};
use crate::partition::ClusterSummary;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(invalid("probabilities must be finite and nonnegative"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("probabilities sum to {s}")));
        }
        Ok(Self { probs })
    }

    pub fn from_counts(counts: &CountVector) -> Result<Self> {
        let total = counts.total();
        if total == 0 {
            return Err(invalid("count vector is all zeros"));
        }
        Ok(Self {
            probs: counts
                .as_slice()
                .iter()
                .map(|&c| c as f64 / total as f64)
                .collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Wasserstein,
    Jsd,
}

impl DistanceMetric {
    pub fn distance(self, p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
        match self {
            DistanceMetric::Wasserstein => wasserstein1(p, q),
            DistanceMetric::Jsd => jensen_shannon(p, q),
        }
    }
}

/// Earth mover's distance with unit spacing between adjacent labels.
pub fn wasserstein1(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    ensure_len(p.len(), q.len())?;
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for (a, b) in p.probs.iter().zip(&q.probs) {
        cp += a;
        cq += b;
        total += f64::abs(cp - cq);
    }
    // the last CDF term is 1 - 1 up to rounding
    total -= f64::abs(cp - cq);
    Ok(total)
}

/// Square root of the JS divergence, natural log.
pub fn jensen_shannon(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    ensure_len(p.len(), q.len())?;
    let kl_to_mid = |x: &[f64], y: &[f64]| -> f64 {
        x.iter()
            .zip(y)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| a * (2.0 * a / (a + b)).ln())
            .sum()
    };
    let js = 0.5 * kl_to_mid(&p.probs, &q.probs) + 0.5 * kl_to_mid(&q.probs, &p.probs);
    Ok(js.max(0.0).sqrt())
}

/// Number of partitions whose count meets its threshold.
pub fn thresholds_met(d: &CountVector, b: &ThresholdVector) -> Result<usize> {
    ensure_len(d.len(), b.len())?;
    Ok(d.as_slice()
        .iter()
        .zip(b.as_slice())
        .filter(|(x, t)| x >= t)
        .count())
}

/// Distance between the normalised pre- and post-exchange histograms, or 0
/// when fewer than `l_hat` partitions of `d_post` reach their threshold.
pub fn score_g(
    d_pre: &CountVector,
    d_post: &CountVector,
    b: &ThresholdVector,
    l_hat: usize,
    metric: DistanceMetric,
) -> Result<f64> {
    ensure_len(d_pre.len(), d_post.len())?;
    let p = DiscreteDistribution::from_counts(d_pre)?;
    let q = DiscreteDistribution::from_counts(d_post)?;
    if thresholds_met(d_post, b)? < l_hat {
        return Ok(0.0);
    }
    metric.distance(&p, &q)
}

/// `sum_l Tr(post_l) / Tr(pre_l)`.
pub fn trace_ratio(post: &[ClusterSummary], pre: &[ClusterSummary]) -> Result<f64> {
    ensure_len(pre.len(), post.len())?;
    let mut total = 0.0;
    for (a, b) in post.iter().zip(pre) {
        let denom = trace(&b.covariance);
        if !(denom > 0.0) {
            return Err(Error::Numeric("cluster covariance has zero trace".into()));
        }
        total += trace(&a.covariance) / denom;
    }
    Ok(total)
}

/// Gaussian with a cached factorisation, for repeated KL evaluations.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: Vector,
    cov: Matrix,
    chol_l: Matrix,
    log_det: f64,
}

impl Gaussian {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        ensure_len(mean.len(), cov.nrows())?;
        let chol = cholesky(&cov)?;
        let chol_l = chol.l();
        let log_det = 2.0 * chol_l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            mean,
            cov,
            chol_l,
            log_det,
        })
    }

    pub fn from_summary(s: &ClusterSummary) -> Result<Self> {
        Self::new(s.centroid.clone(), s.covariance.clone())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn solve(&self, rhs: &Matrix) -> Matrix {
        let y = self
            .chol_l
            .solve_lower_triangular(rhs)
            .expect("nonsingular factor");
        self.chol_l
            .transpose()
            .solve_upper_triangular(&y)
            .expect("nonsingular factor")
    }

    pub fn log_density(&self, x: &Vector) -> f64 {
        let diff = x - &self.mean;
        let z = self
            .chol_l
            .solve_lower_triangular(&diff)
            .expect("nonsingular factor");
        -0.5 * (z.norm_squared()
            + self.log_det
            + self.dim() as f64 * (2.0 * std::f64::consts::PI).ln())
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let z = Vector::from_fn(self.dim(), |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        &self.mean + &self.chol_l * z
    }

    /// KL(self || other).
    pub fn kl(&self, other: &Gaussian) -> Result<f64> {
        ensure_len(self.dim(), other.dim())?;
        let d = self.dim() as f64;
        let tr = trace(&other.solve(&self.cov));
        let diff = &other.mean - &self.mean;
        let maha = diff.dot(
            &other
                .solve(&Matrix::from_column_slice(diff.len(), 1, diff.as_slice()))
                .column(0),
        );
        let kl = 0.5 * (tr + maha - d + other.log_det - self.log_det);
        if !kl.is_finite() {
            return Err(Error::Numeric(format!("KL evaluated to {kl}")));
        }
        Ok(kl.max(0.0))
    }
}

/// `KL(N(mu0, sigma0) || N(mu1, sigma1))`.
pub fn gaussian_kl(mu0: &Vector, sigma0: &Matrix, mu1: &Vector, sigma1: &Matrix) -> Result<f64> {
    Gaussian::new(mu0.clone(), sigma0.clone())?.kl(&Gaussian::new(mu1.clone(), sigma1.clone())?)
}

const AGREEMENT_FLOOR: f64 = 1e-9;
const AGREEMENT_CAP: f64 = 1e3;

/// Mean ratio of before-exchange to after-exchange cluster KL over ordered
/// device pairs and cluster pairs, shifted so that no change scores 0.
/// Vanishing after-exchange divergences are capped.
pub fn system_agreement(pre: &[Vec<ClusterSummary>], post: &[Vec<ClusterSummary>]) -> Result<f64> {
    ensure_len(pre.len(), post.len())?;
    if pre.len() < 2 {
        return Err(invalid("system agreement needs at least two devices"));
    }
    let fit = |all: &[Vec<ClusterSummary>]| -> Result<Vec<Vec<Gaussian>>> {
        all.iter()
            .map(|dev| dev.iter().map(Gaussian::from_summary).collect())
            .collect()
    };
    agreement_from_gaussians(&fit(pre)?, &fit(post)?)
}

/// [`system_agreement`] on already factorised cluster Gaussians.
pub fn agreement_from_gaussians(before: &[Vec<Gaussian>], after: &[Vec<Gaussian>]) -> Result<f64> {
    ensure_len(before.len(), after.len())?;
    if before.len() < 2 {
        return Err(invalid("system agreement needs at least two devices"));
    }
    for (a, b) in before.iter().zip(after) {
        ensure_len(a.len(), b.len())?;
    }
    let n = before.len();
    let (mut total, mut terms) = (0.0, 0usize);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for l in 0..before[i].len() {
                for m in 0..before[j].len() {
                    let hb = before[i][l].kl(&before[j][m])?;
                    let ha = after[i][l].kl(&after[j][m])?;
                    total += pair_ratio(hb, ha);
                    terms += 1;
                }
            }
        }
    }
    if terms == 0 {
        return Err(invalid("devices hold no clusters"));
    }
    Ok(total / terms as f64 - 1.0)
}

fn pair_ratio(before: f64, after: f64) -> f64 {
    if after < AGREEMENT_FLOOR {
        if before < AGREEMENT_FLOOR {
            1.0
        } else {
            AGREEMENT_CAP
        }
    } else {
        (before / after).min(AGREEMENT_CAP)
    }
}
