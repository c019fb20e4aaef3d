//! Exponential-family plumbing and an independence IRLS fitter.
//!
//! The IRLS fit supplies GEE starting values and doubles as the reference
//! solution the independence working correlation must reproduce.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{has_full_column_rank, spd_factor, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Normal,
    Binomial,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
    Log,
}

/// A supported distribution/link pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Family {
    distribution: Distribution,
    link: Link,
}

/// Means are kept this far inside the binomial/poisson boundary when the
/// fitter evaluates variances and quasi-likelihoods.
const MU_EPS: f64 = 1e-15;

impl Family {
    pub fn new(distribution: Distribution, link: Link) -> Result<Self> {
        match (distribution, link) {
            (Distribution::Normal, Link::Identity)
            | (Distribution::Binomial, Link::Logit)
            | (Distribution::Poisson, Link::Log) => Ok(Family { distribution, link }),
            _ => Err(Error::UnsupportedFamily(format!("{distribution:?} with {link:?} link"))),
        }
    }

    pub fn binomial() -> Self {
        Family { distribution: Distribution::Binomial, link: Link::Logit }
    }

    pub fn normal() -> Self {
        Family { distribution: Distribution::Normal, link: Link::Identity }
    }

    pub fn poisson() -> Self {
        Family { distribution: Distribution::Poisson, link: Link::Log }
    }

    pub fn distribution(&self) -> Distribution {
        self.distribution
    }

    pub fn link(&self) -> Link {
        self.link
    }

    /// Binomial fits keep φ = 1 unless told otherwise.
    pub fn default_fix_phi(&self) -> bool {
        self.distribution == Distribution::Binomial
    }

    fn check_mean(&self, mu: f64) -> Result<()> {
        let ok = match self.distribution {
            Distribution::Normal => mu.is_finite(),
            Distribution::Binomial => mu > 0.0 && mu < 1.0,
            Distribution::Poisson => mu > 0.0 && mu.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::DomainError { what: self.distribution_name(), value: mu })
        }
    }

    fn distribution_name(&self) -> &'static str {
        match self.distribution {
            Distribution::Normal => "normal",
            Distribution::Binomial => "binomial",
            Distribution::Poisson => "poisson",
        }
    }

    pub fn link_eval(&self, mu: f64) -> Result<f64> {
        self.check_mean(mu)?;
        Ok(match self.link {
            Link::Identity => mu,
            Link::Logit => (mu / (1.0 - mu)).ln(),
            Link::Log => mu.ln(),
        })
    }

    pub fn link_inverse(&self, eta: f64) -> f64 {
        match self.link {
            Link::Identity => eta,
            Link::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            Link::Log => eta.exp(),
        }
    }

    /// dμ/dη at `eta`.
    pub fn mu_eta(&self, eta: f64) -> f64 {
        match self.link {
            Link::Identity => 1.0,
            Link::Logit => {
                let mu = self.link_inverse(eta);
                mu * (1.0 - mu)
            }
            Link::Log => eta.exp(),
        }
    }

    pub fn variance_fn(&self, mu: f64) -> Result<f64> {
        self.check_mean(mu)?;
        Ok(self.variance(mu))
    }

    /// Unchecked variance with the mean pulled inside the boundary.
    pub(crate) fn variance(&self, mu: f64) -> f64 {
        match self.distribution {
            Distribution::Normal => 1.0,
            Distribution::Binomial => {
                let m = mu.clamp(MU_EPS, 1.0 - MU_EPS);
                m * (1.0 - m)
            }
            Distribution::Poisson => mu.max(MU_EPS),
        }
    }

    pub(crate) fn at_boundary(&self, mu: f64, eps: f64) -> bool {
        match self.distribution {
            Distribution::Binomial => mu < eps || mu > 1.0 - eps,
            _ => false,
        }
    }

    /// Per-observation quasi-likelihood contribution (φ = 1).
    pub fn quasi_likelihood_term(&self, y: f64, mu: f64) -> Result<f64> {
        match self.distribution {
            Distribution::Normal => Ok(-0.5 * (y - mu).powi(2)),
            Distribution::Binomial => {
                let mut q = 0.0;
                if y > 0.0 {
                    if mu <= 0.0 {
                        return Err(Error::DomainError { what: "binomial", value: mu });
                    }
                    q += y * mu.ln();
                }
                if y < 1.0 {
                    if mu >= 1.0 {
                        return Err(Error::DomainError { what: "binomial", value: mu });
                    }
                    q += (1.0 - y) * (-mu).ln_1p();
                }
                Ok(q)
            }
            Distribution::Poisson => {
                if mu <= 0.0 {
                    return Err(Error::DomainError { what: "poisson", value: mu });
                }
                Ok(y * mu.ln() - mu)
            }
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let link = match self.link {
            Link::Identity => "identity",
            Link::Logit => "logit",
            Link::Log => "log",
        };
        write!(f, "{}/{}", self.distribution_name(), link)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binomial" | "binomial/logit" => Ok(Family::binomial()),
            "normal" | "normal/identity" | "gaussian" => Ok(Family::normal()),
            "poisson" | "poisson/log" => Ok(Family::poisson()),
            other => Err(Error::UnsupportedFamily(other.to_string())),
        }
    }
}

/// Linear predictor `x·β`.
pub(crate) fn linear_predictor(x: &Matrix, beta: &[f64]) -> Vec<f64> {
    x.mul_vec(beta).expect("beta length matches design width")
}

/// Σ quasi-likelihood over all observations at `beta` (φ = 1).
pub fn quasi_likelihood(x: &Matrix, beta: &[f64], y: &[f64], family: Family) -> Result<f64> {
    if beta.len() != x.cols() || y.len() != x.rows() {
        return Err(Error::DimensionMismatch("quasi-likelihood inputs".into()));
    }
    linear_predictor(x, beta)
        .iter()
        .zip(y)
        .map(|(eta, y)| family.quasi_likelihood_term(*y, family.link_inverse(*eta)))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrlsFit {
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Quasi-likelihood at `beta`.
    pub objective: f64,
    /// Infinity norm of the independence score at `beta`.
    pub score_norm: f64,
}

/// Independence score `Σ xᵢ·(dμ/dη)/V(μ)·(y − μ)`.
pub(crate) fn independence_score(x: &Matrix, beta: &[f64], y: &[f64], family: Family) -> Vec<f64> {
    let eta = linear_predictor(x, beta);
    let p = x.cols();
    let mut score = vec![0.0; p];
    for (i, e) in eta.iter().enumerate() {
        let mu = family.link_inverse(*e);
        let w = family.mu_eta(*e) / family.variance(mu) * (y[i] - mu);
        for (s, xij) in score.iter_mut().zip(x.row(i)) {
            *s += xij * w;
        }
    }
    score
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn clamped_q(x: &Matrix, beta: &[f64], y: &[f64], family: Family) -> f64 {
    linear_predictor(x, beta)
        .iter()
        .zip(y)
        .map(|(eta, y)| {
            let mu = family.link_inverse(*eta);
            let mu = match family.distribution {
                Distribution::Binomial => mu.clamp(MU_EPS, 1.0 - MU_EPS),
                Distribution::Poisson => mu.max(MU_EPS),
                Distribution::Normal => mu,
            };
            family.quasi_likelihood_term(*y, mu).unwrap_or(f64::NEG_INFINITY)
        })
        .sum()
}

/// Starting values: zeros, with the intercept at the link of the mean
/// response (nudged 1e-4 away from the boundary).
pub(crate) fn starting_beta(x: &Matrix, y: &[f64], family: Family) -> Vec<f64> {
    let mut beta = vec![0.0; x.cols()];
    let has_intercept = x.cols() > 0 && (0..x.rows()).all(|i| x[(i, 0)] == 1.0);
    if has_intercept && !y.is_empty() {
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        let ybar = match family.distribution {
            Distribution::Binomial => ybar.clamp(1e-4, 1.0 - 1e-4),
            Distribution::Poisson => ybar.max(1e-4),
            Distribution::Normal => ybar,
        };
        beta[0] = family.link_eval(ybar).unwrap_or(0.0);
    }
    beta
}

/// IRLS iterations under independence; returns the last iterate whether or
/// not it converged.
pub(crate) fn irls_iterate(x: &Matrix, y: &[f64], family: Family, tol: f64, max_iter: usize) -> Result<IrlsFit> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{} responses for {n} rows", y.len())));
    }
    if n < p || !has_full_column_rank(x) {
        return Err(Error::RankDeficient);
    }

    let mut beta = starting_beta(x, y, family);
    let mut q = clamped_q(x, &beta, y, family);
    let mut iterations = 0;
    loop {
        let score = independence_score(x, &beta, y, family);
        let score_norm = inf_norm(&score);
        if score_norm < tol {
            return Ok(IrlsFit { beta, iterations, converged: true, objective: q, score_norm });
        }
        let eta = linear_predictor(x, &beta);
        if family.distribution == Distribution::Binomial
            && eta.iter().any(|e| family.at_boundary(family.link_inverse(*e), 1e-10))
        {
            return Err(Error::PerfectSeparation);
        }
        if iterations >= max_iter {
            return Ok(IrlsFit { beta, iterations, converged: false, objective: q, score_norm });
        }
        iterations += 1;

        // Fisher scoring step: (X'WX) δ = score.
        let mut info = Matrix::zeros(p, p);
        for (i, e) in eta.iter().enumerate() {
            let mu = family.link_inverse(*e);
            let d = family.mu_eta(*e);
            let w = d * d / family.variance(mu);
            let row = x.row(i);
            for a in 0..p {
                let wa = w * row[a];
                for b in 0..=a {
                    info.add_at(a, b, wa * row[b]);
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                let v = info[(a, b)];
                info.set(b, a, v);
            }
        }
        let step = spd_factor(&info).map_err(|_| Error::RankDeficient)?.solve_vec(&score)?;

        let mut scale = 1.0;
        let mut candidate: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + s).collect();
        let mut q_new = clamped_q(x, &candidate, y, family);
        let mut halvings = 0;
        while !(q_new >= q - 1e-12 * q.abs().max(1.0)) && halvings < 10 {
            scale *= 0.5;
            candidate = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            q_new = clamped_q(x, &candidate, y, family);
            halvings += 1;
        }
        beta = candidate;
        q = q_new;
    }
}

/// Fits the independence GLM by iteratively reweighted least squares with
/// step-halving on the quasi-likelihood.
pub fn irls_fit(x: &Matrix, y: &[f64], family: Family, tol: f64, max_iter: usize) -> Result<IrlsFit> {
    let fit = irls_iterate(x, y, family, tol, max_iter)?;
    if !fit.converged {
        return Err(Error::NoConvergence { iterations: fit.iterations, partial: None });
    }
    Ok(fit)
}

pub const DEFAULT_IRLS_TOL: f64 = 1e-10;
pub const DEFAULT_IRLS_MAX_ITER: usize = 100;
