//! Generalized estimating equations.
//!
//! The solver alternates a Fisher-scoring step on
//! `Σ D_i' V_i⁻¹ (Y_i − μ_i) = 0` with a moment refresh of the dispersion
//! and working-correlation parameters, where
//! `V_i = φ · A_i^{1/2} R_i(α) A_i^{1/2}`.

mod correlation;

pub use correlation::{
    estimate_alpha, realize_correlation, realize_for_slots, AlphaEstimate, ClusterResiduals,
    CorrelationKind, CorrelationStructure, MomentDenominator, ALPHA_CLAMP,
};

use serde::{Deserialize, Serialize};

use crate::data::{ClusteredDataset, DesignMatrix};
use crate::error::{Error, Result};
use crate::glm::{irls_iterate, linear_predictor, quasi_likelihood, Family, DEFAULT_IRLS_MAX_ITER, DEFAULT_IRLS_TOL};
use crate::linalg::{has_full_column_rank, spd_factor, spd_inverse, spd_solve, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeeOptions {
    /// Convergence threshold on ‖Δβ‖∞.
    pub tol: f64,
    pub max_iter: usize,
    /// `None` uses the family default (fixed at 1 for binomial).
    pub fix_phi: Option<bool>,
    /// Holds the working correlation at these values instead of estimating.
    pub fixed_correlation: Option<CorrelationStructure>,
    pub denominator: MomentDenominator,
}

impl Default for GeeOptions {
    fn default() -> Self {
        GeeOptions {
            tol: 1e-8,
            max_iter: 60,
            fix_phi: None,
            fixed_correlation: None,
            denominator: MomentDenominator::SubtractP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeeFit {
    pub beta: Vec<f64>,
    pub column_labels: Vec<String>,
    pub family: Family,
    pub kind: CorrelationKind,
    /// Working correlation at the final iterate.
    pub structure: CorrelationStructure,
    pub phi: f64,
    pub cov_model_based: Matrix,
    pub cov_robust: Matrix,
    /// Σ quasi-likelihood at β̂ under the independence model.
    pub quasi_likelihood_independence: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_clusters: usize,
    pub n_obs: usize,
    pub warnings: Vec<String>,
}

impl GeeFit {
    pub fn n_params(&self) -> usize {
        self.beta.len()
    }
}

/// Row range and slots of every cluster, in design-matrix row order.
#[derive(Debug, Clone)]
pub(crate) struct ClusterLayout {
    pub(crate) ranges: Vec<(usize, usize)>,
    pub(crate) slots: Vec<Vec<usize>>,
    pub(crate) n_slots: usize,
}

impl ClusterLayout {
    pub(crate) fn new(ds: &ClusteredDataset) -> Self {
        let mut start = 0;
        let mut ranges = Vec::with_capacity(ds.n_clusters());
        let mut slots = Vec::with_capacity(ds.n_clusters());
        for c in ds.clusters() {
            ranges.push((start, c.len()));
            slots.push(c.slots());
            start += c.len();
        }
        ClusterLayout { ranges, slots, n_slots: ds.n_slots() }
    }
}

fn rows_of(x: &Matrix, start: usize, len: usize) -> Matrix {
    Matrix::from_fn(len, x.cols(), |i, j| x[(start + i, j)])
}

/// `D = ∂μ/∂β` for the given rows: `diag(dμ/dη) · X`.
pub fn mean_jacobian(x: &Matrix, beta: &[f64], family: Family) -> Matrix {
    let eta = linear_predictor(x, beta);
    Matrix::from_fn(x.rows(), x.cols(), |i, j| family.mu_eta(eta[i]) * x[(i, j)])
}

/// Fitted means `μ(β)` for the given rows.
pub fn fitted_means(x: &Matrix, beta: &[f64], family: Family) -> Vec<f64> {
    linear_predictor(x, beta).into_iter().map(|e| family.link_inverse(e)).collect()
}

/// Pearson residuals `(y − μ)/√V(μ)`.
fn pearson(y: &[f64], mu: &[f64], family: Family) -> Vec<f64> {
    y.iter().zip(mu).map(|(y, m)| (y - m) / family.variance(*m).sqrt()).collect()
}

/// Sums accumulated over clusters at a fixed β, α and φ.
struct ClusterSums {
    /// `Σ D'V⁻¹D`
    information: Matrix,
    /// `Σ D'V⁻¹(Y − μ)`
    score: Vec<f64>,
    /// `Σ sᵢ sᵢ'` with `sᵢ = D_i'V_i⁻¹(Y_i − μ_i)`
    meat: Matrix,
}

fn cluster_sums(
    x: &Matrix,
    y: &[f64],
    layout: &ClusterLayout,
    beta: &[f64],
    family: Family,
    structure: &CorrelationStructure,
    phi: f64,
) -> Result<ClusterSums> {
    let p = x.cols();
    let mut information = Matrix::zeros(p, p);
    let mut score = vec![0.0; p];
    let mut meat = Matrix::zeros(p, p);
    for ((start, len), slots) in layout.ranges.iter().zip(&layout.slots) {
        let xi = rows_of(x, *start, *len);
        let eta = linear_predictor(&xi, beta);
        let mu: Vec<f64> = eta.iter().map(|e| family.link_inverse(*e)).collect();
        let sd: Vec<f64> = mu.iter().map(|m| family.variance(*m).sqrt()).collect();
        let d = Matrix::from_fn(*len, p, |i, j| family.mu_eta(eta[i]) * xi[(i, j)]);
        let r = realize_for_slots(structure, slots)?;
        let v = Matrix::from_fn(*len, *len, |i, j| phi * sd[i] * r[(i, j)] * sd[j]);
        let f = spd_factor(&v)?;
        let vinv_d = spd_solve(&f, &d)?;
        let resid: Vec<f64> = y[*start..start + len].iter().zip(&mu).map(|(y, m)| y - m).collect();
        let vinv_r = f.solve_vec(&resid)?;
        information.add_assign(&d.tr_mul(&vinv_d)?);
        let s = d.tr_mul(&Matrix::column(&vinv_r))?;
        for a in 0..p {
            score[a] += s[(a, 0)];
            for b in 0..p {
                meat.add_at(a, b, s[(a, 0)] * s[(b, 0)]);
            }
        }
    }
    Ok(ClusterSums { information, score, meat })
}

/// Left-hand side of the estimating equation at the given parameters.
pub fn estimating_function(
    x: &DesignMatrix,
    ds: &ClusteredDataset,
    family: Family,
    beta: &[f64],
    structure: &CorrelationStructure,
    phi: f64,
) -> Result<Vec<f64>> {
    check_shapes(x, ds)?;
    let layout = ClusterLayout::new(ds);
    Ok(cluster_sums(&x.values, &ds.responses(), &layout, beta, family, structure, phi)?.score)
}

/// Independence information `(1/φ) Σ D_i' A_i⁻¹ D_i` at β.
pub fn independence_information(x: &Matrix, beta: &[f64], family: Family, phi: f64) -> Matrix {
    let eta = linear_predictor(x, beta);
    let p = x.cols();
    let mut out = Matrix::zeros(p, p);
    for (i, e) in eta.iter().enumerate() {
        let mu = family.link_inverse(*e);
        let d = family.mu_eta(*e);
        let w = d * d / family.variance(mu) / phi;
        let row = x.row(i);
        for a in 0..p {
            for b in 0..p {
                out.add_at(a, b, w * row[a] * row[b]);
            }
        }
    }
    out
}

/// `φ = Σ r² / (n − p)`, or 1 when fixed.
pub fn estimate_phi(residuals: &[f64], n_total: usize, p: usize, fix_to_one: bool) -> f64 {
    if fix_to_one {
        return 1.0;
    }
    let ss: f64 = residuals.iter().map(|r| r * r).sum();
    ss / (n_total.saturating_sub(p).max(1)) as f64
}

fn check_shapes(x: &DesignMatrix, ds: &ClusteredDataset) -> Result<()> {
    if x.values.rows() != ds.n_total() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, dataset {}",
            x.values.rows(),
            ds.n_total()
        )));
    }
    Ok(())
}

struct Nuisance {
    phi: f64,
    structure: CorrelationStructure,
    warnings: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
fn refresh_nuisance(
    x: &Matrix,
    y: &[f64],
    layout: &ClusterLayout,
    beta: &[f64],
    family: Family,
    kind: &CorrelationKind,
    opts: &GeeOptions,
    fix_phi: bool,
) -> Result<Nuisance> {
    let mu = fitted_means(x, beta, family);
    let r = pearson(y, &mu, family);
    let p = x.cols();
    let phi = estimate_phi(&r, y.len(), p, fix_phi);
    if let Some(fixed) = &opts.fixed_correlation {
        return Ok(Nuisance { phi, structure: fixed.clone(), warnings: Vec::new() });
    }
    let groups: Vec<ClusterResiduals> = layout
        .ranges
        .iter()
        .zip(&layout.slots)
        .map(|((start, len), slots)| ClusterResiduals {
            slots: slots.clone(),
            residuals: r[*start..start + len].to_vec(),
        })
        .collect();
    match estimate_alpha(kind, &groups, phi, p, opts.denominator, layout.n_slots) {
        Ok(est) => Ok(Nuisance { phi, structure: est.structure, warnings: est.warnings }),
        // all singletons: every realized R is [1] whatever α is
        Err(Error::NoPairs) => Ok(Nuisance {
            phi,
            structure: CorrelationStructure::zero(kind, layout.n_slots),
            warnings: vec!["no within-cluster pairs; correlation left at 0".into()],
        }),
        Err(e) => Err(e),
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Fits a marginal model by GEE.
///
/// Returns `Error::NoConvergence` carrying the last iterate (with its
/// covariance estimates) when `max_iter` is exhausted.
pub fn fit_gee(
    x: &DesignMatrix,
    ds: &ClusteredDataset,
    family: Family,
    kind: &CorrelationKind,
    opts: &GeeOptions,
) -> Result<GeeFit> {
    check_shapes(x, ds)?;
    let xm = &x.values;
    let y = ds.responses();
    if xm.rows() < xm.cols() || !has_full_column_rank(xm) {
        return Err(Error::RankDeficient);
    }
    if let CorrelationKind::Fixed(m) = kind {
        if m.rows() < ds.n_slots() {
            return Err(Error::SizeExceedsTemplate { size: ds.n_slots(), template: m.rows() });
        }
    }
    let layout = ClusterLayout::new(ds);
    let fix_phi = opts.fix_phi.unwrap_or_else(|| family.default_fix_phi());

    let start = irls_iterate(xm, &y, family, DEFAULT_IRLS_TOL, DEFAULT_IRLS_MAX_ITER)?;
    let mut beta = start.beta;
    let mut nuisance = refresh_nuisance(xm, &y, &layout, &beta, family, kind, opts, fix_phi)?;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let sums = cluster_sums(xm, &y, &layout, &beta, family, &nuisance.structure, nuisance.phi)?;
        let f = spd_factor(&sums.information).map_err(|_| Error::RankDeficient)?;
        let step = f.solve_vec(&sums.score)?;
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NoConvergence { iterations, partial: None });
        }
        nuisance = refresh_nuisance(xm, &y, &layout, &beta, family, kind, opts, fix_phi)?;
        if inf_norm(&step) < opts.tol {
            converged = true;
            break;
        }
        let mu = fitted_means(xm, &beta, family);
        if mu.iter().any(|m| family.at_boundary(*m, 1e-10)) {
            return Err(Error::PerfectSeparation);
        }
    }

    let sums = cluster_sums(xm, &y, &layout, &beta, family, &nuisance.structure, nuisance.phi)?;
    let bread = spd_inverse(&spd_factor(&sums.information).map_err(|_| Error::RankDeficient)?);
    let sandwich = crate::linalg::matmul(&crate::linalg::matmul(&bread, &sums.meat)?, &bread)?;
    let p = bread.rows();
    let cov_robust = Matrix::from_fn(p, p, |i, j| 0.5 * (sandwich[(i, j)] + sandwich[(j, i)]));
    let q = quasi_likelihood(xm, &beta, &y, family)?;

    let fit = GeeFit {
        beta,
        column_labels: x.column_labels.clone(),
        family,
        kind: kind.clone(),
        structure: nuisance.structure,
        phi: nuisance.phi,
        cov_model_based: bread,
        cov_robust,
        quasi_likelihood_independence: q,
        iterations,
        converged,
        n_clusters: ds.n_clusters(),
        n_obs: ds.n_total(),
        warnings: nuisance.warnings,
    };
    if converged {
        Ok(fit)
    } else {
        Err(Error::NoConvergence { iterations, partial: Some(Box::new(fit)) })
    }
}

fn sqrt_diag(m: &Matrix) -> Result<Vec<f64>> {
    m.diagonal()
        .into_iter()
        .map(|v| if v < -1e-10 { Err(Error::NegativeVariance(v)) } else { Ok(v.max(0.0).sqrt()) })
        .collect()
}

/// Standard errors from the robust (sandwich) covariance diagonal.
pub fn robust_se(fit: &GeeFit) -> Result<Vec<f64>> {
    sqrt_diag(&fit.cov_robust)
}

/// Standard errors from the model-based covariance diagonal.
pub fn model_based_se(fit: &GeeFit) -> Result<Vec<f64>> {
    sqrt_diag(&fit.cov_model_based)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_design, read_csv, CategoryOrder, TermCoding};

    fn dummy_fit(cov: Matrix) -> GeeFit {
        GeeFit {
            beta: vec![0.0; cov.rows()],
            column_labels: vec![],
            family: Family::binomial(),
            kind: CorrelationKind::Independent,
            structure: CorrelationStructure::Independent,
            phi: 1.0,
            cov_model_based: cov.clone(),
            cov_robust: cov,
            quasi_likelihood_independence: 0.0,
            iterations: 1,
            converged: true,
            n_clusters: 1,
            n_obs: 1,
            warnings: vec![],
        }
    }

    #[test]
    fn phi_estimates() {
        assert_eq!(estimate_phi(&[0.3, 2.0], 2, 1, true), 1.0);
        assert_eq!(estimate_phi(&[0.0; 5], 5, 2, false), 0.0);
        assert_eq!(estimate_phi(&[1.0, -1.0, 1.0, -1.0], 4, 2, false), 2.0);
    }

    #[test]
    fn robust_se_is_sqrt_diagonal() {
        let fit = dummy_fit(Matrix::diag(&[0.3321f64.powi(2), 0.3800f64.powi(2)]));
        let se = robust_se(&fit).unwrap();
        assert!((se[0] - 0.3321).abs() < 1e-12 && (se[1] - 0.3800).abs() < 1e-12);
        assert_eq!(robust_se(&dummy_fit(Matrix::identity(3))).unwrap(), vec![1.0; 3]);
        assert!(matches!(robust_se(&dummy_fit(Matrix::diag(&[1.0, -0.1]))), Err(Error::NegativeVariance(_))));
    }

    const CLUSTERED: &str = "ID,X,Y\n\
        1,0,1\n1,1,1\n1,0,0\n2,1,0\n2,1,1\n3,0,0\n3,1,1\n3,0,1\n4,0,0\n4,1,0\n\
        5,1,1\n5,0,0\n6,0,1\n6,1,1\n6,1,0\n7,0,0\n7,0,0\n8,1,1\n8,0,1\n8,1,1\n";

    fn balanced_sample() -> ClusteredDataset {
        use crate::simulate::{generate, CovariateDistribution, CovariateSpec, SimProfile};
        generate(&SimProfile {
            n_clusters: 120,
            size_distribution: vec![(4, 1.0)],
            covariates: vec![CovariateSpec {
                name: "X".into(),
                distribution: CovariateDistribution::Categorical { levels: vec![(0.0, 0.5), (1.0, 0.5)] },
                cluster_constant: false,
            }],
            derived: vec![],
            intercept: -0.5,
            coefficients: vec![("X".into(), 0.8)],
            alpha: 0.3,
            seed: 17,
            cluster_name: "ID".into(),
            response_name: "Y".into(),
            within_name: Some("T".into()),
            max_position: 4,
        })
        .unwrap()
    }

    #[test]
    fn default_structures_converge_with_valid_covariances() {
        let ds = balanced_sample();
        let x = build_design(&ds, &[TermCoding::factor("X", CategoryOrder::Descending)]).unwrap();
        for kind in CorrelationKind::defaults() {
            let fit = fit_gee(&x, &ds, Family::binomial(), &kind, &GeeOptions::default())
                .unwrap_or_else(|e| panic!("{kind}: {e}"));
            assert!(fit.converged, "{kind}");
            assert_eq!(fit.phi, 1.0);
            assert!(fit.cov_robust.asymmetry() < 1e-10);
            assert!(spd_factor(&fit.cov_robust).is_ok());
            assert!(spd_factor(&fit.cov_model_based).is_ok());
            let u = estimating_function(&x, &ds, Family::binomial(), &fit.beta, &fit.structure, fit.phi).unwrap();
            assert!(inf_norm(&u) < 1e-6, "{kind}: {u:?}");
        }
    }

    #[test]
    fn small_sample_fits_or_reports_indefinite_band() {
        // eight tiny clusters: banded estimates may leave the valid region
        let ds = read_csv(CLUSTERED.as_bytes(), "ID", "Y", None).unwrap();
        let x = build_design(&ds, &[TermCoding::factor("X", CategoryOrder::Descending)]).unwrap();
        for kind in CorrelationKind::defaults() {
            match fit_gee(&x, &ds, Family::binomial(), &kind, &GeeOptions::default()) {
                Ok(fit) => assert!(fit.converged, "{kind}"),
                Err(Error::NotPositiveDefinite) => assert!(matches!(kind, CorrelationKind::MDependent { .. } | CorrelationKind::Unstructured)),
                Err(e) => panic!("{kind}: {e}"),
            }
        }
    }

    #[test]
    fn design_dataset_mismatch() {
        let ds = read_csv(CLUSTERED.as_bytes(), "ID", "Y", None).unwrap();
        let other = read_csv("ID,X,Y\n1,0,1\n2,1,0\n".as_bytes(), "ID", "Y", None).unwrap();
        let x = build_design(&other, &[TermCoding::covariate("X")]).unwrap();
        assert!(matches!(
            fit_gee(&x, &ds, Family::binomial(), &CorrelationKind::Independent, &GeeOptions::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn max_iter_zero_reports_partial_fit() {
        let ds = read_csv(CLUSTERED.as_bytes(), "ID", "Y", None).unwrap();
        let x = build_design(&ds, &[TermCoding::covariate("X")]).unwrap();
        let opts = GeeOptions { max_iter: 0, ..GeeOptions::default() };
        match fit_gee(&x, &ds, Family::binomial(), &CorrelationKind::Exchangeable, &opts) {
            Err(Error::NoConvergence { partial: Some(fit), .. }) => assert!(!fit.converged),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn normal_family_estimates_phi() {
        let ds = read_csv(
            "ID,X,Y\n1,0,1.5\n1,1,2.9\n2,0,0.7\n2,1,2.2\n3,0,1.1\n3,1,3.4\n4,0,0.2\n4,1,2.0\n".as_bytes(),
            "ID",
            "Y",
            None,
        )
        .unwrap();
        let x = build_design(&ds, &[TermCoding::covariate("X")]).unwrap();
        let fit = fit_gee(&x, &ds, Family::normal(), &CorrelationKind::Exchangeable, &GeeOptions::default()).unwrap();
        assert!(fit.phi > 0.0 && fit.phi != 1.0);
    }
}
