//! Clustered binary data generation.
//!
//! Responses come from a latent Gaussian threshold model: within a cluster
//! the latent normals share an exchangeable correlation, and each row's
//! threshold is the normal quantile of its inverse-logit mean, so every
//! marginal event probability equals the linear-predictor target exactly.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{ClusteredDataset, Record, Value};
use crate::error::{Error, Result};

/// Cluster-size frequencies of the reference miniscrew study
/// (31, 67, 17, 14, 3, 3 patients with 1..=6 screws).
pub const REFERENCE_SIZE_COUNTS: [(usize, usize); 6] = [(1, 31), (2, 67), (3, 17), (4, 14), (5, 3), (6, 3)];

pub fn reference_size_distribution() -> Vec<(usize, f64)> {
    let total: usize = REFERENCE_SIZE_COUNTS.iter().map(|(_, c)| c).sum();
    REFERENCE_SIZE_COUNTS.iter().map(|&(s, c)| (s, c as f64 / total as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum CovariateDistribution {
    /// `(level, probability)` pairs.
    Categorical { levels: Vec<(f64, f64)> },
    Uniform { low: f64, high: f64, integer: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub distribution: CovariateDistribution,
    /// Drawn once per cluster rather than per row.
    pub cluster_constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub source: String,
    pub threshold: f64,
    pub new_name: String,
    pub strict_above: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimProfile {
    pub n_clusters: usize,
    pub size_distribution: Vec<(usize, f64)>,
    pub covariates: Vec<CovariateSpec>,
    /// 0/1 columns derived after the covariates are drawn; usable in the
    /// linear predictor.
    pub derived: Vec<ThresholdSpec>,
    pub intercept: f64,
    pub coefficients: Vec<(String, f64)>,
    /// Target pairwise within-cluster correlation of the binary responses.
    pub alpha: f64,
    pub seed: u64,
    pub cluster_name: String,
    pub response_name: String,
    /// Within-subject column; positions are distinct draws from
    /// `1..=max_position`.
    pub within_name: Option<String>,
    pub max_position: usize,
}

impl SimProfile {
    /// Miniscrew-study layout: reference cluster sizes, the study's column
    /// names, and effects for AGE1, AREA1 and NINSERT1.
    pub fn miniscrew(n_clusters: usize, alpha: f64, seed: u64) -> Self {
        let cat = |levels: &[(f64, f64)]| CovariateDistribution::Categorical { levels: levels.to_vec() };
        let spec = |name: &str, distribution, cluster_constant| CovariateSpec {
            name: name.to_string(),
            distribution,
            cluster_constant,
        };
        let derive = |source: &str, threshold, new_name: &str, strict_above| ThresholdSpec {
            source: source.to_string(),
            threshold,
            new_name: new_name.to_string(),
            strict_above,
        };
        SimProfile {
            n_clusters,
            size_distribution: reference_size_distribution(),
            covariates: vec![
                spec("AGE", CovariateDistribution::Uniform { low: 12.0, high: 45.0, integer: true }, true),
                spec("GENDER", cat(&[(0.0, 0.6), (1.0, 0.4)]), true),
                spec("AREA1", cat(&[(0.0, 0.26), (1.0, 0.74)]), false),
                spec("LENGTH", cat(&[(6.0, 0.2), (7.0, 0.3), (8.0, 0.3), (10.0, 0.1), (12.0, 0.1)]), false),
                spec("DIAMETER", cat(&[(1.6, 0.5), (1.8, 0.5)]), false),
                spec("NINSERT", CovariateDistribution::Uniform { low: 1.0, high: 40.0, integer: true }, true),
            ],
            derived: vec![
                derive("AGE", 20.0, "AGE1", true),
                derive("LENGTH", 8.0, "LENGTH1", false),
                derive("NINSERT", 20.0, "NINSERT1", true),
            ],
            intercept: -0.1,
            coefficients: vec![("AGE1".into(), -0.55), ("AREA1".into(), -0.85), ("NINSERT1".into(), -0.75)],
            alpha,
            seed,
            cluster_name: "ID".into(),
            response_name: "LOOSENING".into(),
            within_name: Some("AREA2".into()),
            max_position: 12,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProfile(m));
        if self.n_clusters == 0 {
            return bad("no clusters".into());
        }
        let total: f64 = self.size_distribution.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 || self.size_distribution.iter().any(|(s, p)| *s == 0 || *p < 0.0) {
            return bad(format!("size probabilities sum to {total}"));
        }
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside [0, 1)", self.alpha));
        }
        let max_size = self.size_distribution.iter().map(|(s, _)| *s).max().unwrap_or(0);
        if self.within_name.is_some() && self.max_position < max_size {
            return bad("fewer positions than the largest cluster".into());
        }
        for c in &self.covariates {
            match &c.distribution {
                CovariateDistribution::Categorical { levels } => {
                    let t: f64 = levels.iter().map(|(_, p)| p).sum();
                    if levels.is_empty() || (t - 1.0).abs() > 1e-12 {
                        return bad(format!("{} level probabilities sum to {t}", c.name));
                    }
                }
                CovariateDistribution::Uniform { low, high, .. } => {
                    if !(low <= high) {
                        return bad(format!("{} has an empty range", c.name));
                    }
                }
            }
        }
        let known: Vec<&str> = self
            .covariates
            .iter()
            .map(|c| c.name.as_str())
            .chain(self.derived.iter().map(|d| d.new_name.as_str()))
            .collect();
        for d in &self.derived {
            if !known.contains(&d.source.as_str()) {
                return bad(format!("derived source {} unknown", d.source));
            }
        }
        for (name, _) in &self.coefficients {
            if !known.contains(&name.as_str()) {
                return bad(format!("coefficient for unknown variable {name}"));
            }
        }
        Ok(())
    }

    fn variable_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).chain(self.derived.iter().map(|d| d.new_name.clone())).collect()
    }

    fn draw_covariate(spec: &CovariateSpec, rng: &mut ChaCha8Rng) -> f64 {
        match &spec.distribution {
            CovariateDistribution::Categorical { levels } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (level, p) in levels {
                    acc += p;
                    if u < acc {
                        return *level;
                    }
                }
                levels.last().expect("validated non-empty").0
            }
            CovariateDistribution::Uniform { low, high, integer } => {
                if *integer {
                    rng.random_range(low.ceil() as i64..=high.floor() as i64) as f64
                } else {
                    low + (high - low) * rng.random::<f64>()
                }
            }
        }
    }

    /// Full row of covariate values (drawn then derived).
    fn complete_row(&self, drawn: Vec<f64>) -> Vec<f64> {
        let mut values = drawn;
        for d in &self.derived {
            let src = self.variable_names().iter().position(|n| *n == d.source).expect("validated");
            let v = values[src];
            let hit = if d.strict_above { v > d.threshold } else { v >= d.threshold };
            values.push(if hit { 1.0 } else { 0.0 });
        }
        values
    }

    fn event_probability(&self, names: &[String], values: &[f64]) -> f64 {
        let eta = self.intercept
            + self
                .coefficients
                .iter()
                .map(|(name, b)| b * values[names.iter().position(|n| n == name).expect("validated")])
                .sum::<f64>();
        inv_logit(eta)
    }
}

fn inv_logit(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// `P(Z₁ ≤ h, Z₂ ≤ k)` for standard bivariate normals with correlation
/// `rho`, integrating the density derivative in ρ from 0 (Plackett) with
/// the substitution `r = sin θ`, which removes the endpoint singularity.
pub fn bivariate_normal_cdf(h: f64, k: f64, rho: f64) -> f64 {
    let base = normal_cdf(h) * normal_cdf(k);
    if rho == 0.0 {
        return base;
    }
    let top = rho.clamp(-1.0, 1.0).asin();
    let f = |theta: f64| {
        let (s, c) = theta.sin_cos();
        let c2 = (c * c).max(1e-300);
        (-(h * h - 2.0 * s * h * k + k * k) / (2.0 * c2)).exp()
    };
    let n = 400;
    let step = top / n as f64;
    let mut acc = f(0.0) + f(top);
    for i in 1..n {
        acc += f(i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    base + acc * step / 3.0 / (2.0 * PI)
}

/// Correlation between `1{Z₁ ≤ Φ⁻¹(p1)}` and `1{Z₂ ≤ Φ⁻¹(p2)}` when the
/// latent normals have correlation `rho`.
pub fn binary_correlation(p1: f64, p2: f64, rho: f64) -> f64 {
    let joint = bivariate_normal_cdf(normal_quantile(p1), normal_quantile(p2), rho);
    (joint - p1 * p2) / (p1 * (1.0 - p1) * p2 * (1.0 - p2)).sqrt()
}

/// Largest attainable correlation between Bernoulli(p1) and Bernoulli(p2).
pub fn frechet_upper_bound(p1: f64, p2: f64) -> f64 {
    let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
    (lo * (1.0 - hi) / (hi * (1.0 - lo))).sqrt()
}

/// Latent correlation giving binary correlation `alpha` between margins
/// `p1` and `p2`.
pub fn calibrate_latent_correlation(p1: f64, p2: f64, alpha: f64) -> Result<f64> {
    let bound = frechet_upper_bound(p1, p2);
    if alpha > bound {
        return Err(Error::InfeasibleCorrelation { alpha, bound });
    }
    if alpha <= 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0 - 1e-12);
    if binary_correlation(p1, p2, hi) < alpha {
        return Err(Error::InfeasibleCorrelation { alpha, bound });
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if binary_correlation(p1, p2, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn quantile_of(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

/// Draws one dataset from the profile. The same profile always yields the
/// same dataset.
pub fn generate(profile: &SimProfile) -> Result<ClusteredDataset> {
    profile.validate()?;
    let names = profile.variable_names();

    // Pilot draws of the marginal probabilities, on their own stream.
    let mut pilot_rng = ChaCha8Rng::seed_from_u64(profile.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut pilot: Vec<f64> = (0..4000)
        .map(|_| {
            let drawn = profile.covariates.iter().map(|c| SimProfile::draw_covariate(c, &mut pilot_rng)).collect();
            profile.event_probability(&names, &profile.complete_row(drawn))
        })
        .collect();
    pilot.sort_by(f64::total_cmp);
    let (p_lo, p_hi) = (quantile_of(&pilot, 0.05), quantile_of(&pilot, 0.95));
    let bound = frechet_upper_bound(p_lo, p_hi);
    if profile.alpha > bound {
        return Err(Error::InfeasibleCorrelation { alpha: profile.alpha, bound });
    }
    let p_bar = pilot.iter().sum::<f64>() / pilot.len() as f64;
    let rho = calibrate_latent_correlation(p_bar, p_bar, profile.alpha)?;
    let (shared, own) = (rho.sqrt(), (1.0 - rho).sqrt());

    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let mut records = Vec::new();
    let all_positions: Vec<usize> = (1..=profile.max_position).collect();
    for c in 0..profile.n_clusters {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut size = profile.size_distribution.last().expect("validated").0;
        for (s, p) in &profile.size_distribution {
            acc += p;
            if u < acc {
                size = *s;
                break;
            }
        }
        let constant: Vec<Option<f64>> = profile
            .covariates
            .iter()
            .map(|spec| spec.cluster_constant.then(|| SimProfile::draw_covariate(spec, &mut rng)))
            .collect();
        let mut positions: Vec<usize> = if profile.within_name.is_some() {
            all_positions.choose_multiple(&mut rng, size).copied().collect()
        } else {
            (1..=size).collect()
        };
        positions.sort_unstable();
        let latent_shared: f64 = StandardNormal.sample(&mut rng);
        for pos in positions {
            let drawn: Vec<f64> = profile
                .covariates
                .iter()
                .zip(&constant)
                .map(|(spec, k)| k.unwrap_or_else(|| SimProfile::draw_covariate(spec, &mut rng)))
                .collect();
            let values = profile.complete_row(drawn);
            let p = profile.event_probability(&names, &values);
            let e: f64 = StandardNormal.sample(&mut rng);
            let z = shared * latent_shared + own * e;
            let y = if normal_cdf(z) < p { 1.0 } else { 0.0 };
            records.push(Record {
                cluster: (c + 1).to_string(),
                position: profile.within_name.as_ref().map(|_| pos as f64),
                response: y,
                values: values.into_iter().map(Value::Number).collect(),
            });
        }
    }
    ClusteredDataset::from_records(
        &profile.cluster_name,
        &profile.response_name,
        profile.within_name.as_deref(),
        names,
        records,
    )
}

/// Failures per cluster for the deterministic reference layout:
/// `(cluster size, failures, how many such clusters)`. Reproduces the
/// reference size table, its concordance split (62 all-success, 4
/// all-failure, 19 skewed, 19 equal among 104 multi-screw patients) and
/// 69 failures among 305 screws.
const REFERENCE_LAYOUT: [(usize, usize, usize); 17] = [
    (1, 1, 6),
    (1, 0, 25),
    (2, 1, 19),
    (2, 2, 4),
    (2, 0, 44),
    (3, 1, 5),
    (3, 2, 5),
    (3, 0, 7),
    (4, 1, 3),
    (4, 3, 3),
    (4, 0, 8),
    (5, 2, 1),
    (5, 3, 1),
    (5, 0, 1),
    (6, 4, 1),
    (6, 0, 2),
    (0, 0, 0),
];

/// 305-row dataset (ID, AREA2, AREA1, LOOSENING) whose AREA1 × LOOSENING
/// counts are exactly maxilla 42 failures / 184 successes and mandible 27 /
/// 52, arranged into the reference cluster sizes. AREA2 sites are even for
/// maxilla and odd for mandible. The seed only permutes the arrangement.
pub fn build_paper_marginals(seed: u64) -> ClusteredDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clusters: Vec<(usize, usize)> = Vec::new();
    for &(size, failures, count) in REFERENCE_LAYOUT.iter().filter(|l| l.0 > 0) {
        clusters.extend(std::iter::repeat_n((size, failures), count));
    }
    clusters.shuffle(&mut rng);

    // (cluster index, failed) per row, then AREA1 dealt out per outcome.
    let mut rows: Vec<(usize, bool)> = Vec::new();
    for (i, &(size, failures)) in clusters.iter().enumerate() {
        rows.extend((0..size).map(|j| (i, j < failures)));
    }
    let mut fail_area: Vec<bool> = std::iter::repeat_n(true, 42).chain(std::iter::repeat_n(false, 27)).collect();
    let mut succ_area: Vec<bool> = std::iter::repeat_n(true, 184).chain(std::iter::repeat_n(false, 52)).collect();
    fail_area.shuffle(&mut rng);
    succ_area.shuffle(&mut rng);
    let (mut fi, mut si) = (0, 0);
    let mut area = Vec::with_capacity(rows.len());
    for &(_, failed) in &rows {
        if failed {
            area.push(fail_area[fi]);
            fi += 1;
        } else {
            area.push(succ_area[si]);
            si += 1;
        }
    }

    let mut records = Vec::with_capacity(rows.len());
    let mut start = 0;
    for (i, &(size, _)) in clusters.iter().enumerate() {
        let mut even: Vec<usize> = (1..=6).map(|k| 2 * k).collect();
        let mut odd: Vec<usize> = (0..6).map(|k| 2 * k + 1).collect();
        even.shuffle(&mut rng);
        odd.shuffle(&mut rng);
        for j in start..start + size {
            let maxilla = area[j];
            let site = if maxilla { even.pop() } else { odd.pop() }.expect("at most six screws per jaw");
            records.push(Record {
                cluster: (i + 1).to_string(),
                position: Some(site as f64),
                response: if rows[j].1 { 1.0 } else { 0.0 },
                values: vec![Value::Number(if maxilla { 1.0 } else { 0.0 })],
            });
        }
        start += size;
    }
    ClusteredDataset::from_records("ID", "LOOSENING", Some("AREA2"), vec!["AREA1".into()], records)
        .expect("layout has distinct sites within every cluster")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{concordance_summary, crosstab_panels, ContingencyTable};

    /// Quadrant probability by direct 2-D Simpson integration of the
    /// density; independent of the Plackett route.
    fn quadrant_by_quadrature(h: f64, k: f64, rho: f64) -> f64 {
        let n = 800;
        let lo = -9.0;
        let (dx, dy) = ((h - lo) / n as f64, (k - lo) / n as f64);
        let det = 1.0 - rho * rho;
        let dens = |x: f64, y: f64| (-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * det)).exp() / (2.0 * PI * det.sqrt());
        let w = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let mut acc = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                acc += w(i) * w(j) * dens(lo + i as f64 * dx, lo + j as f64 * dy);
            }
        }
        acc * dx * dy / 9.0
    }

    #[test]
    fn plackett_matches_quadrature() {
        for &(h, k, rho) in &[(0.0, 0.0, 0.5), (-0.6, 0.3, 0.8), (0.4, -1.1, -0.3), (1.2, 1.2, 0.95)] {
            let a = bivariate_normal_cdf(h, k, rho);
            let b = quadrant_by_quadrature(h, k, rho);
            assert!((a - b).abs() < 1e-7, "{h} {k} {rho}: {a} vs {b}");
        }
        // closed form at h = k = 0: 1/4 + asin(ρ)/(2π)
        let rho: f64 = 0.37;
        assert!((bivariate_normal_cdf(0.0, 0.0, rho) - (0.25 + rho.asin() / (2.0 * PI))).abs() < 1e-12);
    }

    #[test]
    fn calibration_hits_target() {
        for &(p1, p2, a) in &[(0.5, 0.5, 0.5), (0.27, 0.45, 0.3), (0.1, 0.1, 0.2)] {
            let rho = calibrate_latent_correlation(p1, p2, a).unwrap();
            assert!((binary_correlation(p1, p2, rho) - a).abs() < 1e-3);
        }
        // symmetric margins: φ = 2·asin(ρ)/π, so ρ = sin(π/4) for φ = 0.5
        let rho = calibrate_latent_correlation(0.5, 0.5, 0.5).unwrap();
        assert!((rho - (PI / 4.0).sin()).abs() < 1e-6);
    }

    #[test]
    fn infeasible_correlation() {
        assert!(matches!(
            calibrate_latent_correlation(0.05, 0.9, 0.5),
            Err(Error::InfeasibleCorrelation { .. })
        ));
    }

    fn simple_profile(alpha: f64, n: usize, seed: u64) -> SimProfile {
        SimProfile {
            n_clusters: n,
            size_distribution: vec![(4, 1.0)],
            covariates: vec![],
            derived: vec![],
            intercept: 0.0,
            coefficients: vec![],
            alpha,
            seed,
            cluster_name: "ID".into(),
            response_name: "Y".into(),
            within_name: None,
            max_position: 4,
        }
    }

    fn pairwise_correlation(ds: &ClusteredDataset) -> (f64, usize) {
        let ybar = ds.responses().iter().sum::<f64>() / ds.n_total() as f64;
        let var = ybar * (1.0 - ybar);
        let (mut num, mut pairs) = (0.0, 0usize);
        for c in ds.clusters() {
            for j in 0..c.len() {
                for k in (j + 1)..c.len() {
                    num += (c.rows[j].response - ybar) * (c.rows[k].response - ybar);
                    pairs += 1;
                }
            }
        }
        (num / pairs as f64 / var, pairs)
    }

    #[test]
    fn independence_limit() {
        let ds = generate(&simple_profile(0.0, 17_000, 3)).unwrap();
        let (r, pairs) = pairwise_correlation(&ds);
        assert!(pairs >= 100_000);
        assert!(r.abs() < 0.02, "{r}");
    }

    #[test]
    fn symmetric_margins_reach_target() {
        let ds = generate(&simple_profile(0.5, 20_000, 5)).unwrap();
        let (r, _) = pairwise_correlation(&ds);
        assert!((r - 0.5).abs() < 0.02, "{r}");
    }

    #[test]
    fn reference_sizes_reproduced() {
        let mut p = simple_profile(0.2, 10_000, 9);
        p.size_distribution = reference_size_distribution();
        p.within_name = Some("POS".into());
        p.max_position = 12;
        let ds = generate(&p).unwrap();
        let sizes = ds.cluster_sizes();
        for (s, prob) in reference_size_distribution() {
            let freq = sizes.iter().filter(|&&v| v == s).count() as f64 / sizes.len() as f64;
            assert!((freq - prob).abs() < 0.03, "size {s}: {freq} vs {prob}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let p = SimProfile::miniscrew(200, 0.3, 7);
        let a = generate(&p).unwrap();
        let b = generate(&p).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ba).unwrap();
        b.write_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let c = generate(&SimProfile { seed: 8, ..p }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_profiles() {
        let mut p = simple_profile(0.2, 10, 1);
        p.size_distribution = vec![(2, 0.5), (3, 0.4)];
        assert!(matches!(generate(&p), Err(Error::InvalidProfile(_))));
        let p = simple_profile(1.0, 10, 1);
        assert!(matches!(generate(&p), Err(Error::InvalidProfile(_))));
        let mut p = simple_profile(0.2, 10, 1);
        p.coefficients = vec![("NOPE".into(), 1.0)];
        assert!(matches!(generate(&p), Err(Error::InvalidProfile(_))));
    }

    #[test]
    fn marginal_rates_calibrated() {
        let mut p = simple_profile(0.4, 6000, 21);
        p.covariates = vec![CovariateSpec {
            name: "X".into(),
            distribution: CovariateDistribution::Categorical { levels: vec![(0.0, 0.5), (1.0, 0.5)] },
            cluster_constant: false,
        }];
        p.intercept = -1.0;
        p.coefficients = vec![("X".into(), 0.8)];
        let ds = generate(&p).unwrap();
        for (level, eta) in [(0.0, -1.0f64), (1.0, -0.2)] {
            let target = inv_logit(eta);
            let ys: Vec<f64> = ds
                .rows()
                .filter(|r| r.values[0].as_f64() == Some(level))
                .map(|r| r.response)
                .collect();
            let n = ys.len() as f64;
            let rate = ys.iter().sum::<f64>() / n;
            // clustering inflates the variance by 1 + (m-1)·α = 2.2
            let sigma = (target * (1.0 - target) / n * 2.2).sqrt();
            assert!((rate - target).abs() < 3.0 * sigma, "level {level}: {rate} vs {target}");
        }
    }

    #[test]
    fn paper_marginals_layout() {
        let ds = build_paper_marginals(1);
        assert_eq!(ds.n_total(), 305);
        assert_eq!(ds.n_clusters(), 135);
        let panels = crosstab_panels(&ds, "AREA1").unwrap();
        assert_eq!(panels[0].table, ContingencyTable::new(42, 184, 27, 52));
        let s = concordance_summary(&ds, "LOOSENING").unwrap();
        assert_eq!((s.all_success, s.all_failure, s.skewed, s.equal, s.singletons), (62, 4, 19, 19, 31));
        let mut sizes = ds.cluster_sizes();
        sizes.sort_unstable();
        for (size, count) in REFERENCE_SIZE_COUNTS {
            assert_eq!(sizes.iter().filter(|&&v| v == size).count(), count);
        }
        for r in ds.rows() {
            let maxilla = r.values[0].as_f64() == Some(1.0);
            assert_eq!(r.position as usize % 2 == 0, maxilla);
        }
        assert_eq!(build_paper_marginals(1), ds);
    }
}
