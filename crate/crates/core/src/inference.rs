//! Wald inference, odds and odds ratios, QIC/QICu and cluster summaries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::data::{CategoryOrder, ClusteredDataset, DesignMatrix, ResponseReference, Value};
use crate::error::{Error, Result};
use crate::gee::{independence_information, robust_se, GeeFit};
use crate::glm::Family;
use crate::linalg::trace_of_product;

/// One line of a parameter-estimates table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub label: String,
    pub b: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub wald_chisq: f64,
    pub df: u32,
    pub p_value: f64,
    pub exp_b: f64,
    pub exp_ci_low: f64,
    pub exp_ci_high: f64,
}

/// Two-sided standard-normal quantile for a confidence level.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf((1.0 + level) / 2.0))
}

/// Upper tail of chi-square(1) at `x`.
pub fn chisq1_upper_tail(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        erfc((x / 2.0).sqrt())
    }
}

pub fn wald_row(label: &str, b: f64, se: f64, level: f64) -> Result<ParameterRow> {
    let z = normal_quantile(level)?;
    if !(se > 0.0) {
        return Err(Error::DomainError { what: "standard error", value: se });
    }
    let (ci_low, ci_high) = (b - z * se, b + z * se);
    let wald_chisq = (b / se).powi(2);
    Ok(ParameterRow {
        label: label.to_string(),
        b,
        se,
        ci_low,
        ci_high,
        wald_chisq,
        df: 1,
        p_value: chisq1_upper_tail(wald_chisq),
        exp_b: b.exp(),
        exp_ci_low: ci_low.exp(),
        exp_ci_high: ci_high.exp(),
    })
}

/// Parameter table from a fit using robust standard errors.
pub fn parameter_table(fit: &GeeFit, level: f64) -> Result<Vec<ParameterRow>> {
    let se = robust_se(fit)?;
    fit.column_labels
        .iter()
        .zip(fit.beta.iter().zip(&se))
        .map(|(label, (b, s))| wald_row(label, *b, *s, level))
        .collect()
}

pub fn odds(events: u64, non_events: u64) -> Result<f64> {
    if non_events == 0 {
        return Err(Error::DivisionByZero);
    }
    Ok(events as f64 / non_events as f64)
}

/// `a`/`b`: events/non-events at the exposure level; `c`/`d`: at the
/// reference level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        ContingencyTable { a, b, c, d }
    }

    /// Exposure and reference rows exchanged.
    pub fn swap_rows(&self) -> Self {
        ContingencyTable { a: self.c, b: self.d, c: self.a, d: self.b }
    }

    /// Event and non-event columns exchanged.
    pub fn swap_columns(&self) -> Self {
        ContingencyTable { a: self.b, b: self.a, c: self.d, d: self.c }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

/// `ad / bc`.
pub fn odds_ratio(t: &ContingencyTable) -> Result<f64> {
    if t.b == 0 || t.c == 0 {
        return Err(Error::UndefinedOR);
    }
    Ok((t.a as f64 * t.d as f64) / (t.b as f64 * t.c as f64))
}

/// One reference-category variant of a 2x2 analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosstabPanel {
    pub response_reference: ResponseReference,
    pub factor_order: CategoryOrder,
    pub event_level: String,
    pub exposure_level: String,
    pub reference_level: String,
    pub table: ContingencyTable,
    pub odds_exposure: Option<f64>,
    pub odds_reference: Option<f64>,
    pub odds_ratio: Option<f64>,
}

fn binary_levels(values: &[&Value], name: &str) -> Result<(String, String)> {
    let numeric = values.iter().all(|v| matches!(v, Value::Number(_)));
    let mut levels: Vec<Value> = Vec::new();
    for v in values {
        if v.is_missing() {
            continue;
        }
        if !levels.contains(v) {
            levels.push((*v).clone());
        }
    }
    if levels.len() != 2 {
        return Err(Error::NonBinaryResponse(name.to_string()));
    }
    if numeric {
        levels.sort_by(|a, b| a.as_f64().unwrap().total_cmp(&b.as_f64().unwrap()));
    } else {
        levels.sort_by_key(|a| a.to_string());
    }
    Ok((levels[0].to_string(), levels[1].to_string()))
}

/// The four response-reference × factor-order panels for a binary
/// exposure, in the order (first, desc), (first, asc), (last, desc),
/// (last, asc). Rows missing the exposure are skipped.
pub fn crosstab_panels(ds: &ClusteredDataset, exposure: &str) -> Result<Vec<CrosstabPanel>> {
    let exp_values = ds.column(exposure)?;
    let (exp_low, exp_high) = binary_levels(&exp_values, exposure)?;
    let responses: Vec<Value> = ds.responses().into_iter().map(Value::Number).collect();
    let resp_refs: Vec<&Value> = responses.iter().collect();
    let (resp_low, resp_high) = binary_levels(&resp_refs, ds.response_name())?;

    let mut panels = Vec::with_capacity(4);
    for response_reference in [ResponseReference::First, ResponseReference::Last] {
        for factor_order in [CategoryOrder::Descending, CategoryOrder::Ascending] {
            let event = match response_reference {
                ResponseReference::First => &resp_high,
                ResponseReference::Last => &resp_low,
            };
            // the level sorting last in the chosen order is the reference
            let (exposed, reference) = match factor_order {
                CategoryOrder::Descending => (&exp_high, &exp_low),
                CategoryOrder::Ascending => (&exp_low, &exp_high),
            };
            let mut t = ContingencyTable::new(0, 0, 0, 0);
            for (e, y) in exp_values.iter().zip(&responses) {
                if e.is_missing() {
                    continue;
                }
                let is_event = y.to_string() == *event;
                let is_exposed = e.to_string() == *exposed;
                match (is_exposed, is_event) {
                    (true, true) => t.a += 1,
                    (true, false) => t.b += 1,
                    (false, true) => t.c += 1,
                    (false, false) => t.d += 1,
                }
            }
            panels.push(CrosstabPanel {
                response_reference,
                factor_order,
                event_level: event.clone(),
                exposure_level: exposed.clone(),
                reference_level: reference.clone(),
                table: t,
                odds_exposure: odds(t.a, t.b).ok(),
                odds_reference: odds(t.c, t.d).ok(),
                odds_ratio: odds_ratio(&t).ok(),
            });
        }
    }
    Ok(panels)
}

/// Pieces of the quasi-likelihood information criteria for one fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QicComponents {
    /// Independence quasi-likelihood at β̂.
    pub quasi_likelihood: f64,
    /// `trace(Ω̂_I · V̂_robust)`.
    pub trace: f64,
    pub p: usize,
    pub qic: f64,
    pub qic_u: f64,
}

pub fn qic_components(fit: &GeeFit, x: &DesignMatrix, ds: &ClusteredDataset, family: Family) -> Result<QicComponents> {
    if x.values.rows() != ds.n_total() {
        return Err(Error::DimensionMismatch("design rows vs dataset rows".into()));
    }
    let omega = independence_information(&x.values, &fit.beta, family, fit.phi);
    let trace = trace_of_product(&omega, &fit.cov_robust)?;
    let q = fit.quasi_likelihood_independence;
    let p = fit.n_params();
    Ok(QicComponents { quasi_likelihood: q, trace, p, qic: -2.0 * q + 2.0 * trace, qic_u: qic_u(fit, p) })
}

/// `−2Q(β̂; I) + 2·trace(Ω̂_I V̂_R)`.
pub fn qic(fit: &GeeFit, x: &DesignMatrix, ds: &ClusteredDataset, family: Family) -> Result<f64> {
    Ok(qic_components(fit, x, ds, family)?.qic)
}

/// `−2Q(β̂; I) + 2p`.
pub fn qic_u(fit: &GeeFit, p: usize) -> f64 {
    qic_u_from(fit.quasi_likelihood_independence, p)
}

pub fn qic_u_from(quasi_likelihood: f64, p: usize) -> f64 {
    -2.0 * quasi_likelihood + 2.0 * p as f64
}

/// Outcome agreement within clusters of two or more observations; 0 is
/// success, 1 is failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConcordanceSummary {
    pub all_success: usize,
    pub all_failure: usize,
    pub skewed: usize,
    /// Even-sized clusters split exactly in half.
    pub equal: usize,
    pub singletons: usize,
}

impl ConcordanceSummary {
    pub fn multi_total(&self) -> usize {
        self.all_success + self.all_failure + self.skewed + self.equal
    }

    /// Percentages of the multi-observation clusters, in field order.
    pub fn rates(&self) -> [f64; 4] {
        let n = self.multi_total().max(1) as f64;
        [self.all_success, self.all_failure, self.skewed, self.equal].map(|c| 100.0 * c as f64 / n)
    }
}

/// Classifies clusters by how their binary outcomes agree. `variable` is
/// the response or any 0/1 covariate.
pub fn concordance_summary(ds: &ClusteredDataset, variable: &str) -> Result<ConcordanceSummary> {
    let col = if variable == ds.response_name() { None } else { Some(ds.variable_index(variable)?) };
    let mut s = ConcordanceSummary::default();
    for c in ds.clusters() {
        let mut failures = 0;
        for r in &c.rows {
            let v = match col {
                None => Some(r.response),
                Some(j) => r.values[j].as_f64(),
            };
            match v {
                Some(v) if v == 0.0 => {}
                Some(v) if v == 1.0 => failures += 1,
                _ => return Err(Error::NonBinaryResponse(variable.to_string())),
            }
        }
        let n = c.len();
        if n < 2 {
            s.singletons += 1;
        } else if failures == 0 {
            s.all_success += 1;
        } else if failures == n {
            s.all_failure += 1;
        } else if 2 * failures == n {
            s.equal += 1;
        } else {
            s.skewed += 1;
        }
    }
    Ok(s)
}

/// `(size, clusters, percent)` for every observed cluster size.
pub fn cluster_size_distribution(ds: &ClusteredDataset) -> Vec<(usize, usize, f64)> {
    let sizes = ds.cluster_sizes();
    let max = sizes.iter().copied().max().unwrap_or(0);
    let total = sizes.len().max(1) as f64;
    (1..=max)
        .filter_map(|s| {
            let k = sizes.iter().filter(|&&v| v == s).count();
            (k > 0).then(|| (s, k, 100.0 * k as f64 / total))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::read_csv;

    fn r3(v: f64) -> f64 {
        (v * 1000.0).round() / 1000.0
    }

    #[test]
    fn wald_row_zero_effect() {
        let row = wald_row("x", 0.0, 0.5, 0.95).unwrap();
        assert_eq!(row.wald_chisq, 0.0);
        assert_eq!(row.p_value, 1.0);
        assert_eq!(row.exp_b, 1.0);
    }

    #[test]
    fn wald_row_published_ci() {
        let row = wald_row("[AREA1=1]", 0.609, 0.3113, 0.95).unwrap();
        assert_eq!(r3(row.ci_low), -0.001);
        assert_eq!(r3(row.ci_high), 1.219);
        assert_eq!(r3(row.exp_b), 1.839);
    }

    #[test]
    fn wald_row_errors() {
        assert!(matches!(wald_row("x", 1.0, 1.0, 1.0), Err(Error::InvalidLevel(_))));
        assert!(wald_row("x", 1.0, 0.0, 0.95).is_err());
    }

    #[test]
    fn quantile_matches_reference_value() {
        assert!((normal_quantile(0.95).unwrap() - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn p_value_monotone() {
        let mut last = 1.1;
        for k in 0..200 {
            let row = wald_row("x", k as f64 * 0.05, 1.0, 0.95).unwrap();
            assert!(row.p_value < last || row.p_value == 0.0);
            last = row.p_value;
        }
    }

    #[test]
    fn odds_values() {
        assert_eq!((odds(42, 184).unwrap() * 1e4).round() / 1e4, 0.2283);
        assert_eq!((odds(27, 52).unwrap() * 1e4).round() / 1e4, 0.5192);
        assert_eq!(odds(0, 9).unwrap(), 0.0);
        assert!(matches!(odds(3, 0), Err(Error::DivisionByZero)));
    }

    #[test]
    fn odds_ratio_panels() {
        let t = ContingencyTable::new(42, 184, 27, 52);
        assert_eq!((odds_ratio(&t).unwrap() * 100.0).round() / 100.0, 0.44);
        assert_eq!((odds_ratio(&ContingencyTable::new(27, 52, 42, 184)).unwrap() * 100.0).round() / 100.0, 2.27);
        assert_eq!(odds_ratio(&ContingencyTable::new(5, 5, 5, 5)).unwrap(), 1.0);
        assert!(matches!(odds_ratio(&ContingencyTable::new(1, 0, 2, 3)), Err(Error::UndefinedOR)));
    }

    #[test]
    fn odds_ratio_swap_identities() {
        for (a, b, c, d) in [(42, 184, 27, 52), (1, 2, 3, 4), (17, 5, 9, 30)] {
            let t = ContingencyTable::new(a, b, c, d);
            let or = odds_ratio(&t).unwrap();
            // a·d/(b·c) times c·b/(d·a) is exactly 1 as rationals
            assert_eq!(t.a * t.d * t.swap_rows().a * t.swap_rows().d, t.b * t.c * t.swap_rows().b * t.swap_rows().c);
            assert!((or * odds_ratio(&t.swap_rows()).unwrap() - 1.0).abs() < 1e-15);
            assert_eq!(odds_ratio(&t.swap_rows().swap_columns()).unwrap(), or);
        }
    }

    #[test]
    fn qic_u_by_definition() {
        assert_eq!(qic_u_from(-155.5, 2), 315.0);
    }

    #[test]
    fn concordance_classification() {
        let ds = read_csv(
            "ID,Y\n1,0\n1,0\n2,1\n2,0\n2,0\n2,0\n3,1\n3,1\n3,0\n3,0\n4,1\n4,1\n5,0\n6,1\n6,0\n6,0\n".as_bytes(),
            "ID",
            "Y",
            None,
        )
        .unwrap();
        let s = concordance_summary(&ds, "Y").unwrap();
        assert_eq!(
            s,
            ConcordanceSummary { all_success: 1, all_failure: 1, skewed: 2, equal: 1, singletons: 1 }
        );
        assert_eq!(s.multi_total() + s.singletons, ds.n_clusters());
        let bad = read_csv("ID,Y\n1,2\n1,0\n".as_bytes(), "ID", "Y", None).unwrap();
        assert!(matches!(concordance_summary(&bad, "Y"), Err(Error::NonBinaryResponse(_))));
    }

    #[test]
    fn published_concordance_rates() {
        let s = ConcordanceSummary { all_success: 62, all_failure: 4, skewed: 19, equal: 19, singletons: 31 };
        let rates = s.rates().map(|r| (r * 10.0).round() / 10.0);
        assert_eq!(rates, [59.6, 3.8, 18.3, 18.3]);
    }

    #[test]
    fn crosstab_counts_and_panels() {
        let ds = read_csv("ID,E,Y\n1,1,1\n2,1,0\n3,1,0\n4,0,1\n5,0,0\n6,0,1\n".as_bytes(), "ID", "Y", None).unwrap();
        let panels = crosstab_panels(&ds, "E").unwrap();
        assert_eq!(panels[0].table, ContingencyTable::new(1, 2, 2, 1));
        assert_eq!(panels[1].table, ContingencyTable::new(2, 1, 1, 2));
        assert_eq!(panels[2].table, ContingencyTable::new(2, 1, 1, 2));
        assert_eq!(panels[3].table, ContingencyTable::new(1, 2, 2, 1));
        assert_eq!(panels[0].exposure_level, "1");
        assert_eq!(panels[0].reference_level, "0");
    }

    #[test]
    fn size_distribution() {
        let ds = read_csv("ID,Y\n1,0\n1,0\n2,1\n3,1\n3,0\n".as_bytes(), "ID", "Y", None).unwrap();
        let d = cluster_size_distribution(&ds);
        assert_eq!(d.len(), 2);
        assert_eq!((d[0].0, d[0].1), (1, 1));
        assert_eq!((d[1].0, d[1].1), (2, 2));
    }
}
