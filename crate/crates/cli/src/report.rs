//! Report types and their text rendering. Text is always rendered from
//! these values, so a report parsed back from JSON prints identically.

use std::fmt::Write as _;

use gee_core::gee::{CorrelationKind, CorrelationStructure};
use gee_core::inference::{ConcordanceSummary, CrosstabPanel, ParameterRow};
use gee_core::select::{Criterion, SelectionReport};
use gee_core::Matrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub family: String,
    pub correlation: String,
    pub response: String,
    /// Raw response value modeled as the event, for binomial models.
    pub event: Option<f64>,
    pub reference: Option<f64>,
    pub n_clusters: usize,
    pub n_obs: usize,
    pub dropped: usize,
    pub iterations: usize,
    pub converged: bool,
    pub level: f64,
    pub parameters: Vec<ParameterRow>,
    pub phi: f64,
    pub structure: CorrelationStructure,
    pub qic: Option<f64>,
    pub qic_u: f64,
    pub warnings: Vec<String>,
}

pub fn num(v: f64) -> String {
    format!("{v:.3}")
}

pub fn p_value(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

fn pad(cells: &[String], widths: &[usize]) -> String {
    let mut line = String::new();
    for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
        if i == 0 {
            let _ = write!(line, "{c:<w$}");
        } else {
            let _ = write!(line, "  {c:>w$}");
        }
    }
    line.trim_end().to_string()
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = pad(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>(), &widths);
    out.push('\n');
    for r in rows {
        out.push_str(&pad(r, &widths));
        out.push('\n');
    }
    out
}

fn structure_line(s: &CorrelationStructure) -> String {
    let list = |v: &[f64]| v.iter().map(|a| num(*a)).collect::<Vec<_>>().join(", ");
    match s {
        CorrelationStructure::Independent => "none (independent)".into(),
        CorrelationStructure::Exchangeable { alpha } | CorrelationStructure::Ar1 { alpha } => {
            format!("alpha = {}", num(*alpha))
        }
        CorrelationStructure::MDependent { alphas } => format!("alpha by lag = {}", list(alphas)),
        CorrelationStructure::Unstructured { alphas } => format!("alpha (upper triangle) = {}", list(&upper(alphas))),
        CorrelationStructure::Fixed { matrix } => format!("fixed {}x{} template", matrix.rows(), matrix.cols()),
    }
}

fn upper(m: &Matrix) -> Vec<f64> {
    let t = m.rows();
    (0..t).flat_map(|j| ((j + 1)..t).map(move |k| m[(j, k)])).collect()
}

impl FitReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "GEE parameter estimates ({}, working correlation {})", self.family, self.correlation);
        match (self.event, self.reference) {
            (Some(e), Some(r)) => {
                let _ = writeln!(out, "Response {}: event = {e}, reference = {r}", self.response);
            }
            _ => {
                let _ = writeln!(out, "Response {}", self.response);
            }
        }
        let status = if self.converged { "converged" } else { "NOT converged" };
        let _ = writeln!(
            out,
            "Clusters {}, observations {} ({} dropped), {} iterations, {status}",
            self.n_clusters, self.n_obs, self.dropped, self.iterations
        );
        out.push('\n');
        let pct = format!("{}%", (self.level * 100.0).round());
        let header = [
            "Parameter".to_string(),
            "B".into(),
            "SE".into(),
            format!("{pct} CI low"),
            format!("{pct} CI high"),
            "Wald chi2".into(),
            "df".into(),
            "p".into(),
            "Exp(B)".into(),
            "Exp(B) low".into(),
            "Exp(B) high".into(),
        ];
        let rows: Vec<Vec<String>> = self
            .parameters
            .iter()
            .map(|r| {
                vec![
                    r.label.clone(),
                    num(r.b),
                    num(r.se),
                    num(r.ci_low),
                    num(r.ci_high),
                    num(r.wald_chisq),
                    r.df.to_string(),
                    p_value(r.p_value),
                    num(r.exp_b),
                    num(r.exp_ci_low),
                    num(r.exp_ci_high),
                ]
            })
            .collect();
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        out.push_str(&table(&header_refs, &rows));
        out.push('\n');
        let _ = writeln!(out, "Scale (phi): {}", num(self.phi));
        let _ = writeln!(out, "Working correlation: {}", structure_line(&self.structure));
        let qic = self.qic.map(num).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(out, "QIC: {qic}   QICu: {}", num(self.qic_u));
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

fn value_or_dash(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "-".into())
}

/// Table of all candidates followed by the step trace. `*` marks the
/// lowest-QIC row, `+` the lowest-QICu row under the chosen structure.
pub fn render_selection(report: &SelectionReport) -> String {
    let mut out = String::new();
    let best_s = report.best_structure_index();
    let best_m = report.best_model_index();
    let rows: Vec<Vec<String>> = report
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut mark = String::new();
            if Some(i) == best_s {
                mark.push('*');
            }
            if Some(i) == best_m {
                mark.push('+');
            }
            vec![
                mark,
                c.structure.to_string(),
                c.covariates.join(", "),
                c.p.to_string(),
                value_or_dash(c.qic),
                value_or_dash(c.qic_u),
                c.error.clone().unwrap_or_else(|| if c.converged { String::new() } else { "not converged".into() }),
            ]
        })
        .collect();
    out.push_str(&table(&["", "Correlation", "Variables", "p", "QIC", "QICu", "Note"], &rows));
    out.push_str("* lowest QIC (selects the working correlation); + lowest QICu under it (selects the model)\n\n");

    let mut phase = 0;
    for s in &report.trace {
        if s.phase != phase {
            phase = s.phase;
            let what = match s.criterion {
                Criterion::Qic => "working correlation by QIC".to_string(),
                Criterion::QicU => format!(
                    "covariates by QICu under {}",
                    s.structure.as_ref().map(CorrelationKind::to_string).unwrap_or_default()
                ),
            };
            let _ = writeln!(out, "Phase {phase}: {what}");
        }
        let name = match s.criterion {
            Criterion::Qic => "QIC",
            Criterion::QicU => "QICu",
        };
        let _ = writeln!(
            out,
            "STEP {}: {} covariate(s) {{{}}}, {}, {name} = {}{}",
            s.step,
            s.size,
            s.covariates.join(", "),
            s.structure.as_ref().map(CorrelationKind::to_string).unwrap_or_default(),
            value_or_dash(s.value),
            if s.accepted { "" } else { " (no improvement)" }
        );
    }
    out.push('\n');
    let _ = writeln!(out, "Selected working correlation: {} (QIC {})", report.best_structure, num(report.best_qic));
    let _ = writeln!(out, "Selected model: {} (QICu {})", report.best_model.join(", "), num(report.best_qic_u));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosstabReport {
    pub response: String,
    pub exposure: String,
    pub panels: Vec<CrosstabPanel>,
}

impl CrosstabReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.panels.iter().enumerate() {
            let _ = writeln!(
                out,
                "Panel {}: response reference {:?}, factor order {:?}",
                i + 1,
                p.response_reference,
                p.factor_order
            );
            let ev = format!("{}={}", self.response, p.event_level);
            let nonev = format!("{} other", self.response);
            let rows = vec![
                vec![
                    format!("{}={}", self.exposure, p.exposure_level),
                    p.table.a.to_string(),
                    p.table.b.to_string(),
                    value_or_dash(p.odds_exposure),
                ],
                vec![
                    format!("{}={}", self.exposure, p.reference_level),
                    p.table.c.to_string(),
                    p.table.d.to_string(),
                    value_or_dash(p.odds_reference),
                ],
            ];
            out.push_str(&table(&["", &ev, &nonev, "Odds"], &rows));
            match p.odds_ratio {
                Some(or) => {
                    let _ = writeln!(out, "OR = {}", num(or));
                }
                None => out.push_str("OR undefined (zero cell)\n"),
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub n_clusters: usize,
    pub n_obs: usize,
    /// `(size, clusters, percent)`.
    pub sizes: Vec<(usize, usize, f64)>,
    pub concordance: Option<ConcordanceSummary>,
}

impl SummaryReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Clusters {}, observations {}\n", self.n_clusters, self.n_obs);
        let rows: Vec<Vec<String>> = self
            .sizes
            .iter()
            .map(|(s, k, pct)| vec![s.to_string(), k.to_string(), format!("{pct:.1}")])
            .collect();
        out.push_str(&table(&["Size", "Clusters", "%"], &rows));
        if let Some(c) = &self.concordance {
            out.push('\n');
            let rates = c.rates();
            let labels = ["All success (all 0)", "All failure (all 1)", "Skewed", "Equal split"];
            let counts = [c.all_success, c.all_failure, c.skewed, c.equal];
            let rows: Vec<Vec<String>> = labels
                .iter()
                .zip(counts.iter().zip(rates))
                .map(|(l, (k, r))| vec![l.to_string(), k.to_string(), format!("{r:.1}")])
                .collect();
            out.push_str(&table(&["Outcome agreement", "Clusters", "%"], &rows));
            let _ = writeln!(out, "Clusters of two or more: {}; singletons: {}", c.multi_total(), c.singletons);
        }
        out
    }
}
