//! Two-phase model selection: the working correlation is chosen by lowest
//! QIC, then the covariate set by lowest QICu under that correlation.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_design, ClusteredDataset, TermCoding};
use crate::error::{Error, Result};
use crate::gee::{fit_gee, CorrelationKind, GeeFit, GeeOptions};
use crate::glm::Family;
use crate::inference::{qic_components, QicComponents};

/// A covariate subset (indices into the term list) crossed with a
/// correlation structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub structure: CorrelationKind,
    pub terms: Vec<usize>,
}

/// All non-empty subsets up to `max_size`, ordered by size, then
/// lexicographically, then by structure in tabulation order.
pub fn enumerate_candidates(n_terms: usize, structures: &[CorrelationKind], max_size: usize) -> Vec<CandidateSpec> {
    let mut kinds = structures.to_vec();
    kinds.sort_by_key(CorrelationKind::rank);
    let mut out = Vec::new();
    for size in 1..=max_size.min(n_terms) {
        for subset in combinations(n_terms, size) {
            for k in &kinds {
                out.push(CandidateSpec { structure: k.clone(), terms: subset.clone() });
            }
        }
    }
    out
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k == 0 || k > n {
        return out;
    }
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub structure: CorrelationKind,
    pub terms: Vec<usize>,
    pub covariates: Vec<String>,
    pub p: usize,
    pub qic: Option<f64>,
    pub qic_u: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

impl Candidate {
    fn value(&self, criterion: Criterion) -> Option<f64> {
        match criterion {
            Criterion::Qic => self.qic,
            Criterion::QicU => self.qic_u,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "QIC")]
    Qic,
    #[serde(rename = "QICu")]
    QicU,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Exhaustive,
    Stepwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// 1 selects the correlation structure, 2 the covariate set.
    pub phase: u8,
    pub step: usize,
    pub size: usize,
    pub criterion: Criterion,
    pub structure: Option<CorrelationKind>,
    pub covariates: Vec<String>,
    pub value: Option<f64>,
    /// Whether this step improved on the previous best.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub mode: SelectionMode,
    pub candidates: Vec<Candidate>,
    pub best_structure: CorrelationKind,
    pub best_model: Vec<String>,
    pub best_qic: f64,
    pub best_qic_u: f64,
    pub trace: Vec<TraceStep>,
}

impl SelectionReport {
    /// Index of the minimal-QIC candidate.
    pub fn best_structure_index(&self) -> Option<usize> {
        argmin(&self.candidates, Criterion::Qic, |_| true)
    }

    /// Index of the minimal-QICu candidate under the chosen structure.
    pub fn best_model_index(&self) -> Option<usize> {
        argmin(&self.candidates, Criterion::QicU, |c| c.structure == self.best_structure)
    }
}

/// Ordering used for every argmin: criterion value, then fewer parameters,
/// then the lexicographically smaller subset, then tabulation order.
fn compare(a: &Candidate, b: &Candidate, criterion: Criterion) -> Ordering {
    let va = a.value(criterion).unwrap_or(f64::INFINITY);
    let vb = b.value(criterion).unwrap_or(f64::INFINITY);
    va.total_cmp(&vb)
        .then(a.p.cmp(&b.p))
        .then(a.terms.cmp(&b.terms))
        .then(a.structure.rank().cmp(&b.structure.rank()))
}

fn argmin(cands: &[Candidate], criterion: Criterion, keep: impl Fn(&Candidate) -> bool) -> Option<usize> {
    cands
        .iter()
        .enumerate()
        .filter(|(_, c)| c.converged && c.value(criterion).is_some() && keep(c))
        .min_by(|(_, a), (_, b)| compare(a, b, criterion))
        .map(|(i, _)| i)
}

/// Fits one candidate. Failures are recorded rather than propagated.
pub fn fit_candidate(
    ds: &ClusteredDataset,
    family: Family,
    terms: &[TermCoding],
    spec: &CandidateSpec,
    opts: &GeeOptions,
) -> Candidate {
    let chosen: Vec<TermCoding> = spec.terms.iter().map(|&i| terms[i].clone()).collect();
    let covariates = chosen.iter().map(|t| t.name.clone()).collect();
    let mut cand = Candidate {
        structure: spec.structure.clone(),
        terms: spec.terms.clone(),
        covariates,
        p: 0,
        qic: None,
        qic_u: None,
        converged: false,
        error: None,
    };
    let design = match build_design(ds, &chosen) {
        Ok(d) => d,
        Err(e) => {
            cand.error = Some(e.to_string());
            return cand;
        }
    };
    cand.p = design.n_params();
    let (fit, converged): (GeeFit, bool) = match fit_gee(&design, ds, family, &spec.structure, opts) {
        Ok(f) => (f, true),
        Err(Error::NoConvergence { partial: Some(f), .. }) => {
            cand.error = Some("no convergence".into());
            (*f, false)
        }
        Err(e) => {
            cand.error = Some(e.to_string());
            return cand;
        }
    };
    match qic_components(&fit, &design, ds, family) {
        Ok(QicComponents { qic, qic_u, .. }) => {
            cand.qic = Some(qic);
            cand.qic_u = Some(qic_u);
            cand.converged = converged;
        }
        Err(e) => cand.error = Some(e.to_string()),
    }
    cand
}

struct Evaluator<'a> {
    ds: &'a ClusteredDataset,
    family: Family,
    terms: &'a [TermCoding],
    opts: &'a GeeOptions,
    cache: HashMap<(Vec<usize>, usize, String), usize>,
    candidates: Vec<Candidate>,
}

impl<'a> Evaluator<'a> {
    fn key(spec: &CandidateSpec) -> (Vec<usize>, usize, String) {
        (spec.terms.clone(), spec.structure.rank(), format!("{:?}", spec.structure))
    }

    /// Fits every spec not seen before (in parallel) and returns the
    /// candidate indices for all of them, in spec order.
    fn evaluate(&mut self, specs: &[CandidateSpec]) -> Vec<usize> {
        let fresh: Vec<&CandidateSpec> = specs.iter().filter(|s| !self.cache.contains_key(&Self::key(s))).collect();
        let fitted: Vec<Candidate> = fresh
            .par_iter()
            .map(|s| fit_candidate(self.ds, self.family, self.terms, s, self.opts))
            .collect();
        for (spec, cand) in fresh.into_iter().zip(fitted) {
            self.cache.insert(Self::key(spec), self.candidates.len());
            self.candidates.push(cand);
        }
        specs.iter().map(|s| self.cache[&Self::key(s)]).collect()
    }
}

/// Runs both selection phases. The dataset's response must already be
/// coded as the modeled event; rows missing any term are dropped first so
/// every candidate sees the same observations.
pub fn run_selection(
    ds: &ClusteredDataset,
    family: Family,
    terms: &[TermCoding],
    structures: &[CorrelationKind],
    mode: SelectionMode,
    max_size: usize,
    opts: &GeeOptions,
) -> Result<SelectionReport> {
    if terms.is_empty() || structures.is_empty() {
        return Err(Error::AllCandidatesFailed);
    }
    let names: Vec<&str> = terms.iter().map(|t| t.name.as_str()).collect();
    let (ds, _) = ds.complete_cases(&names)?;
    let max_size = max_size.clamp(1, terms.len());
    let mut ev = Evaluator { ds: &ds, family, terms, opts, cache: HashMap::new(), candidates: Vec::new() };
    let mut kinds = structures.to_vec();
    kinds.sort_by_key(CorrelationKind::rank);

    let mut trace = Vec::new();
    match mode {
        SelectionMode::Exhaustive => {
            let specs = enumerate_candidates(terms.len(), &kinds, max_size);
            ev.evaluate(&specs);
            let cands = &ev.candidates;
            let best = argmin(cands, Criterion::Qic, |_| true).ok_or(Error::AllCandidatesFailed)?;
            let structure = cands[best].structure.clone();
            let mut running = f64::INFINITY;
            for size in 1..=max_size {
                if let Some(i) = argmin(cands, Criterion::Qic, |c| c.terms.len() == size) {
                    let v = cands[i].qic.unwrap();
                    trace.push(step(1, size, size, Criterion::Qic, &cands[i], v < running));
                    running = running.min(v);
                }
            }
            let mut running = f64::INFINITY;
            for size in 1..=max_size {
                if let Some(i) =
                    argmin(cands, Criterion::QicU, |c| c.terms.len() == size && c.structure == structure)
                {
                    let v = cands[i].qic_u.unwrap();
                    trace.push(step(2, size, size, Criterion::QicU, &cands[i], v < running));
                    running = running.min(v);
                }
            }
        }
        SelectionMode::Stepwise => {
            let phase1 = greedy(&mut ev, &kinds, Criterion::Qic, 1, max_size, &mut trace)?;
            let structure = ev.candidates[phase1].structure.clone();
            greedy(&mut ev, &[structure], Criterion::QicU, 2, max_size, &mut trace)?;
        }
    }

    let candidates = ev.candidates;
    let best = argmin(&candidates, Criterion::Qic, |_| true).ok_or(Error::AllCandidatesFailed)?;
    let best_structure = candidates[best].structure.clone();
    let best_qic = candidates[best].qic.unwrap();
    let model = argmin(&candidates, Criterion::QicU, |c| c.structure == best_structure)
        .ok_or(Error::AllCandidatesFailed)?;
    Ok(SelectionReport {
        mode,
        best_structure,
        best_model: candidates[model].covariates.clone(),
        best_qic,
        best_qic_u: candidates[model].qic_u.unwrap(),
        candidates,
        trace,
    })
}

fn step(phase: u8, step: usize, size: usize, criterion: Criterion, c: &Candidate, accepted: bool) -> TraceStep {
    TraceStep {
        phase,
        step,
        size,
        criterion,
        structure: Some(c.structure.clone()),
        covariates: c.covariates.clone(),
        value: c.value(criterion),
        accepted,
    }
}

/// Forward selection: add the term (under any listed structure) that
/// lowers the criterion most; stop when no addition lowers it.
fn greedy(
    ev: &mut Evaluator<'_>,
    kinds: &[CorrelationKind],
    criterion: Criterion,
    phase: u8,
    max_size: usize,
    trace: &mut Vec<TraceStep>,
) -> Result<usize> {
    let n_terms = ev.terms.len();
    let mut current: Vec<usize> = Vec::new();
    let mut best: Option<usize> = None;
    let mut step_no = 0;
    while current.len() < max_size {
        step_no += 1;
        let specs: Vec<CandidateSpec> = (0..n_terms)
            .filter(|t| !current.contains(t))
            .flat_map(|t| {
                let mut terms = current.clone();
                terms.push(t);
                terms.sort_unstable();
                kinds.iter().map(move |k| CandidateSpec { structure: k.clone(), terms: terms.clone() })
            })
            .collect();
        let idx = ev.evaluate(&specs);
        let pool: Vec<Candidate> = idx.iter().map(|&i| ev.candidates[i].clone()).collect();
        let Some(local) = argmin(&pool, criterion, |_| true) else {
            if best.is_none() {
                return Err(Error::AllCandidatesFailed);
            }
            trace.push(TraceStep {
                phase,
                step: step_no,
                size: current.len() + 1,
                criterion,
                structure: None,
                covariates: Vec::new(),
                value: None,
                accepted: false,
            });
            break;
        };
        let winner = idx[local];
        let value = ev.candidates[winner].value(criterion).unwrap();
        let improves = match best {
            None => true,
            Some(b) => value < ev.candidates[b].value(criterion).unwrap(),
        };
        trace.push(step(phase, step_no, current.len() + 1, criterion, &ev.candidates[winner], improves));
        if !improves {
            break;
        }
        current = ev.candidates[winner].terms.clone();
        best = Some(winner);
    }
    best.ok_or(Error::AllCandidatesFailed)
}
