//! Working correlation structures and their moment estimators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spd_factor, Matrix};

/// Every estimated correlation is clamped into this range.
pub const ALPHA_CLAMP: f64 = 0.99;

/// Which working correlation to use, without parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    Independent,
    MDependent { m: usize },
    Exchangeable,
    Ar1,
    Unstructured,
    /// User-supplied T×T template indexed by within-subject slot.
    Fixed(Matrix),
}

impl CorrelationKind {
    /// The five estimable structures, in tabulation order.
    pub fn defaults() -> Vec<CorrelationKind> {
        vec![
            CorrelationKind::Independent,
            CorrelationKind::MDependent { m: 2 },
            CorrelationKind::Exchangeable,
            CorrelationKind::Ar1,
            CorrelationKind::Unstructured,
        ]
    }

    /// Position in the conventional listing (independent, M-dependent,
    /// exchangeable, AR-1, unstructured, fixed).
    pub fn rank(&self) -> usize {
        match self {
            CorrelationKind::Independent => 0,
            CorrelationKind::MDependent { .. } => 1,
            CorrelationKind::Exchangeable => 2,
            CorrelationKind::Ar1 => 3,
            CorrelationKind::Unstructured => 4,
            CorrelationKind::Fixed(_) => 5,
        }
    }

    /// Validates a fixed template and wraps it.
    pub fn fixed(matrix: Matrix) -> Result<Self> {
        validate_fixed(&matrix)?;
        Ok(CorrelationKind::Fixed(matrix))
    }
}

impl fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorrelationKind::Independent => f.write_str("Independent"),
            CorrelationKind::MDependent { m } => write!(f, "M-dependent (M={m})"),
            CorrelationKind::Exchangeable => f.write_str("Exchangeable"),
            CorrelationKind::Ar1 => f.write_str("AR-1"),
            CorrelationKind::Unstructured => f.write_str("Unstructured"),
            CorrelationKind::Fixed(m) => write!(f, "Fixed ({}x{})", m.rows(), m.cols()),
        }
    }
}

impl FromStr for CorrelationKind {
    type Err = String;

    /// Parses `independent`, `exchangeable`, `ar1`, `unstructured`,
    /// `mdep` or `mdep:M`. Fixed templates are loaded separately.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let lower = s.trim().to_ascii_lowercase();
        let (head, arg) = match lower.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (lower.as_str(), None),
        };
        let kind = match head {
            "independent" | "ind" => CorrelationKind::Independent,
            "exchangeable" | "exch" => CorrelationKind::Exchangeable,
            "ar1" | "ar-1" => CorrelationKind::Ar1,
            "unstructured" | "un" => CorrelationKind::Unstructured,
            "mdep" | "m-dependent" | "mdependent" => {
                let m = match arg {
                    Some(a) => a.parse::<usize>().map_err(|_| format!("bad M in `{s}`"))?,
                    None => 2,
                };
                if m == 0 {
                    return Err("M must be at least 1".into());
                }
                return Ok(CorrelationKind::MDependent { m });
            }
            _ => return Err(format!("unknown correlation structure `{s}`")),
        };
        if arg.is_some() {
            return Err(format!("`{head}` takes no argument"));
        }
        Ok(kind)
    }
}

/// A working correlation with its parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum CorrelationStructure {
    Independent,
    Exchangeable { alpha: f64 },
    /// `alphas[s-1]` is the correlation at lag `s`; zero beyond `alphas.len()`.
    MDependent { alphas: Vec<f64> },
    Ar1 { alpha: f64 },
    /// Symmetric unit-diagonal T×T matrix indexed by slot.
    Unstructured { alphas: Matrix },
    Fixed { matrix: Matrix },
}

impl CorrelationStructure {
    pub fn kind(&self) -> CorrelationKind {
        match self {
            CorrelationStructure::Independent => CorrelationKind::Independent,
            CorrelationStructure::Exchangeable { .. } => CorrelationKind::Exchangeable,
            CorrelationStructure::MDependent { alphas } => CorrelationKind::MDependent { m: alphas.len() },
            CorrelationStructure::Ar1 { .. } => CorrelationKind::Ar1,
            CorrelationStructure::Unstructured { .. } => CorrelationKind::Unstructured,
            CorrelationStructure::Fixed { matrix } => CorrelationKind::Fixed(matrix.clone()),
        }
    }

    /// Structure of the given kind with every correlation at zero.
    pub fn zero(kind: &CorrelationKind, n_slots: usize) -> Self {
        match kind {
            CorrelationKind::Independent => CorrelationStructure::Independent,
            CorrelationKind::Exchangeable => CorrelationStructure::Exchangeable { alpha: 0.0 },
            CorrelationKind::MDependent { m } => CorrelationStructure::MDependent { alphas: vec![0.0; *m] },
            CorrelationKind::Ar1 => CorrelationStructure::Ar1 { alpha: 0.0 },
            CorrelationKind::Unstructured => {
                CorrelationStructure::Unstructured { alphas: Matrix::identity(n_slots) }
            }
            CorrelationKind::Fixed(m) => CorrelationStructure::Fixed { matrix: m.clone() },
        }
    }

    /// Correlation parameters as a flat list (upper triangle for
    /// unstructured, row-major).
    pub fn parameters(&self) -> Vec<f64> {
        match self {
            CorrelationStructure::Independent | CorrelationStructure::Fixed { .. } => Vec::new(),
            CorrelationStructure::Exchangeable { alpha } | CorrelationStructure::Ar1 { alpha } => vec![*alpha],
            CorrelationStructure::MDependent { alphas } => alphas.clone(),
            CorrelationStructure::Unstructured { alphas } => {
                let t = alphas.rows();
                (0..t).flat_map(|j| ((j + 1)..t).map(move |k| (j, k))).map(|(j, k)| alphas[(j, k)]).collect()
            }
        }
    }
}

fn check_alpha(a: f64) -> Result<()> {
    if a > -1.0 && a < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(a))
    }
}

fn validate_fixed(m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch("fixed correlation must be square".into()));
    }
    for i in 0..m.rows() {
        if (m[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidAlpha(m[(i, i)]));
        }
        for j in 0..i {
            check_alpha(m[(i, j)])?;
        }
    }
    spd_factor(m).map(|_| ())
}

/// Realizes the correlation for a cluster observed at the given slots.
/// Lags are slot differences.
pub fn realize_for_slots(cs: &CorrelationStructure, slots: &[usize]) -> Result<Matrix> {
    let n = slots.len();
    let lag = |i: usize, j: usize| slots[i].abs_diff(slots[j]);
    let template_check = |t: usize| -> Result<()> {
        match slots.iter().max() {
            Some(&s) if s >= t => Err(Error::SizeExceedsTemplate { size: s + 1, template: t }),
            _ => Ok(()),
        }
    };
    let m = match cs {
        CorrelationStructure::Independent => Matrix::identity(n),
        CorrelationStructure::Exchangeable { alpha } => {
            check_alpha(*alpha)?;
            Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { *alpha })
        }
        CorrelationStructure::MDependent { alphas } => {
            for a in alphas {
                check_alpha(*a)?;
            }
            Matrix::from_fn(n, n, |i, j| match lag(i, j) {
                0 => 1.0,
                s if s <= alphas.len() => alphas[s - 1],
                _ => 0.0,
            })
        }
        CorrelationStructure::Ar1 { alpha } => {
            check_alpha(*alpha)?;
            Matrix::from_fn(n, n, |i, j| alpha.powi(lag(i, j) as i32))
        }
        CorrelationStructure::Unstructured { alphas } => {
            template_check(alphas.rows())?;
            for j in 0..alphas.rows() {
                for k in 0..j {
                    check_alpha(alphas[(j, k)])?;
                }
            }
            alphas.select(slots)
        }
        CorrelationStructure::Fixed { matrix } => {
            template_check(matrix.rows())?;
            matrix.select(slots)
        }
    };
    Ok(m)
}

/// Realizes the correlation for a cluster observed at slots `0..size`.
pub fn realize_correlation(cs: &CorrelationStructure, size: usize) -> Result<Matrix> {
    let slots: Vec<usize> = (0..size).collect();
    realize_for_slots(cs, &slots)
}

/// Pearson residuals of one cluster with their slots.
#[derive(Debug, Clone)]
pub struct ClusterResiduals {
    pub slots: Vec<usize>,
    pub residuals: Vec<f64>,
}

/// Denominator convention for the moment estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentDenominator {
    /// Pair count minus the number of regression parameters.
    #[default]
    SubtractP,
    /// Plain pair count.
    PairCount,
}

impl MomentDenominator {
    fn apply(self, pairs: usize, p: usize) -> f64 {
        match self {
            MomentDenominator::SubtractP if pairs > p => (pairs - p) as f64,
            _ => pairs as f64,
        }
    }
}

/// Moment estimate plus diagnostics about pairs that could not be used.
#[derive(Debug, Clone)]
pub struct AlphaEstimate {
    pub structure: CorrelationStructure,
    pub warnings: Vec<String>,
}

fn clamp(a: f64) -> f64 {
    if a.is_nan() {
        0.0
    } else {
        a.clamp(-ALPHA_CLAMP, ALPHA_CLAMP)
    }
}

/// Sum of `r_ij·r_ik` and pair count at each slot lag `1..=max_lag`.
fn lag_sums(groups: &[ClusterResiduals], max_lag: usize) -> Vec<(f64, usize)> {
    let mut sums = vec![(0.0, 0usize); max_lag + 1];
    for g in groups {
        for j in 0..g.slots.len() {
            for k in (j + 1)..g.slots.len() {
                let s = g.slots[j].abs_diff(g.slots[k]);
                if s >= 1 && s <= max_lag {
                    sums[s].0 += g.residuals[j] * g.residuals[k];
                    sums[s].1 += 1;
                }
            }
        }
    }
    sums
}

/// Moment estimate of the working-correlation parameters from Pearson
/// residuals.
///
/// `n_slots` sizes the unstructured template; `max_cluster_size` sets the
/// exchangeable lower bound `-1/(max size - 1)`.
pub fn estimate_alpha(
    kind: &CorrelationKind,
    groups: &[ClusterResiduals],
    phi: f64,
    p: usize,
    denominator: MomentDenominator,
    n_slots: usize,
) -> Result<AlphaEstimate> {
    let mut warnings = Vec::new();
    let total_pairs: usize = groups.iter().map(|g| g.slots.len() * g.slots.len().saturating_sub(1) / 2).sum();
    let needs_pairs = !matches!(kind, CorrelationKind::Independent | CorrelationKind::Fixed(_));
    if needs_pairs && total_pairs == 0 {
        return Err(Error::NoPairs);
    }
    let phi = if phi > 0.0 { phi } else { 1.0 };
    let structure = match kind {
        CorrelationKind::Independent => CorrelationStructure::Independent,
        CorrelationKind::Fixed(m) => CorrelationStructure::Fixed { matrix: m.clone() },
        CorrelationKind::Exchangeable => {
            let mut num = 0.0;
            for g in groups {
                let s: f64 = g.residuals.iter().sum();
                let ss: f64 = g.residuals.iter().map(|r| r * r).sum();
                num += 0.5 * (s * s - ss);
            }
            let alpha = num / (denominator.apply(total_pairs, p) * phi);
            let max_size = groups.iter().map(|g| g.slots.len()).max().unwrap_or(1);
            let floor = if max_size > 1 { -1.0 / (max_size as f64 - 1.0) + 1e-6 } else { -ALPHA_CLAMP };
            CorrelationStructure::Exchangeable { alpha: clamp(alpha).max(floor) }
        }
        CorrelationKind::Ar1 | CorrelationKind::MDependent { .. } => {
            let max_lag = match kind {
                CorrelationKind::MDependent { m } => *m,
                _ => 1,
            };
            let sums = lag_sums(groups, max_lag);
            let alphas: Vec<f64> = (1..=max_lag)
                .map(|s| {
                    let (num, count) = sums[s];
                    if count == 0 {
                        warnings.push(format!("no pairs at lag {s}; correlation set to 0"));
                        0.0
                    } else {
                        clamp(num / (denominator.apply(count, p) * phi))
                    }
                })
                .collect();
            match kind {
                CorrelationKind::Ar1 => CorrelationStructure::Ar1 { alpha: alphas[0] },
                _ => CorrelationStructure::MDependent { alphas },
            }
        }
        CorrelationKind::Unstructured => {
            let t = n_slots.max(groups.iter().flat_map(|g| g.slots.iter().map(|s| s + 1)).max().unwrap_or(0));
            let mut num = Matrix::zeros(t, t);
            let mut count = vec![0usize; t * t];
            for g in groups {
                for j in 0..g.slots.len() {
                    for k in (j + 1)..g.slots.len() {
                        let (a, b) = (g.slots[j].min(g.slots[k]), g.slots[j].max(g.slots[k]));
                        num.add_at(a, b, g.residuals[j] * g.residuals[k]);
                        count[a * t + b] += 1;
                    }
                }
            }
            let mut alphas = Matrix::identity(t);
            let mut missing = 0;
            for a in 0..t {
                for b in (a + 1)..t {
                    let c = count[a * t + b];
                    let v = if c == 0 {
                        missing += 1;
                        0.0
                    } else {
                        clamp(num[(a, b)] / (denominator.apply(c, p) * phi))
                    };
                    alphas.set(a, b, v);
                    alphas.set(b, a, v);
                }
            }
            if missing > 0 {
                warnings.push(format!("{missing} slot pairs never observed together; set to 0"));
            }
            CorrelationStructure::Unstructured { alphas }
        }
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(AlphaEstimate { structure, warnings })
}
