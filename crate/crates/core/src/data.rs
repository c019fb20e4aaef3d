//! Clustered datasets: CSV ingestion, derived threshold variables, response
//! recoding and design-matrix coding with explicit reference categories.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A raw cell value. Numeric parsing is attempted first; empty fields are
/// missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Number(f64),
    Text(String),
    Missing,
}

impl Value {
    pub fn parse(field: &str) -> Value {
        let t = field.trim();
        if t.is_empty() {
            Value::Missing
        } else if let Ok(v) = t.parse::<f64>() {
            Value::Number(v)
        } else {
            Value::Text(t.to_string())
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(v) => write!(f, "{v}"),
            Value::Text(s) => f.write_str(s),
            Value::Missing => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// Within-subject position (the declared within variable, or arrival
    /// order inside the cluster when none was declared).
    pub position: f64,
    /// Rank of `position` among all distinct positions in the dataset;
    /// indexes unstructured/fixed correlation templates and defines lags.
    pub slot: usize,
    pub response: f64,
    /// Covariate values, aligned with `ClusteredDataset::variable_names`.
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: String,
    pub rows: Vec<Row>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn slots(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.slot).collect()
    }
}

/// How a binary response was recoded to 0/1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseCoding {
    /// Raw value modeled as the event (coded 1).
    pub event: f64,
    /// Raw value serving as reference (coded 0).
    pub reference: f64,
}

/// One input record before grouping.
#[derive(Debug, Clone)]
pub struct Record {
    pub cluster: String,
    pub position: Option<f64>,
    pub response: f64,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDataset {
    clusters: Vec<Cluster>,
    variable_names: Vec<String>,
    n_total: usize,
    cluster_name: String,
    response_name: String,
    within_name: Option<String>,
    positions: Vec<f64>,
    response_coding: Option<ResponseCoding>,
}

impl ClusteredDataset {
    /// Groups records into clusters (in order of first appearance) and sorts
    /// each cluster by position when a within variable is declared.
    pub fn from_records(
        cluster_name: &str,
        response_name: &str,
        within_name: Option<&str>,
        variable_names: Vec<String>,
        records: Vec<Record>,
    ) -> Result<Self> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut groups: Vec<(String, Vec<(f64, f64, Vec<Value>)>)> = Vec::new();
        for rec in records {
            if rec.values.len() != variable_names.len() {
                return Err(Error::DimensionMismatch(format!(
                    "record has {} values for {} variables",
                    rec.values.len(),
                    variable_names.len()
                )));
            }
            let g = *index.entry(rec.cluster.clone()).or_insert_with(|| {
                groups.push((rec.cluster.clone(), Vec::new()));
                groups.len() - 1
            });
            let arrival = groups[g].1.len() as f64;
            let pos = match (within_name, rec.position) {
                (Some(_), Some(p)) => p,
                (Some(name), None) => return Err(Error::MissingValue(name.to_string())),
                (None, _) => arrival,
            };
            groups[g].1.push((pos, rec.response, rec.values));
        }

        let mut clusters = Vec::with_capacity(groups.len());
        for (id, mut rows) in groups {
            if within_name.is_some() {
                rows.sort_by(|a, b| a.0.total_cmp(&b.0));
                if rows.windows(2).any(|w| w[0].0 == w[1].0) {
                    return Err(Error::DuplicateWithinPosition(id));
                }
            }
            let rows = rows
                .into_iter()
                .map(|(position, response, values)| Row { position, slot: 0, response, values })
                .collect();
            clusters.push(Cluster { id, rows });
        }

        let mut ds = ClusteredDataset {
            n_total: clusters.iter().map(Cluster::len).sum(),
            clusters,
            variable_names,
            cluster_name: cluster_name.to_string(),
            response_name: response_name.to_string(),
            within_name: within_name.map(str::to_string),
            positions: Vec::new(),
            response_coding: None,
        };
        ds.assign_slots();
        Ok(ds)
    }

    fn assign_slots(&mut self) {
        let mut positions: Vec<f64> =
            self.clusters.iter().flat_map(|c| c.rows.iter().map(|r| r.position)).collect();
        positions.sort_by(f64::total_cmp);
        positions.dedup();
        for c in &mut self.clusters {
            for r in &mut c.rows {
                r.slot = positions.partition_point(|p| *p < r.position);
            }
        }
        self.positions = positions;
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_name(&self) -> &str {
        &self.cluster_name
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn within_name(&self) -> Option<&str> {
        self.within_name.as_deref()
    }

    /// Distinct within-subject positions, ascending; slot `k` is `positions()[k]`.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn n_slots(&self) -> usize {
        self.positions.len()
    }

    pub fn response_coding(&self) -> Option<ResponseCoding> {
        self.response_coding
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Cluster::len).collect()
    }

    pub fn max_cluster_size(&self) -> usize {
        self.clusters.iter().map(Cluster::len).max().unwrap_or(0)
    }

    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.clusters.iter().flat_map(|c| c.rows.iter())
    }

    /// Responses in cluster-major order (the design-matrix row order).
    pub fn responses(&self) -> Vec<f64> {
        self.rows().map(|r| r.response).collect()
    }

    pub fn variable_index(&self, name: &str) -> Result<usize> {
        self.variable_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// Values of one covariate in row order.
    pub fn column(&self, name: &str) -> Result<Vec<&Value>> {
        let j = self.variable_index(name)?;
        Ok(self.rows().map(|r| &r.values[j]).collect())
    }

    /// Drops every row with a missing value in any of `names`; returns the
    /// reduced dataset and the number of rows dropped.
    pub fn complete_cases(&self, names: &[&str]) -> Result<(ClusteredDataset, usize)> {
        let idx: Vec<usize> = names.iter().map(|n| self.variable_index(n)).collect::<Result<_>>()?;
        let mut out = self.clone();
        let mut dropped = 0;
        for c in &mut out.clusters {
            let before = c.rows.len();
            c.rows.retain(|r| idx.iter().all(|&j| !r.values[j].is_missing()));
            dropped += before - c.rows.len();
        }
        out.clusters.retain(|c| !c.is_empty());
        out.n_total = out.clusters.iter().map(Cluster::len).sum();
        out.assign_slots();
        if dropped > 0 {
            log::info!("dropped {dropped} incomplete rows");
        }
        Ok((out, dropped))
    }

    /// Writes the dataset back out in the CSV schema it was read from.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec![self.cluster_name.clone()];
        if let Some(w) = &self.within_name {
            header.push(w.clone());
        }
        header.extend(self.variable_names.iter().cloned());
        header.push(self.response_name.clone());
        wtr.write_record(&header)?;
        for c in &self.clusters {
            for r in &c.rows {
                let mut rec = vec![c.id.clone()];
                if self.within_name.is_some() {
                    rec.push(r.position.to_string());
                }
                rec.extend(r.values.iter().map(Value::to_string));
                rec.push(r.response.to_string());
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Reads a header-first, comma-separated file into clusters. Rows with an
/// empty response are dropped (and logged).
pub fn load_csv(
    path: impl AsRef<Path>,
    cluster_col: &str,
    response_col: &str,
    within_col: Option<&str>,
) -> Result<ClusteredDataset> {
    let f = std::fs::File::open(path)?;
    read_csv(f, cluster_col, response_col, within_col)
}

pub fn read_csv<R: Read>(
    reader: R,
    cluster_col: &str,
    response_col: &str,
    within_col: Option<&str>,
) -> Result<ClusteredDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let cluster_idx = find(cluster_col)?;
    let response_idx = find(response_col)?;
    let within_idx = within_col.map(find).transpose()?;
    let var_idx: Vec<usize> = (0..headers.len())
        .filter(|i| *i != cluster_idx && *i != response_idx && Some(*i) != within_idx)
        .collect();
    let variable_names = var_idx.iter().map(|&i| headers[i].clone()).collect();

    let mut records = Vec::new();
    let mut dropped = 0usize;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = k + 1;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let numeric = |i: usize| -> Result<Option<f64>> {
            match Value::parse(field(i)) {
                Value::Number(v) => Ok(Some(v)),
                Value::Missing => Ok(None),
                Value::Text(_) => Err(Error::UnparseableValue { row: row_no, col: headers[i].clone() }),
            }
        };
        let Some(response) = numeric(response_idx)? else {
            dropped += 1;
            continue;
        };
        let position = match within_idx {
            Some(i) => match numeric(i)? {
                Some(p) => Some(p),
                None => {
                    dropped += 1;
                    continue;
                }
            },
            None => None,
        };
        let cluster = field(cluster_idx).to_string();
        if cluster.is_empty() {
            dropped += 1;
            continue;
        }
        records.push(Record {
            cluster,
            position,
            response,
            values: var_idx.iter().map(|&i| Value::parse(field(i))).collect(),
        });
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing cluster, response or position");
    }
    ClusteredDataset::from_records(cluster_col, response_col, within_col, variable_names, records)
}

/// Appends a 0/1 column: 1 when `source > threshold` (`strict_above`) or
/// `source >= threshold` (otherwise). Missing stays missing.
pub fn derive_threshold(
    ds: &ClusteredDataset,
    source: &str,
    threshold: f64,
    new_name: &str,
    strict_above: bool,
) -> Result<ClusteredDataset> {
    let j = ds.variable_index(source)?;
    let mut out = ds.clone();
    let mut row_no = 0;
    for c in &mut out.clusters {
        for r in &mut c.rows {
            row_no += 1;
            let derived = match &r.values[j] {
                Value::Number(v) => {
                    let hit = if strict_above { *v > threshold } else { *v >= threshold };
                    Value::Number(if hit { 1.0 } else { 0.0 })
                }
                Value::Missing => Value::Missing,
                Value::Text(_) => {
                    return Err(Error::UnparseableValue { row: row_no, col: source.to_string() })
                }
            };
            r.values.push(derived);
        }
    }
    out.variable_names.push(new_name.to_string());
    Ok(out)
}

/// Which response level is the reference; the other level is modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseReference {
    /// Lowest value is the reference, so P(response = high) is modeled.
    First,
    /// Highest value is the reference, so P(response = low) is modeled.
    Last,
}

/// Recodes a two-valued response to an event indicator.
pub fn recode_response(ds: &ClusteredDataset, reference: ResponseReference) -> Result<ClusteredDataset> {
    let mut levels: Vec<f64> = ds.rows().map(|r| r.response).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.len() != 2 {
        return Err(Error::NonBinaryResponse(ds.response_name.clone()));
    }
    let (low, high) = (levels[0], levels[1]);
    let (event, reference_level) = match reference {
        ResponseReference::First => (high, low),
        ResponseReference::Last => (low, high),
    };
    let mut out = ds.clone();
    for c in &mut out.clusters {
        for r in &mut c.rows {
            r.response = if r.response == event { 1.0 } else { 0.0 };
        }
    }
    out.response_coding = Some(ResponseCoding { event, reference: reference_level });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoryOrder {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TermKind {
    /// Indicator-coded; the level that sorts last in `order` is the reference.
    Factor { order: CategoryOrder },
    Covariate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermCoding {
    pub name: String,
    pub kind: TermKind,
}

impl TermCoding {
    pub fn factor(name: &str, order: CategoryOrder) -> Self {
        TermCoding { name: name.to_string(), kind: TermKind::Factor { order } }
    }

    pub fn covariate(name: &str) -> Self {
        TermCoding { name: name.to_string(), kind: TermKind::Covariate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingEntry {
    pub term: String,
    pub level: String,
    /// `None` for the reference level.
    pub column: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: Matrix,
    pub column_labels: Vec<String>,
    pub coding_map: Vec<CodingEntry>,
}

impl DesignMatrix {
    pub fn n_params(&self) -> usize {
        self.values.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Level {
    Num(f64),
    Text(String),
}

impl Level {
    fn cmp(&self, other: &Level) -> Ordering {
        match (self, other) {
            (Level::Num(a), Level::Num(b)) => a.total_cmp(b),
            (a, b) => a.label().cmp(&b.label()),
        }
    }

    fn label(&self) -> String {
        match self {
            Level::Num(v) => v.to_string(),
            Level::Text(s) => s.clone(),
        }
    }
}

fn factor_levels(values: &[&Value], name: &str) -> Result<Vec<Level>> {
    let all_numeric = values.iter().all(|v| matches!(v, Value::Number(_)));
    let mut levels: Vec<Level> = values
        .iter()
        .map(|v| match v {
            Value::Number(x) if all_numeric => Ok(Level::Num(*x)),
            Value::Missing => Err(Error::MissingValue(name.to_string())),
            other => Ok(Level::Text(other.to_string())),
        })
        .collect::<Result<_>>()?;
    levels.sort_by(Level::cmp);
    levels.dedup_by(|a, b| a.cmp(b) == Ordering::Equal);
    Ok(levels)
}

/// Intercept plus one column per covariate and one indicator per
/// non-reference factor level.
pub fn build_design(ds: &ClusteredDataset, terms: &[TermCoding]) -> Result<DesignMatrix> {
    let n = ds.n_total();
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut labels = vec!["(Intercept)".to_string()];
    let mut coding_map = Vec::new();

    for term in terms {
        let values = ds.column(&term.name)?;
        match &term.kind {
            TermKind::Covariate => {
                let col = values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| match v {
                        Value::Number(x) => Ok(*x),
                        Value::Missing => Err(Error::MissingValue(term.name.clone())),
                        Value::Text(_) => Err(Error::UnparseableValue { row: i + 1, col: term.name.clone() }),
                    })
                    .collect::<Result<Vec<f64>>>()?;
                columns.push(col);
                labels.push(term.name.clone());
            }
            TermKind::Factor { order } => {
                let mut levels = factor_levels(&values, &term.name)?;
                if levels.len() < 2 {
                    return Err(Error::ConstantFactor(term.name.clone()));
                }
                if *order == CategoryOrder::Descending {
                    levels.reverse();
                }
                let reference = levels.pop().expect("at least two levels");
                for level in &levels {
                    let col = values
                        .iter()
                        .map(|v| {
                            let hit = match (v, level) {
                                (Value::Number(x), Level::Num(l)) => x == l,
                                (v, l) => v.to_string() == l.label(),
                            };
                            if hit { 1.0 } else { 0.0 }
                        })
                        .collect();
                    coding_map.push(CodingEntry {
                        term: term.name.clone(),
                        level: level.label(),
                        column: Some(columns.len()),
                    });
                    columns.push(col);
                    labels.push(format!("{}={}", term.name, level.label()));
                }
                coding_map.push(CodingEntry { term: term.name.clone(), level: reference.label(), column: None });
            }
        }
    }

    let p = columns.len();
    let values = Matrix::from_fn(n, p, |i, j| columns[j][i]);
    Ok(DesignMatrix { values, column_labels: labels, coding_map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SMALL: &str = "ID,AREA2,AGE,AREA1,LOOSENING\n\
        1,3,21,0,1\n\
        1,1,21,1,0\n\
        2,2,20,1,0\n\
        3,5,35,,1\n\
        3,4,35,0,0\n";

    fn small() -> ClusteredDataset {
        read_csv(SMALL.as_bytes(), "ID", "LOOSENING", Some("AREA2")).unwrap()
    }

    #[test]
    fn groups_and_sorts_by_within() {
        let ds = small();
        assert_eq!(ds.n_clusters(), 3);
        assert_eq!(ds.n_total(), 5);
        assert_eq!(ds.cluster_sizes(), vec![2, 1, 2]);
        let c1 = &ds.clusters()[0];
        assert_eq!(c1.rows[0].position, 1.0);
        assert_eq!(c1.rows[1].position, 3.0);
        assert_eq!(ds.positions(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(c1.slots(), vec![0, 2]);
        assert_eq!(ds.variable_names(), &["AGE".to_string(), "AREA1".to_string()]);
    }

    #[test]
    fn file_order_without_within() {
        let ds = read_csv(SMALL.as_bytes(), "ID", "LOOSENING", None).unwrap();
        let c1 = &ds.clusters()[0];
        assert_eq!(c1.rows[0].response, 1.0);
        assert_eq!(c1.slots(), vec![0, 1]);
        assert_eq!(ds.n_slots(), 2);
    }

    #[test]
    fn single_row_file() {
        let ds = read_csv("ID,Y\n7,1\n".as_bytes(), "ID", "Y", None).unwrap();
        assert_eq!(ds.n_clusters(), 1);
        assert_eq!(ds.cluster_sizes(), vec![1]);
    }

    #[test]
    fn missing_response_column() {
        let err = read_csv("ID,AGE\n1,3\n".as_bytes(), "ID", "LOOSENING", None).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "LOOSENING"));
    }

    #[test]
    fn unparseable_response() {
        let err = read_csv("ID,Y\n1,0\n1,yes\n".as_bytes(), "ID", "Y", None).unwrap_err();
        assert!(matches!(err, Error::UnparseableValue { row: 2, ref col } if col == "Y"));
    }

    #[test]
    fn duplicate_positions_rejected() {
        let err = read_csv("ID,W,Y\n1,1,0\n1,1,1\n".as_bytes(), "ID", "Y", Some("W")).unwrap_err();
        assert!(matches!(err, Error::DuplicateWithinPosition(id) if id == "1"));
    }

    #[test]
    fn threshold_derivation() {
        let ds = small();
        let strict = derive_threshold(&ds, "AGE", 20.0, "AGE1", true).unwrap();
        let col: Vec<f64> = strict.column("AGE1").unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        // AGE in row order: 21, 21, 20, 35, 35
        assert_eq!(col, vec![1.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(strict.column("AGE").unwrap(), ds.column("AGE").unwrap());

        let len = read_csv("ID,LENGTH,Y\n1,8,0\n2,7,1\n".as_bytes(), "ID", "Y", None).unwrap();
        let d = derive_threshold(&len, "LENGTH", 8.0, "LENGTH1", false).unwrap();
        let col: Vec<f64> = d.column("LENGTH1").unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(col, vec![1.0, 0.0]);
        assert!(matches!(derive_threshold(&ds, "NOPE", 1.0, "X", true), Err(Error::UnknownVariable(_))));
    }

    #[test]
    fn factor_reference_follows_order() {
        let (ds, dropped) = small().complete_cases(&["AREA1"]).unwrap();
        assert_eq!(dropped, 1);
        let desc = build_design(&ds, &[TermCoding::factor("AREA1", CategoryOrder::Descending)]).unwrap();
        assert_eq!(desc.column_labels, vec!["(Intercept)", "AREA1=1"]);
        assert!(desc.coding_map.iter().any(|e| e.level == "0" && e.column.is_none()));
        let asc = build_design(&ds, &[TermCoding::factor("AREA1", CategoryOrder::Ascending)]).unwrap();
        assert_eq!(asc.column_labels, vec!["(Intercept)", "AREA1=0"]);
        for i in 0..ds.n_total() {
            assert_eq!(desc.values[(i, 1)] + asc.values[(i, 1)], 1.0);
            assert_eq!(desc.values[(i, 0)], 1.0);
        }
    }

    #[test]
    fn covariate_is_identity_coded() {
        let ds = small();
        let d = build_design(&ds, &[TermCoding::covariate("AGE")]).unwrap();
        let col: Vec<f64> = (0..5).map(|i| d.values[(i, 1)]).collect();
        assert_eq!(col, vec![21.0, 21.0, 20.0, 35.0, 35.0]);
    }

    #[test]
    fn design_errors() {
        let ds = small();
        assert!(matches!(
            build_design(&ds, &[TermCoding::factor("AREA1", CategoryOrder::Ascending)]),
            Err(Error::MissingValue(_))
        ));
        assert!(matches!(build_design(&ds, &[TermCoding::covariate("NOPE")]), Err(Error::UnknownVariable(_))));
        let one = read_csv("ID,G,Y\n1,1,0\n2,1,1\n".as_bytes(), "ID", "Y", None).unwrap();
        assert!(matches!(
            build_design(&one, &[TermCoding::factor("G", CategoryOrder::Ascending)]),
            Err(Error::ConstantFactor(_))
        ));
    }

    #[test]
    fn text_factor_levels_sort_lexicographically() {
        let ds = read_csv("ID,G,Y\n1,b,0\n2,a,1\n3,c,1\n".as_bytes(), "ID", "Y", None).unwrap();
        let d = build_design(&ds, &[TermCoding::factor("G", CategoryOrder::Ascending)]).unwrap();
        assert_eq!(d.column_labels, vec!["(Intercept)", "G=a", "G=b"]);
    }

    #[test]
    fn response_recoding() {
        let ds = small();
        let first = recode_response(&ds, ResponseReference::First).unwrap();
        assert_eq!(first.responses(), ds.responses());
        assert_eq!(first.response_coding().unwrap().event, 1.0);
        let last = recode_response(&ds, ResponseReference::Last).unwrap();
        let flipped: Vec<f64> = ds.responses().iter().map(|y| 1.0 - y).collect();
        assert_eq!(last.responses(), flipped);
        assert_eq!(last.response_coding().unwrap().event, 0.0);

        let constant = read_csv("ID,Y\n1,1\n2,1\n".as_bytes(), "ID", "Y", None).unwrap();
        assert!(matches!(
            recode_response(&constant, ResponseReference::First),
            Err(Error::NonBinaryResponse(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let ds = small();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), "ID", "LOOSENING", Some("AREA2")).unwrap();
        assert_eq!(back, ds);
    }

    proptest! {
        #[test]
        fn round_trip_random(
            rows in proptest::collection::vec((0u8..6, -1000i32..1000, proptest::option::of(0u8..4), 0u8..2), 1..40)
        ) {
            let mut text = String::from("ID,X,G,Y\n");
            for (id, x, g, y) in &rows {
                let g = g.map(|v| v.to_string()).unwrap_or_default();
                text.push_str(&format!("c{id},{},{g},{y}\n", *x as f64 / 8.0));
            }
            let ds = read_csv(text.as_bytes(), "ID", "Y", None).unwrap();
            let mut buf = Vec::new();
            ds.write_csv(&mut buf).unwrap();
            let back = read_csv(buf.as_slice(), "ID", "Y", None).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn design_width_formula(
            n_levels in proptest::collection::vec(2usize..5, 0..4),
            n_cov in 0usize..3,
            order_flags in proptest::collection::vec(any::<bool>(), 4),
        ) {
            // every factor sees all its levels by cycling over 12 rows
            let names: Vec<String> = (0..n_levels.len()).map(|k| format!("F{k}"))
                .chain((0..n_cov).map(|k| format!("C{k}"))).collect();
            let header: Vec<&str> = std::iter::once("ID").chain(names.iter().map(String::as_str)).chain(["Y"]).collect();
            let mut text = header.join(",") + "\n";
            for i in 0..12usize {
                let mut fields = vec![i.to_string()];
                fields.extend(n_levels.iter().map(|l| (i % l).to_string()));
                fields.extend((0..n_cov).map(|k| (i * (k + 2)).to_string()));
                fields.push((i % 2).to_string());
                text.push_str(&fields.join(","));
                text.push('\n');
            }
            let ds = read_csv(text.as_bytes(), "ID", "Y", None).unwrap();
            let terms: Vec<TermCoding> = n_levels.iter().enumerate()
                .map(|(k, _)| TermCoding::factor(&format!("F{k}"), if order_flags[k] { CategoryOrder::Ascending } else { CategoryOrder::Descending }))
                .chain((0..n_cov).map(|k| TermCoding::covariate(&format!("C{k}"))))
                .collect();
            let d = build_design(&ds, &terms).unwrap();
            let expected = 1 + n_cov + n_levels.iter().map(|l| l - 1).sum::<usize>();
            prop_assert_eq!(d.n_params(), expected);
            prop_assert_eq!(d.column_labels.len(), expected);
        }
    }
}
