//! A model specification bundled with the data preparation it implies.

use serde::{Deserialize, Serialize};

use crate::data::{build_design, recode_response, ClusteredDataset, DesignMatrix, ResponseReference, TermCoding};
use crate::error::Result;
use crate::gee::{fit_gee, CorrelationKind, GeeFit, GeeOptions};
use crate::glm::{Distribution, Family};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    /// Reference level of a binary response; ignored for other families.
    pub response_reference: ResponseReference,
    pub terms: Vec<TermCoding>,
    pub correlation: CorrelationKind,
}

/// Data and design ready for fitting.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub data: ClusteredDataset,
    pub design: DesignMatrix,
    /// Rows dropped for missing term values.
    pub dropped: usize,
}

impl ModelSpec {
    pub fn term_names(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.name.as_str()).collect()
    }

    /// Drops incomplete rows, codes a binomial response as 0/1 and builds
    /// the design.
    pub fn prepare(&self, ds: &ClusteredDataset) -> Result<PreparedModel> {
        let (complete, dropped) = ds.complete_cases(&self.term_names())?;
        let data = self.code_response(&complete)?;
        let design = build_design(&data, &self.terms)?;
        Ok(PreparedModel { data, design, dropped })
    }

    /// Applies the response reference for binomial models.
    pub fn code_response(&self, ds: &ClusteredDataset) -> Result<ClusteredDataset> {
        if self.family.distribution() == Distribution::Binomial {
            recode_response(ds, self.response_reference)
        } else {
            Ok(ds.clone())
        }
    }

    pub fn fit(&self, ds: &ClusteredDataset, opts: &GeeOptions) -> Result<(PreparedModel, GeeFit)> {
        let prepared = self.prepare(ds)?;
        let fit = fit_gee(&prepared.design, &prepared.data, self.family, &self.correlation, opts)?;
        Ok((prepared, fit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_csv, CategoryOrder};

    fn spec(reference: ResponseReference) -> ModelSpec {
        ModelSpec {
            family: Family::binomial(),
            response_reference: reference,
            terms: vec![TermCoding::factor("X", CategoryOrder::Descending)],
            correlation: CorrelationKind::Independent,
        }
    }

    const CSV: &str = "ID,X,Y\n1,0,2\n1,1,4\n2,,2\n2,1,2\n3,0,4\n3,1,4\n4,0,2\n";

    #[test]
    fn prepare_drops_incomplete_and_recodes() {
        let ds = read_csv(CSV.as_bytes(), "ID", "Y", None).unwrap();
        let p = spec(ResponseReference::First).prepare(&ds).unwrap();
        assert_eq!(p.dropped, 1);
        assert_eq!(p.data.n_total(), 6);
        assert_eq!(p.data.responses(), vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(p.design.column_labels, vec!["(Intercept)", "X=1"]);
    }

    #[test]
    fn reference_flip_negates() {
        let ds = read_csv(CSV.as_bytes(), "ID", "Y", None).unwrap();
        let opts = GeeOptions::default();
        let (_, a) = spec(ResponseReference::First).fit(&ds, &opts).unwrap();
        let (_, b) = spec(ResponseReference::Last).fit(&ds, &opts).unwrap();
        for (u, v) in a.beta.iter().zip(&b.beta) {
            assert!((u + v).abs() < 1e-10);
        }
    }
}
