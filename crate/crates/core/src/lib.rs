//! Generalized estimating equations for clustered binary outcomes, with
//! QIC-driven selection of the working correlation and covariates.

pub mod data;
pub mod error;
pub mod gee;
pub mod glm;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod select;
pub mod simulate;

pub use data::{
    build_design, derive_threshold, load_csv, read_csv, recode_response, CategoryOrder, ClusteredDataset,
    DesignMatrix, Record, ResponseReference, TermCoding, TermKind, Value,
};
pub use error::{Error, Result};
pub use gee::{
    fit_gee, model_based_se, robust_se, CorrelationKind, CorrelationStructure, GeeFit, GeeOptions,
    MomentDenominator,
};
pub use glm::{Distribution, Family, Link};
pub use inference::{
    concordance_summary, crosstab_panels, parameter_table, qic, qic_u, ContingencyTable, CrosstabPanel,
    ParameterRow,
};
pub use linalg::Matrix;
pub use model::{ModelSpec, PreparedModel};
pub use select::{run_selection, Criterion, SelectionMode, SelectionReport};
pub use simulate::{build_paper_marginals, generate, SimProfile};
