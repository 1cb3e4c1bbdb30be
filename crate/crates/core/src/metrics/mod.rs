//! Pansharpening quality indices and their aggregation.

mod full;
pub mod hypercomplex;
mod reduced;
mod report;

pub use full::{
    d_lambda, d_lambda_khan, d_s, full_scores, hqnr, uiqi, DLambdaVariant, FullScores, FULL_BLOCK,
};
pub use reduced::{ergas, laplacian_valid, q2n, sam, scc};
pub use report::{MetricsReport, ResolutionMode, Summary};
