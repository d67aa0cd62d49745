//! Transfer analysis over stage records: losses, matrices, transfer and
//! forgetting measures, correlations and reports.

mod correlate;
mod eval;
mod matrix;
mod reference;
mod report;
pub mod svg;
mod transfer;

pub use correlate::{
    average_ranks, correlate, pearson, spearman, Correlation, FactorTable, PairKey, CONTAMINATION_A_IN_B,
    CONTAMINATION_B_IN_A,
};
pub use eval::eval_loss;
pub use matrix::{build_transfer_matrix, group_by_plan, Coverage, MatrixRow, TransferMatrix};
pub use reference::{reference_models, reference_records, reference_rows, ReferenceRow, REFERENCE_LANGUAGES};
pub use report::{
    build_report, contamination_summary, emit_report, render_report, BackwardSeries, Report, REPORT_SCHEMA_VERSION,
};
pub use transfer::{
    backward_series, cumulative_loss, forgetting_tradeoff, forward_transfer, pairwise_backward_deltas, ForgettingPoint,
    ForwardPoint,
};
