//! Diarization scoring: DER with collar and optional overlap exclusion,
//! optimal speaker mapping, median filtering, mask/segment conversion,
//! contingency tables and cumulative DER distributions.

mod cdf;
mod contingency;
mod der;
mod filter;
mod report;
mod segments;

pub use cdf::{cumulative_der, render_cdf};
pub use contingency::{contingency, render_contingency, ContingencyTable};
pub use der::{best_mapping, der, DerBreakdown};
pub use filter::median_filter;
pub use report::{aggregate_der, render_score_report};
pub use segments::masks_to_segments;
