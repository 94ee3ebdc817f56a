//! Productivity shares over calendar periods and per-chair cycle-time statistics.

mod cycles;
mod report;
mod stats;
mod tally;

pub use cycles::{extract_cycles, filter_cycles, CycleRecord, DEFAULT_MIN_CYCLE_SECONDS};
pub use report::{share_percentages, ReportBundle, ReportFiles, StationReport};
pub use stats::{five_number_summary, quantile, weekly_box_stats, BoxStats};
pub use tally::{tally, PeriodKey, PeriodKind, StateTally, TallyAccumulator};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("track {track_id} on station {station} ended without a start event")]
    OrphanEvent { station: String, track_id: u64 },
    #[error("report output failed: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("report output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("report output failed: {0}")]
    Json(#[from] serde_json::Error),
}
