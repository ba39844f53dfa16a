//! Robustness grid evaluation, trend checks, grid comparison and reports.

mod compare;
mod grid;
mod reference;
mod report;
mod trend;

pub use compare::{compare, GridComparison};
pub use grid::{run_grid, AccuracyGrid, CellKey};
pub use reference::ReferenceTable;
pub use report::{emit_report, parse_grid_csv, Report, ReportFormat};
pub use trend::{trend_checks, TrendCheck, DEFAULT_SLACK};
