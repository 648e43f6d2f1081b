//! Config-driven experiments: single runs, parameter grids and summary tables.

mod run;
mod spec;
mod table;

pub use run::{
    best_lr, default_lr_grid, grid_cells, median, read_rows, run_grid, run_seed, run_single, write_rows, write_trace,
    Axis, ResultRow, RunReport, TuneBy, TRACE_HEADER,
};
pub use spec::{parse_variant, ExperimentSpec, ObjectiveSpec, OutputSpec, OUT_DIR_ENV};
pub use table::{emit_table, table_from_csv, Table, TableRow};
