//! Resumable experiment sweeps.
//!
//! A sweep walks a deterministic list of cells; each finished cell is stored
//! as a JSON file under `<output_dir>/cells/` (written atomically), so an
//! interrupted run resumes by recomputing only what is missing. Cell seeds
//! are derived from the base seed and the cell's coordinates — never from
//! enumeration order — so resuming, reordering, or re-running cannot change
//! any number. The final CSV artifacts are assembled in one fixed order with
//! fixed formatting and are byte-identical across runs, thread counts, and
//! resumes; the JSON manifest records the configuration, per-cell stream
//! labels, and wall-clock timestamps (the one deliberately non-reproducible
//! artifact).

mod config;
mod persist;
mod run;

pub use config::{ExperimentConfig, ExperimentKind};
pub use persist::{load_manifest, CellManifest, Manifest};
pub use run::{
    run_constant_lb_path, run_conv_grid, run_experiment, run_experiment_with_progress, run_grid,
    run_init_comparison, ConvRow, ExperimentResult, ExperimentRows, GridRow, InitComparisonRow,
    PathRow, PathVarianceRow,
};
