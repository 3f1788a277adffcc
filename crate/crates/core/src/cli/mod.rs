//! Experiment harness behind the `hslag` binary: a JSON configuration, the
//! five suites, and the run directory they write.
//!
//! A run directory holds `manifest.json` (config echo, seeds, every
//! assertion with the acceptance criterion it evidences, and the suite
//! results), one CSV per trace, and `plot_data.csv`, the long-format
//! `(series, x, y)` union of the traces. Identical configuration and seed give
//! byte-identical manifests.

mod config;
mod run;
mod suites;
mod trace;

pub use config::{
    ExperimentConfig, ModelDescriptor, MoserSettings, SolverSettings, Suite, Tolerances,
};
pub use run::{
    resolve_out_dir, run_suite, Assertion, DrawnSeed, Manifest, Relation, RunOutcome, OUT_ENV,
};
pub use trace::{emit_plot_data, read_plot_data, read_traces, Trace, PLOT_FILE};
