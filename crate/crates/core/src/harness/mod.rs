//! Command-line front end, experiment pipelines, builtin kernels, and
//! report emission.

pub mod cli;
pub mod kernels;
pub mod pipeline;
pub mod report;

pub use kernels::{builtin_kernel, builtin_kernels, kernel_sized, BenchmarkKernel, Characterization, KernelKind};
pub use pipeline::{
    load_machine, load_program, prepare, run_all_modes, run_spec, simulate_mode, HarnessError, Prepared, ProfileSource,
    RunOutcome, RunSpec, THETA_DEFAULT,
};
pub use report::{geomean_rows, to_csv, to_gnuplot, CsvRow, CSV_HEADER};
