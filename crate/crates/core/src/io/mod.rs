//! Configuration files, VTK and CSV output, and the command line.

mod cli;
mod config;
mod output;

use std::path::PathBuf;

use thiserror::Error;

pub use cli::cli_main;
pub use config::{echo_config, parse_config};
pub use output::{
    parse_vtk_points, render_energy_csv, render_iteration_rows, render_vtk, write_energy_csv, write_vtk, RunManifest,
    ENERGY_HEADER, ITERATION_HEADER,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("line {line}: expected key = value, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {0:?} given twice")]
    DuplicateKey(String),
    #[error("{key}: cannot parse {value:?}")]
    BadValue { key: String, value: String },
    #[error("{key}: expected {expected}")]
    OutOfRange { key: String, expected: String },
    #[error("field {name:?} has {got} values, mesh needs {expected}")]
    FieldLength { name: String, expected: usize, got: usize },
    #[error("cannot write {}: {reason}", path.display())]
    Write { path: PathBuf, reason: String },
}
