//! Evaluation metrics, engine comparison and the `umesh` command line.
//!
//! [`engine::Engine`] wraps the full FEM solver, the POD solver and a trained
//! network behind one interface; [`evaluate`] and [`bench`] run engines over
//! dataset samples and write CSV reports with a leading `# meta:` line.

pub mod bench;
pub mod cli;
pub mod engine;
pub mod error;
pub mod evaluate;
pub mod forces;
pub mod metrics;
pub mod model_select;

pub use error::{HarnessError, Result};
