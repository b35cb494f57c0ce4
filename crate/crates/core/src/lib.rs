//! Embeddable clinical data warehouse engine.
//!
//! The crate is organized as a pipeline: [`ingest`] parses per-source files,
//! standardizes units and timestamps, and pseudonymizes patient identity via
//! [`linkage`]; staged batches load into the [`warehouse`] star schema;
//! [`olap`] materializes group-by cube lattices over the fact tables;
//! [`datamart`] derives disease-specific marts and the epidemiological
//! analytics built on them; [`capacity`] estimates national record load and
//! storage; [`bench`] times the two cube-materialization strategies against
//! each other. [`pipeline`] wires everything into a deterministic end-to-end
//! demo used by the CLI and the integration tests.

pub mod bench;
pub mod capacity;
pub mod datamart;
pub mod error;
pub mod ingest;
pub mod linkage;
pub mod model;
pub mod olap;
pub mod pipeline;
pub mod report;
pub mod warehouse;

pub use error::{Error, Result};
