// SPDX-License-Identifier: MIT OR Apache-2.0

//! Labelled instances, the functionality taxonomy, manifest ingestion and
//! the binary activation-trace format.

mod format;
mod instance;
mod manifest;
mod summary;
mod taxonomy;

pub use format::{
    instances_with, read_trace, write_trace, ActivationTrace, TraceBuilder, TraceHeader,
    TraceInstance, PER_TOKEN_TOLERANCE, TRACE_MAGIC, TRACE_VERSION,
};
pub use instance::InstanceRecord;
pub use manifest::{
    ingest_manifest, write_manifest, ByteTokenizer, IdTokenizer, IngestOptions, IngestReport,
    ManifestRow, Tokenizer,
};
pub use summary::summarize_instance;
pub use taxonomy::{Functionality, FunctionalityTaxonomy, LabelSet, N_FUNCTIONALITIES};
