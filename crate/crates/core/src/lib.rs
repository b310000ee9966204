//! Corpus construction pipeline for SEC EDGAR.
//!
//! Retrieves EDGAR index and filing data over rate-limited HTTPS, parses
//! the fixed-width / pipe-delimited indexes and SGML filing containers,
//! persists relational metadata in an embedded database, deduplicates
//! document bodies into content-addressable object storage, extracts
//! plain text, and supports exact term search over the stored corpus.
//! All workflows are idempotent and resumable, and the whole pipeline
//! runs offline against the bundled mock archive for tests.

pub mod clock;
pub mod edgar_client;
pub mod filing_parser;
pub mod index_parser;
pub mod metadata_store;
pub mod object_store;
pub mod pipeline;
pub mod text_extract;
pub mod uuencode;

pub use clock::{Clock, SimClock, SystemClock};
pub use edgar_client::{ByteRange, ClientConfig, EdgarClient, IndexDescriptor, IndexType};
pub use metadata_store::MetadataStore;
pub use object_store::{FsStore, ObjectRef, ObjectStore, S3Config, S3Store};
pub use pipeline::{Pipeline, PipelineOptions, RunReport};
pub use text_extract::TextExtractor;
