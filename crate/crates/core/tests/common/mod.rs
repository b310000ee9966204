//! Shared harness: mock servers + a fully wired pipeline on a temp
//! directory, plus the committed fixture-corpus manifest.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use edgar_corpus::clock::SimClock;
use edgar_corpus::edgar_client::{ClientConfig, EdgarClient};
use edgar_corpus::metadata_store::MetadataStore;
use edgar_corpus::object_store::{FsStore, ObjectStore, S3Config, S3Store};
use edgar_corpus::pipeline::{Pipeline, PipelineOptions};
use edgar_corpus::text_extract::TextExtractor;
use edgar_corpus_testkit::{archive_fixture_root, company_fixture_root, EdgarMock, S3Mock};

pub enum Backend {
    Fs,
    S3,
}

pub struct TestEnv {
    pub edgar: EdgarMock,
    pub s3: Option<S3Mock>,
    pub dir: tempfile::TempDir,
    pub clock: Arc<SimClock>,
    pub pipeline: Pipeline,
}

pub fn env(backend: Backend, worker_count: usize) -> TestEnv {
    env_with(backend, worker_count, None)
}

pub fn env_with(
    backend: Backend,
    worker_count: usize,
    extractor_url: Option<String>,
) -> TestEnv {
    let edgar = EdgarMock::start(&archive_fixture_root(), &company_fixture_root()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(SimClock::at_2018());

    let mut config = ClientConfig::new(edgar.base_url(), "corpus tests test@example.com");
    config.company_metadata_url = edgar.company_metadata_url();
    config.backoff_base = Duration::from_millis(5);
    let client = Arc::new(EdgarClient::new(config, clock.clone()).unwrap());

    let (s3, store): (Option<S3Mock>, Arc<dyn ObjectStore>) = match backend {
        Backend::Fs => (
            None,
            Arc::new(FsStore::open(&dir.path().join("objects")).unwrap()),
        ),
        Backend::S3 => {
            let mock = S3Mock::start("edgar").unwrap();
            let store = S3Store::open(S3Config::new(mock.endpoint(), mock.bucket())).unwrap();
            (Some(mock), Arc::new(store))
        }
    };

    let metadata =
        Arc::new(MetadataStore::open(&dir.path().join("corpus.sqlite"), clock.clone()).unwrap());
    let extractor = Arc::new(TextExtractor::new(extractor_url));

    let pipeline = Pipeline {
        client,
        store,
        metadata,
        extractor,
        clock: clock.clone(),
        options: PipelineOptions {
            worker_count,
            job_retry_limit: 2,
            compress_documents: true,
            compress_text: true,
            lock_path: dir.path().join("store.lock"),
        },
    };

    TestEnv { edgar, s3, dir, clock, pipeline }
}

pub fn all_keys(store: &dyn ObjectStore) -> Vec<String> {
    store.list_keys("").unwrap().map(|k| k.unwrap()).collect()
}

/// Run the standard full workflow: indexes, filings, companies, text.
pub fn run_full_ingestion(p: &Pipeline) -> [edgar_corpus::pipeline::RunReport; 4] {
    [
        p.download_filing_index_data(Some(2018)).unwrap(),
        p.process_all_filing_index(Some(2018), None).unwrap(),
        p.update_company_metadata().unwrap(),
        p.extract_all_text().unwrap(),
    ]
}

// ---- committed expected outcomes --------------------------------------

#[derive(Debug, serde::Deserialize)]
pub struct Manifest {
    pub year: i32,
    pub companies: Vec<u64>,
    pub company_info_v1: Vec<ManifestCompanyInfo>,
    pub filing_indexes: Vec<ManifestIndex>,
    pub filings: Vec<ManifestFiling>,
    pub documents: Vec<ManifestDocument>,
    pub object_keys: Vec<String>,
    pub reports: ManifestReports,
}

#[derive(Debug, serde::Deserialize)]
pub struct ManifestCompanyInfo {
    pub cik: u64,
    pub name: String,
    pub state_of_incorporation: String,
    pub sic: String,
}

#[derive(Debug, serde::Deserialize)]
pub struct ManifestIndex {
    pub path: String,
    pub year: i32,
    pub quarter: u8,
    pub index_type: String,
    pub is_processed: bool,
    pub is_error: bool,
    pub row_count: Option<u64>,
}

#[derive(Debug, serde::Deserialize)]
pub struct ManifestFiling {
    pub accession_number: String,
    pub cik: u64,
    pub form_type: String,
    pub date_filed: String,
    pub edgar_path: String,
    pub is_processed: bool,
    pub is_error: bool,
    pub document_count: Option<u64>,
}

#[derive(Debug, serde::Deserialize)]
pub struct ManifestDocument {
    pub accession_number: String,
    pub sequence: u32,
    pub doc_type: String,
    pub description: String,
    pub filename: String,
    pub sha1: String,
    pub content_type: String,
    pub is_extracted_after_run: bool,
}

#[derive(Debug, serde::Deserialize)]
pub struct ManifestReports {
    pub download: ManifestReport,
    pub process_all: ManifestReport,
    pub process_10k_fresh: ManifestReport,
    pub companies_update: ManifestReport,
    pub extract: ManifestReport,
}

#[derive(Debug, serde::Deserialize)]
pub struct ManifestReport {
    pub total: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub skipped: u64,
}

impl ManifestReport {
    pub fn matches(&self, report: &edgar_corpus::pipeline::RunReport) -> bool {
        self.total == report.jobs_total
            && self.succeeded == report.jobs_succeeded
            && self.failed == report.jobs_failed
            && self.skipped == report.jobs_skipped
    }
}

pub fn manifest_path() -> PathBuf {
    edgar_corpus_testkit::fixture_dir().join("manifest.json")
}

pub fn load_manifest() -> Manifest {
    let raw = std::fs::read(manifest_path()).unwrap();
    serde_json::from_slice(&raw).unwrap()
}
