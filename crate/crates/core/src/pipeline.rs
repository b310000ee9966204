//! Orchestration of the standard corpus workflows: index download,
//! filing ingestion, company metadata refresh, text extraction, and term
//! search.
//!
//! Every workflow expands into idempotent jobs keyed by a natural subject
//! (index path, accession number, body digest), executed by an in-process
//! worker pool with at-least-once semantics. Because handlers are
//! idempotent upserts end to end, duplicate or replayed execution is
//! harmless, a crashed run converges on rerun, and the final database and
//! store state is independent of worker count and scheduling order.
//! Incrementality is state-table-driven: rows flagged processed are
//! skipped, never refetched.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use crate::clock::Clock;
use crate::edgar_client::{parse_company_metadata, ClientError, EdgarClient};
use crate::filing_parser::parse_filing;
use crate::index_parser::{parse_index, IndexRow};
use crate::metadata_store::{MetadataStore, MetadataStoreError, SearchHit};
use crate::object_store::{
    self, key_for_document, key_for_raw_filing, ObjectStore, ObjectStoreError, StoreLock,
    SweepPredicate, SweepReport, SweepSignatures,
};
use crate::text_extract::{extract_pending, ExtractError, TextExtractor};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Store(#[from] ObjectStoreError),
    #[error(transparent)]
    Metadata(#[from] MetadataStoreError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<ExtractError> for PipelineError {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::Store(e) => PipelineError::Store(e),
            ExtractError::Metadata(e) => PipelineError::Metadata(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    DownloadIndex,
    ProcessFiling,
    ExtractText,
    UpdateCompanies,
    Search,
}

/// Identity of one unit of work; (kind, subject) is unique within a run
/// and replaying it is safe by construction.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct JobSpec {
    pub kind: JobKind,
    pub subject: String,
    pub attempt: u32,
}

pub struct Job<T> {
    pub spec: JobSpec,
    pub payload: T,
}

impl<T> Job<T> {
    fn new(kind: JobKind, subject: impl Into<String>, payload: T) -> Self {
        Job {
            spec: JobSpec { kind, subject: subject.into(), attempt: 0 },
            payload,
        }
    }
}

pub enum JobOutcome {
    Done,
    Skipped,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct RunReport {
    pub jobs_total: u64,
    pub jobs_succeeded: u64,
    pub jobs_failed: u64,
    pub jobs_skipped: u64,
    pub wall_time_seconds: f64,
    pub failures: Vec<(String, String)>,
}

impl RunReport {
    pub fn is_clean(&self) -> bool {
        self.jobs_failed == 0
    }
}

/// Run jobs on a pool of `worker_count` threads with per-job retries.
/// At-least-once execution: a handler may run more than `attempts`
/// observable times across process restarts, which is why every handler
/// must be idempotent.
pub fn execute<T, F>(
    jobs: Vec<Job<T>>,
    worker_count: usize,
    retry_limit: u32,
    clock: &dyn Clock,
    handler: F,
) -> RunReport
where
    T: Send,
    F: Fn(&JobSpec, &T) -> Result<JobOutcome, String> + Send + Sync,
{
    let started = clock.now();
    let jobs_total = jobs.len() as u64;
    let (tx, rx) = crossbeam_channel::unbounded::<Job<T>>();
    for job in jobs {
        tx.send(job).expect("queue open");
    }
    drop(tx);

    let succeeded = std::sync::atomic::AtomicU64::new(0);
    let skipped = std::sync::atomic::AtomicU64::new(0);
    let failures: Mutex<Vec<(String, String)>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..worker_count.max(1) {
            scope.spawn(|| {
                while let Ok(mut job) = rx.recv() {
                    loop {
                        match handler(&job.spec, &job.payload) {
                            Ok(JobOutcome::Done) => {
                                succeeded.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                                break;
                            }
                            Ok(JobOutcome::Skipped) => {
                                skipped.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                                break;
                            }
                            Err(e) if job.spec.attempt < retry_limit => {
                                log::debug!(
                                    "job {:?}/{} attempt {} failed, retrying: {e}",
                                    job.spec.kind,
                                    job.spec.subject,
                                    job.spec.attempt + 1
                                );
                                job.spec.attempt += 1;
                            }
                            Err(e) => {
                                log::warn!(
                                    "job {:?}/{} failed permanently: {e}",
                                    job.spec.kind,
                                    job.spec.subject
                                );
                                failures.lock().unwrap().push((job.spec.subject.clone(), e));
                                break;
                            }
                        }
                    }
                }
            });
        }
    });

    let mut failures = failures.into_inner().unwrap();
    failures.sort();
    let jobs_failed = failures.len() as u64;
    RunReport {
        jobs_total,
        jobs_succeeded: succeeded.into_inner(),
        jobs_failed,
        jobs_skipped: skipped.into_inner(),
        wall_time_seconds: (clock.now() - started).as_secs_f64(),
        failures,
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub worker_count: usize,
    pub job_retry_limit: u32,
    /// Compression of stored document bodies and extracted text. Raw
    /// filings and indexes always mirror the archive bytes verbatim.
    pub compress_documents: bool,
    pub compress_text: bool,
    /// flock path coordinating ingestion (shared) against sweeps
    /// (exclusive).
    pub lock_path: PathBuf,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            worker_count: 4,
            job_retry_limit: 2,
            compress_documents: true,
            compress_text: true,
            lock_path: PathBuf::from("store.lock"),
        }
    }
}

/// Narrowing of the documents a search scans.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocumentScope {
    pub description_like: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct SearchResultRow {
    pub accession_number: String,
    pub sequence: u32,
    pub sha1: String,
    pub term: String,
    pub count: u64,
}

pub struct Pipeline {
    pub client: Arc<EdgarClient>,
    pub store: Arc<dyn ObjectStore>,
    pub metadata: Arc<MetadataStore>,
    pub extractor: Arc<TextExtractor>,
    pub clock: Arc<dyn Clock>,
    pub options: PipelineOptions,
}

impl Pipeline {
    fn ingest_lock(&self) -> Result<StoreLock, PipelineError> {
        StoreLock::shared(&self.options.lock_path).map_err(Into::into)
    }

    /// Download and parse index files for one year (or every year from
    /// the configured origin). Already-processed indexes are skipped.
    pub fn download_filing_index_data(
        &self,
        year: Option<i32>,
    ) -> Result<RunReport, PipelineError> {
        let _lock = self.ingest_lock()?;
        let descriptors = self.client.list_index_files(year, None)?;
        let jobs: Vec<_> = descriptors
            .into_iter()
            .map(|d| Job::new(JobKind::DownloadIndex, d.path.clone(), d))
            .collect();

        let report = execute(
            jobs,
            self.options.worker_count,
            self.options.job_retry_limit,
            self.clock.as_ref(),
            |_, descriptor| {
                let state = self
                    .metadata
                    .record_filing_index(descriptor)
                    .map_err(|e| e.to_string())?;
                if state.is_processed {
                    return Ok(JobOutcome::Skipped);
                }
                let raw = match self.client.fetch(&descriptor.path, None) {
                    Ok(raw) => raw,
                    Err(e) => {
                        self.metadata
                            .mark_index_error(&descriptor.path, &e.to_string())
                            .map_err(|e| e.to_string())?;
                        return Err(e.to_string());
                    }
                };
                let key = key_for_raw_filing(&descriptor.path).map_err(|e| e.to_string())?;
                self.store.put(&key, &raw, false).map_err(|e| e.to_string())?;
                match parse_index(&raw) {
                    Ok(parsed) => {
                        if !parsed.malformed_lines.is_empty() {
                            log::warn!(
                                "{}: {} malformed rows quarantined",
                                descriptor.path,
                                parsed.malformed_lines.len()
                            );
                        }
                        self.metadata
                            .mark_index_processed(&descriptor.path, parsed.rows.len() as u64)
                            .map_err(|e| e.to_string())?;
                        Ok(JobOutcome::Done)
                    }
                    Err(e) => {
                        self.metadata
                            .mark_index_error(&descriptor.path, &e.to_string())
                            .map_err(|e| e.to_string())?;
                        Err(e.to_string())
                    }
                }
            },
        );
        Ok(report)
    }

    /// Fetch, parse, and record every filing referenced by the processed
    /// indexes in scope, optionally narrowed to a set of form types.
    pub fn process_all_filing_index(
        &self,
        year: Option<i32>,
        form_type_list: Option<&BTreeSet<String>>,
    ) -> Result<RunReport, PipelineError> {
        let _lock = self.ingest_lock()?;
        let wanted: Option<BTreeSet<String>> =
            form_type_list.map(|s| s.iter().map(|f| f.trim().to_uppercase()).collect());

        // One job per accession: the same filing appears in several index
        // flavors, so rows are deduplicated before scheduling.
        let mut by_accession: BTreeMap<String, IndexRow> = BTreeMap::new();
        let mut unkeyable: Vec<(String, String)> = Vec::new();
        for index in self.metadata.list_filing_indexes(year)? {
            if !index.is_processed {
                continue;
            }
            let key = key_for_raw_filing(&index.edgar_path)?;
            let raw = self.store.get(&key, None)?;
            let parsed = parse_index(&raw)
                .map_err(|e| PipelineError::InvalidArgument(format!(
                    "stored index {} no longer parses: {e}",
                    index.edgar_path
                )))?;
            for row in parsed.rows {
                if let Some(wanted) = &wanted {
                    if !wanted.contains(&row.form_type) {
                        continue;
                    }
                }
                match accession_from_file_name(&row.file_name) {
                    Some(accession) => {
                        by_accession.entry(accession).or_insert(row);
                    }
                    None => unkeyable.push((
                        row.file_name.clone(),
                        "file name does not embed an accession number".to_string(),
                    )),
                }
            }
        }

        let jobs: Vec<_> = by_accession
            .into_iter()
            .map(|(accession, row)| Job::new(JobKind::ProcessFiling, accession, row))
            .collect();

        let mut report = execute(
            jobs,
            self.options.worker_count,
            self.options.job_retry_limit,
            self.clock.as_ref(),
            |spec, row| self.process_one_filing(&spec.subject, row).map_err(|e| e.to_string()),
        );
        report.jobs_total += unkeyable.len() as u64;
        report.jobs_failed += unkeyable.len() as u64;
        report.failures.extend(unkeyable);
        report.failures.sort();
        Ok(report)
    }

    fn process_one_filing(&self, accession: &str, row: &IndexRow) -> Result<JobOutcome, PipelineError> {
        self.metadata.upsert_company(row.cik)?;
        if let Some(existing) = self.metadata.get_filing(accession)? {
            if existing.is_processed {
                return Ok(JobOutcome::Skipped);
            }
        }
        let raw = match self.client.fetch(&row.file_name, None) {
            Ok(raw) => raw,
            Err(e) => {
                self.metadata.mark_filing_error(
                    accession,
                    row.cik,
                    &row.file_name,
                    Some(&row.form_type),
                    Some(row.date_filed),
                    &format!("fetch failed: {e}"),
                )?;
                return Err(e.into());
            }
        };
        let raw_key = key_for_raw_filing(&row.file_name)?;
        self.store.put(&raw_key, &raw, false)?;

        let parsed = match parse_filing(&raw) {
            Ok(parsed) => parsed,
            Err(e) => {
                self.metadata.mark_filing_error(
                    accession,
                    row.cik,
                    &row.file_name,
                    Some(&row.form_type),
                    Some(row.date_filed),
                    &e.to_string(),
                )?;
                return Err(PipelineError::InvalidArgument(e.to_string()));
            }
        };
        let keyable = parsed
            .header
            .as_ref()
            .map(|h| h.cik.is_some())
            .unwrap_or(false);
        if !keyable {
            let detail = parsed
                .warnings
                .iter()
                .map(|w| w.message.as_str())
                .collect::<Vec<_>>()
                .join("; ");
            let detail = if detail.is_empty() {
                "header lacks accession or CIK".to_string()
            } else {
                detail
            };
            self.metadata.mark_filing_error(
                accession,
                row.cik,
                &row.file_name,
                Some(&row.form_type),
                Some(row.date_filed),
                &detail,
            )?;
            return Err(PipelineError::InvalidArgument(format!(
                "{accession}: {detail}"
            )));
        }

        let header_accession = &parsed.header.as_ref().unwrap().accession_number;
        if header_accession != accession {
            log::warn!(
                "index names {accession} but header says {header_accession}; keeping header"
            );
        }
        for doc in &parsed.documents {
            self.store.put(
                &key_for_document(&doc.sha1)?,
                &doc.body,
                self.options.compress_documents,
            )?;
        }
        let filing = self.metadata.record_filing(&parsed, &raw_key)?;
        self.metadata
            .record_documents(&filing.accession_number, &parsed.documents)?;
        Ok(JobOutcome::Done)
    }

    /// Refresh company metadata for every known company; new snapshots
    /// are appended only when something changed.
    pub fn update_company_metadata(&self) -> Result<RunReport, PipelineError> {
        let _lock = self.ingest_lock()?;
        let companies = self.metadata.list_companies()?;
        let jobs: Vec<_> = companies
            .into_iter()
            .map(|c| Job::new(JobKind::UpdateCompanies, c.cik.to_string(), c))
            .collect();
        let as_of = self.clock.today();
        Ok(execute(
            jobs,
            self.options.worker_count,
            self.options.job_retry_limit,
            self.clock.as_ref(),
            |_, company| {
                let body = self
                    .client
                    .fetch_company_metadata(company.cik)
                    .map_err(|e| e.to_string())?;
                let meta = parse_company_metadata(&body).ok_or_else(|| {
                    format!("metadata document for CIK {} is unparseable", company.cik)
                })?;
                self.metadata
                    .append_company_info(
                        company.cik,
                        &meta.name,
                        meta.state_of_incorporation.as_deref(),
                        meta.sic.as_deref(),
                        as_of,
                    )
                    .map_err(|e| e.to_string())?;
                Ok(JobOutcome::Done)
            },
        ))
    }

    /// Extract text for every pending document (see
    /// [`crate::text_extract::extract_pending`] for semantics).
    pub fn extract_all_text(&self) -> Result<RunReport, PipelineError> {
        let _lock = self.ingest_lock()?;
        let started = self.clock.now();
        let summary = extract_pending(
            self.metadata.as_ref(),
            self.store.as_ref(),
            self.extractor.as_ref(),
            self.options.compress_text,
        )?;
        let failed = summary.bodies_unextracted + summary.bodies_failed;
        Ok(RunReport {
            jobs_total: summary.bodies_extracted + summary.bodies_reused + failed,
            jobs_succeeded: summary.bodies_extracted,
            jobs_failed: failed,
            jobs_skipped: summary.bodies_reused,
            wall_time_seconds: (self.clock.now() - started).as_secs_f64(),
            failures: Vec::new(),
        })
    }

    /// Count non-overlapping term occurrences across every extracted
    /// document in scope, persist the non-zero counts, and return them.
    pub fn run_search(
        &self,
        terms: &[(String, bool)],
        scope: Option<&DocumentScope>,
    ) -> Result<Vec<SearchResultRow>, PipelineError> {
        if terms.is_empty() || terms.iter().any(|(t, _)| t.is_empty()) {
            return Err(PipelineError::InvalidArgument(
                "search requires at least one non-empty term".into(),
            ));
        }
        let label = search_label(terms, scope);
        let query_id = self.metadata.upsert_search_query(&label)?;
        let mut term_ids = Vec::new();
        for (term, case_sensitive) in terms {
            let id = self.metadata.upsert_search_term(query_id, term, *case_sensitive)?;
            term_ids.push((id, term.clone(), *case_sensitive));
        }

        let documents = self
            .metadata
            .extracted_documents(scope.and_then(|s| s.description_like.as_deref()))?;

        let mut text_cache: BTreeMap<String, String> = BTreeMap::new();
        let mut hits = Vec::new();
        let mut rows = Vec::new();
        for doc in &documents {
            let text = match text_cache.get(&doc.sha1) {
                Some(text) => text,
                None => {
                    let key = object_store::key_for_text(&doc.sha1)?;
                    let bytes = self.store.get(&key, None)?;
                    let text = String::from_utf8_lossy(&bytes).into_owned();
                    text_cache.entry(doc.sha1.clone()).or_insert(text)
                }
            };
            for (term_id, term, case_sensitive) in &term_ids {
                let count = count_occurrences(text, term, *case_sensitive);
                if count > 0 {
                    hits.push(SearchHit {
                        term_id: *term_id,
                        accession_number: doc.accession_number.clone(),
                        sequence: doc.sequence,
                        count,
                    });
                    rows.push(SearchResultRow {
                        accession_number: doc.accession_number.clone(),
                        sequence: doc.sequence,
                        sha1: doc.sha1.clone(),
                        term: term.clone(),
                        count,
                    });
                }
            }
        }
        self.metadata.save_search_results(query_id, &hits)?;
        Ok(rows)
    }

    /// Maintenance sweep over the object store. Takes the exclusive store
    /// lock so it never overlaps ingestion.
    pub fn sweep_store(
        &self,
        prefix: &str,
        predicate: SweepPredicate,
        dry_run: bool,
    ) -> Result<SweepReport, PipelineError> {
        let _lock = StoreLock::exclusive(&self.options.lock_path)?;
        let signatures = SweepSignatures {
            rate_limited: self.client.config().rate_limit_signatures.clone(),
            ..SweepSignatures::default()
        };
        object_store::sweep(self.store.as_ref(), prefix, predicate, &signatures, dry_run)
            .map_err(Into::into)
    }
}

/// Count non-overlapping occurrences of `term`, case-folded unless the
/// search is case-sensitive. Substring semantics: "solicitation"
/// contains "solicit".
pub fn count_occurrences(text: &str, term: &str, case_sensitive: bool) -> u64 {
    if term.is_empty() {
        return 0;
    }
    if case_sensitive {
        text.matches(term).count() as u64
    } else {
        text.to_lowercase().matches(&term.to_lowercase()).count() as u64
    }
}

/// Stable label for a query so reruns reuse the same row.
fn search_label(terms: &[(String, bool)], scope: Option<&DocumentScope>) -> String {
    let mut parts: Vec<String> = terms
        .iter()
        .map(|(t, cs)| format!("{t}[{}]", if *cs { "cs" } else { "ci" }))
        .collect();
    parts.sort();
    let mut label = parts.join(";");
    if let Some(DocumentScope { description_like: Some(d) }) = scope {
        label.push_str(&format!(" @description~{d}"));
    }
    label
}

/// An index row's file name embeds the accession: the basename minus its
/// suffix, e.g. `edgar/data/320193/0000320193-18-000001.txt`.
pub fn accession_from_file_name(file_name: &str) -> Option<String> {
    let base = file_name.rsplit('/').next()?;
    let stem = base.split('.').next()?;
    let ok = stem.len() == 20
        && stem.chars().enumerate().all(|(i, c)| match i {
            10 | 13 => c == '-',
            _ => c.is_ascii_digit(),
        });
    ok.then(|| stem.to_string())
}
