//! Relational persistence for the corpus metadata model: companies and
//! their mutable info history, index and filing processing state,
//! per-document records, and saved term searches.
//!
//! Every write is an upsert against a natural key, so replaying any
//! operation leaves the database unchanged — that property is what makes
//! the whole pipeline resumable and safe to parallelize. The schema lives
//! in `schema.sql` next to this crate and is embedded at compile time.

use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::NaiveDate;
use rusqlite::{params, Connection, OptionalExtension};

use crate::clock::Clock;
use crate::edgar_client::IndexDescriptor;
use crate::filing_parser::{ParsedDocument, ParsedFiling};

pub const SCHEMA_SQL: &str = include_str!("../schema.sql");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetadataStoreError {
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
    #[error("illegal state transition: {0}")]
    IllegalTransition(String),
}

impl From<rusqlite::Error> for MetadataStoreError {
    fn from(e: rusqlite::Error) -> Self {
        match &e {
            rusqlite::Error::SqliteFailure(code, _)
                if code.code == rusqlite::ErrorCode::ConstraintViolation =>
            {
                MetadataStoreError::ConstraintViolation(e.to_string())
            }
            _ => MetadataStoreError::StorageFailure(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, MetadataStoreError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Company {
    pub cik: u64,
    pub date_first_seen: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompanyInfo {
    pub cik: u64,
    pub name: String,
    pub state_of_incorporation: Option<String>,
    pub sic: Option<String>,
    pub as_of: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilingIndexRecord {
    pub edgar_path: String,
    pub year: i32,
    pub quarter: u8,
    pub index_type: String,
    pub date_downloaded: Option<NaiveDate>,
    pub is_processed: bool,
    pub is_error: bool,
    pub row_count: Option<u64>,
    pub error_detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilingRecord {
    pub accession_number: String,
    pub cik: u64,
    pub form_type: Option<String>,
    pub date_filed: Option<NaiveDate>,
    pub edgar_path: String,
    pub raw_object_key: Option<String>,
    pub is_processed: bool,
    pub is_error: bool,
    pub document_count: Option<u64>,
    pub error_detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilingDocumentRecord {
    pub accession_number: String,
    pub sequence: u32,
    pub doc_type: Option<String>,
    pub description: Option<String>,
    pub filename: Option<String>,
    pub sha1: String,
    pub content_type: String,
    pub is_extracted: bool,
    pub extraction_detail: Option<String>,
}

/// One (term, document, count) row to persist for a search query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchHit {
    pub term_id: i64,
    pub accession_number: String,
    pub sequence: u32,
    pub count: u64,
}

pub struct MetadataStore {
    conn: Mutex<Connection>,
    clock: Arc<dyn Clock>,
}

impl MetadataStore {
    pub fn open(path: &Path, clock: Arc<dyn Clock>) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| MetadataStoreError::StorageFailure(e.to_string()))?;
        }
        let conn = Connection::open(path)?;
        Self::initialize(conn, clock)
    }

    pub fn open_in_memory(clock: Arc<dyn Clock>) -> Result<Self> {
        Self::initialize(Connection::open_in_memory()?, clock)
    }

    fn initialize(conn: Connection, clock: Arc<dyn Clock>) -> Result<Self> {
        conn.busy_timeout(std::time::Duration::from_secs(10))?;
        conn.pragma_update(None, "journal_mode", "WAL").ok();
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.execute_batch(SCHEMA_SQL)?;
        Ok(MetadataStore { conn: Mutex::new(conn), clock })
    }

    fn today(&self) -> String {
        self.clock.today().to_string()
    }

    // ---- companies ----------------------------------------------------

    pub fn upsert_company(&self, cik: u64) -> Result<Company> {
        if cik == 0 {
            return Err(MetadataStoreError::ConstraintViolation("cik must be positive".into()));
        }
        let conn = self.conn.lock().unwrap();
        conn.execute(
            "INSERT INTO company (cik, date_first_seen) VALUES (?1, ?2)
             ON CONFLICT (cik) DO NOTHING",
            params![cik as i64, self.today()],
        )?;
        let date: String = conn.query_row(
            "SELECT date_first_seen FROM company WHERE cik = ?1",
            [cik as i64],
            |row| row.get(0),
        )?;
        Ok(Company { cik, date_first_seen: parse_date(&date)? })
    }

    /// Append a company-info snapshot unless it matches the latest one
    /// on file. Returns whether a row was written.
    pub fn append_company_info(
        &self,
        cik: u64,
        name: &str,
        state_of_incorporation: Option<&str>,
        sic: Option<&str>,
        as_of: NaiveDate,
    ) -> Result<bool> {
        let conn = self.conn.lock().unwrap();
        let latest: Option<(String, Option<String>, Option<String>)> = conn
            .query_row(
                "SELECT name, state_of_incorporation, sic FROM company_info
                 WHERE cik = ?1 ORDER BY as_of DESC LIMIT 1",
                [cik as i64],
                |row| Ok((row.get(0)?, row.get(1)?, row.get(2)?)),
            )
            .optional()?;
        if let Some((n, s, c)) = latest {
            if n == name
                && s.as_deref() == state_of_incorporation
                && c.as_deref() == sic
            {
                return Ok(false);
            }
        }
        conn.execute(
            "INSERT INTO company_info (cik, name, state_of_incorporation, sic, as_of)
             VALUES (?1, ?2, ?3, ?4, ?5)
             ON CONFLICT (cik, as_of) DO UPDATE SET
               name = excluded.name,
               state_of_incorporation = excluded.state_of_incorporation,
               sic = excluded.sic",
            params![cik as i64, name, state_of_incorporation, sic, as_of.to_string()],
        )?;
        Ok(true)
    }

    pub fn latest_company_info(&self, cik: u64) -> Result<Option<CompanyInfo>> {
        let conn = self.conn.lock().unwrap();
        conn.query_row(
            "SELECT cik, name, state_of_incorporation, sic, as_of FROM company_info
             WHERE cik = ?1 ORDER BY as_of DESC LIMIT 1",
            [cik as i64],
            |row| {
                Ok(CompanyInfo {
                    cik: row.get::<_, i64>(0)? as u64,
                    name: row.get(1)?,
                    state_of_incorporation: row.get(2)?,
                    sic: row.get(3)?,
                    as_of: NaiveDate::parse_from_str(&row.get::<_, String>(4)?, "%Y-%m-%d")
                        .unwrap_or_default(),
                })
            },
        )
        .optional()
        .map_err(Into::into)
    }

    pub fn list_companies(&self) -> Result<Vec<Company>> {
        let conn = self.conn.lock().unwrap();
        let mut stmt =
            conn.prepare("SELECT cik, date_first_seen FROM company ORDER BY cik")?;
        let rows = stmt
            .query_map([], |row| {
                Ok((row.get::<_, i64>(0)? as u64, row.get::<_, String>(1)?))
            })?
            .collect::<std::result::Result<Vec<_>, _>>()?;
        rows.into_iter()
            .map(|(cik, date)| Ok(Company { cik, date_first_seen: parse_date(&date)? }))
            .collect()
    }

    // ---- filing indexes -----------------------------------------------

    pub fn record_filing_index(&self, descriptor: &IndexDescriptor) -> Result<FilingIndexRecord> {
        let conn = self.conn.lock().unwrap();
        conn.execute(
            "INSERT INTO filing_index (edgar_path, year, quarter, index_type)
             VALUES (?1, ?2, ?3, ?4)
             ON CONFLICT (edgar_path) DO NOTHING",
            params![
                descriptor.path,
                descriptor.year,
                descriptor.quarter,
                descriptor.index_type.as_str()
            ],
        )?;
        drop(conn);
        self.get_filing_index(&descriptor.path)?.ok_or_else(|| {
            MetadataStoreError::StorageFailure("index row vanished after upsert".into())
        })
    }

    pub fn mark_index_processed(&self, edgar_path: &str, row_count: u64) -> Result<()> {
        let conn = self.conn.lock().unwrap();
        let changed = conn.execute(
            "UPDATE filing_index SET
               is_processed = 1, is_error = 0, error_detail = NULL,
               row_count = ?2,
               date_downloaded = COALESCE(date_downloaded, ?3)
             WHERE edgar_path = ?1",
            params![edgar_path, row_count as i64, self.today()],
        )?;
        if changed == 0 {
            return Err(MetadataStoreError::IllegalTransition(format!(
                "no filing_index row for {edgar_path}"
            )));
        }
        Ok(())
    }

    pub fn mark_index_error(&self, edgar_path: &str, detail: &str) -> Result<()> {
        let conn = self.conn.lock().unwrap();
        let changed = conn.execute(
            "UPDATE filing_index SET
               is_error = 1, is_processed = 0, error_detail = ?2
             WHERE edgar_path = ?1",
            params![edgar_path, detail],
        )?;
        if changed == 0 {
            return Err(MetadataStoreError::IllegalTransition(format!(
                "no filing_index row for {edgar_path}"
            )));
        }
        Ok(())
    }

    pub fn get_filing_index(&self, edgar_path: &str) -> Result<Option<FilingIndexRecord>> {
        let conn = self.conn.lock().unwrap();
        conn.query_row(
            "SELECT edgar_path, year, quarter, index_type, date_downloaded,
                    is_processed, is_error, row_count, error_detail
             FROM filing_index WHERE edgar_path = ?1",
            [edgar_path],
            index_record_from_row,
        )
        .optional()
        .map_err(Into::into)
    }

    pub fn list_filing_indexes(&self, year: Option<i32>) -> Result<Vec<FilingIndexRecord>> {
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare(
            "SELECT edgar_path, year, quarter, index_type, date_downloaded,
                    is_processed, is_error, row_count, error_detail
             FROM filing_index
             WHERE (?1 IS NULL OR year = ?1)
             ORDER BY edgar_path",
        )?;
        let rows = stmt
            .query_map([year], index_record_from_row)?
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    // ---- filings and documents ----------------------------------------

    /// Upsert a successfully parsed filing. The company row is ensured as
    /// a side effect, and the archive path is derived from the raw key.
    pub fn record_filing(&self, parsed: &ParsedFiling, raw_key: &str) -> Result<FilingRecord> {
        let header = parsed.header.as_ref().ok_or_else(|| {
            MetadataStoreError::ConstraintViolation(
                "filing has no usable header; it cannot be keyed".into(),
            )
        })?;
        let cik = header.cik.ok_or_else(|| {
            MetadataStoreError::ConstraintViolation(format!(
                "filing {} header lacks a CIK",
                header.accession_number
            ))
        })?;
        self.upsert_company(cik)?;
        let edgar_path = raw_key
            .strip_prefix(crate::object_store::RAW_FILING_PREFIX)
            .unwrap_or(raw_key)
            .to_string();
        let conn = self.conn.lock().unwrap();
        conn.execute(
            "INSERT INTO filing (accession_number, cik, form_type, date_filed, edgar_path,
                                 raw_object_key, is_processed, is_error, document_count, error_detail)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, 1, 0, ?7, NULL)
             ON CONFLICT (accession_number) DO UPDATE SET
               cik = excluded.cik,
               form_type = excluded.form_type,
               date_filed = excluded.date_filed,
               edgar_path = excluded.edgar_path,
               raw_object_key = excluded.raw_object_key,
               is_processed = 1, is_error = 0,
               document_count = excluded.document_count,
               error_detail = NULL",
            params![
                header.accession_number,
                cik as i64,
                header.form_type,
                header.date_filed.map(|d| d.to_string()),
                edgar_path,
                raw_key,
                parsed.documents.len() as i64,
            ],
        )?;
        drop(conn);
        Ok(self.get_filing(&header.accession_number)?.expect("row just upserted"))
    }

    pub fn record_documents(
        &self,
        accession_number: &str,
        documents: &[ParsedDocument],
    ) -> Result<Vec<FilingDocumentRecord>> {
        let mut conn = self.conn.lock().unwrap();
        let tx = conn.transaction().map_err(MetadataStoreError::from)?;
        {
            let mut stmt = tx.prepare(
                "INSERT INTO filing_document
                   (accession_number, sequence, doc_type, description, filename,
                    sha1, content_type, is_extracted, extraction_detail)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, 0, NULL)
                 ON CONFLICT (accession_number, sequence) DO UPDATE SET
                   doc_type = excluded.doc_type,
                   description = excluded.description,
                   filename = excluded.filename,
                   sha1 = excluded.sha1,
                   content_type = excluded.content_type",
            )?;
            for doc in documents {
                stmt.execute(params![
                    accession_number,
                    doc.sequence,
                    doc.doc_type,
                    doc.description,
                    doc.filename,
                    doc.sha1,
                    doc.content_type,
                ])?;
            }
        }
        tx.commit()?;
        drop(conn);
        self.documents_for_filing(accession_number)
    }

    /// Record a filing that could not be ingested, creating the row if
    /// needed. Clears any processed flag; the company row is ensured so
    /// the failure is attributable.
    pub fn mark_filing_error(
        &self,
        accession_number: &str,
        cik: u64,
        edgar_path: &str,
        form_type: Option<&str>,
        date_filed: Option<NaiveDate>,
        detail: &str,
    ) -> Result<()> {
        self.upsert_company(cik)?;
        let conn = self.conn.lock().unwrap();
        conn.execute(
            "INSERT INTO filing (accession_number, cik, form_type, date_filed, edgar_path,
                                 is_processed, is_error, error_detail)
             VALUES (?1, ?2, ?3, ?4, ?5, 0, 1, ?6)
             ON CONFLICT (accession_number) DO UPDATE SET
               is_error = 1, is_processed = 0, error_detail = excluded.error_detail",
            params![
                accession_number,
                cik as i64,
                form_type,
                date_filed.map(|d| d.to_string()),
                edgar_path,
                detail
            ],
        )?;
        Ok(())
    }

    pub fn get_filing(&self, accession_number: &str) -> Result<Option<FilingRecord>> {
        let conn = self.conn.lock().unwrap();
        conn.query_row(
            "SELECT accession_number, cik, form_type, date_filed, edgar_path,
                    raw_object_key, is_processed, is_error, document_count, error_detail
             FROM filing WHERE accession_number = ?1",
            [accession_number],
            filing_record_from_row,
        )
        .optional()
        .map_err(Into::into)
    }

    pub fn documents_for_filing(&self, accession_number: &str) -> Result<Vec<FilingDocumentRecord>> {
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare(
            "SELECT accession_number, sequence, doc_type, description, filename,
                    sha1, content_type, is_extracted, extraction_detail
             FROM filing_document WHERE accession_number = ?1 ORDER BY sequence",
        )?;
        let rows = stmt
            .query_map([accession_number], document_record_from_row)?
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    /// Case-insensitive substring search over document descriptions,
    /// ordered by filing date, accession, then sequence.
    pub fn find_documents_by_description(
        &self,
        substring: &str,
        limit: u64,
    ) -> Result<Vec<FilingDocumentRecord>> {
        if limit == 0 {
            return Err(MetadataStoreError::ConstraintViolation("limit must be positive".into()));
        }
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare(
            "SELECT fd.accession_number, fd.sequence, fd.doc_type, fd.description, fd.filename,
                    fd.sha1, fd.content_type, fd.is_extracted, fd.extraction_detail
             FROM filing_document fd
             JOIN filing f ON f.accession_number = fd.accession_number
             WHERE fd.description IS NOT NULL
               AND instr(lower(fd.description), lower(?1)) > 0
             ORDER BY f.date_filed, fd.accession_number, fd.sequence
             LIMIT ?2",
        )?;
        let rows = stmt
            .query_map(params![substring, limit as i64], document_record_from_row)?
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    pub fn find_filings(
        &self,
        form_type: Option<&str>,
        date_range: Option<(NaiveDate, NaiveDate)>,
        cik: Option<u64>,
    ) -> Result<Vec<FilingRecord>> {
        let conn = self.conn.lock().unwrap();
        let (from, to) = match date_range {
            Some((a, b)) => (Some(a.to_string()), Some(b.to_string())),
            None => (None, None),
        };
        let mut stmt = conn.prepare(
            "SELECT accession_number, cik, form_type, date_filed, edgar_path,
                    raw_object_key, is_processed, is_error, document_count, error_detail
             FROM filing
             WHERE (?1 IS NULL OR upper(form_type) = upper(?1))
               AND (?2 IS NULL OR date_filed >= ?2)
               AND (?3 IS NULL OR date_filed <= ?3)
               AND (?4 IS NULL OR cik = ?4)
             ORDER BY date_filed, accession_number",
        )?;
        let rows = stmt
            .query_map(
                params![form_type, from, to, cik.map(|c| c as i64)],
                filing_record_from_row,
            )?
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    // ---- extraction state ----------------------------------------------

    pub fn pending_extractions(&self) -> Result<Vec<FilingDocumentRecord>> {
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare(
            "SELECT accession_number, sequence, doc_type, description, filename,
                    sha1, content_type, is_extracted, extraction_detail
             FROM filing_document WHERE is_extracted = 0
             ORDER BY accession_number, sequence",
        )?;
        let rows = stmt
            .query_map([], document_record_from_row)?
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    /// Extracted documents in scan order (filing date, accession,
    /// sequence), optionally narrowed by a description substring.
    pub fn extracted_documents(
        &self,
        description_like: Option<&str>,
    ) -> Result<Vec<FilingDocumentRecord>> {
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare(
            "SELECT fd.accession_number, fd.sequence, fd.doc_type, fd.description, fd.filename,
                    fd.sha1, fd.content_type, fd.is_extracted, fd.extraction_detail
             FROM filing_document fd
             JOIN filing f ON f.accession_number = fd.accession_number
             WHERE fd.is_extracted = 1
               AND (?1 IS NULL OR (fd.description IS NOT NULL
                    AND instr(lower(fd.description), lower(?1)) > 0))
             ORDER BY f.date_filed, fd.accession_number, fd.sequence",
        )?;
        let rows = stmt
            .query_map([description_like], document_record_from_row)?
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    /// Flip every document sharing a body digest to extracted.
    pub fn mark_extracted_by_sha1(&self, sha1: &str) -> Result<u64> {
        let conn = self.conn.lock().unwrap();
        let n = conn.execute(
            "UPDATE filing_document SET is_extracted = 1, extraction_detail = NULL
             WHERE sha1 = ?1",
            [sha1],
        )?;
        Ok(n as u64)
    }

    pub fn record_extraction_failure(&self, sha1: &str, detail: &str) -> Result<u64> {
        let conn = self.conn.lock().unwrap();
        let n = conn.execute(
            "UPDATE filing_document SET extraction_detail = ?2
             WHERE sha1 = ?1 AND is_extracted = 0",
            params![sha1, detail],
        )?;
        Ok(n as u64)
    }

    // ---- search queries -------------------------------------------------

    pub fn upsert_search_query(&self, label: &str) -> Result<i64> {
        let conn = self.conn.lock().unwrap();
        conn.execute(
            "INSERT INTO search_query (created, label) VALUES (?1, ?2)
             ON CONFLICT (label) DO NOTHING",
            params![self.today(), label],
        )?;
        conn.query_row("SELECT id FROM search_query WHERE label = ?1", [label], |r| r.get(0))
            .map_err(Into::into)
    }

    pub fn upsert_search_term(&self, query_id: i64, term: &str, case_sensitive: bool) -> Result<i64> {
        let conn = self.conn.lock().unwrap();
        conn.execute(
            "INSERT INTO search_query_term (query_id, term, case_sensitive)
             VALUES (?1, ?2, ?3)
             ON CONFLICT (query_id, term) DO UPDATE SET case_sensitive = excluded.case_sensitive",
            params![query_id, term, case_sensitive as i64],
        )?;
        conn.query_row(
            "SELECT id FROM search_query_term WHERE query_id = ?1 AND term = ?2",
            params![query_id, term],
            |r| r.get(0),
        )
        .map_err(Into::into)
    }

    /// Persist hit counts; zero-count hits are skipped, replays are no-ops.
    pub fn save_search_results(&self, query_id: i64, hits: &[SearchHit]) -> Result<u64> {
        let mut conn = self.conn.lock().unwrap();
        let tx = conn.transaction().map_err(MetadataStoreError::from)?;
        let mut written = 0u64;
        {
            let mut stmt = tx.prepare(
                "INSERT INTO search_query_result (query_id, term_id, accession_number, sequence, count)
                 VALUES (?1, ?2, ?3, ?4, ?5)
                 ON CONFLICT (term_id, accession_number, sequence) DO UPDATE SET count = excluded.count",
            )?;
            for hit in hits {
                if hit.count == 0 {
                    continue;
                }
                stmt.execute(params![
                    query_id,
                    hit.term_id,
                    hit.accession_number,
                    hit.sequence,
                    hit.count as i64
                ])?;
                written += 1;
            }
        }
        tx.commit()?;
        Ok(written)
    }

    // ---- audit ----------------------------------------------------------

    pub fn table_counts(&self) -> Result<Vec<(&'static str, u64)>> {
        let conn = self.conn.lock().unwrap();
        let mut out = Vec::new();
        for table in TABLES {
            let n: i64 =
                conn.query_row(&format!("SELECT COUNT(*) FROM {table}"), [], |r| r.get(0))?;
            out.push((*table, n as u64));
        }
        Ok(out)
    }

    /// Deterministic full dump: fixed table order, rows ordered by natural
    /// key, every value rendered as text. Two stores with identical
    /// contents produce byte-identical dumps.
    pub fn dump(&self) -> Result<String> {
        let conn = self.conn.lock().unwrap();
        let mut out = String::new();
        for (table, order_by) in TABLE_ORDERS {
            out.push_str(&format!("== {table} ==\n"));
            let mut stmt = conn.prepare(&format!("SELECT * FROM {table} ORDER BY {order_by}"))?;
            let column_names: Vec<String> =
                stmt.column_names().iter().map(|c| c.to_string()).collect();
            let mut rows = stmt.query([])?;
            while let Some(row) = rows.next()? {
                let mut fields = Vec::with_capacity(column_names.len());
                for (i, name) in column_names.iter().enumerate() {
                    let value: rusqlite::types::Value = row.get(i)?;
                    let rendered = match value {
                        rusqlite::types::Value::Null => "NULL".to_string(),
                        rusqlite::types::Value::Integer(v) => v.to_string(),
                        rusqlite::types::Value::Real(v) => v.to_string(),
                        rusqlite::types::Value::Text(v) => v,
                        rusqlite::types::Value::Blob(v) => hex::encode(v),
                    };
                    fields.push(format!("{name}={rendered}"));
                }
                out.push_str(&fields.join("|"));
                out.push('\n');
            }
        }
        Ok(out)
    }
}

const TABLES: &[&str] = &[
    "company",
    "company_info",
    "filing_index",
    "filing",
    "filing_document",
    "search_query",
    "search_query_term",
    "search_query_result",
];

const TABLE_ORDERS: &[(&str, &str)] = &[
    ("company", "cik"),
    ("company_info", "cik, as_of"),
    ("filing_index", "edgar_path"),
    ("filing", "accession_number"),
    ("filing_document", "accession_number, sequence"),
    ("search_query", "label"),
    ("search_query_term", "query_id, term"),
    ("search_query_result", "term_id, accession_number, sequence"),
];

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| MetadataStoreError::StorageFailure(format!("bad date {s:?}: {e}")))
}

fn opt_date(value: Option<String>) -> Option<NaiveDate> {
    value.and_then(|s| NaiveDate::parse_from_str(&s, "%Y-%m-%d").ok())
}

fn index_record_from_row(row: &rusqlite::Row<'_>) -> rusqlite::Result<FilingIndexRecord> {
    Ok(FilingIndexRecord {
        edgar_path: row.get(0)?,
        year: row.get(1)?,
        quarter: row.get::<_, i64>(2)? as u8,
        index_type: row.get(3)?,
        date_downloaded: opt_date(row.get(4)?),
        is_processed: row.get::<_, i64>(5)? != 0,
        is_error: row.get::<_, i64>(6)? != 0,
        row_count: row.get::<_, Option<i64>>(7)?.map(|v| v as u64),
        error_detail: row.get(8)?,
    })
}

fn filing_record_from_row(row: &rusqlite::Row<'_>) -> rusqlite::Result<FilingRecord> {
    Ok(FilingRecord {
        accession_number: row.get(0)?,
        cik: row.get::<_, i64>(1)? as u64,
        form_type: row.get(2)?,
        date_filed: opt_date(row.get(3)?),
        edgar_path: row.get(4)?,
        raw_object_key: row.get(5)?,
        is_processed: row.get::<_, i64>(6)? != 0,
        is_error: row.get::<_, i64>(7)? != 0,
        document_count: row.get::<_, Option<i64>>(8)?.map(|v| v as u64),
        error_detail: row.get(9)?,
    })
}

fn document_record_from_row(row: &rusqlite::Row<'_>) -> rusqlite::Result<FilingDocumentRecord> {
    Ok(FilingDocumentRecord {
        accession_number: row.get(0)?,
        sequence: row.get::<_, i64>(1)? as u32,
        doc_type: row.get(2)?,
        description: row.get(3)?,
        filename: row.get(4)?,
        sha1: row.get(5)?,
        content_type: row.get(6)?,
        is_extracted: row.get::<_, i64>(7)? != 0,
        extraction_detail: row.get(8)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::edgar_client::IndexType;
    use crate::filing_parser::parse_filing;

    fn store() -> MetadataStore {
        MetadataStore::open_in_memory(Arc::new(SimClock::at_2018())).unwrap()
    }

    fn descriptor() -> IndexDescriptor {
        IndexDescriptor {
            year: 2018,
            quarter: 1,
            index_type: IndexType::Master,
            path: "edgar/full-index/2018/QTR1/master.idx".into(),
        }
    }

    fn sample_filing() -> ParsedFiling {
        let raw = b"<SEC-HEADER>x\n\
            ACCESSION NUMBER: 0000320193-18-000001\n\
            CENTRAL INDEX KEY: 320193\n\
            CONFORMED SUBMISSION TYPE: 10-K\n\
            FILED AS OF DATE: 20180201\n\
            </SEC-HEADER>\n\
            <DOCUMENT>\n<TYPE>10-K\n<SEQUENCE>1\n<DESCRIPTION>ANNUAL REPORT\n<TEXT>\nbody one\n</TEXT>\n</DOCUMENT>\n\
            <DOCUMENT>\n<TYPE>EX-10\n<SEQUENCE>2\n<DESCRIPTION>EMPLOYMENT AGREEMENT\n<TEXT>\nbody two\n</TEXT>\n</DOCUMENT>\n";
        parse_filing(raw).unwrap()
    }

    #[test]
    fn company_upsert_is_idempotent() {
        let store = store();
        let a = store.upsert_company(320193).unwrap();
        let b = store.upsert_company(320193).unwrap();
        assert_eq!(a, b);
        assert_eq!(store.list_companies().unwrap().len(), 1);
        assert!(store.upsert_company(0).is_err());
    }

    #[test]
    fn company_info_change_detection() {
        let store = store();
        store.upsert_company(320193).unwrap();
        let d1 = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        let d2 = NaiveDate::from_ymd_opt(2018, 2, 1).unwrap();
        assert!(store.append_company_info(320193, "APPLE INC", Some("CA"), Some("3571"), d1).unwrap());
        // identical info, same date: skipped
        assert!(!store.append_company_info(320193, "APPLE INC", Some("CA"), Some("3571"), d1).unwrap());
        // identical info, later date: still skipped
        assert!(!store.append_company_info(320193, "APPLE INC", Some("CA"), Some("3571"), d2).unwrap());
        // changed name, later date: appended and becomes latest
        assert!(store.append_company_info(320193, "Apple Inc.", Some("CA"), Some("3571"), d2).unwrap());
        let latest = store.latest_company_info(320193).unwrap().unwrap();
        assert_eq!(latest.name, "Apple Inc.");
        assert_eq!(latest.as_of, d2);
    }

    #[test]
    fn filing_index_transitions() {
        let store = store();
        let rec = store.record_filing_index(&descriptor()).unwrap();
        assert!(!rec.is_processed);
        store.mark_index_processed(&rec.edgar_path, 12).unwrap();
        let rec = store.get_filing_index(&rec.edgar_path).unwrap().unwrap();
        assert!(rec.is_processed && !rec.is_error);
        assert_eq!(rec.row_count, Some(12));
        assert!(rec.date_downloaded.is_some());

        store.mark_index_error(&rec.edgar_path, "boom").unwrap();
        let rec = store.get_filing_index(&rec.edgar_path).unwrap().unwrap();
        assert!(rec.is_error && !rec.is_processed);
        assert_eq!(rec.error_detail.as_deref(), Some("boom"));

        // recording again leaves the single row in place
        store.record_filing_index(&descriptor()).unwrap();
        assert_eq!(store.list_filing_indexes(Some(2018)).unwrap().len(), 1);

        assert!(matches!(
            store.mark_index_processed("unknown/path.idx", 0),
            Err(MetadataStoreError::IllegalTransition(_))
        ));
    }

    #[test]
    fn record_filing_and_documents_idempotent() {
        let store = store();
        let parsed = sample_filing();
        let raw_key = "filings/raw/edgar/data/320193/0000320193-18-000001.txt";

        let filing = store.record_filing(&parsed, raw_key).unwrap();
        assert_eq!(filing.cik, 320193);
        assert_eq!(filing.edgar_path, "edgar/data/320193/0000320193-18-000001.txt");
        assert_eq!(filing.document_count, Some(2));
        assert!(filing.is_processed);

        let docs = store.record_documents(&filing.accession_number, &parsed.documents).unwrap();
        assert_eq!(docs.len(), 2);

        let dump_before = store.dump().unwrap();
        store.record_filing(&parsed, raw_key).unwrap();
        store.record_documents(&filing.accession_number, &parsed.documents).unwrap();
        assert_eq!(store.dump().unwrap(), dump_before);
    }

    #[test]
    fn filing_error_state() {
        let store = store();
        store
            .mark_filing_error(
                "0009999999-18-000666",
                999,
                "edgar/data/999/0009999999-18-000666.txt",
                Some("10-K"),
                None,
                "no header",
            )
            .unwrap();
        let rec = store.get_filing("0009999999-18-000666").unwrap().unwrap();
        assert!(rec.is_error && !rec.is_processed);
        assert_eq!(rec.error_detail.as_deref(), Some("no header"));
    }

    #[test]
    fn description_search_is_case_insensitive_and_ordered() {
        let store = store();
        let parsed = sample_filing();
        let filing = store
            .record_filing(&parsed, "filings/raw/edgar/data/320193/0000320193-18-000001.txt")
            .unwrap();
        store.record_documents(&filing.accession_number, &parsed.documents).unwrap();

        let hits = store.find_documents_by_description("employment agreement", 10).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].sequence, 2);
        assert!(store.find_documents_by_description("press release", 10).unwrap().is_empty());
        assert!(store.find_documents_by_description("x", 0).is_err());
    }

    #[test]
    fn find_filings_by_form_type() {
        let store = store();
        let parsed = sample_filing();
        store
            .record_filing(&parsed, "filings/raw/edgar/data/320193/0000320193-18-000001.txt")
            .unwrap();
        assert_eq!(store.find_filings(Some("10-K"), None, None).unwrap().len(), 1);
        assert_eq!(store.find_filings(Some("8-K"), None, None).unwrap().len(), 0);
        assert_eq!(store.find_filings(None, None, Some(320193)).unwrap().len(), 1);
        let range = (
            NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2018, 12, 31).unwrap(),
        );
        assert_eq!(store.find_filings(None, Some(range), None).unwrap().len(), 1);
    }

    #[test]
    fn extraction_state_by_digest() {
        let store = store();
        let parsed = sample_filing();
        let filing = store
            .record_filing(&parsed, "filings/raw/edgar/data/320193/0000320193-18-000001.txt")
            .unwrap();
        store.record_documents(&filing.accession_number, &parsed.documents).unwrap();
        assert_eq!(store.pending_extractions().unwrap().len(), 2);

        let sha = parsed.documents[0].sha1.clone();
        assert_eq!(store.mark_extracted_by_sha1(&sha).unwrap(), 1);
        assert_eq!(store.pending_extractions().unwrap().len(), 1);

        let other = parsed.documents[1].sha1.clone();
        store.record_extraction_failure(&other, "no extractor").unwrap();
        let pending = store.pending_extractions().unwrap();
        assert_eq!(pending[0].extraction_detail.as_deref(), Some("no extractor"));
    }

    #[test]
    fn search_results_skip_zero_counts_and_replay_cleanly() {
        let store = store();
        let parsed = sample_filing();
        let filing = store
            .record_filing(&parsed, "filings/raw/edgar/data/320193/0000320193-18-000001.txt")
            .unwrap();
        store.record_documents(&filing.accession_number, &parsed.documents).unwrap();

        let query = store.upsert_search_query("solicit").unwrap();
        assert_eq!(store.upsert_search_query("solicit").unwrap(), query);
        let term = store.upsert_search_term(query, "solicit", false).unwrap();

        let hits = vec![
            SearchHit {
                term_id: term,
                accession_number: filing.accession_number.clone(),
                sequence: 1,
                count: 2,
            },
            SearchHit {
                term_id: term,
                accession_number: filing.accession_number.clone(),
                sequence: 2,
                count: 0,
            },
        ];
        assert_eq!(store.save_search_results(query, &hits).unwrap(), 1);
        let dump = store.dump().unwrap();
        store.save_search_results(query, &hits).unwrap();
        assert_eq!(store.dump().unwrap(), dump);
        // zero-count row was never written
        assert!(!dump.contains("count=0"));
    }

    #[test]
    fn referential_integrity_is_enforced() {
        let store = store();
        let err = store
            .record_documents("0000000000-00-000000", &sample_filing().documents)
            .unwrap_err();
        assert!(matches!(err, MetadataStoreError::ConstraintViolation(_)));
    }

    #[test]
    fn table_counts_cover_all_tables() {
        let store = store();
        let counts = store.table_counts().unwrap();
        assert_eq!(counts.len(), 8);
        assert!(counts.iter().all(|(_, n)| *n == 0));
    }
}
