//! Polite, rate-limited HTTPS client for the EDGAR archive.
//!
//! All requests flow through one process-wide pacer so the aggregate
//! request rate stays bounded no matter how many workers share the
//! client. Transient failures (5xx, transport errors, throttle payloads)
//! are retried with exponential backoff and jitter; 404 is terminal.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;

use crate::clock::Clock;

/// Default archive politeness ceiling, well below published thresholds.
pub const DEFAULT_MAX_REQUESTS_PER_SECOND: f64 = 8.0;
pub const DEFAULT_MAX_RETRIES: u32 = 4;
pub const DEFAULT_BACKOFF_BASE: Duration = Duration::from_millis(500);
pub const DEFAULT_INDEX_PATH_TEMPLATE: &str = "edgar/full-index/{year}/QTR{quarter}/{type}.idx";
pub const DEFAULT_COMPANY_METADATA_URL: &str =
    "https://www.sec.gov/cgi-bin/browse-edgar?action=getcompany&CIK={cik}&type=&dateb=&owner=include&count=40&output=atom";
/// Marker phrases EDGAR's throttle pages have carried; the set is
/// configuration because the wording is unversioned.
pub const DEFAULT_RATE_LIMIT_SIGNATURES: &[&str] = &[
    "Undeclared Automated Tool",
    "Request Rate Threshold Exceeded",
];
/// First year for which quarterly full indexes exist.
pub const DEFAULT_FIRST_INDEX_YEAR: i32 = 1993;

const REQUEST_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("resource not found")]
    NotFound,
    #[error("rate limited by the archive after retries were exhausted")]
    RateLimited,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// An archive-relative resource. Paths never start with `/` and never
/// contain `..` segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgarResource {
    pub path: String,
    pub last_modified: Option<String>,
    pub size: Option<u64>,
    pub etag: Option<String>,
}

impl EdgarResource {
    pub fn new(path: &str) -> Result<Self, ClientError> {
        validate_path(path)?;
        Ok(EdgarResource {
            path: path.to_string(),
            last_modified: None,
            size: None,
            etag: None,
        })
    }
}

pub fn validate_path(path: &str) -> Result<(), ClientError> {
    if path.is_empty() {
        return Err(ClientError::InvalidPath("path is empty".into()));
    }
    if path.starts_with('/') {
        return Err(ClientError::InvalidPath(format!(
            "path {path:?} must be archive-relative, not absolute"
        )));
    }
    if path.split('/').any(|seg| seg == "..") {
        return Err(ClientError::InvalidPath(format!(
            "path {path:?} contains a '..' segment"
        )));
    }
    Ok(())
}

/// The four daily index flavors compiled into quarterly full indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexType {
    Company,
    Form,
    Master,
    Xbrl,
}

impl IndexType {
    pub const ALL: [IndexType; 4] =
        [IndexType::Company, IndexType::Form, IndexType::Master, IndexType::Xbrl];

    pub fn as_str(self) -> &'static str {
        match self {
            IndexType::Company => "company",
            IndexType::Form => "form",
            IndexType::Master => "master",
            IndexType::Xbrl => "xbrl",
        }
    }
}

impl std::fmt::Display for IndexType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct IndexDescriptor {
    pub year: i32,
    pub quarter: u8,
    pub index_type: IndexType,
    pub path: String,
}

/// Client settings. `user_agent` is mandatory: the archive's fair-access
/// policy requires a contact string, so a client without one refuses to
/// construct.
#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub base_url: String,
    pub user_agent: String,
    pub max_requests_per_second: f64,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub index_path_template: String,
    pub company_metadata_url: String,
    pub rate_limit_signatures: Vec<String>,
    pub first_index_year: i32,
}

impl ClientConfig {
    pub fn new(base_url: &str, user_agent: &str) -> Self {
        ClientConfig {
            base_url: base_url.to_string(),
            user_agent: user_agent.to_string(),
            max_requests_per_second: DEFAULT_MAX_REQUESTS_PER_SECOND,
            max_retries: DEFAULT_MAX_RETRIES,
            backoff_base: DEFAULT_BACKOFF_BASE,
            index_path_template: DEFAULT_INDEX_PATH_TEMPLATE.to_string(),
            company_metadata_url: DEFAULT_COMPANY_METADATA_URL.to_string(),
            rate_limit_signatures: DEFAULT_RATE_LIMIT_SIGNATURES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            first_index_year: DEFAULT_FIRST_INDEX_YEAR,
        }
    }
}

/// Pacer enforcing a minimum interval between grants, so any sliding
/// one-second window sees at most `ceil(rate)` grants. The lock is held
/// across the wait on purpose: waiting workers queue up behind it and the
/// aggregate rate stays bounded.
pub struct RateLimiter {
    clock: Arc<dyn Clock>,
    interval: Duration,
    next_grant: Mutex<Duration>,
}

impl RateLimiter {
    pub fn new(clock: Arc<dyn Clock>, requests_per_second: f64) -> Self {
        assert!(requests_per_second > 0.0);
        RateLimiter {
            clock,
            interval: Duration::from_secs_f64(1.0 / requests_per_second),
            next_grant: Mutex::new(Duration::ZERO),
        }
    }

    /// Block until a request slot is available; returns the grant time.
    pub fn acquire(&self) -> Duration {
        let mut next = self.next_grant.lock().unwrap();
        let now = self.clock.now();
        if now < *next {
            self.clock.sleep(*next - now);
        }
        let granted = self.clock.now().max(*next);
        *next = granted + self.interval;
        granted
    }
}

/// Half-open byte interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteRange {
    pub start: u64,
    pub end: u64,
}

impl ByteRange {
    pub fn new(start: u64, end: u64) -> Self {
        ByteRange { start, end }
    }

    pub fn len(&self) -> u64 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

enum AttemptError {
    Terminal(ClientError),
    Retryable(ClientError),
}

pub struct EdgarClient {
    config: ClientConfig,
    agent: ureq::Agent,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
}

impl EdgarClient {
    pub fn new(config: ClientConfig, clock: Arc<dyn Clock>) -> Result<Self, ClientError> {
        if config.user_agent.trim().is_empty() {
            return Err(ClientError::InvalidArgument(
                "user_agent must be a non-empty contact string".into(),
            ));
        }
        if config.max_requests_per_second <= 0.0 {
            return Err(ClientError::InvalidArgument(
                "max_requests_per_second must be positive".into(),
            ));
        }
        let agent = ureq::AgentBuilder::new()
            .timeout(REQUEST_TIMEOUT)
            .user_agent(&config.user_agent)
            .build();
        let limiter = RateLimiter::new(clock.clone(), config.max_requests_per_second);
        Ok(EdgarClient { config, agent, limiter, clock })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// Fetch an archive-relative resource, optionally a byte range of it.
    pub fn fetch(&self, path: &str, byte_range: Option<ByteRange>) -> Result<Vec<u8>, ClientError> {
        validate_path(path)?;
        if let Some(range) = byte_range {
            if range.is_empty() {
                return Err(ClientError::InvalidPath(format!(
                    "byte range [{}, {}) is empty",
                    range.start, range.end
                )));
            }
        }
        let base = self.config.base_url.trim_end_matches('/');
        let url = format!("{base}/{path}");
        self.fetch_url(&url, byte_range)
    }

    /// Fetch the raw company metadata document for a CIK.
    pub fn fetch_company_metadata(&self, cik: u64) -> Result<Vec<u8>, ClientError> {
        if cik == 0 {
            return Err(ClientError::InvalidArgument("cik must be positive".into()));
        }
        let url = self.config.company_metadata_url.replace("{cik}", &cik.to_string());
        self.fetch_url(&url, None)
    }

    /// Enumerate index descriptors for the requested scope. Pure: no
    /// remote existence check is performed.
    pub fn list_index_files(
        &self,
        year: Option<i32>,
        quarter: Option<u8>,
    ) -> Result<Vec<IndexDescriptor>, ClientError> {
        if quarter.is_some() && year.is_none() {
            return Err(ClientError::InvalidArgument(
                "quarter requires a year".into(),
            ));
        }
        if let Some(q) = quarter {
            if !(1..=4).contains(&q) {
                return Err(ClientError::InvalidArgument(format!(
                    "quarter {q} is outside 1-4"
                )));
            }
        }
        let years: Vec<i32> = match year {
            Some(y) => vec![y],
            None => {
                use chrono::Datelike;
                let current = self.clock.today().year();
                (self.config.first_index_year..=current).collect()
            }
        };
        let quarters: Vec<u8> = match quarter {
            Some(q) => vec![q],
            None => vec![1, 2, 3, 4],
        };
        let mut out = Vec::new();
        for y in years {
            for &q in &quarters {
                for index_type in IndexType::ALL {
                    out.push(IndexDescriptor {
                        year: y,
                        quarter: q,
                        index_type,
                        path: self
                            .config
                            .index_path_template
                            .replace("{year}", &y.to_string())
                            .replace("{quarter}", &q.to_string())
                            .replace("{type}", index_type.as_str()),
                    });
                }
            }
        }
        Ok(out)
    }

    /// True when a response body matches the configured throttle-page
    /// signature set.
    pub fn is_rate_limited_payload(&self, body: &[u8]) -> bool {
        matches_any_signature(body, &self.config.rate_limit_signatures)
    }

    fn fetch_url(&self, url: &str, byte_range: Option<ByteRange>) -> Result<Vec<u8>, ClientError> {
        let mut last_error = ClientError::Transport("no attempt made".into());
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let factor = 1u32 << (attempt - 1).min(16);
                let jitter = rand::thread_rng().gen_range(0.5..1.0);
                let delay = self.config.backoff_base.mul_f64(factor as f64 * jitter);
                self.clock.sleep(delay);
            }
            self.limiter.acquire();
            match self.attempt(url, byte_range) {
                Ok(bytes) => return Ok(bytes),
                Err(AttemptError::Terminal(e)) => return Err(e),
                Err(AttemptError::Retryable(e)) => {
                    log::debug!("attempt {} of {url} failed: {e}", attempt + 1);
                    last_error = e;
                }
            }
        }
        Err(last_error)
    }

    fn attempt(&self, url: &str, byte_range: Option<ByteRange>) -> Result<Vec<u8>, AttemptError> {
        let mut request = self.agent.get(url);
        if let Some(range) = byte_range {
            request = request.set("Range", &format!("bytes={}-{}", range.start, range.end - 1));
        }
        match request.call() {
            Ok(response) => {
                let status = response.status();
                let body = read_body(response)?;
                if self.is_rate_limited_payload(&body) {
                    return Err(AttemptError::Retryable(ClientError::RateLimited));
                }
                match byte_range {
                    // Server ignored the Range header; slice locally.
                    Some(range) if status == 200 => {
                        let start = (range.start as usize).min(body.len());
                        let end = (range.end as usize).min(body.len());
                        Ok(body[start..end].to_vec())
                    }
                    _ => Ok(body),
                }
            }
            Err(ureq::Error::Status(404, _)) => Err(AttemptError::Terminal(ClientError::NotFound)),
            Err(ureq::Error::Status(403, response)) => {
                let body = read_body(response)?;
                if self.is_rate_limited_payload(&body) {
                    Err(AttemptError::Retryable(ClientError::RateLimited))
                } else {
                    Err(AttemptError::Terminal(ClientError::Transport(
                        "access forbidden (403)".into(),
                    )))
                }
            }
            Err(ureq::Error::Status(code, _)) if (500..600).contains(&code) => Err(
                AttemptError::Retryable(ClientError::Transport(format!("server error {code}"))),
            ),
            Err(ureq::Error::Status(code, _)) => Err(AttemptError::Terminal(
                ClientError::Transport(format!("unexpected status {code}")),
            )),
            Err(e) => Err(AttemptError::Retryable(ClientError::Transport(e.to_string()))),
        }
    }
}

fn read_body(response: ureq::Response) -> Result<Vec<u8>, AttemptError> {
    let mut bytes = Vec::new();
    use std::io::Read;
    response
        .into_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| AttemptError::Retryable(ClientError::Transport(e.to_string())))?;
    Ok(bytes)
}

/// Case-insensitive substring match of any signature against a body.
pub fn matches_any_signature(body: &[u8], signatures: &[String]) -> bool {
    if body.is_empty() || signatures.is_empty() {
        return false;
    }
    let text = String::from_utf8_lossy(body).to_lowercase();
    signatures
        .iter()
        .filter(|s| !s.is_empty())
        .any(|s| text.contains(&s.to_lowercase()))
}

/// Parse (name, state of incorporation, SIC) out of a company metadata
/// document as served by the archive's company browse endpoint.
pub fn parse_company_metadata(body: &[u8]) -> Option<CompanyMetadata> {
    let text = crate::index_parser::decode_text(body);
    let grab = |tag: &str| -> Option<String> {
        let open = format!("<{tag}>");
        let close = format!("</{tag}>");
        let start = text.find(&open)? + open.len();
        let end = text[start..].find(&close)? + start;
        let value = text[start..end].trim();
        if value.is_empty() {
            None
        } else {
            Some(value.to_string())
        }
    };
    let name = grab("conformed-name")?;
    Some(CompanyMetadata {
        name,
        state_of_incorporation: grab("state-of-incorporation"),
        sic: grab("assigned-sic"),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompanyMetadata {
    pub name: String,
    pub state_of_incorporation: Option<String>,
    pub sic: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;

    fn test_client(rps: f64) -> EdgarClient {
        let clock = Arc::new(SimClock::at_2018());
        let mut config = ClientConfig::new("http://127.0.0.1:1/", "test suite test@example.com");
        config.max_requests_per_second = rps;
        EdgarClient::new(config, clock).unwrap()
    }

    #[test]
    fn refuses_empty_user_agent() {
        let config = ClientConfig::new("http://x/", "  ");
        let err = EdgarClient::new(config, Arc::new(SimClock::at_2018()))
            .err()
            .expect("construction must fail");
        assert!(matches!(err, ClientError::InvalidArgument(_)));
    }

    #[test]
    fn path_validation() {
        assert!(validate_path("edgar/full-index/2018/QTR1/master.idx").is_ok());
        assert!(validate_path("/absolute").is_err());
        assert!(validate_path("").is_err());
        assert!(validate_path("a/../b").is_err());
        assert!(EdgarResource::new("ok/path.txt").is_ok());
    }

    #[test]
    fn empty_byte_range_is_rejected() {
        let client = test_client(8.0);
        let err = client
            .fetch("edgar/x.txt", Some(ByteRange::new(0, 0)))
            .unwrap_err();
        assert!(matches!(err, ClientError::InvalidPath(_)));
    }

    #[test]
    fn list_index_files_year_scope() {
        let client = test_client(8.0);
        let all = client.list_index_files(Some(2018), None).unwrap();
        assert_eq!(all.len(), 16);
        let q1 = client.list_index_files(Some(2018), Some(1)).unwrap();
        assert_eq!(q1.len(), 4);
        assert!(q1
            .iter()
            .any(|d| d.path == "edgar/full-index/2018/QTR1/master.idx"));
        // Deterministic: same call, same result.
        assert_eq!(all, client.list_index_files(Some(2018), None).unwrap());
    }

    #[test]
    fn list_index_files_all_years_uses_origin_and_current_year() {
        let clock = Arc::new(SimClock::at_2018());
        let mut config = ClientConfig::new("http://x/", "t t@example.com");
        config.first_index_year = 2017;
        let client = EdgarClient::new(config, clock).unwrap();
        let all = client.list_index_files(None, None).unwrap();
        assert_eq!(all.len(), 2 * 16); // 2017 and 2018
    }

    #[test]
    fn quarter_without_year_is_invalid() {
        let client = test_client(8.0);
        assert!(matches!(
            client.list_index_files(None, Some(2)),
            Err(ClientError::InvalidArgument(_))
        ));
        assert!(matches!(
            client.list_index_files(Some(2018), Some(7)),
            Err(ClientError::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_cik_is_rejected() {
        let client = test_client(8.0);
        assert!(matches!(
            client.fetch_company_metadata(0),
            Err(ClientError::InvalidArgument(_))
        ));
    }

    #[test]
    fn throttle_page_matches_signatures() {
        let client = test_client(8.0);
        let page = b"<html><body><h1>Your Request Originates from an Undeclared Automated Tool</h1></body></html>";
        assert!(client.is_rate_limited_payload(page));
        assert!(!client.is_rate_limited_payload(b""));
        assert!(!client.is_rate_limited_payload(b"CIK|Company Name|Form Type|Date Filed|Filename\n"));
    }

    #[test]
    fn rate_limiter_bounds_any_sliding_window() {
        let clock = Arc::new(SimClock::at_2018());
        let limiter = RateLimiter::new(clock.clone(), 8.0);
        let grants: Vec<Duration> = (0..100).map(|_| limiter.acquire()).collect();
        for (i, &start) in grants.iter().enumerate() {
            let window_end = start + Duration::from_secs(1);
            let in_window = grants[i..]
                .iter()
                .take_while(|&&g| g < window_end)
                .count();
            assert!(in_window <= 8, "window starting at {start:?} saw {in_window} grants");
        }
    }

    #[test]
    fn rate_limiter_is_shared_across_threads() {
        let clock = Arc::new(SimClock::at_2018());
        let limiter = Arc::new(RateLimiter::new(clock.clone(), 4.0));
        let mut handles = Vec::new();
        let grants = Arc::new(Mutex::new(Vec::new()));
        for _ in 0..4 {
            let limiter = limiter.clone();
            let grants = grants.clone();
            handles.push(std::thread::spawn(move || {
                for _ in 0..10 {
                    let g = limiter.acquire();
                    grants.lock().unwrap().push(g);
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        let mut grants = grants.lock().unwrap().clone();
        grants.sort();
        assert_eq!(grants.len(), 40);
        // Aggregate spacing: consecutive grants at least 250ms apart.
        for pair in grants.windows(2) {
            assert!(pair[1] - pair[0] >= Duration::from_millis(250));
        }
    }

    #[test]
    fn company_metadata_parses_atom_fields() {
        let body = b"<?xml version=\"1.0\"?><feed><company-info>\
            <conformed-name>APPLE INC</conformed-name>\
            <state-of-incorporation>CA</state-of-incorporation>\
            <assigned-sic>3571</assigned-sic>\
            </company-info></feed>";
        let meta = parse_company_metadata(body).unwrap();
        assert_eq!(meta.name, "APPLE INC");
        assert_eq!(meta.state_of_incorporation.as_deref(), Some("CA"));
        assert_eq!(meta.sic.as_deref(), Some("3571"));
        assert!(parse_company_metadata(b"<html>nope</html>").is_none());
    }
}
