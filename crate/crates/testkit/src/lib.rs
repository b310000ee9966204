//! Local mock servers for running the corpus pipeline fully offline:
//!
//! * [`EdgarMock`] — serves a fixture directory tree the way the EDGAR
//!   archive does (byte ranges, company metadata endpoint, 404s), with
//!   fault-injection switches for throttle pages, truncation, server
//!   errors, and fail-after-N crash simulation.
//! * [`S3Mock`] — an in-memory S3-compatible object endpoint
//!   (GET/PUT/HEAD/DELETE plus ListObjectsV2 with pagination).
//! * [`ExtractorMock`] — a stand-in text extraction service (PUT bytes,
//!   receive plain text).
//!
//! All three bind an ephemeral port on localhost and shut down when
//! dropped.

use std::collections::BTreeMap;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Response, Server};

/// A captured archive throttle page; served by the throttle fault and
/// usable as a signature fixture.
pub const THROTTLE_PAGE: &str = include_str!("throttle_page.html");

/// An object-storage access-denied error document, as left behind when a
/// failed download gets persisted by mistake.
pub const ACCESS_DENIED_PAGE: &str = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
<Error><Code>AccessDenied</Code><Message>Access Denied</Message>\
<RequestId>4MOCK</RequestId></Error>\n";

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("valid header")
}

/// Parse `bytes=a-b` (inclusive) into a half-open `(start, end)`.
fn parse_range(value: &str, len: usize) -> Option<(usize, usize)> {
    let spec = value.trim().strip_prefix("bytes=")?;
    let (a, b) = spec.split_once('-')?;
    let start: usize = a.parse().ok()?;
    let end_inclusive: usize = if b.is_empty() { len.saturating_sub(1) } else { b.parse().ok()? };
    Some((start, end_inclusive.saturating_add(1)))
}

fn query_params(url: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    if let Some((_, query)) = url.split_once('?') {
        for pair in query.split('&') {
            let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
            out.insert(percent_decode(k), percent_decode(v));
        }
    }
    out
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() + 1 && i + 2 <= bytes.len() - 1 + 1 {
            if let Ok(v) = u8::from_str_radix(
                std::str::from_utf8(&bytes[i + 1..(i + 3).min(bytes.len())]).unwrap_or(""),
                16,
            ) {
                out.push(v);
                i += 3;
                continue;
            }
        }
        out.push(if bytes[i] == b'+' { b' ' } else { bytes[i] });
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

// ---------------------------------------------------------------------
// EDGAR archive mock
// ---------------------------------------------------------------------

/// Fault-injection switches. Counters burn down per affected request.
#[derive(Debug, Default)]
pub struct Faults {
    /// Serve the throttle page (status 403) for the next n requests.
    pub throttle_next: u32,
    /// Serve HTTP 500 for the next n requests.
    pub error_next: u32,
    /// Truncate the next n successful responses halfway.
    pub truncate_next: u32,
    /// After this many served requests, answer 500 to everything
    /// (crash/outage simulation) until cleared.
    pub fail_after: Option<u64>,
    /// Which company-metadata fixture set to serve (directory `v<n>`).
    pub metadata_version: u8,
}

pub struct EdgarMock {
    base_url: String,
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
    faults: Arc<Mutex<Faults>>,
    requests: Arc<AtomicU64>,
}

impl EdgarMock {
    /// Serve `archive_root` as the archive tree and
    /// `company_root/v<version>/<cik>.xml` as company metadata.
    pub fn start(archive_root: &Path, company_root: &Path) -> anyhow::Result<Self> {
        let server = Arc::new(
            Server::http("127.0.0.1:0").map_err(|e| anyhow::anyhow!("bind failed: {e}"))?,
        );
        let port = match server.server_addr() {
            tiny_http::ListenAddr::IP(addr) => addr.port(),
            _ => anyhow::bail!("unexpected listener type"),
        };
        let faults = Arc::new(Mutex::new(Faults { metadata_version: 1, ..Faults::default() }));
        let requests = Arc::new(AtomicU64::new(0));

        let loop_server = server.clone();
        let loop_faults = faults.clone();
        let loop_requests = requests.clone();
        let archive_root = archive_root.to_path_buf();
        let company_root = company_root.to_path_buf();
        let handle = std::thread::spawn(move || {
            for request in loop_server.incoming_requests() {
                serve_edgar(
                    request,
                    &archive_root,
                    &company_root,
                    &loop_faults,
                    &loop_requests,
                );
            }
        });

        Ok(EdgarMock {
            base_url: format!("http://127.0.0.1:{port}/"),
            server,
            handle: Some(handle),
            faults,
            requests,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// URL template for the company metadata endpoint (the `{cik}`
    /// placeholder is substituted by the client).
    pub fn company_metadata_url(&self) -> String {
        format!(
            "{}cgi-bin/browse-edgar?action=getcompany&CIK={{cik}}&output=atom",
            self.base_url
        )
    }

    pub fn requests_served(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn set_faults(&self, f: impl FnOnce(&mut Faults)) {
        f(&mut self.faults.lock().unwrap());
    }

    pub fn clear_faults(&self) {
        let mut faults = self.faults.lock().unwrap();
        let version = faults.metadata_version;
        *faults = Faults { metadata_version: version, ..Faults::default() };
    }
}

impl Drop for EdgarMock {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn serve_edgar(
    request: tiny_http::Request,
    archive_root: &Path,
    company_root: &Path,
    faults: &Mutex<Faults>,
    requests: &AtomicU64,
) {
    let url = request.url().to_string();
    let path = url.split('?').next().unwrap_or("").trim_start_matches('/').to_string();

    // Control endpoints are not counted and never fault.
    if let Some(rest) = path.strip_prefix("__mock/") {
        let _ = serve_control(request, rest, &url, faults, requests);
        return;
    }

    let served_so_far = requests.fetch_add(1, Ordering::SeqCst);
    let truncate;
    {
        let mut f = faults.lock().unwrap();
        if let Some(limit) = f.fail_after {
            if served_so_far >= limit {
                let _ = request.respond(Response::from_string("outage").with_status_code(500));
                return;
            }
        }
        if f.throttle_next > 0 {
            f.throttle_next -= 1;
            let response = Response::from_string(THROTTLE_PAGE)
                .with_status_code(403)
                .with_header(header("Content-Type", "text/html"));
            let _ = request.respond(response);
            return;
        }
        if f.error_next > 0 {
            f.error_next -= 1;
            let _ = request.respond(Response::from_string("internal error").with_status_code(500));
            return;
        }
        truncate = if f.truncate_next > 0 {
            f.truncate_next -= 1;
            true
        } else {
            false
        };
    }

    // Company metadata endpoint.
    if path.starts_with("cgi-bin/browse-edgar") {
        let params = query_params(&url);
        let version = faults.lock().unwrap().metadata_version;
        let cik = params
            .get("CIK")
            .or_else(|| params.get("cik"))
            .and_then(|v| v.parse::<u64>().ok());
        let body = cik.and_then(|cik| {
            std::fs::read(company_root.join(format!("v{version}/{cik}.xml"))).ok()
        });
        match body {
            Some(bytes) => {
                let bytes = maybe_truncate(bytes, truncate);
                let _ = request.respond(
                    Response::from_data(bytes).with_header(header("Content-Type", "text/xml")),
                );
            }
            None => {
                let _ = request.respond(Response::from_string("not found").with_status_code(404));
            }
        }
        return;
    }

    // Archive file tree.
    if path.is_empty() || path.split('/').any(|seg| seg == "..") {
        let _ = request.respond(Response::from_string("bad path").with_status_code(400));
        return;
    }
    let file = archive_root.join(&path);
    let Ok(bytes) = std::fs::read(&file) else {
        let _ = request.respond(Response::from_string("not found").with_status_code(404));
        return;
    };
    let bytes = maybe_truncate(bytes, truncate);

    let range_header = request
        .headers()
        .iter()
        .find(|h| h.field.equiv("Range"))
        .map(|h| h.value.as_str().to_string());
    match range_header.and_then(|v| parse_range(&v, bytes.len())) {
        Some((start, end)) if start < bytes.len() => {
            let end = end.min(bytes.len());
            let slice = bytes[start..end].to_vec();
            let response = Response::from_data(slice)
                .with_status_code(206)
                .with_header(header(
                    "Content-Range",
                    &format!("bytes {}-{}/{}", start, end - 1, bytes.len()),
                ));
            let _ = request.respond(response);
        }
        Some(_) => {
            let _ = request.respond(Response::from_string("range").with_status_code(416));
        }
        None => {
            let _ = request.respond(Response::from_data(bytes));
        }
    }
}

fn maybe_truncate(bytes: Vec<u8>, truncate: bool) -> Vec<u8> {
    if truncate {
        let half = bytes.len() / 2;
        bytes[..half].to_vec()
    } else {
        bytes
    }
}

fn serve_control(
    request: tiny_http::Request,
    action: &str,
    url: &str,
    faults: &Mutex<Faults>,
    requests: &AtomicU64,
) -> anyhow::Result<()> {
    let params = query_params(url);
    let get = |k: &str| params.get(k).and_then(|v| v.parse::<u32>().ok());
    match action.split('?').next().unwrap_or(action) {
        "set" => {
            let mut f = faults.lock().unwrap();
            if let Some(n) = get("throttle_next") {
                f.throttle_next = n;
            }
            if let Some(n) = get("error_next") {
                f.error_next = n;
            }
            if let Some(n) = get("truncate_next") {
                f.truncate_next = n;
            }
            if let Some(n) = get("metadata_version") {
                f.metadata_version = n as u8;
            }
            if let Some(n) = get("fail_after") {
                f.fail_after = Some(n as u64);
            }
            if params.get("clear").is_some() {
                let version = f.metadata_version;
                *f = Faults { metadata_version: version, ..Faults::default() };
            }
            request.respond(Response::from_string("ok"))?;
        }
        "stats" => {
            let body = format!("requests_served={}\n", requests.load(Ordering::SeqCst));
            request.respond(Response::from_string(body))?;
        }
        _ => {
            request.respond(Response::from_string("unknown control").with_status_code(404))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// S3-compatible mock
// ---------------------------------------------------------------------

struct StoredObject {
    data: Vec<u8>,
    meta: BTreeMap<String, String>,
}

pub struct S3Mock {
    endpoint: String,
    bucket: String,
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
    objects: Arc<Mutex<BTreeMap<String, StoredObject>>>,
}

impl S3Mock {
    pub fn start(bucket: &str) -> anyhow::Result<Self> {
        let server = Arc::new(
            Server::http("127.0.0.1:0").map_err(|e| anyhow::anyhow!("bind failed: {e}"))?,
        );
        let port = match server.server_addr() {
            tiny_http::ListenAddr::IP(addr) => addr.port(),
            _ => anyhow::bail!("unexpected listener type"),
        };
        let objects: Arc<Mutex<BTreeMap<String, StoredObject>>> =
            Arc::new(Mutex::new(BTreeMap::new()));

        let loop_server = server.clone();
        let loop_objects = objects.clone();
        let loop_bucket = bucket.to_string();
        let handle = std::thread::spawn(move || {
            for request in loop_server.incoming_requests() {
                serve_s3(request, &loop_bucket, &loop_objects);
            }
        });

        Ok(S3Mock {
            endpoint: format!("http://127.0.0.1:{port}"),
            bucket: bucket.to_string(),
            server,
            handle: Some(handle),
            objects,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn bucket(&self) -> &str {
        &self.bucket
    }

    pub fn object_count(&self) -> usize {
        self.objects.lock().unwrap().len()
    }
}

impl Drop for S3Mock {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

fn serve_s3(
    mut request: tiny_http::Request,
    bucket: &str,
    objects: &Mutex<BTreeMap<String, StoredObject>>,
) {
    let url = request.url().to_string();
    let path = url.split('?').next().unwrap_or("").trim_start_matches('/').to_string();
    let bucket_prefix = format!("{bucket}/");

    // Bucket-level: list-objects-v2.
    if path == bucket || (path.is_empty() && !bucket_prefix.is_empty()) {
        let params = query_params(&url);
        let prefix = params.get("prefix").cloned().unwrap_or_default();
        let max_keys: usize = params
            .get("max-keys")
            .and_then(|v| v.parse().ok())
            .unwrap_or(1000);
        let after = params
            .get("continuation-token")
            .and_then(|t| t.strip_prefix("after:").map(str::to_string));

        let objects = objects.lock().unwrap();
        let mut keys: Vec<(&String, &StoredObject)> = objects
            .iter()
            .filter(|(k, _)| k.starts_with(&prefix))
            .filter(|(k, _)| after.as_ref().map(|a| k.as_str() > a.as_str()).unwrap_or(true))
            .collect();
        let truncated = keys.len() > max_keys;
        keys.truncate(max_keys);

        let mut xml = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<ListBucketResult>");
        xml.push_str(&format!("<IsTruncated>{truncated}</IsTruncated>"));
        if truncated {
            if let Some((last, _)) = keys.last() {
                xml.push_str(&format!(
                    "<NextContinuationToken>after:{}</NextContinuationToken>",
                    xml_escape(last)
                ));
            }
        }
        for (key, object) in &keys {
            xml.push_str(&format!(
                "<Contents><Key>{}</Key><Size>{}</Size></Contents>",
                xml_escape(key),
                object.data.len()
            ));
        }
        xml.push_str("</ListBucketResult>");
        let _ = request.respond(
            Response::from_string(xml).with_header(header("Content-Type", "application/xml")),
        );
        return;
    }

    let Some(key) = path.strip_prefix(&bucket_prefix).map(percent_decode) else {
        let _ = request.respond(Response::from_string("no such bucket").with_status_code(404));
        return;
    };

    match request.method().clone() {
        Method::Put => {
            let mut data = Vec::new();
            if request.as_reader().read_to_end(&mut data).is_err() {
                let _ = request.respond(Response::from_string("read error").with_status_code(400));
                return;
            }
            let meta: BTreeMap<String, String> = request
                .headers()
                .iter()
                .filter(|h| {
                    h.field
                        .as_str()
                        .as_str()
                        .to_lowercase()
                        .starts_with("x-amz-meta-")
                })
                .map(|h| {
                    (
                        h.field.as_str().as_str().to_lowercase(),
                        h.value.as_str().to_string(),
                    )
                })
                .collect();
            objects
                .lock()
                .unwrap()
                .insert(key, StoredObject { data, meta });
            let _ = request.respond(Response::from_string(""));
        }
        Method::Get | Method::Head => {
            let objects = objects.lock().unwrap();
            let Some(object) = objects.get(&key) else {
                let body = "<?xml version=\"1.0\"?><Error><Code>NoSuchKey</Code></Error>";
                let _ = request.respond(
                    Response::from_string(body)
                        .with_status_code(404)
                        .with_header(header("Content-Type", "application/xml")),
                );
                return;
            };
            let mut meta_headers: Vec<Header> = object
                .meta
                .iter()
                .map(|(k, v)| header(k, v))
                .collect();

            let range_value = request
                .headers()
                .iter()
                .find(|h| h.field.equiv("Range"))
                .map(|h| h.value.as_str().to_string());
            let (status, body) = match range_value.and_then(|v| parse_range(&v, object.data.len()))
            {
                Some((start, end)) if start < object.data.len() => {
                    let end = end.min(object.data.len());
                    meta_headers.push(header(
                        "Content-Range",
                        &format!("bytes {}-{}/{}", start, end - 1, object.data.len()),
                    ));
                    (206, object.data[start..end].to_vec())
                }
                Some(_) => (416, Vec::new()),
                None => (200, object.data.clone()),
            };
            let mut response = Response::from_data(body).with_status_code(status);
            for h in meta_headers {
                response = response.with_header(h);
            }
            let _ = request.respond(response);
        }
        Method::Delete => {
            let existed = objects.lock().unwrap().remove(&key).is_some();
            let status = if existed { 204 } else { 404 };
            let _ = request.respond(Response::empty(status));
        }
        _ => {
            let _ = request.respond(Response::from_string("bad method").with_status_code(405));
        }
    }
}

// ---------------------------------------------------------------------
// Extraction service mock
// ---------------------------------------------------------------------

pub struct ExtractorMock {
    url: String,
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
    fail: Arc<Mutex<bool>>,
}

impl ExtractorMock {
    pub fn start() -> anyhow::Result<Self> {
        let server = Arc::new(
            Server::http("127.0.0.1:0").map_err(|e| anyhow::anyhow!("bind failed: {e}"))?,
        );
        let port = match server.server_addr() {
            tiny_http::ListenAddr::IP(addr) => addr.port(),
            _ => anyhow::bail!("unexpected listener type"),
        };
        let fail = Arc::new(Mutex::new(false));

        let loop_server = server.clone();
        let loop_fail = fail.clone();
        let handle = std::thread::spawn(move || {
            for mut request in loop_server.incoming_requests() {
                if *loop_fail.lock().unwrap() {
                    let _ = request
                        .respond(Response::from_string("extractor down").with_status_code(503));
                    continue;
                }
                let content_type = request
                    .headers()
                    .iter()
                    .find(|h| h.field.equiv("Content-Type"))
                    .map(|h| h.value.as_str().to_string())
                    .unwrap_or_else(|| "application/octet-stream".to_string());
                let mut body = Vec::new();
                let _ = request.as_reader().read_to_end(&mut body);
                let text = format!(
                    "external extraction of {} bytes ({})\n",
                    body.len(),
                    content_type
                );
                let _ = request.respond(
                    Response::from_string(text)
                        .with_header(header("Content-Type", "text/plain; charset=utf-8")),
                );
            }
        });

        Ok(ExtractorMock {
            url: format!("http://127.0.0.1:{port}/extract"),
            server,
            handle: Some(handle),
            fail,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn set_failing(&self, failing: bool) {
        *self.fail.lock().unwrap() = failing;
    }
}

impl Drop for ExtractorMock {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

/// Workspace-relative fixture locations, shared by the test suites.
pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn archive_fixture_root() -> PathBuf {
    fixture_dir().join("edgar-archive")
}

pub fn company_fixture_root() -> PathBuf {
    fixture_dir().join("company-metadata")
}
