//! Plain-text extraction from filing document bodies.
//!
//! Text and HTML are handled natively. Anything else is shipped to an
//! optional external extraction service (PUT the bytes, read text back);
//! with no service configured such documents are explicitly marked
//! unextracted rather than silently skipped.
//!
//! Output conventions: valid UTF-8, `\n` line endings, one line per
//! block-level element for HTML, horizontal whitespace runs collapsed to
//! single spaces, no leading/trailing blank lines.

mod entities;

use std::collections::BTreeMap;

use sha1::{Digest, Sha1};

use crate::metadata_store::{MetadataStore, MetadataStoreError};
use crate::object_store::{key_for_document, key_for_text, ObjectStore, ObjectStoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStatus {
    Extracted,
    Unextracted,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Extractor {
    NativeText,
    NativeHtml,
    ExternalService,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionResult {
    pub sha1: String,
    pub status: ExtractionStatus,
    pub text: Option<String>,
    pub extractor: Option<Extractor>,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error(transparent)]
    Store(#[from] ObjectStoreError),
    #[error(transparent)]
    Metadata(#[from] MetadataStoreError),
}

pub struct TextExtractor {
    external_url: Option<String>,
    agent: ureq::Agent,
}

impl TextExtractor {
    /// `external_url` is the optional extraction service endpoint;
    /// absence is a fully supported configuration.
    pub fn new(external_url: Option<String>) -> Self {
        TextExtractor {
            external_url: external_url.filter(|u| !u.trim().is_empty()),
            agent: ureq::AgentBuilder::new()
                .timeout(std::time::Duration::from_secs(60))
                .build(),
        }
    }

    pub fn extract_text(&self, body: &[u8], content_type: &str) -> ExtractionResult {
        let sha1 = hex::encode(Sha1::digest(body));
        let base = content_type
            .split(';')
            .next()
            .unwrap_or(content_type)
            .trim()
            .to_ascii_lowercase();
        match base.as_str() {
            "text/plain" | "" => ExtractionResult {
                sha1,
                status: ExtractionStatus::Extracted,
                text: Some(normalize_plain_text(body)),
                extractor: Some(Extractor::NativeText),
                detail: None,
            },
            "text/html" => ExtractionResult {
                sha1,
                status: ExtractionStatus::Extracted,
                text: Some(html_to_text(body)),
                extractor: Some(Extractor::NativeHtml),
                detail: None,
            },
            _ => self.extract_external(body, content_type, sha1),
        }
    }

    fn extract_external(
        &self,
        body: &[u8],
        content_type: &str,
        sha1: String,
    ) -> ExtractionResult {
        let Some(url) = &self.external_url else {
            return ExtractionResult {
                sha1,
                status: ExtractionStatus::Unextracted,
                text: None,
                extractor: None,
                detail: Some(format!(
                    "no extraction service configured for {content_type}"
                )),
            };
        };
        let response = self
            .agent
            .put(url)
            .set("Content-Type", content_type)
            .send_bytes(body);
        match response {
            Ok(r) if (200..300).contains(&r.status()) => {
                let mut text = String::new();
                use std::io::Read;
                match r.into_reader().read_to_string(&mut text) {
                    Ok(_) => ExtractionResult {
                        sha1,
                        status: ExtractionStatus::Extracted,
                        text: Some(normalize_line_endings(&text)),
                        extractor: Some(Extractor::ExternalService),
                        detail: None,
                    },
                    Err(e) => ExtractionResult {
                        sha1,
                        status: ExtractionStatus::Failed,
                        text: None,
                        extractor: None,
                        detail: Some(format!("service response unreadable: {e}")),
                    },
                }
            }
            Ok(r) => ExtractionResult {
                sha1,
                status: ExtractionStatus::Failed,
                text: None,
                extractor: None,
                detail: Some(format!("service returned status {}", r.status())),
            },
            Err(ureq::Error::Status(code, _)) => ExtractionResult {
                sha1,
                status: ExtractionStatus::Failed,
                text: None,
                extractor: None,
                detail: Some(format!("service returned status {code}")),
            },
            Err(e) => ExtractionResult {
                sha1,
                status: ExtractionStatus::Failed,
                text: None,
                extractor: None,
                detail: Some(format!("service unreachable: {e}")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ExtractSummary {
    /// Unique bodies actually run through an extractor.
    pub bodies_extracted: u64,
    /// Unique bodies whose text was already stored (resumed run or a
    /// filing ingested after its shared body was extracted).
    pub bodies_reused: u64,
    /// Document rows flipped to extracted.
    pub documents_marked: u64,
    /// Unique bodies left pending (no extractor for the type).
    pub bodies_unextracted: u64,
    /// Unique bodies whose extraction failed outright.
    pub bodies_failed: u64,
}

/// Extract every pending document. Work is keyed by body digest so a
/// body shared across filings is extracted once; rerunning when nothing
/// is pending performs no extractions.
pub fn extract_pending(
    metadata: &MetadataStore,
    store: &dyn ObjectStore,
    extractor: &TextExtractor,
    compress_text: bool,
) -> Result<ExtractSummary, ExtractError> {
    let mut summary = ExtractSummary::default();
    let pending = metadata.pending_extractions()?;

    // digest -> content type of the first document carrying it
    let mut by_digest: BTreeMap<String, String> = BTreeMap::new();
    for doc in &pending {
        by_digest
            .entry(doc.sha1.clone())
            .or_insert_with(|| doc.content_type.clone());
    }

    for (sha1, content_type) in by_digest {
        let text_key = key_for_text(&sha1)?;
        if store.exists(&text_key)? {
            // Text already on hand (earlier run, or a filing ingested
            // after its body was extracted): just flip the rows.
            summary.bodies_reused += 1;
            summary.documents_marked += metadata.mark_extracted_by_sha1(&sha1)?;
            continue;
        }
        let body = store.get(&key_for_document(&sha1)?, None)?;
        let result = extractor.extract_text(&body, &content_type);
        match result.status {
            ExtractionStatus::Extracted => {
                let text = result.text.expect("extracted implies text");
                store.put(&text_key, text.as_bytes(), compress_text)?;
                summary.bodies_extracted += 1;
                summary.documents_marked += metadata.mark_extracted_by_sha1(&sha1)?;
            }
            ExtractionStatus::Unextracted => {
                let detail = result.detail.unwrap_or_else(|| "unextracted".into());
                metadata.record_extraction_failure(&sha1, &detail)?;
                summary.bodies_unextracted += 1;
            }
            ExtractionStatus::Failed => {
                let detail = result.detail.unwrap_or_else(|| "failed".into());
                metadata.record_extraction_failure(&sha1, &detail)?;
                summary.bodies_failed += 1;
            }
        }
    }
    Ok(summary)
}

fn normalize_line_endings(text: &str) -> String {
    text.replace("\r\n", "\n").replace('\r', "\n")
}

/// Charset-normalized passthrough for plain text.
pub fn normalize_plain_text(body: &[u8]) -> String {
    normalize_line_endings(&crate::index_parser::decode_text(body))
}

fn declared_charset(head: &[u8]) -> Option<String> {
    let text = String::from_utf8_lossy(head).to_lowercase();
    let pos = text.find("charset=")?;
    let rest = &text[pos + "charset=".len()..];
    let value: String = rest
        .trim_start_matches(['"', '\''])
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '-' || *c == '_')
        .collect();
    (!value.is_empty()).then_some(value)
}

fn decode_html_bytes(body: &[u8]) -> String {
    let head = &body[..body.len().min(1024)];
    match declared_charset(head).as_deref() {
        Some("utf-8") | Some("utf8") => String::from_utf8_lossy(body).into_owned(),
        Some("iso-8859-1") | Some("latin-1") | Some("latin1") | Some("windows-1252") => {
            body.iter().map(|&b| b as char).collect()
        }
        _ => crate::index_parser::decode_text(body),
    }
}

const BLOCK_TAGS: &[&str] = &[
    "address", "article", "aside", "blockquote", "body", "br", "caption", "center", "dd",
    "div", "dl", "dt", "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2",
    "h3", "h4", "h5", "h6", "head", "header", "hr", "html", "li", "main", "nav",
    "noscript", "ol", "p", "pre", "section", "table", "tbody", "td", "tfoot", "th",
    "thead", "title", "tr", "ul",
];

fn tag_name(tag_body: &str) -> String {
    tag_body
        .trim_start_matches('/')
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase()
}

/// Strip markup from HTML: comments and script/style contents removed,
/// block-level tags become newlines, inline tags vanish, entities decode,
/// whitespace runs collapse.
pub fn html_to_text(body: &[u8]) -> String {
    let html = decode_html_bytes(body);
    let mut out = String::with_capacity(html.len() / 2);
    let bytes: Vec<char> = html.chars().collect();
    let mut i = 0;
    let len = bytes.len();

    let starts_with_ci = |at: usize, pat: &str| -> bool {
        bytes[at..]
            .iter()
            .zip(pat.chars())
            .filter(|(a, b)| a.eq_ignore_ascii_case(b))
            .count()
            == pat.chars().count()
            && at + pat.chars().count() <= len
    };

    while i < len {
        let c = bytes[i];
        if c != '<' {
            out.push(c);
            i += 1;
            continue;
        }
        if starts_with_ci(i, "<!--") {
            // comment: skip to -->
            let mut j = i + 4;
            while j + 2 < len && !(bytes[j] == '-' && bytes[j + 1] == '-' && bytes[j + 2] == '>') {
                j += 1;
            }
            i = (j + 3).min(len);
            continue;
        }
        // find the end of the tag, honoring quoted attribute values
        let mut j = i + 1;
        let mut quote: Option<char> = None;
        while j < len {
            let cj = bytes[j];
            match quote {
                Some(q) if cj == q => quote = None,
                Some(_) => {}
                None if cj == '"' || cj == '\'' => quote = Some(cj),
                None if cj == '>' => break,
                None => {}
            }
            j += 1;
        }
        if j >= len {
            // unterminated tag: drop the rest
            break;
        }
        let tag_body: String = bytes[i + 1..j].iter().collect();
        let name = tag_name(&tag_body);
        i = j + 1;

        if (name == "script" || name == "style") && !tag_body.starts_with('/') {
            // skip content through the matching close tag
            let close = format!("</{name}");
            let mut k = i;
            let mut found = None;
            while k < len {
                if bytes[k] == '<' && starts_with_ci(k, &close) {
                    found = Some(k);
                    break;
                }
                k += 1;
            }
            match found {
                Some(k) => {
                    let mut m = k;
                    while m < len && bytes[m] != '>' {
                        m += 1;
                    }
                    i = (m + 1).min(len);
                }
                None => i = len,
            }
            out.push('\n');
            continue;
        }
        if BLOCK_TAGS.contains(&name.as_str()) {
            out.push('\n');
        }
    }

    let decoded = decode_entities(&out);
    collapse_whitespace(&decoded)
}

/// Decode named and numeric character references. Unknown names pass
/// through literally (a warning is logged: archive HTML contains typos).
pub fn decode_entities(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        if c != '&' {
            out.push(c);
            continue;
        }
        // collect up to ';' within a sane length
        let mut name = String::new();
        let mut terminated = false;
        for (_, nc) in chars.clone().take(32) {
            if nc == ';' {
                terminated = true;
                break;
            }
            if nc == '&' || nc.is_whitespace() {
                break;
            }
            name.push(nc);
        }
        if !terminated || name.is_empty() {
            out.push('&');
            continue;
        }
        let decoded = if let Some(rest) = name.strip_prefix('#') {
            let code = if let Some(hex) = rest.strip_prefix(['x', 'X']) {
                u32::from_str_radix(hex, 16).ok()
            } else {
                rest.parse::<u32>().ok()
            };
            code.and_then(char::from_u32).map(String::from)
        } else {
            entities::NAMED_ENTITIES
                .binary_search_by_key(&name.as_str(), |(n, _)| n)
                .ok()
                .map(|idx| entities::NAMED_ENTITIES[idx].1.to_string())
        };
        match decoded {
            Some(s) => {
                out.push_str(&s);
                // consume the name and the ';'
                for _ in 0..=name.chars().count() {
                    chars.next();
                }
            }
            None => {
                log::warn!("unknown character reference &{name}; passed through");
                out.push('&');
            }
        }
    }
    out
}

/// Collapse horizontal whitespace runs, trim lines, drop blank lines.
fn collapse_whitespace(text: &str) -> String {
    let mut lines: Vec<String> = Vec::new();
    for raw_line in text.split('\n') {
        let mut line = String::with_capacity(raw_line.len());
        let mut in_space = true; // leading whitespace is dropped
        for c in raw_line.chars() {
            if c.is_whitespace() {
                if !in_space {
                    line.push(' ');
                    in_space = true;
                }
            } else {
                line.push(c);
                in_space = false;
            }
        }
        let trimmed = line.trim_end().to_string();
        if !trimmed.is_empty() {
            lines.push(trimmed);
        }
    }
    lines.join("\n")
}
