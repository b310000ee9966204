//! Parser for raw EDGAR filing containers.
//!
//! A filing is an SGML document: a header block opened by `<SEC-HEADER>`
//! (or `<IMS-HEADER>` in older filings) followed by one or more
//! `<DOCUMENT>` segments, each carrying metadata tags and a `<TEXT>`
//! region holding the member file. Binary members (PDFs, images) are
//! frequently uuencoded. Data quality varies enormously across the
//! archive's history, so recoverable anomalies are collected as warnings
//! and a parse fails outright only when the input contains neither a
//! header tag nor a single DOCUMENT tag.

use chrono::NaiveDate;
use once_cell::sync::Lazy;
use regex::Regex;
use sha1::{Digest, Sha1};

use crate::index_parser::decode_text;
use crate::uuencode;

static ACCESSION: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\d{10}-\d{2}-\d{6}$").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FilingParseError {
    #[error("input contains neither a filing header nor any DOCUMENT segment")]
    NotAFiling,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HeaderParseError {
    #[error("header has no usable accession number: {0}")]
    MissingAccession(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HeaderKind {
    SecHeader,
    ImsHeader,
}

/// Typed view of an SEC-HEADER / IMS-HEADER block. Every tag that does
/// not map to a typed field is preserved verbatim, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilingHeader {
    pub accession_number: String,
    pub cik: Option<u64>,
    pub company_name: Option<String>,
    pub form_type: Option<String>,
    pub sic: Option<String>,
    pub date_filed: Option<NaiveDate>,
    pub period: Option<NaiveDate>,
    pub header_kind: HeaderKind,
    pub extra: Vec<(String, String)>,
}

/// One member document of a filing, body already decoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDocument {
    pub sequence: u32,
    pub doc_type: Option<String>,
    pub filename: Option<String>,
    pub description: Option<String>,
    pub body: Vec<u8>,
    pub was_uuencoded: bool,
    pub content_type: String,
    pub sha1: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warning {
    pub location: String,
    pub message: String,
}

impl Warning {
    fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Warning { location: location.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedFiling {
    /// Absent when the container held documents but no usable header;
    /// a warning records why.
    pub header: Option<FilingHeader>,
    pub documents: Vec<ParsedDocument>,
    pub warnings: Vec<Warning>,
}

/// Result of parsing one DOCUMENT segment. `document` is `None` only for
/// segments with no recognizable content, in which case a warning tagged
/// "unparseable document" is present.
#[derive(Debug, Clone)]
pub struct DocumentParse {
    pub document: Option<ParsedDocument>,
    pub warnings: Vec<Warning>,
}

fn starts_with_ci(line: &[u8], tag: &[u8]) -> bool {
    line.len() >= tag.len() && line[..tag.len()].eq_ignore_ascii_case(tag)
}

fn tag_value<'a>(line: &'a [u8], tag: &[u8]) -> Option<&'a [u8]> {
    if starts_with_ci(line, tag) {
        Some(&line[tag.len()..])
    } else {
        None
    }
}

/// Byte-offset line iterator: yields (line_start, content_end, next_start)
/// where content excludes the trailing `\n` (a trailing `\r` is kept; tag
/// matchers trim it).
fn lines_with_offsets(raw: &[u8]) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
    let mut pos = 0;
    std::iter::from_fn(move || {
        if pos >= raw.len() {
            return None;
        }
        let start = pos;
        let end = raw[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| start + i)
            .unwrap_or(raw.len());
        pos = if end < raw.len() { end + 1 } else { raw.len() };
        Some((start, end, pos))
    })
}

fn trim_line(raw: &[u8]) -> &[u8] {
    let mut line = raw;
    while let [rest @ .., last] = line {
        if *last == b'\r' || *last == b' ' || *last == b'\t' {
            line = rest;
        } else {
            break;
        }
    }
    line
}

/// Parse a filing container into header, documents, and warnings.
pub fn parse_filing(raw: &[u8]) -> Result<ParsedFiling, FilingParseError> {
    struct Segment {
        start: usize, // first byte after the <DOCUMENT> line
        end: usize,   // byte offset of the closing tag line (or segment cut)
        closed: bool,
    }

    let mut header_open: Option<(usize, HeaderKind)> = None; // (first byte after open line, kind)
    let mut header_end: Option<usize> = None;
    let mut segments: Vec<Segment> = Vec::new();
    let mut open_tag_count = 0usize;
    let mut warnings: Vec<Warning> = Vec::new();

    for (start, end, next) in lines_with_offsets(raw) {
        let line = trim_line(&raw[start..end]);
        if starts_with_ci(line, b"<SEC-HEADER") && header_open.is_none() {
            header_open = Some((next, HeaderKind::SecHeader));
        } else if starts_with_ci(line, b"<IMS-HEADER") && header_open.is_none() {
            header_open = Some((next, HeaderKind::ImsHeader));
        } else if starts_with_ci(line, b"</SEC-HEADER>") || starts_with_ci(line, b"</IMS-HEADER>")
        {
            if header_open.is_some() && header_end.is_none() {
                header_end = Some(start);
            }
        } else if starts_with_ci(line, b"<DOCUMENT>") {
            if header_open.is_some() && header_end.is_none() {
                header_end = Some(start);
                warnings.push(Warning::new("header", "header block not closed"));
            }
            if let Some(last) = segments.last_mut() {
                if !last.closed {
                    last.end = start;
                    warnings.push(Warning::new(
                        format!("document {}", segments.len()),
                        "DOCUMENT segment not closed; cut at next DOCUMENT tag",
                    ));
                }
            }
            open_tag_count += 1;
            segments.push(Segment { start: next, end: raw.len(), closed: false });
        } else if starts_with_ci(line, b"</DOCUMENT>") {
            if let Some(last) = segments.last_mut() {
                if !last.closed {
                    last.end = start;
                    last.closed = true;
                }
            }
        }
    }

    if let Some(last) = segments.last() {
        if !last.closed {
            warnings.push(Warning::new(
                format!("document {}", segments.len()),
                "DOCUMENT segment not closed; cut at end of file",
            ));
        }
    }
    if header_open.is_some() && header_end.is_none() {
        header_end = Some(raw.len());
        warnings.push(Warning::new("header", "header block not closed"));
    }

    if header_open.is_none() && segments.is_empty() {
        return Err(FilingParseError::NotAFiling);
    }

    let header = match header_open {
        Some((start, kind)) => {
            let text = decode_text(&raw[start..header_end.unwrap()]);
            match parse_header_block(&text, kind) {
                Ok(h) => Some(h),
                Err(HeaderParseError::MissingAccession(detail)) => {
                    warnings.push(Warning::new("header", format!("unusable header: {detail}")));
                    None
                }
            }
        }
        None => {
            warnings.push(Warning::new(
                "header",
                "no SEC-HEADER or IMS-HEADER block present",
            ));
            None
        }
    };

    let mut documents = Vec::new();
    for (idx, seg) in segments.iter().enumerate() {
        let parse = parse_document(&raw[seg.start..seg.end], idx + 1);
        warnings.extend(parse.warnings);
        if let Some(doc) = parse.document {
            documents.push(doc);
        }
    }

    // Duplicate sequence numbers are kept but flagged.
    let mut seen = std::collections::HashSet::new();
    for doc in &documents {
        if !seen.insert(doc.sequence) {
            warnings.push(Warning::new(
                format!("sequence {}", doc.sequence),
                "duplicate document sequence number",
            ));
        }
    }

    debug_assert_eq!(
        open_tag_count,
        documents.len()
            + warnings
                .iter()
                .filter(|w| w.message.contains("unparseable document"))
                .count()
    );

    Ok(ParsedFiling { header, documents, warnings })
}

/// Parse the text of a header block. Accepts both `NAME:value` lines and
/// SGML `<TAG>value` lines; EDGAR's history mixes the two freely.
pub fn parse_header(text: &str) -> Result<FilingHeader, HeaderParseError> {
    let kind = if text
        .lines()
        .find(|l| !l.trim().is_empty())
        .map(|l| l.trim().to_ascii_uppercase().starts_with("<IMS-HEADER"))
        .unwrap_or(false)
    {
        HeaderKind::ImsHeader
    } else {
        HeaderKind::SecHeader
    };
    // Drop the opening tag line if present so callers can pass the block
    // starting at the tag, as produced by a raw-file split.
    let body = match text.split_once('\n') {
        Some((first, rest))
            if first.trim().to_ascii_uppercase().starts_with("<SEC-HEADER")
                || first.trim().to_ascii_uppercase().starts_with("<IMS-HEADER") =>
        {
            rest
        }
        _ => text,
    };
    parse_header_block(body, kind)
}

fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_uppercase().replace('-', " ")
}

fn parse_header_line(line: &str) -> Option<(String, String)> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return None;
    }
    if let Some(rest) = trimmed.strip_prefix('<') {
        if rest.starts_with('/') {
            return None; // closing tag
        }
        let (tag, value) = rest.split_once('>')?;
        return Some((tag.trim().to_string(), value.trim().to_string()));
    }
    let (key, value) = trimmed.split_once(':')?;
    Some((key.trim().to_string(), value.trim().to_string()))
}

fn parse_compact_date(value: &str) -> Option<NaiveDate> {
    for fmt in ["%Y%m%d", "%Y-%m-%d"] {
        if let Ok(d) = NaiveDate::parse_from_str(value, fmt) {
            return Some(d);
        }
    }
    None
}

fn extract_sic(value: &str) -> Option<String> {
    static BRACKETED: Lazy<Regex> = Lazy::new(|| Regex::new(r"\[(\d{4})\]").unwrap());
    if let Some(caps) = BRACKETED.captures(value) {
        return Some(caps[1].to_string());
    }
    let digits = value.trim();
    if digits.len() == 4 && digits.chars().all(|c| c.is_ascii_digit()) {
        return Some(digits.to_string());
    }
    None
}

fn parse_header_block(text: &str, kind: HeaderKind) -> Result<FilingHeader, HeaderParseError> {
    let mut accession: Option<String> = None;
    let mut cik: Option<u64> = None;
    let mut company_name: Option<String> = None;
    let mut form_type: Option<String> = None;
    let mut sic: Option<String> = None;
    let mut date_filed: Option<NaiveDate> = None;
    let mut period: Option<NaiveDate> = None;
    let mut extra: Vec<(String, String)> = Vec::new();
    let mut bad_accession: Option<String> = None;

    for line in text.lines() {
        let Some((key, value)) = parse_header_line(line) else {
            continue;
        };
        let norm = normalize_key(&key);
        let mut consumed = true;
        match norm.as_str() {
            "ACCESSION NUMBER" if accession.is_none() => {
                if ACCESSION.is_match(&value) {
                    accession = Some(value.clone());
                } else {
                    bad_accession = Some(value.clone());
                    consumed = false;
                }
            }
            "CENTRAL INDEX KEY" | "CIK" if cik.is_none() => {
                match value.trim().parse::<u64>() {
                    Ok(n) if n > 0 => cik = Some(n),
                    _ => consumed = false,
                }
            }
            "COMPANY CONFORMED NAME" | "CONFORMED NAME" if company_name.is_none() => {
                company_name = Some(value.clone());
            }
            "CONFORMED SUBMISSION TYPE" | "TYPE" if form_type.is_none() => {
                form_type = Some(value.trim().to_uppercase());
            }
            "STANDARD INDUSTRIAL CLASSIFICATION" | "ASSIGNED SIC" | "SIC" if sic.is_none() => {
                match extract_sic(&value) {
                    Some(code) => sic = Some(code),
                    None => consumed = false,
                }
            }
            "FILED AS OF DATE" | "DATE FILED" | "FILING DATE" if date_filed.is_none() => {
                match parse_compact_date(value.trim()) {
                    Some(d) => date_filed = Some(d),
                    None => consumed = false,
                }
            }
            "CONFORMED PERIOD OF REPORT" | "PERIOD" if period.is_none() => {
                match parse_compact_date(value.trim()) {
                    Some(d) => period = Some(d),
                    None => consumed = false,
                }
            }
            _ => consumed = false,
        }
        if !consumed {
            extra.push((key, value));
        }
    }

    let accession_number = match accession {
        Some(a) => a,
        None => {
            let detail = match bad_accession {
                Some(v) => format!("accession number tag value {v:?} is not well formed"),
                None => "no accession number tag".to_string(),
            };
            return Err(HeaderParseError::MissingAccession(detail));
        }
    };

    Ok(FilingHeader {
        accession_number,
        cik,
        company_name,
        form_type,
        sic,
        date_filed,
        period,
        header_kind: kind,
        extra,
    })
}

/// Parse one DOCUMENT segment (the bytes between its open and close tags).
/// `position` is the segment's 1-based position in the filing, used when
/// the SEQUENCE tag is missing or unreadable.
pub fn parse_document(segment: &[u8], position: usize) -> DocumentParse {
    let location = format!("document {position}");
    let mut warnings = Vec::new();

    let mut doc_type: Option<String> = None;
    let mut sequence: Option<u32> = None;
    let mut filename: Option<String> = None;
    let mut description: Option<String> = None;
    let mut saw_metadata = false;
    let mut text_start: Option<usize> = None;
    let mut text_end: Option<usize> = None;

    for (start, end, next) in lines_with_offsets(segment) {
        let line = trim_line(&segment[start..end]);
        if text_start.is_none() {
            if let Some(v) = tag_value(line, b"<TYPE>") {
                saw_metadata = true;
                if doc_type.is_none() {
                    doc_type = Some(decode_text(v).trim().to_string());
                }
            } else if let Some(v) = tag_value(line, b"<SEQUENCE>") {
                saw_metadata = true;
                if sequence.is_none() {
                    sequence = decode_text(v).trim().parse::<u32>().ok().filter(|&n| n >= 1);
                    if sequence.is_none() {
                        warnings.push(Warning::new(
                            &location,
                            "unreadable SEQUENCE value; assigned by file position",
                        ));
                    }
                }
            } else if let Some(v) = tag_value(line, b"<FILENAME>") {
                saw_metadata = true;
                if filename.is_none() {
                    filename = Some(decode_text(v).trim().to_string());
                }
            } else if let Some(v) = tag_value(line, b"<DESCRIPTION>") {
                saw_metadata = true;
                if description.is_none() {
                    description = Some(decode_text(v).trim().to_string());
                }
            } else if starts_with_ci(line, b"<TEXT>") {
                text_start = Some(next);
            }
        } else if starts_with_ci(line, b"</TEXT>") && text_end.is_none() {
            text_end = Some(start);
        }
    }

    if text_start.is_none() && !saw_metadata {
        warnings.push(Warning::new(&location, "unparseable document: no metadata and no TEXT region"));
        return DocumentParse { document: None, warnings };
    }

    let raw_body: &[u8] = match (text_start, text_end) {
        (Some(s), Some(e)) if s <= e => &segment[s..e],
        (Some(s), _) => {
            warnings.push(Warning::new(&location, "TEXT region not closed; cut at segment end"));
            &segment[s..]
        }
        (None, _) => {
            warnings.push(Warning::new(&location, "missing TEXT region"));
            &[]
        }
    };

    let (body, was_uuencoded) = decode_body(raw_body, &location, &mut warnings);

    if sequence.is_none() && !warnings.iter().any(|w| w.message.contains("unreadable SEQUENCE")) {
        warnings.push(Warning::new(
            &location,
            "missing SEQUENCE tag; assigned by file position",
        ));
    }
    let sequence = sequence.unwrap_or(position as u32);

    let content_type = detect_content_type(&body, filename.as_deref());
    let sha1 = hex::encode(Sha1::digest(&body));

    DocumentParse {
        document: Some(ParsedDocument {
            sequence,
            doc_type,
            filename,
            description,
            body,
            was_uuencoded,
            content_type,
            sha1,
        }),
        warnings,
    }
}

/// Undo the encodings a TEXT region may carry: an optional `<PDF>` wrapper
/// and classic uuencoding. On decode failure the raw region is kept.
fn decode_body(raw: &[u8], location: &str, warnings: &mut Vec<Warning>) -> (Vec<u8>, bool) {
    let inner = strip_pdf_wrapper(raw);
    let text = decode_text(inner);
    if !uuencode::is_uuencoded(&text) {
        return (raw.to_vec(), false);
    }
    match uuencode::uudecode(&text) {
        Ok(out) => {
            for w in out.warnings {
                warnings.push(Warning::new(location, format!("uudecode: {w}")));
            }
            (out.data, true)
        }
        Err(e) => {
            warnings.push(Warning::new(location, format!("uudecode failed, body kept raw: {e}")));
            (raw.to_vec(), false)
        }
    }
}

/// Some filings wrap uuencoded payloads in `<PDF>` ... `</PDF>` lines
/// inside the TEXT region.
fn strip_pdf_wrapper(raw: &[u8]) -> &[u8] {
    let mut iter = lines_with_offsets(raw);
    for (start, end, next) in iter.by_ref() {
        let line = trim_line(&raw[start..end]);
        if line.is_empty() {
            continue;
        }
        if !starts_with_ci(line, b"<PDF>") {
            return raw;
        }
        // Wrapper found; search for the closing tag from the end.
        let mut inner_end = raw.len();
        for (s, e, _) in lines_with_offsets(&raw[next..]) {
            let l = trim_line(&raw[next + s..next + e]);
            if starts_with_ci(l, b"</PDF>") {
                inner_end = next + s;
            }
        }
        return &raw[next..inner_end];
    }
    raw
}

/// Decide a MIME type for a document body. Precedence: leading magic
/// bytes, then markup sniffing, then the filename extension, then
/// `text/plain`. SGML type tags are advisory at best, so the bytes win.
pub fn detect_content_type(body: &[u8], filename: Option<&str>) -> String {
    const MAGIC: &[(&[u8], &str)] = &[
        (b"%PDF", "application/pdf"),
        (b"PK\x03\x04", "application/zip"),
        (b"GIF8", "image/gif"),
        (b"\x89PNG", "image/png"),
        (b"\xff\xd8", "image/jpeg"),
    ];
    for (magic, mime) in MAGIC {
        if body.starts_with(magic) {
            return (*mime).to_string();
        }
    }

    let head: Vec<u8> = body
        .iter()
        .copied()
        .skip_while(|b| b.is_ascii_whitespace())
        .take(64)
        .collect();
    let head_lower = head.to_ascii_lowercase();
    if head_lower.starts_with(b"<?xml") {
        return "text/xml".to_string();
    }
    if head_lower.starts_with(b"<html") || head_lower.starts_with(b"<!doctype html") {
        return "text/html".to_string();
    }

    if let Some(name) = filename {
        let ext = name.rsplit('.').next().unwrap_or("").to_ascii_lowercase();
        let mapped = match ext.as_str() {
            "htm" | "html" => Some("text/html"),
            "xml" | "xsd" | "xbrl" => Some("text/xml"),
            "pdf" => Some("application/pdf"),
            "gif" => Some("image/gif"),
            "png" => Some("image/png"),
            "jpg" | "jpeg" => Some("image/jpeg"),
            "zip" => Some("application/zip"),
            "txt" => Some("text/plain"),
            _ => None,
        };
        if let Some(mime) = mapped {
            return mime.to_string();
        }
    }

    "text/plain".to_string()
}
