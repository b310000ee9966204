//! Parsers for EDGAR full-index files.
//!
//! Two layouts exist in the wild: fixed-width "flat" files whose column
//! widths vary from file to file (they are sized to the longest value in
//! each column), and pipe-delimited master indexes. Files may arrive
//! gzip-compressed, with or without the `.gz` suffix, and decades of
//! history mean torn rows, missing fields, and bad compression all occur.
//! Rows that fail validation are quarantined with a reason instead of
//! dropped; only whole-file defects (bad gzip, no usable header) abort a
//! parse.

use std::io::Read;

use chrono::NaiveDate;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Default accepted filing path suffixes for the file-name column.
pub const DEFAULT_FILE_SUFFIXES: &[&str] = &[".txt", ".nc"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexParseError {
    #[error("gzip magic bytes present but stream is corrupt: {0}")]
    CorruptCompression(String),
    #[error("input is empty")]
    EmptyInput,
    #[error("required column {0:?} not found in header")]
    MissingColumn(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexFormat {
    FixedWidth,
    PipeDelimited,
}

/// One validated line of an index file.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IndexRow {
    pub cik: u64,
    pub company_name: String,
    pub form_type: String,
    pub date_filed: NaiveDate,
    pub file_name: String,
}

/// A quarantined input line: number, verbatim content, and why it failed.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MalformedLine {
    pub line_number: usize,
    pub raw_line: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IndexParseReport {
    pub rows: Vec<IndexRow>,
    pub malformed_lines: Vec<MalformedLine>,
    pub detected_format: IndexFormat,
    pub was_compressed: bool,
}

impl IndexParseReport {
    /// Render the parsed rows as a pipe-delimited table (audit dump form).
    /// Reparsing the output reproduces the same rows.
    pub fn rows_to_pipe_delimited(&self) -> String {
        let mut out = String::from("CIK|Company Name|Form Type|Date Filed|File Name\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{}|{}|{}|{}|{}\n",
                row.cik, row.company_name, row.form_type, row.date_filed, row.file_name
            ));
        }
        out
    }
}

/// Inflate gzip input, pass anything else through untouched.
pub fn decompress_if_needed(raw: &[u8]) -> Result<(Vec<u8>, bool), IndexParseError> {
    if raw.len() < 2 || raw[..2] != GZIP_MAGIC {
        return Ok((raw.to_vec(), false));
    }
    let mut decoder = flate2::read::GzDecoder::new(raw);
    let mut inflated = Vec::new();
    decoder
        .read_to_end(&mut inflated)
        .map_err(|e| IndexParseError::CorruptCompression(e.to_string()))?;
    Ok((inflated, true))
}

/// Decode bytes as UTF-8 when valid, Latin-1 otherwise. Never fails;
/// legacy EDGAR files predate consistent encodings.
pub fn decode_text(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

/// The five required index fields, with the header spellings they go by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Cik,
    CompanyName,
    FormType,
    DateFiled,
    FileName,
}

impl Field {
    const ALL: [Field; 5] = [
        Field::Cik,
        Field::CompanyName,
        Field::FormType,
        Field::DateFiled,
        Field::FileName,
    ];

    fn names(self) -> &'static [&'static str] {
        match self {
            Field::Cik => &["cik"],
            Field::CompanyName => &["company name"],
            Field::FormType => &["form type"],
            Field::DateFiled => &["date filed"],
            Field::FileName => &["file name", "filename"],
        }
    }

    fn label(self) -> &'static str {
        match self {
            Field::Cik => "CIK",
            Field::CompanyName => "Company Name",
            Field::FormType => "Form Type",
            Field::DateFiled => "Date Filed",
            Field::FileName => "File Name",
        }
    }
}

fn is_header_line(line: &str) -> bool {
    let lower = line.to_lowercase();
    Field::ALL
        .iter()
        .all(|f| f.names().iter().any(|n| lower.contains(n)))
}

fn is_dash_rule(line: &str) -> bool {
    let trimmed = line.trim();
    !trimmed.is_empty() && trimmed.chars().all(|c| c == '-' || c == '=')
}

/// Locate the header line; preamble above it is ignored.
fn find_header(lines: &[&str]) -> Option<usize> {
    lines.iter().position(|l| is_header_line(l))
}

/// Index of the first data line given the header position (skips an
/// optional dash rule and blank spacing directly under the header).
fn first_data_index(lines: &[&str], header: usize) -> usize {
    let mut idx = header + 1;
    while idx < lines.len() && lines[idx].trim().is_empty() {
        idx += 1;
    }
    if idx < lines.len() && is_dash_rule(lines[idx]) {
        idx += 1;
    }
    idx
}

/// Decide between the fixed-width and pipe-delimited layouts.
pub fn sniff_format(text: &str) -> Result<IndexFormat, IndexParseError> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.iter().all(|l| l.trim().is_empty()) {
        return Err(IndexParseError::EmptyInput);
    }
    let probe = match find_header(&lines) {
        Some(header) => {
            let idx = first_data_index(&lines, header);
            lines.get(idx).copied().or(Some(lines[header]))
        }
        // No recognizable header: fall back to the first line that looks
        // delimited at all.
        None => lines
            .iter()
            .find(|l| l.matches('|').count() >= 4)
            .copied(),
    };
    match probe {
        Some(line) if line.matches('|').count() >= 4 => Ok(IndexFormat::PipeDelimited),
        _ => Ok(IndexFormat::FixedWidth),
    }
}

/// A half-open character span for one fixed-width column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpan {
    pub field_name: &'static str,
    pub start: usize,
    pub end: usize,
}

/// Infer column spans from header token positions, each span widened
/// rightward to the start of the next token (the last extends to end of
/// line). Header tokens mark where values begin because EDGAR left-aligns
/// values under their headings.
pub fn infer_columns(
    header_line: &str,
    _data_lines: &[&str],
) -> Result<Vec<ColumnSpan>, IndexParseError> {
    let lower: Vec<char> = header_line.to_lowercase().chars().collect();
    let find_at = |needle: &str| -> Option<usize> {
        let pat: Vec<char> = needle.chars().collect();
        lower.windows(pat.len()).position(|w| w == pat.as_slice())
    };

    let mut found: Vec<(Field, usize)> = Vec::new();
    for field in Field::ALL {
        let pos = field
            .names()
            .iter()
            .find_map(|n| find_at(n))
            .ok_or(IndexParseError::MissingColumn(field.label()))?;
        found.push((field, pos));
    }
    found.sort_by_key(|&(_, pos)| pos);

    let mut spans = Vec::with_capacity(found.len());
    for (i, &(field, start)) in found.iter().enumerate() {
        let end = found.get(i + 1).map(|&(_, next)| next).unwrap_or(usize::MAX);
        spans.push(ColumnSpan { field_name: field.label(), start, end });
    }
    Ok(spans)
}

fn field_for_label(label: &str) -> Option<Field> {
    let lower = label.trim().to_lowercase();
    Field::ALL
        .into_iter()
        .find(|f| f.names().contains(&lower.as_str()))
}

/// Map a pipe-delimited header to a field order.
fn pipe_field_order(header_line: &str) -> Result<Vec<Field>, IndexParseError> {
    let mut order = Vec::new();
    for token in header_line.split('|') {
        if let Some(field) = field_for_label(token) {
            order.push(field);
        }
    }
    for field in Field::ALL {
        if !order.contains(&field) {
            return Err(IndexParseError::MissingColumn(field.label()));
        }
    }
    Ok(order)
}

fn slice_chars(chars: &[char], start: usize, end: usize) -> String {
    if start >= chars.len() {
        return String::new();
    }
    let end = end.min(chars.len());
    chars[start..end].iter().collect::<String>().trim().to_string()
}

fn parse_date(value: &str) -> Option<NaiveDate> {
    // %y before %Y: chrono's %Y would otherwise claim two-digit years.
    for fmt in ["%Y-%m-%d", "%m/%d/%y", "%m/%d/%Y"] {
        if let Ok(date) = NaiveDate::parse_from_str(value, fmt) {
            return Some(date);
        }
    }
    None
}

fn validate_row(
    values: [(Field, String); 5],
    suffixes: &[&str],
) -> Result<IndexRow, String> {
    let mut cik = None;
    let mut company = None;
    let mut form = None;
    let mut date = None;
    let mut file = None;

    for (field, value) in values {
        if value.is_empty() {
            return Err(format!("missing {}", field.label()));
        }
        match field {
            Field::Cik => match value.parse::<u64>() {
                Ok(n) if n > 0 => cik = Some(n),
                _ => return Err(format!("invalid CIK {value:?}")),
            },
            Field::CompanyName => company = Some(value),
            Field::FormType => form = Some(value.to_uppercase()),
            Field::DateFiled => match parse_date(&value) {
                Some(d) => date = Some(d),
                None => return Err(format!("invalid Date Filed {value:?}")),
            },
            Field::FileName => {
                if suffixes.iter().any(|s| value.ends_with(s)) {
                    file = Some(value);
                } else {
                    return Err(format!("unexpected file suffix in {value:?}"));
                }
            }
        }
    }

    Ok(IndexRow {
        cik: cik.unwrap(),
        company_name: company.unwrap(),
        form_type: form.unwrap(),
        date_filed: date.unwrap(),
        file_name: file.unwrap(),
    })
}

/// Parse a raw index file end to end: transparent gzip, UTF-8/Latin-1
/// decode, format sniffing, column inference or pipe splitting, and
/// per-row validation. Row order is preserved; every data line lands in
/// `rows` or `malformed_lines` exactly once.
pub fn parse_index(raw: &[u8]) -> Result<IndexParseReport, IndexParseError> {
    parse_index_with_suffixes(raw, DEFAULT_FILE_SUFFIXES)
}

pub fn parse_index_with_suffixes(
    raw: &[u8],
    file_suffixes: &[&str],
) -> Result<IndexParseReport, IndexParseError> {
    let (bytes, was_compressed) = decompress_if_needed(raw)?;
    let text = decode_text(&bytes);
    let detected_format = sniff_format(&text)?;

    let lines: Vec<&str> = text.lines().collect();
    let header = find_header(&lines).ok_or_else(|| {
        // Without a header none of the required columns can be located;
        // report the first one for a concrete diagnostic.
        IndexParseError::MissingColumn(Field::Cik.label())
    })?;
    let data_start = first_data_index(&lines, header);

    let mut rows = Vec::new();
    let mut malformed_lines = Vec::new();
    let mut push_malformed = |line_number: usize, raw_line: &str, reason: String| {
        malformed_lines.push(MalformedLine {
            line_number,
            raw_line: raw_line.to_string(),
            reason,
        });
    };

    match detected_format {
        IndexFormat::PipeDelimited => {
            let order = pipe_field_order(lines[header])?;
            for (idx, line) in lines.iter().enumerate().skip(data_start) {
                let line_number = idx + 1;
                if line.trim().is_empty() {
                    push_malformed(line_number, line, "blank line".to_string());
                    continue;
                }
                let parts: Vec<&str> = line.split('|').collect();
                if parts.len() != order.len() {
                    push_malformed(
                        line_number,
                        line,
                        format!("expected {} fields, found {}", order.len(), parts.len()),
                    );
                    continue;
                }
                let values: Vec<(Field, String)> = order
                    .iter()
                    .zip(parts.iter())
                    .map(|(&f, v)| (f, v.trim().to_string()))
                    .collect();
                match validate_row(values.try_into().unwrap(), file_suffixes) {
                    Ok(row) => rows.push(row),
                    Err(reason) => push_malformed(line_number, line, reason),
                }
            }
        }
        IndexFormat::FixedWidth => {
            let data_lines: Vec<&str> = lines[data_start..].to_vec();
            let spans = infer_columns(lines[header], &data_lines)?;
            for (idx, line) in lines.iter().enumerate().skip(data_start) {
                let line_number = idx + 1;
                if line.trim().is_empty() {
                    push_malformed(line_number, line, "blank line".to_string());
                    continue;
                }
                let chars: Vec<char> = line.chars().collect();
                let values: Vec<(Field, String)> = spans
                    .iter()
                    .map(|span| {
                        let field = field_for_label(span.field_name).unwrap();
                        (field, slice_chars(&chars, span.start, span.end))
                    })
                    .collect();
                match validate_row(values.try_into().unwrap(), file_suffixes) {
                    Ok(row) => rows.push(row),
                    Err(reason) => push_malformed(line_number, line, reason),
                }
            }
        }
    }

    Ok(IndexParseReport {
        rows,
        malformed_lines,
        detected_format,
        was_compressed,
    })
}
