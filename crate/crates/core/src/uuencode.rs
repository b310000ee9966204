//! Classic uuencoding, as found wrapping PDFs and images inside older
//! EDGAR filings.
//!
//! The format predates any standard: each data line starts with a length
//! character (`byte count + 0x20`), followed by 4-character groups each
//! carrying 3 bytes, 6 bits per character (`value + 0x20`, with `0x60`
//! used in place of the space character for zero). A zero-length line and
//! an `end` line terminate the payload.
//!
//! Real filings are frequently damaged in transit, so the decoder is
//! deliberately tolerant: a data line may be short by up to one encoded
//! group (stripped trailing whitespace), the `end` terminator may be
//! missing, and junk may follow the payload. Those conditions decode with
//! a warning. A line short by more than one group contradicts its declared
//! byte count and is an error.

use std::fmt;

use once_cell::sync::Lazy;
use regex::Regex;

/// Maximum payload bytes per encoded line in classic uuencode.
const MAX_LINE_BYTES: usize = 45;

/// Shortfall in encoded characters (vs. the declared byte count) that is
/// repaired by padding with zero bits instead of rejected.
const SHORTFALL_TOLERANCE: usize = 4;

static BEGIN_LINE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^begin [0-7]{3,4} \S").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UuencodeError {
    #[error("no \"begin <mode> <name>\" line found")]
    MissingBegin,
    #[error("malformed uuencoded data at line {line}: {reason}")]
    MalformedUuencode { line: usize, reason: String },
}

/// Decoded payload plus any tolerated anomalies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UudecodeOutput {
    pub data: Vec<u8>,
    pub warnings: Vec<String>,
}

/// True when the first non-blank line looks like a uuencode header.
///
/// Kept conservative (`begin` + 3-4 octal digits + a name) so prose that
/// merely starts with the word "begin" is not misidentified.
pub fn is_uuencoded(text: &str) -> bool {
    text.lines()
        .find(|line| !line.trim().is_empty())
        .map(|line| BEGIN_LINE.is_match(line.trim_end_matches('\r')))
        .unwrap_or(false)
}

fn char_value(c: u8, line_no: usize) -> Result<u8, UuencodeError> {
    match c {
        0x60 => Ok(0),
        0x20..=0x5f => Ok(c - 0x20),
        _ => Err(UuencodeError::MalformedUuencode {
            line: line_no,
            reason: format!("invalid data character 0x{c:02x}"),
        }),
    }
}

/// Decode a classic uuencoded payload.
pub fn uudecode(text: &str) -> Result<UudecodeOutput, UuencodeError> {
    let mut data = Vec::new();
    let mut warnings = Vec::new();
    let mut in_payload = false;
    let mut payload_done = false;
    let mut saw_end = false;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);

        if !in_payload {
            if BEGIN_LINE.is_match(line) {
                in_payload = true;
            }
            continue;
        }

        if payload_done {
            if !saw_end && line == "end" {
                saw_end = true;
            } else if !line.trim().is_empty() && !saw_end {
                warnings.push(format!(
                    "line {line_no}: expected \"end\" terminator, found other content"
                ));
                saw_end = true; // report once, ignore the rest
            }
            continue;
        }

        if line.is_empty() {
            warnings.push(format!("line {line_no}: blank line before terminator"));
            payload_done = true;
            continue;
        }

        let bytes = line.as_bytes();
        let declared = char_value(bytes[0], line_no)? as usize;
        if declared == 0 {
            payload_done = true;
            continue;
        }
        if declared > MAX_LINE_BYTES {
            return Err(UuencodeError::MalformedUuencode {
                line: line_no,
                reason: format!("declared byte count {declared} exceeds the line maximum"),
            });
        }

        let needed_chars = declared.div_ceil(3) * 4;
        let available = bytes.len() - 1;
        if available + SHORTFALL_TOLERANCE < needed_chars {
            return Err(UuencodeError::MalformedUuencode {
                line: line_no,
                reason: format!(
                    "declared byte count {declared} needs {needed_chars} encoded \
                     characters but only {available} are present"
                ),
            });
        }
        if available < needed_chars {
            warnings.push(format!(
                "line {line_no}: short data line padded with zero bits"
            ));
        }

        let mut produced = 0;
        let mut group = [0u8; 4];
        let mut pos = 1;
        while produced < declared {
            for slot in group.iter_mut() {
                *slot = if pos < bytes.len() {
                    let v = char_value(bytes[pos], line_no)?;
                    pos += 1;
                    v
                } else {
                    0
                };
            }
            let take = (declared - produced).min(3);
            let triple = [
                (group[0] << 2) | (group[1] >> 4),
                (group[1] << 4) | (group[2] >> 2),
                (group[2] << 6) | group[3],
            ];
            data.extend_from_slice(&triple[..take]);
            produced += take;
        }
        // Anything left on the line (historically a checksum character) is ignored.
    }

    if !in_payload {
        return Err(UuencodeError::MissingBegin);
    }
    if !saw_end {
        warnings.push("missing \"end\" terminator".to_string());
    }

    Ok(UudecodeOutput { data, warnings })
}

/// Encode bytes in classic uuencode form, using `` ` `` for zero.
pub fn uuencode(data: &[u8], mode: u32, name: &str) -> String {
    fn encode_char(v: u8) -> char {
        if v == 0 {
            '`'
        } else {
            (v + 0x20) as char
        }
    }

    let mut out = String::new();
    out.push_str(&format!("begin {mode:03o} {name}\n"));
    for chunk in data.chunks(MAX_LINE_BYTES) {
        out.push(encode_char(chunk.len() as u8));
        for triple in chunk.chunks(3) {
            let b0 = triple[0];
            let b1 = triple.get(1).copied().unwrap_or(0);
            let b2 = triple.get(2).copied().unwrap_or(0);
            out.push(encode_char(b0 >> 2));
            out.push(encode_char(((b0 << 4) | (b1 >> 4)) & 0x3f));
            out.push(encode_char(((b1 << 2) | (b2 >> 6)) & 0x3f));
            out.push(encode_char(b2 & 0x3f));
        }
        out.push('\n');
    }
    out.push_str("`\nend\n");
    out
}

impl fmt::Display for UudecodeOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} bytes, {} warnings", self.data.len(), self.warnings.len())
    }
}
