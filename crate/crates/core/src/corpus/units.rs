//! Markdown segmentation into atomic units and sliding windows over them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Sentence,
    Heading,
    Table,
    Image,
}

/// An indivisible span of source markdown. `sep` is the whitespace that
/// followed it in the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub text: String,
    pub sep: String,
    pub kind: UnitKind,
}

/// Joins units with their separators, trimming the ends.
pub fn join_units(units: &[Unit]) -> String {
    let mut out = String::new();
    for (i, u) in units.iter().enumerate() {
        out.push_str(&u.text);
        if i + 1 < units.len() {
            out.push_str(&u.sep);
        }
    }
    out.trim().to_string()
}

fn is_heading(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with('#') && t.trim_start_matches('#').starts_with(' ')
}

fn heading_title(line: &str) -> String {
    line.trim_start()
        .trim_start_matches('#')
        .trim()
        .to_lowercase()
}

fn is_toc_title(title: &str) -> bool {
    let t = title.trim_end_matches(':');
    matches!(
        t,
        "table of contents" | "contents" | "list of figures" | "list of tables"
    )
}

/// Splits on blank lines; headings always start their own block.
fn blocks(markdown: &str) -> Vec<Vec<&str>> {
    let mut out: Vec<Vec<&str>> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in markdown.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            continue;
        }
        if is_heading(line) {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            out.push(vec![line]);
            continue;
        }
        current.push(line);
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Drops table-of-contents style sections: a TOC heading and every block up
/// to the next heading.
fn drop_toc(blocks: Vec<Vec<&str>>) -> Vec<Vec<&str>> {
    let mut out = Vec::with_capacity(blocks.len());
    let mut skipping = false;
    for block in blocks {
        let first = block[0];
        if is_heading(first) {
            skipping = is_toc_title(&heading_title(first));
            if skipping {
                continue;
            }
        } else if !skipping && block.len() == 1 && is_toc_title(&first.trim().to_lowercase()) {
            skipping = true;
            continue;
        }
        if !skipping {
            out.push(block);
        }
    }
    out
}

/// Splits prose at `.`, `!`, `?` followed by whitespace.
pub fn split_sentences(line: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = line.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if (b == b'.' || b == b'!' || b == b'?')
            && i + 1 < bytes.len()
            && bytes[i + 1].is_ascii_whitespace()
        {
            let s = line[start..=i].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = i + 1;
        }
        i += 1;
    }
    let tail = line[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Segments markdown into units: sentences for prose, whole blocks for
/// headings, tables, and image blocks. Table-of-contents sections are removed.
pub fn segment(markdown: &str) -> Vec<Unit> {
    let mut units = Vec::new();
    for block in drop_toc(blocks(markdown)) {
        let first = block[0].trim_start();
        let whole = |kind| Unit {
            text: block.join("\n").trim().to_string(),
            sep: "\n\n".into(),
            kind,
        };
        if is_heading(first) {
            units.push(whole(UnitKind::Heading));
        } else if block.iter().any(|l| l.trim_start().starts_with('|')) {
            units.push(whole(UnitKind::Table));
        } else if first.starts_with("![") {
            units.push(whole(UnitKind::Image));
        } else {
            let n_lines = block.len();
            for (li, line) in block.iter().enumerate() {
                let sentences = split_sentences(line);
                let n = sentences.len();
                for (si, s) in sentences.into_iter().enumerate() {
                    let sep = if si + 1 < n {
                        " "
                    } else if li + 1 < n_lines {
                        "\n"
                    } else {
                        "\n\n"
                    };
                    units.push(Unit {
                        text: s.to_string(),
                        sep: sep.into(),
                        kind: UnitKind::Sentence,
                    });
                }
            }
        }
    }
    units
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub doc_id: String,
    /// Absolute index of the first unit in the document.
    pub start: usize,
    pub units: Vec<Unit>,
    pub length: usize,
    pub overlap: usize,
}

impl Window {
    pub fn end(&self) -> usize {
        self.start + self.units.len()
    }

    pub fn markdown(&self) -> String {
        join_units(&self.units)
    }
}

/// Number of windows `slide_windows` produces for `n` units.
pub fn window_count(n: usize, length: usize, overlap: usize) -> usize {
    if n == 0 {
        0
    } else if n <= length {
        1
    } else {
        (n - overlap).div_ceil(length - overlap)
    }
}

/// Windows of `length` units advancing by `length - overlap`; the last may be
/// shorter. Consecutive windows share exactly `overlap` units.
pub fn slide_windows(
    doc_id: &str,
    units: &[Unit],
    length: usize,
    overlap: usize,
) -> Result<Vec<Window>> {
    if length == 0 || overlap >= length {
        return Err(Error::Config(format!(
            "window overlap ({overlap}) must be smaller than window length ({length})"
        )));
    }
    let n = units.len();
    let stride = length - overlap;
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + length).min(n);
        out.push(Window {
            doc_id: doc_id.to_string(),
            start,
            units: units[start..end].to_vec(),
            length,
            overlap,
        });
        if end == n {
            break;
        }
        start += stride;
    }
    Ok(out)
}
