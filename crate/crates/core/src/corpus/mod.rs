//! Corpus ingestion: visual descriptions, windowing, and chunking.

mod units;

pub use units::{join_units, segment, slide_windows, split_sentences, window_count, Unit, UnitKind, Window};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chunking;
use crate::error::{Error, Result};
use crate::gateway::{template, ChatRequest, EmbeddingVector, Session};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    Text,
    Table,
    TableWithImages,
    Figure,
    StandaloneImage,
}

impl ChunkKind {
    pub fn has_images(self) -> bool {
        matches!(
            self,
            ChunkKind::Figure | ChunkKind::StandaloneImage | ChunkKind::TableWithImages
        )
    }

    /// Parses the chunking protocol's `chunk_type` field.
    pub fn from_protocol(s: &str) -> Option<Self> {
        let norm = s.trim().to_lowercase().replace(['_', '-'], " ");
        match norm.split_whitespace().collect::<Vec<_>>().join(" ").as_str() {
            "text" => Some(ChunkKind::Text),
            "table" => Some(ChunkKind::Table),
            "table with images" | "table with image" => Some(ChunkKind::TableWithImages),
            "figure" => Some(ChunkKind::Figure),
            "standalone image" => Some(ChunkKind::StandaloneImage),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    pub kind: ChunkKind,
    pub content: String,
    pub artifacts: Vec<String>,
    /// All visual descriptions of this chunk's artifacts, one paragraph each.
    #[serde(default)]
    pub description: Option<String>,
    /// Per-artifact descriptions, used for inline enrichment.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub descriptions: BTreeMap<String, String>,
    pub status: ChunkStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
    pub window_span: (usize, usize),
}

impl Chunk {
    /// Kind/artifact consistency and non-empty content.
    pub fn check_taxonomy(&self) -> Result<()> {
        if self.content.trim().is_empty() {
            return Err(Error::protocol("chunk", format!("chunk {} has empty content", self.id)));
        }
        if self.kind.has_images() == self.artifacts.is_empty() {
            return Err(Error::protocol(
                "chunk",
                format!(
                    "chunk {} of kind {:?} has {} artifacts",
                    self.id,
                    self.kind,
                    self.artifacts.len()
                ),
            ));
        }
        Ok(())
    }

    /// Content with each description inlined right after its image reference.
    pub fn enriched_content(&self) -> String {
        enrich(&self.content, &self.descriptions)
    }

    pub fn set_descriptions(&mut self, descriptions: BTreeMap<String, String>) {
        self.description = if descriptions.is_empty() {
            None
        } else {
            Some(descriptions.values().cloned().collect::<Vec<_>>().join("\n\n"))
        };
        self.descriptions = descriptions;
    }
}

/// Inserts `> Description of <path>: ...` after each line referencing an image
/// that has a description.
pub fn enrich(content: &str, descriptions: &BTreeMap<String, String>) -> String {
    if descriptions.is_empty() {
        return content.to_string();
    }
    let mut out = String::with_capacity(content.len() * 2);
    let mut lines = content.lines().peekable();
    while let Some(line) = lines.next() {
        out.push_str(line);
        for path in text::image_refs(line) {
            if let Some(desc) = descriptions.get(&path) {
                out.push_str(&format!("\n\n> Description of {path}: {desc}"));
            }
        }
        if lines.peek().is_some() {
            out.push('\n');
        }
    }
    out
}

/// Derives kind and artifacts from markdown content.
pub fn classify(content: &str) -> (ChunkKind, Vec<String>) {
    let refs = text::image_refs(content);
    let has_table = content.lines().any(|l| l.trim_start().starts_with('|'));
    let kind = if !refs.is_empty() {
        if has_table {
            ChunkKind::TableWithImages
        } else if has_figure_caption(content) {
            ChunkKind::Figure
        } else {
            ChunkKind::StandaloneImage
        }
    } else if has_table {
        ChunkKind::Table
    } else {
        ChunkKind::Text
    };
    (kind, refs)
}

fn has_figure_caption(content: &str) -> bool {
    ["Figure ", "Fig. ", "Fig "].iter().any(|p| {
        content.match_indices(p).any(|(i, m)| {
            content[i + m.len()..]
                .chars()
                .next()
                .is_some_and(|c| c.is_ascii_digit())
        })
    })
}

// ---------------------------------------------------------------------------
// chunking protocol

const FIELD_SEP: &str = "<|#|>";
const RECORD_END: &str = "<chunk_end>";

/// One record of the chunking protocol before it is aligned to source units.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolChunk {
    pub ordinal: String,
    pub kind: ChunkKind,
    pub content: String,
    pub artifacts: Vec<String>,
    pub status: ChunkStatus,
}

fn parse_artifacts(field: &str) -> Vec<String> {
    let t = field.trim().trim_matches(|c| c == '\'' || c == '`' || c == '"');
    if t.is_empty() || t.eq_ignore_ascii_case("none") {
        return Vec::new();
    }
    let mut out: Vec<String> = Vec::new();
    for p in t.split([',', ';']) {
        let p = p.trim().trim_matches(|c| c == '\'' || c == '`' || c == '"' || c == '[' || c == ']');
        if !p.is_empty() && !p.eq_ignore_ascii_case("none") && !out.iter().any(|x| x == p) {
            out.push(p.to_string());
        }
    }
    out
}

pub fn parse_chunk_protocol(raw: &str) -> Result<Vec<ProtocolChunk>> {
    let err = |m: String| Error::protocol("chunking", m);
    let mut out = Vec::new();
    let mut records: Vec<&str> = raw.split(RECORD_END).collect();
    let tail = records.pop().unwrap_or_default();
    if !tail.trim().is_empty() {
        return Err(err(format!(
            "text after the last {RECORD_END}: {:?}",
            tail.trim().chars().take(60).collect::<String>()
        )));
    }
    for (i, record) in records.iter().enumerate() {
        let record = record.trim();
        let mut fields: Vec<&str> = record.split(FIELD_SEP).collect();
        if fields.len() == 6 && fields[5].trim().is_empty() {
            fields.pop();
        }
        if fields.len() != 5 {
            return Err(err(format!(
                "record {} has {} fields, expected 5",
                i + 1,
                fields.len()
            )));
        }
        let kind = ChunkKind::from_protocol(fields[1])
            .ok_or_else(|| err(format!("unknown chunk_type {:?}", fields[1].trim())))?;
        let status = match fields[4].trim().to_uppercase().as_str() {
            "COMPLETE" => ChunkStatus::Complete,
            "INCOMPLETE" => ChunkStatus::Incomplete,
            other => return Err(err(format!("unknown status {other:?}"))),
        };
        let content = fields[2].trim().to_string();
        if content.is_empty() {
            return Err(err(format!("record {} has empty content", i + 1)));
        }
        let mut artifacts = parse_artifacts(fields[3]);
        if kind.has_images() && artifacts.is_empty() {
            artifacts = text::image_refs(&content);
            if artifacts.is_empty() {
                return Err(err(format!("{kind:?} chunk without image artifact")));
            }
        }
        if !kind.has_images() && !artifacts.is_empty() {
            return Err(err(format!("{kind:?} chunk lists artifacts {artifacts:?}")));
        }
        out.push(ProtocolChunk {
            ordinal: fields[0].trim().to_string(),
            kind,
            content,
            artifacts,
            status,
        });
    }
    if out.is_empty() {
        return Err(err("no chunk records".into()));
    }
    Ok(out)
}

/// Maps each protocol chunk onto a contiguous run of the window's units by
/// whitespace-insensitive matching. Units may be skipped between chunks
/// (excluded material) but chunks must appear in document order.
pub fn align_to_units(window: &Window, chunks: &[ProtocolChunk]) -> Result<Vec<Chunk>> {
    let normalized: Vec<String> = window.units.iter().map(|u| text::normalize_ws(&u.text)).collect();
    let mut pointer = 0;
    let mut out = Vec::with_capacity(chunks.len());
    for pc in chunks {
        let target = text::normalize_ws(&pc.content);
        let mut found = None;
        'search: for q in pointer..normalized.len() {
            if !target.starts_with(normalized[q].as_str()) {
                continue;
            }
            let mut acc = String::new();
            for (r, unit) in normalized.iter().enumerate().skip(q) {
                if !acc.is_empty() {
                    acc.push(' ');
                }
                acc.push_str(unit);
                if acc == target {
                    found = Some((q, r + 1));
                    break 'search;
                }
                if !target.starts_with(acc.as_str()) {
                    break;
                }
            }
        }
        let (s, e) = found.ok_or_else(|| {
            Error::protocol(
                "chunking",
                format!(
                    "chunk {} is not verbatim window content: {:?}",
                    pc.ordinal,
                    pc.content.chars().take(60).collect::<String>()
                ),
            )
        })?;
        out.push(Chunk {
            id: String::new(),
            doc_id: window.doc_id.clone(),
            kind: pc.kind,
            content: join_units(&window.units[s..e]),
            artifacts: pc.artifacts.clone(),
            description: None,
            descriptions: BTreeMap::new(),
            status: pc.status,
            embedding: None,
            window_span: (window.start + s, window.start + e),
        });
        pointer = e;
    }
    Ok(out)
}

/// Joins per-window chunk lists into one document-order list.
///
/// Chunks lying entirely inside already-covered units (window overlap) are
/// dropped and partially covered ones are trimmed to the uncovered suffix. An
/// INCOMPLETE chunk absorbs the next chunk that extends coverage; the merged
/// content is rebuilt from the source units, so the overlapping prefix appears
/// once. A trailing INCOMPLETE chunk with nothing after it stays incomplete.
pub fn stitch_incomplete(windows: &[Vec<Chunk>], units: &[Unit]) -> Vec<Chunk> {
    let mut out: Vec<Chunk> = Vec::new();
    let mut covered = 0usize;
    for chunk in windows.iter().flatten() {
        let (start, end) = chunk.window_span;
        if end <= covered {
            continue;
        }
        if let Some(last) = out.last_mut().filter(|c| c.status == ChunkStatus::Incomplete) {
            let span = (last.window_span.0, end);
            last.content = join_units(&units[span.0..span.1]);
            last.window_span = span;
            last.status = chunk.status;
            let (kind, refs) = classify(&last.content);
            last.kind = kind;
            last.artifacts = refs;
        } else {
            let mut c = chunk.clone();
            if start < covered {
                c.window_span = (covered, end);
                c.content = join_units(&units[covered..end]);
                let (kind, refs) = classify(&c.content);
                c.kind = kind;
                c.artifacts = refs;
            }
            out.push(c);
        }
        covered = end;
    }
    out
}

/// Assigns `<doc_id>_<ordinal>` ids in document order.
pub fn assign_ids(doc_id: &str, chunks: &mut [Chunk]) {
    for (i, c) in chunks.iter_mut().enumerate() {
        c.id = format!("{doc_id}_{:04}", i + 1);
        c.doc_id = doc_id.to_string();
    }
}

// ---------------------------------------------------------------------------
// lookup and agent-facing rendering

/// Chunks in corpus order with lookup by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChunkStore {
    chunks: Vec<Chunk>,
    by_id: std::collections::HashMap<String, usize>,
}

impl ChunkStore {
    pub fn new(chunks: Vec<Chunk>) -> Self {
        let by_id = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect();
        ChunkStore { chunks, by_id }
    }

    pub fn get(&self, id: &str) -> Option<&Chunk> {
        self.by_id.get(id).map(|&i| &self.chunks[i])
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Chunks for `ids`, skipping unknown ids.
    pub fn select<'a>(&'a self, ids: &[String]) -> Vec<&'a Chunk> {
        ids.iter().filter_map(|id| self.get(id)).collect()
    }
}

/// Chunks as agents see them: `<CHUNK_START id=...>` markers around the
/// enriched content.
pub fn render_evidence(chunks: &[&Chunk]) -> String {
    let mut out = String::new();
    for c in chunks {
        out.push_str(&format!("<CHUNK_START id={}>\n{}\n<CHUNK_END>\n", c.id, c.enriched_content()));
    }
    out
}

/// Image artifacts of `chunks`, deduplicated, in order.
pub fn evidence_images(chunks: &[&Chunk]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in chunks {
        for a in &c.artifacts {
            if !out.contains(a) {
                out.push(a.clone());
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// visual descriptions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualElement {
    pub path: String,
    pub context_snippet: String,
    pub description: Option<String>,
}

pub const MAX_DESCRIPTION_WORDS: usize = 250;

#[derive(Debug, Clone, PartialEq)]
pub struct DescribeOutcome {
    pub description: String,
    pub reprompted: bool,
    /// Bullets survived the re-prompt or the text was truncated.
    pub warning: Option<String>,
}

fn single_paragraph(text: &str) -> (String, bool) {
    let words: Vec<&str> = text.split_whitespace().collect();
    let truncated = words.len() > MAX_DESCRIPTION_WORDS;
    (
        words[..words.len().min(MAX_DESCRIPTION_WORDS)].join(" "),
        truncated,
    )
}

/// Asks the vision agent for a description of `v`. A bulleted answer gets one
/// re-prompt; if it is still bulleted it is accepted (flattened) with a
/// warning. The result is a single paragraph of at most 250 words.
/// `attachment` is recorded verbatim in the transcript, so it should be
/// corpus-relative.
pub fn describe_visual(
    session: &mut Session<'_>,
    v: &mut VisualElement,
    attachment: &Path,
) -> Result<DescribeOutcome> {
    let req = ChatRequest::new(template::DESCRIBE)
        .var("image", v.path.clone())
        .var("context", v.context_snippet.clone())
        .attach([attachment.to_string_lossy().into_owned()])
        .alias(format!("desc:{}", v.path));
    let mut raw = session.complete(&req)?;
    let mut reprompted = false;
    if text::has_bullets(&raw) {
        raw = session.complete(&req.as_reprompt())?;
        reprompted = true;
    }
    let bulleted = text::has_bullets(&raw);
    let (description, truncated) = single_paragraph(&raw);
    let warning = match (bulleted, truncated) {
        (true, true) => Some("description kept bullets after re-prompt and was truncated".into()),
        (true, false) => Some("description kept bullets after re-prompt".into()),
        (false, true) => Some(format!("description truncated to {MAX_DESCRIPTION_WORDS} words")),
        (false, false) => None,
    };
    if let Some(w) = &warning {
        session.flag(format!("image:{}", v.path), w.clone());
    }
    v.description = Some(description.clone());
    Ok(DescribeOutcome {
        description,
        reprompted,
        warning,
    })
}

// ---------------------------------------------------------------------------
// ingestion

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChunkerKind {
    Agentic,
    Analytic,
    Fixed(usize),
}

impl std::fmt::Display for ChunkerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChunkerKind::Agentic => write!(f, "agentic"),
            ChunkerKind::Analytic => write!(f, "analytic"),
            ChunkerKind::Fixed(n) => write!(f, "fixed:{n}"),
        }
    }
}

impl std::str::FromStr for ChunkerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "agentic" => Ok(ChunkerKind::Agentic),
            "analytic" => Ok(ChunkerKind::Analytic),
            other => match other.strip_prefix("fixed:").map(str::parse::<usize>) {
                Some(Ok(n)) if n > 0 => Ok(ChunkerKind::Fixed(n)),
                _ => Err(Error::Config(format!(
                    "chunker must be agentic, analytic, or fixed:<tokens>; got {other:?}"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub chunker: ChunkerKind,
    pub window_length: usize,
    pub window_overlap: usize,
    pub lambda: f64,
    pub describe: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            chunker: ChunkerKind::Agentic,
            window_length: 64,
            window_overlap: 8,
            lambda: chunking::DEFAULT_LAMBDA,
            describe: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SourceDoc {
    pub doc_id: String,
    /// Directory relative to which the document's image references resolve.
    pub dir: PathBuf,
    /// Image paths are stored relative to the corpus root with this prefix.
    pub rel_dir: PathBuf,
    pub markdown: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub windows: usize,
    pub optimizer_calls: usize,
    pub fallback_windows: usize,
    pub descriptions: usize,
    pub oversized_chunks: usize,
}

fn chunk_from_span(doc_id: &str, units: &[Unit], start: usize, end: usize, status: ChunkStatus) -> Chunk {
    let content = join_units(&units[start..end]);
    let (kind, artifacts) = classify(&content);
    Chunk {
        id: String::new(),
        doc_id: doc_id.to_string(),
        kind,
        content,
        artifacts,
        description: None,
        descriptions: BTreeMap::new(),
        status,
        embedding: None,
        window_span: (start, end),
    }
}

/// Segments are all COMPLETE: units never straddle a window edge, and the
/// overlap with the next window is trimmed during stitching.
fn analytic_window(
    window: &Window,
    unit_vectors: &[Vec<f64>],
    lambda: f64,
    all_units: &[Unit],
) -> Vec<Chunk> {
    let partition = chunking::optimal_partition(&unit_vectors[window.start..window.end()], lambda);
    partition
        .segments()
        .map(|(s, e)| {
            chunk_from_span(
                &window.doc_id,
                all_units,
                window.start + s,
                window.start + e,
                ChunkStatus::Complete,
            )
        })
        .collect()
}

fn unit_embeddings(session: &Session<'_>, units: &[Unit]) -> Result<Vec<Vec<f64>>> {
    let texts: Vec<String> = units.iter().map(|u| u.text.clone()).collect();
    Ok(session
        .gateway()
        .embed(&texts)?
        .into_iter()
        .map(|v| v.values)
        .collect())
}

/// Chunks one document. Image paths in the result are relative to the corpus
/// root. Descriptions are attached when `opts.describe` is set.
pub fn ingest_document(
    session: &mut Session<'_>,
    doc: &SourceDoc,
    opts: &IngestOptions,
    stats: &mut IngestStats,
) -> Result<Vec<Chunk>> {
    let units = segment(&doc.markdown);
    if units.is_empty() {
        session.flag(format!("doc:{}", doc.doc_id), "document has no content units");
        return Ok(Vec::new());
    }
    let mut chunks = match opts.chunker {
        ChunkerKind::Fixed(budget) => {
            let counts: Vec<usize> = units.iter().map(|u| text::token_count(&u.text)).collect();
            let fixed = chunking::fixed_partition(&counts, budget);
            stats.oversized_chunks += fixed.oversized.len();
            for &i in &fixed.oversized {
                session.flag(
                    format!("doc:{}", doc.doc_id),
                    format!("segment {i} is a single unit over the {budget}-token budget"),
                );
            }
            let starts = std::iter::once(0).chain(fixed.boundaries.iter().copied());
            starts
                .zip(fixed.boundaries.iter().copied())
                .map(|(s, e)| chunk_from_span(&doc.doc_id, &units, s, e, ChunkStatus::Complete))
                .collect()
        }
        ChunkerKind::Analytic | ChunkerKind::Agentic => {
            let windows = slide_windows(&doc.doc_id, &units, opts.window_length, opts.window_overlap)?;
            stats.windows += windows.len();
            let mut vectors: Option<Vec<Vec<f64>>> = None;
            let mut per_window = Vec::with_capacity(windows.len());
            for (wi, window) in windows.iter().enumerate() {
                let mut agentic = None;
                if opts.chunker == ChunkerKind::Agentic {
                    let req = ChatRequest::new(template::CHUNK)
                        .var("markdown", window.markdown())
                        .alias(format!("chunk:{}:w{wi}", doc.doc_id));
                    let parsed = session.ask(&req, |raw| {
                        let records = parse_chunk_protocol(raw)?;
                        align_to_units(window, &records)
                    })?;
                    match parsed.result {
                        Ok(c) => agentic = Some(c),
                        Err(e) => {
                            stats.fallback_windows += 1;
                            session.flag(
                                format!("doc:{}:w{wi}", doc.doc_id),
                                format!("chunking protocol failed after re-prompt ({e}); analytic fallback"),
                            );
                        }
                    }
                }
                let window_chunks = match agentic {
                    Some(c) => c,
                    None => {
                        if vectors.is_none() {
                            vectors = Some(unit_embeddings(session, &units)?);
                        }
                        stats.optimizer_calls += 1;
                        let v = vectors.as_deref().expect("embedded above");
                        analytic_window(window, v, opts.lambda, &units)
                    }
                };
                per_window.push(window_chunks);
            }
            stitch_incomplete(&per_window, &units)
        }
    };

    for c in &mut chunks {
        c.artifacts = c
            .artifacts
            .iter()
            .map(|a| corpus_relative(&doc.rel_dir, a))
            .collect();
    }
    if opts.describe {
        describe_chunks(session, doc, &mut chunks, stats)?;
    }
    assign_ids(&doc.doc_id, &mut chunks);
    for c in &chunks {
        if c.status == ChunkStatus::Incomplete {
            session.flag(format!("doc:{}", doc.doc_id), "final chunk left INCOMPLETE");
        }
    }
    Ok(chunks)
}

fn corpus_relative(rel_dir: &Path, artifact: &str) -> String {
    if rel_dir.as_os_str().is_empty() {
        artifact.to_string()
    } else {
        rel_dir.join(artifact).to_string_lossy().into_owned()
    }
}

fn describe_chunks(
    session: &mut Session<'_>,
    doc: &SourceDoc,
    chunks: &mut [Chunk],
    stats: &mut IngestStats,
) -> Result<()> {
    for chunk in chunks.iter_mut() {
        if chunk.artifacts.is_empty() {
            continue;
        }
        let mut descriptions = BTreeMap::new();
        for (reference, artifact) in text::image_refs(&chunk.content)
            .into_iter()
            .map(|r| {
                let rel = corpus_relative(&doc.rel_dir, &r);
                (r, rel)
            })
            .filter(|(_, rel)| chunk.artifacts.contains(rel))
        {
            let file = doc.dir.join(&reference);
            if !file.exists() {
                session.flag(format!("image:{artifact}"), "image file not readable; not described");
                continue;
            }
            let mut v = VisualElement {
                path: artifact.clone(),
                context_snippet: chunk.content.clone(),
                description: None,
            };
            let outcome = describe_visual(session, &mut v, Path::new(&artifact))?;
            stats.descriptions += 1;
            descriptions.insert(reference, outcome.description);
        }
        chunk.set_descriptions(descriptions);
    }
    Ok(())
}
