//! End-to-end orchestration with per-stage artifacts, resume, and a run
//! manifest with invariant audits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::context::{build_context, SemanticContext};
use crate::corpus::{ingest_document, Chunk, ChunkStore, IngestStats, SourceDoc};
use crate::curator::{curate, CurationReport};
use crate::error::{Error, Result};
use crate::gateway::{transcript_hash, Flag, Gateway, Session};
use crate::index::VectorIndex;
use crate::metrics::{aggregate, majority_topic, score_unit, ScoreOptions, ScoreReport, UnitScore};
use crate::profile::{build_profile, CorpusProfile};
use crate::qa::{difficulty_filter, generate_for_context, CandidateRecord, QaUnit};

pub const CHUNKS: &str = "chunks.jsonl";
pub const INDEX: &str = "index.jsonl";
pub const PROFILE: &str = "profile.json";
pub const CONTEXTS: &str = "contexts.jsonl";
pub const CANDIDATES: &str = "candidates.jsonl";
pub const ACCEPTED: &str = "accepted.jsonl";
pub const DATASET: &str = "dataset.jsonl";
pub const CURATION_REPORT: &str = "curation_report.json";
pub const SCORES: &str = "scores.jsonl";
pub const SCORE_REPORT: &str = "score_report.json";
pub const MANIFEST: &str = "manifest.json";

const EMBED_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Profile,
    Contexts,
    Generate,
    Curate,
    Score,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Profile,
        Stage::Contexts,
        Stage::Generate,
        Stage::Curate,
        Stage::Score,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Profile => "profile",
            Stage::Contexts => "contexts",
            Stage::Generate => "generate",
            Stage::Curate => "curate",
            Stage::Score => "score",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// ---------------------------------------------------------------------------
// persistence

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<usize> {
    let mut bytes = Vec::new();
    for item in items {
        serde_json::to_writer(&mut bytes, item)?;
        bytes.push(b'\n');
    }
    write_atomic(path, &bytes)?;
    Ok(items.len())
}

fn schema(path: &Path, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| schema(path, e.to_string()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| schema(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// Writes one unit per line; returns the record count.
pub fn export_dataset(units: &[QaUnit], path: &Path) -> Result<usize> {
    write_jsonl(path, units)
}

pub fn load_dataset(path: &Path) -> Result<Vec<QaUnit>> {
    read_jsonl(path)
}

// ---------------------------------------------------------------------------
// corpus discovery

fn collect_markdown(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_markdown(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("md")) {
            out.push(path);
        }
    }
    Ok(())
}

/// Every `.md` file under `root`, in path order. Document ids are the
/// root-relative path without extension, with separators replaced by `_`.
pub fn load_corpus(root: &Path) -> Result<Vec<SourceDoc>> {
    let mut files = Vec::new();
    collect_markdown(root, &mut files)?;
    files
        .into_iter()
        .map(|path| {
            let rel = path.strip_prefix(root).unwrap_or(&path).to_path_buf();
            let doc_id = rel
                .with_extension("")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("_");
            Ok(SourceDoc {
                doc_id,
                dir: path.parent().unwrap_or(root).to_path_buf(),
                rel_dir: rel.parent().map(Path::to_path_buf).unwrap_or_default(),
                markdown: std::fs::read_to_string(&path)?,
            })
        })
        .collect()
}

/// Embeds each chunk's enriched content in batches.
pub fn embed_chunks(gateway: &Gateway, chunks: &mut [Chunk]) -> Result<()> {
    for batch in chunks.chunks_mut(EMBED_BATCH) {
        let texts: Vec<String> = batch.iter().map(Chunk::enriched_content).collect();
        for (c, v) in batch.iter_mut().zip(gateway.embed(&texts)?) {
            c.embedding = Some(v);
        }
    }
    Ok(())
}

/// Seed order: chunk ids sorted by a hash keyed on the run seed.
pub fn seed_order(chunk_ids: &[String], seed: u64) -> Vec<String> {
    let mut keyed: Vec<(String, &String)> = chunk_ids
        .iter()
        .map(|id| {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(id.as_bytes());
            (hex::encode(h.finalize()), id)
        })
        .collect();
    keyed.sort();
    keyed.into_iter().map(|(_, id)| id.clone()).collect()
}

// ---------------------------------------------------------------------------
// manifest

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    pub elapsed_ms: u64,
    pub calls: usize,
    pub transcript_sha256: String,
    pub flags: Vec<Flag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest_stats: Option<IngestStats>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub documents: usize,
    pub chunks: usize,
    pub contexts: BTreeMap<String, usize>,
    pub candidates: usize,
    pub verified: usize,
    pub after_difficulty: usize,
    pub merged_subclusters: usize,
    #[serde(rename = "final")]
    pub final_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub backend: String,
    pub embedder: String,
    pub completed: Vec<Stage>,
    pub resumed: Vec<Stage>,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub counts: Counts,
    pub stages: BTreeMap<String, StageRecord>,
    pub score: Option<ScoreReport>,
    pub audits: Vec<Audit>,
}

impl RunManifest {
    pub fn audits_pass(&self) -> bool {
        self.audits.iter().all(|a| a.passed)
    }

    pub fn flags(&self) -> impl Iterator<Item = &Flag> {
        self.stages.values().flat_map(|s| s.flags.iter())
    }
}

// ---------------------------------------------------------------------------
// stages

/// In-memory artifacts of a run.
#[derive(Default)]
pub struct Artifacts {
    pub documents: usize,
    pub chunks: Vec<Chunk>,
    pub profile: Option<CorpusProfile>,
    pub contexts: Vec<SemanticContext>,
    pub candidates: Vec<CandidateRecord>,
    pub accepted: Vec<QaUnit>,
    pub dataset: Vec<QaUnit>,
    pub curation: Option<CurationReport>,
    pub scores: Vec<UnitScore>,
    pub score: Option<ScoreReport>,
}

pub struct Pipeline<'g> {
    pub config: RunConfig,
    gateway: &'g Gateway,
    out: PathBuf,
    hash: String,
    pool: rayon::ThreadPool,
}

/// Runs `task` for every item on the pool, each with its own session, and
/// merges sessions back in input order.
fn fan_out<'g, I, T, F>(
    pool: &rayon::ThreadPool,
    gateway: &'g Gateway,
    session: &mut Session<'g>,
    items: &[I],
    task: F,
) -> Result<Vec<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&mut Session<'g>, &I) -> Result<T> + Sync,
{
    let results: Vec<(Result<T>, Session<'g>)> = pool.install(|| {
        items
            .par_iter()
            .map(|item| {
                let mut s = Session::new(gateway);
                let r = task(&mut s, item);
                (r, s)
            })
            .collect()
    });
    let mut out = Vec::with_capacity(results.len());
    for (r, s) in results {
        session.absorb(s);
        out.push(r?);
    }
    Ok(out)
}

impl<'g> Pipeline<'g> {
    pub fn new(config: RunConfig, gateway: &'g Gateway) -> Result<Self> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Pipeline {
            hash: config.hash(),
            out: config.out_dir.clone(),
            config,
            gateway,
            pool,
        })
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn stage_key(&self, stage: Stage) -> String {
        let mut h = Sha256::new();
        h.update(self.hash.as_bytes());
        h.update(stage.name().as_bytes());
        hex::encode(h.finalize())
    }

    fn record_path(&self, stage: Stage) -> PathBuf {
        self.out.join("stages").join(format!("{stage}.json"))
    }

    fn cached(&self, stage: Stage) -> Option<StageRecord> {
        let record: StageRecord = read_json(&self.record_path(stage)).ok()?;
        (record.key == self.stage_key(stage)).then_some(record)
    }

    /// Runs every stage up to and including `until`, reusing stage outputs
    /// whose key matches the current configuration. The manifest is written
    /// whether or not a stage fails.
    pub fn run(&self, until: Stage) -> Result<(Artifacts, RunManifest)> {
        std::fs::create_dir_all(&self.out)?;
        let mut manifest = RunManifest {
            run_id: self.hash[..12].to_string(),
            config_hash: self.hash.clone(),
            backend: self.gateway.backend_id().to_string(),
            embedder: self.gateway.embedder_id().to_string(),
            ..RunManifest::default()
        };
        let mut art = Artifacts::default();
        let mut upstream_rerun = false;
        for stage in Stage::ALL.into_iter().filter(|s| *s <= until) {
            let outcome = match self.cached(stage).filter(|_| !upstream_rerun) {
                Some(record) => self.load(stage, &mut art).map(|_| {
                    manifest.resumed.push(stage);
                    record
                }),
                None => {
                    upstream_rerun = true;
                    self.execute(stage, &mut art)
                }
            };
            match outcome {
                Ok(record) => {
                    manifest.stages.insert(stage.name().to_string(), record);
                    manifest.completed.push(stage);
                }
                Err(e) => {
                    manifest.failed_stage = Some(stage);
                    manifest.error = Some(e.to_string());
                    self.finish(&mut manifest, &art)?;
                    return Err(e);
                }
            }
        }
        self.finish(&mut manifest, &art)?;
        Ok((art, manifest))
    }

    fn finish(&self, manifest: &mut RunManifest, art: &Artifacts) -> Result<()> {
        manifest.counts = counts(art);
        manifest.score = art.score.clone();
        manifest.audits = audit(&self.config, art, manifest);
        write_json(&self.out_path(MANIFEST), manifest)
    }

    fn execute(&self, stage: Stage, art: &mut Artifacts) -> Result<StageRecord> {
        let started = Instant::now();
        let mut session = Session::new(self.gateway);
        let mut ingest_stats = None;
        match stage {
            Stage::Ingest => ingest_stats = Some(self.ingest(&mut session, art)?),
            Stage::Profile => self.profile(&mut session, art)?,
            Stage::Contexts => self.contexts(&mut session, art)?,
            Stage::Generate => self.generate(&mut session, art)?,
            Stage::Curate => self.curate(&mut session, art)?,
            Stage::Score => self.score(&mut session, art)?,
        }
        write_jsonl(
            &self.out.join("transcripts").join(format!("{stage}.jsonl")),
            &session.exchanges,
        )?;
        let record = StageRecord {
            key: self.stage_key(stage),
            elapsed_ms: started.elapsed().as_millis() as u64,
            calls: session.exchanges.len(),
            transcript_sha256: transcript_hash(&session.exchanges),
            flags: session.flags,
            ingest_stats,
        };
        write_json(&self.record_path(stage), &record)?;
        Ok(record)
    }

    fn load(&self, stage: Stage, art: &mut Artifacts) -> Result<()> {
        match stage {
            Stage::Ingest => {
                art.chunks = read_jsonl(&self.out_path(CHUNKS))?;
                art.documents = art.chunks.iter().map(|c| &c.doc_id).collect::<BTreeSet<_>>().len();
            }
            Stage::Profile => art.profile = Some(read_json(&self.out_path(PROFILE))?),
            Stage::Contexts => art.contexts = read_jsonl(&self.out_path(CONTEXTS))?,
            Stage::Generate => {
                art.candidates = read_jsonl(&self.out_path(CANDIDATES))?;
                art.accepted = read_jsonl(&self.out_path(ACCEPTED))?;
            }
            Stage::Curate => {
                art.dataset = load_dataset(&self.out_path(DATASET))?;
                art.curation = Some(read_json(&self.out_path(CURATION_REPORT))?);
            }
            Stage::Score => {
                art.scores = read_jsonl(&self.out_path(SCORES))?;
                let path = self.out_path(SCORE_REPORT);
                art.score = if path.exists() { Some(read_json(&path)?) } else { None };
            }
        }
        Ok(())
    }

    fn ingest(&self, session: &mut Session<'g>, art: &mut Artifacts) -> Result<IngestStats> {
        let docs = load_corpus(&self.config.corpus_dir)?;
        if docs.is_empty() {
            return Err(Error::EmptyInput(format!(
                "no markdown documents under {}",
                self.config.corpus_dir.display()
            )));
        }
        let opts = self.config.ingest_options()?;
        let per_doc = fan_out(&self.pool, self.gateway, session, &docs, |s, doc| {
            let mut stats = IngestStats::default();
            let chunks = ingest_document(s, doc, &opts, &mut stats)?;
            Ok((chunks, stats))
        })?;
        let mut stats = IngestStats::default();
        let mut chunks = Vec::new();
        for (c, s) in per_doc {
            chunks.extend(c);
            stats.windows += s.windows;
            stats.optimizer_calls += s.optimizer_calls;
            stats.fallback_windows += s.fallback_windows;
            stats.descriptions += s.descriptions;
            stats.oversized_chunks += s.oversized_chunks;
        }
        embed_chunks(self.gateway, &mut chunks)?;
        let mut index = VectorIndex::new();
        index.upsert(&chunks)?;
        write_jsonl(&self.out_path(CHUNKS), &chunks)?;
        let tmp = self.out_path("index.jsonl.tmp");
        index.write_snapshot(&tmp)?;
        std::fs::rename(&tmp, self.out_path(INDEX))?;
        art.documents = docs.len();
        art.chunks = chunks;
        Ok(stats)
    }

    fn profile(&self, session: &mut Session<'g>, art: &mut Artifacts) -> Result<()> {
        let profile = build_profile(session, &art.chunks, &self.config.profile_options())?;
        write_json(&self.out_path(PROFILE), &profile)?;
        art.profile = Some(profile);
        Ok(())
    }

    fn store_and_index(&self, art: &Artifacts) -> Result<(ChunkStore, VectorIndex)> {
        let mut index = VectorIndex::new();
        index.upsert(&art.chunks)?;
        Ok((ChunkStore::new(art.chunks.clone()), index))
    }

    fn profile_ref<'a>(&self, art: &'a Artifacts) -> Result<&'a CorpusProfile> {
        art.profile
            .as_ref()
            .ok_or_else(|| Error::EmptyInput("profile stage has not run".into()))
    }

    fn contexts(&self, session: &mut Session<'g>, art: &mut Artifacts) -> Result<()> {
        let (store, index) = self.store_and_index(art)?;
        let profile = self.profile_ref(art)?;
        let ids: Vec<String> = art.chunks.iter().map(|c| c.id.clone()).collect();
        let mut seeds = seed_order(&ids, self.config.seed);
        if let Some(cap) = self.config.target_count {
            seeds.truncate(cap);
        }
        let opts = self.config.context_options();
        let contexts = fan_out(&self.pool, self.gateway, session, &seeds, |s, seed| {
            build_context(s, &store, &index, profile, seed, &opts)
        })?;
        write_jsonl(&self.out_path(CONTEXTS), &contexts)?;
        art.contexts = contexts;
        Ok(())
    }

    fn generate(&self, session: &mut Session<'g>, art: &mut Artifacts) -> Result<()> {
        let store = ChunkStore::new(art.chunks.clone());
        let profile = self.profile_ref(art)?;
        let opts = self.config.qa_options();
        let outputs = fan_out(&self.pool, self.gateway, session, &art.contexts, |s, ctx| {
            generate_for_context(s, &store, ctx, profile, &opts)
        })?;
        let mut candidates = Vec::new();
        let mut accepted = Vec::new();
        for o in outputs {
            candidates.extend(o.candidates);
            accepted.extend(o.accepted);
        }
        let mut accepted = difficulty_filter(accepted, opts.difficulty_min);
        if let Some(cap) = self.config.target_count {
            accepted.truncate(cap);
        }
        write_jsonl(&self.out_path(CANDIDATES), &candidates)?;
        write_jsonl(&self.out_path(ACCEPTED), &accepted)?;
        art.candidates = candidates;
        art.accepted = accepted;
        Ok(())
    }

    fn curate(&self, session: &mut Session<'g>, art: &mut Artifacts) -> Result<()> {
        let profile = self.profile_ref(art)?;
        let (mut dataset, report) =
            curate(session, art.accepted.clone(), profile, &self.config.curator_options())?;
        let topic_of = profile.topic_of();
        for u in &mut dataset {
            u.topic_id = Some(majority_topic(&u.context_ids, &topic_of));
        }
        export_dataset(&dataset, &self.out_path(DATASET))?;
        write_json(&self.out_path(CURATION_REPORT), &report)?;
        art.dataset = dataset;
        art.curation = Some(report);
        Ok(())
    }

    fn score(&self, session: &mut Session<'g>, art: &mut Artifacts) -> Result<()> {
        let store = ChunkStore::new(art.chunks.clone());
        let profile = self.profile_ref(art)?;
        let opts = ScoreOptions {
            judge: self.config.judge,
            grounding: true,
        };
        let (scores, report) =
            score_units(&self.pool, self.gateway, session, &art.dataset, &store, profile, &opts)?;
        write_jsonl(&self.out_path(SCORES), &scores)?;
        let report_path = self.out_path(SCORE_REPORT);
        match &report {
            Some(r) => write_json(&report_path, r)?,
            None if report_path.exists() => std::fs::remove_file(&report_path)?,
            None => {}
        }
        art.scores = scores;
        art.score = report;
        Ok(())
    }
}

fn score_units<'g>(
    pool: &rayon::ThreadPool,
    gateway: &'g Gateway,
    session: &mut Session<'g>,
    units: &[QaUnit],
    store: &ChunkStore,
    profile: &CorpusProfile,
    opts: &ScoreOptions,
) -> Result<(Vec<UnitScore>, Option<ScoreReport>)> {
    let topic_of = profile.topic_of();
    let scores = fan_out(pool, gateway, session, units, |s, u| {
        score_unit(s, u, store, profile, &topic_of, opts)
    })?;
    if scores.is_empty() {
        session.flag("score", "dataset is empty; no report");
        return Ok((scores, None));
    }
    let report = aggregate(&scores, profile)?;
    Ok((scores, Some(report)))
}

/// Scores a dataset file against a profile and chunk file.
pub fn score_files(
    gateway: &Gateway,
    dataset: &Path,
    profile: &Path,
    chunks: &Path,
    opts: &ScoreOptions,
) -> Result<(Vec<UnitScore>, Option<ScoreReport>, Vec<Flag>)> {
    let units = load_dataset(dataset)?;
    let profile: CorpusProfile = read_json(profile)?;
    let store = ChunkStore::new(read_jsonl(chunks)?);
    let pool = rayon::ThreadPoolBuilder::new()
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut session = Session::new(gateway);
    let (scores, report) = score_units(&pool, gateway, &mut session, &units, &store, &profile, opts)?;
    Ok((scores, report, session.flags))
}

// ---------------------------------------------------------------------------
// counts and audits

fn counts(art: &Artifacts) -> Counts {
    let mut contexts = BTreeMap::new();
    for c in &art.contexts {
        let status = serde_json::to_value(c.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        *contexts.entry(status).or_insert(0) += 1;
    }
    Counts {
        documents: art.documents,
        chunks: art.chunks.len(),
        contexts,
        candidates: art.candidates.len(),
        verified: art.candidates.iter().filter(|c| c.accepted).count(),
        after_difficulty: art.accepted.len(),
        merged_subclusters: art.curation.as_ref().map_or(0, |r| r.merged_subclusters),
        final_units: art.dataset.len(),
    }
}

fn check(name: &str, failures: Vec<String>) -> Audit {
    Audit {
        name: name.to_string(),
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            "ok".to_string()
        } else {
            failures.join("; ")
        },
    }
}

/// Invariant checks over whatever artifacts the run produced.
pub fn audit(config: &RunConfig, art: &Artifacts, manifest: &RunManifest) -> Vec<Audit> {
    let c = &manifest.counts;
    let mut audits = Vec::new();

    let mut funnel = Vec::new();
    if c.verified > c.candidates {
        funnel.push(format!("verified {} > candidates {}", c.verified, c.candidates));
    }
    if c.final_units > c.verified {
        funnel.push(format!("final {} > verified {}", c.final_units, c.verified));
    }
    if config.no_verifier && c.verified != c.candidates {
        funnel.push("verifier bypassed but counts differ".to_string());
    }
    audits.push(check("funnel_monotone", funnel));

    let gate = art
        .accepted
        .iter()
        .filter(|u| match &u.verdict {
            Some(v) => !v.accepted(),
            None => !config.no_verifier,
        })
        .map(|u| format!("{} passed without an accepting verdict", u.id))
        .collect();
    audits.push(check("verifier_gate", gate));

    let mut closure = Vec::new();
    for u in art.accepted.iter().chain(&art.dataset) {
        for d in &u.decomposition {
            if !u.context_ids.contains(&d.chunk_id) {
                closure.push(format!("{} cites {} outside its context", u.id, d.chunk_id));
            }
        }
    }
    audits.push(check("decomposition_closure", closure));

    let mut hops = Vec::new();
    for u in &art.dataset {
        if u.hops == 0 {
            hops.push(format!("{} has zero hops", u.id));
        }
        if config.no_multihop && u.hops != 1 {
            hops.push(format!("{} has {} hops without multihop", u.id, u.hops));
        }
    }
    if config.no_multihop {
        for ctx in &art.contexts {
            if ctx.members != [ctx.seed_id.clone()] {
                hops.push(format!("context of {} has extra members", ctx.seed_id));
            }
        }
    }
    audits.push(check("hop_consistency", hops));

    let mut ids = BTreeSet::new();
    let dupes = art
        .dataset
        .iter()
        .filter(|u| !ids.insert(&u.id))
        .map(|u| format!("duplicate id {}", u.id))
        .collect();
    audits.push(check("unique_ids", dupes));
    audits
}
