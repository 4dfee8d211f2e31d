use std::sync::Arc;

use crate::gateway::{mock::WILDCARD, Gateway, HashEmbedder, MockBackend, RetryPolicy, ScriptEntry};

pub const DIM: usize = 64;

pub fn gateway(entries: Vec<(&str, &str, &str)>) -> Gateway {
    let entries = entries.into_iter().map(|(t, m, r)| ScriptEntry {
        template_id: t.to_string(),
        matcher: m.to_string(),
        response: r.to_string(),
    });
    Gateway::new(
        Arc::new(MockBackend::from_entries(entries)),
        Arc::new(HashEmbedder::new(DIM, 7)),
    )
    .with_retry(RetryPolicy::immediate())
}

pub fn wildcard<'a>(template_id: &'a str, response: &'a str) -> (&'a str, &'a str, &'a str) {
    (template_id, WILDCARD, response)
}

use std::collections::BTreeMap;

use crate::corpus::{Chunk, ChunkKind, ChunkStatus, ChunkStore};
use crate::index::VectorIndex;

pub fn text_chunk(id: &str, content: &str) -> Chunk {
    Chunk {
        id: id.into(),
        doc_id: "doc".into(),
        kind: ChunkKind::Text,
        content: content.into(),
        artifacts: vec![],
        description: None,
        descriptions: BTreeMap::new(),
        status: ChunkStatus::Complete,
        embedding: None,
        window_span: (0, 1),
    }
}

/// Embeds `chunks` with `gw` and indexes them.
pub fn indexed(gw: &Gateway, mut chunks: Vec<Chunk>) -> (ChunkStore, VectorIndex) {
    let texts: Vec<String> = chunks.iter().map(|c| c.enriched_content()).collect();
    for (c, v) in chunks.iter_mut().zip(gw.embed(&texts).unwrap()) {
        c.embedding = Some(v);
    }
    let mut index = VectorIndex::new();
    index.upsert(&chunks).unwrap();
    (ChunkStore::new(chunks), index)
}
