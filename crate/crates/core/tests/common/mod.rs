#![allow(dead_code)]

use std::path::{Path, PathBuf};

use qaforge_core::config::RunConfig;
use qaforge_core::gateway::ModelExchange;
use qaforge_core::pipeline::{read_jsonl, Artifacts, Pipeline, RunManifest, Stage};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// Configuration for the scripted two-document corpus.
pub fn e2e_config(out: &Path) -> RunConfig {
    RunConfig {
        corpus_dir: fixture("e2e/corpus"),
        out_dir: out.to_path_buf(),
        mock_script: Some(fixture("e2e/script.jsonl")),
        candidates_per_context: 1,
        eps: 0.6,
        min_pts: 3,
        ..RunConfig::default()
    }
}

pub fn run(config: RunConfig) -> (Artifacts, RunManifest) {
    let gateway = config.gateway().expect("gateway");
    let pipeline = Pipeline::new(config, &gateway).expect("valid config");
    pipeline.run(Stage::Score).expect("run succeeds")
}

pub fn transcript(out: &Path, stage: Stage) -> Vec<ModelExchange> {
    read_jsonl(&out.join("transcripts").join(format!("{stage}.jsonl"))).expect("transcript")
}

pub fn all_exchanges(out: &Path) -> Vec<ModelExchange> {
    Stage::ALL.iter().flat_map(|s| transcript(out, *s)).collect()
}

