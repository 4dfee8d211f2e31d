//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use qaforge_core::chunking::{brute_force_partition, optimal_partition};
use qaforge_core::config::RunConfig;
use qaforge_core::context::{
    admit, assess_completeness, build_context, parse_admission, parse_completeness, AdmissionVerdict,
    ContextOptions, ContextStatus, SemanticContext,
};
use qaforge_core::corpus::{parse_chunk_protocol, Chunk, ChunkKind, ChunkStatus, ChunkStore};
use qaforge_core::curator::{
    answer_subclusters, curate, parse_pairs, question_communities, refine, unit_similarity,
    AnswerSubcluster, CuratorOptions, Decision, EmbeddedUnit,
};
use qaforge_core::gateway::mock::WILDCARD;
use qaforge_core::gateway::{
    template, transcript_hash, BackendCall, BackendError, BackendReply, ChatBackend, ChatRequest, Gateway,
    HashEmbedder, MockBackend, RetryPolicy, ScriptEntry, Session,
};
use qaforge_core::index::{parse_rerank, rerank, RankedCandidates, RerankItem, Stage as RankStage, VectorIndex};
use qaforge_core::metrics::{jsd, TopicDistribution};
use qaforge_core::pipeline::{Stage, DATASET};
use qaforge_core::profile::{
    mmr_select, parse_domain_persona, Candidate, CorpusProfile, GENERIC_DOMAIN, GENERIC_PERSONA,
};
use qaforge_core::qa::{
    generate_for_context, parse_generation, parse_verdict, DecompositionEntry, QaOptions, QaUnit, Side,
};
use qaforge_core::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("chunker oracle equivalence", chunker_oracle),
        ("jsd suite", jsd_suite),
        ("protocol golden suite", protocol_goldens),
        ("scripted end-to-end golden", scripted_end_to_end),
        ("verifier gate", verifier_gate),
        ("context loop", context_loop),
        ("curator refinement", curator_refinement),
        ("ablation structure", ablation_structure),
        ("mmr", mmr),
        ("determinism audit", determinism_audit),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let ms = started.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{ms} ms]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{ms} ms]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn scripted(entries: Vec<(&str, &str, &str)>) -> Gateway {
    let entries = entries.into_iter().map(|(t, m, r)| ScriptEntry {
        template_id: t.into(),
        matcher: m.into(),
        response: r.into(),
    });
    Gateway::new(
        Arc::new(MockBackend::from_entries(entries)),
        Arc::new(HashEmbedder::new(64, 7)),
    )
    .with_retry(RetryPolicy::immediate())
}

fn chunk(id: &str, content: &str) -> Chunk {
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

fn indexed(gw: &Gateway, mut chunks: Vec<Chunk>) -> (ChunkStore, VectorIndex) {
    let texts: Vec<String> = chunks.iter().map(Chunk::enriched_content).collect();
    for (c, v) in chunks.iter_mut().zip(gw.embed(&texts).unwrap()) {
        c.embedding = Some(v);
    }
    let mut index = VectorIndex::new();
    index.upsert(&chunks).unwrap();
    (ChunkStore::new(chunks), index)
}

fn unit_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

// 1

fn chunker_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    for case in 0..200 {
        let n = rng.gen_range(1..=12);
        let topics: Vec<Vec<f64>> = (0..rng.gen_range(1..=4)).map(|_| unit_vec(&mut rng, 8)).collect();
        let mut current = 0;
        let units: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    current = rng.gen_range(0..topics.len());
                }
                let noise = unit_vec(&mut rng, 8);
                let v: Vec<f64> = topics[current].iter().zip(&noise).map(|(t, e)| t + 0.3 * e).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let lambda = if case % 2 == 0 { 0.3 } else { rng.gen_range(0.0..1.0) };
        let fast = optimal_partition(&units, lambda);
        let slow = brute_force_partition(&units, lambda).map_err(|e| e.to_string())?;
        ensure!(fast.cost == slow.cost, "case {case}: cost {} vs {}", fast.cost, slow.cost);
        ensure!(
            fast.boundaries == slow.boundaries,
            "case {case}: boundaries {:?} vs {:?}",
            fast.boundaries,
            slow.boundaries
        );
    }
    let elapsed = started.elapsed();
    ensure!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    Ok(format!("200 windows match the exhaustive oracle in {elapsed:.2?}"))
}

// 2

fn dist(values: &[f64]) -> TopicDistribution {
    TopicDistribution {
        buckets: values.iter().enumerate().map(|(i, &v)| (i as i64, v)).collect(),
    }
}

fn jsd_suite() -> Outcome {
    let j = |p: &[f64], q: &[f64]| jsd(&dist(p), &dist(q)).unwrap();
    let p = [0.2, 0.3, 0.5];
    ensure!(j(&p, &p).abs() <= 1e-12, "jsd(P,P) = {}", j(&p, &p));
    ensure!((j(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() <= 1e-12, "disjoint case");
    let half = j(&[0.5, 0.5], &[1.0, 0.0]);
    ensure!((half - 0.31128).abs() <= 1e-4, "half case {half}");

    let mut rng = ChaCha8Rng::seed_from_u64(0x15D);
    for case in 0..1000 {
        let k = rng.gen_range(1..=8);
        let mut draw = || {
            let raw: Vec<f64> = (0..k)
                .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.0) })
                .collect();
            let total: f64 = raw.iter().sum();
            if total == 0.0 {
                let mut v = vec![0.0; k];
                v[0] = 1.0;
                v
            } else {
                raw.into_iter().map(|x| x / total).collect()
            }
        };
        let (p, q) = (draw(), draw());
        let (a, b) = (j(&p, &q), j(&q, &p));
        let kl = |x: &[f64], m: &[f64]| -> f64 {
            x.iter().zip(m).filter(|(xi, _)| **xi > 0.0).map(|(xi, mi)| xi * (xi / mi).ln()).sum()
        };
        let m: Vec<f64> = p.iter().zip(&q).map(|(x, y)| (x + y) / 2.0).collect();
        let oracle = (0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)) / std::f64::consts::LN_2;
        ensure!((a - oracle).abs() <= 1e-12, "case {case}: {a} vs oracle {oracle}");
        ensure!((a - b).abs() <= 1e-12, "case {case}: asymmetric {a} vs {b}");
        ensure!((0.0..=1.0).contains(&a), "case {case}: out of bounds {a}");
    }
    let mismatch = jsd(&dist(&[1.0]), &dist(&[0.5, 0.5]));
    ensure!(matches!(mismatch, Err(Error::BucketMismatch)), "bucket mismatch not rejected");
    Ok(format!("hand values hold, jsd((.5,.5),(1,0)) = {half:.5}, 1000 random pairs symmetric and bounded"))
}

// 3

const QA_GOLDEN: &str = "<|#|>ANALYSIS<|#|>
Chunk Count: 2
Keywords per Chunk: <Chunk 1: [GTR, truck], Chunk 2: [Annex A]>
Related Keywords: <[GTR] relates to [Annex A] via definition>
<|#|>QA_GENERATION<|#|>
Question: Under the Global Truck Regulation defined in Annex A, what speed limit applies to trucks?
Answer: 80 km/h.
Relevance: 8
Difficulty: 6
<|#|>DECOMPOSITION<|#|>
Question Source: \"Global Truck Regulation\" -> derived from Chunk c7
Answer Source: \"80 km/h\" -> derived from Chunk c1
<|#|>END<|#|>";

struct Protocol {
    name: &'static str,
    template_id: &'static str,
    parse: fn(&str) -> Result<(), Error>,
    goldens: Vec<String>,
    malformed: Vec<String>,
}

fn members() -> Vec<String> {
    vec!["c1".into(), "c7".into()]
}

fn rerank_ids() -> Vec<String> {
    vec!["c1".into(), "c2".into(), "c3".into()]
}

fn protocols() -> Vec<Protocol> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let pair = "<|#|>START<|#|>Question<|#|>Q1<|#|>Answer<|#|>A1<|#|>END<|#|>";
    let pairs = "<|#|>START<|#|>\nQuestion<|#|>Q1<|#|>Answer<|#|>A1\n<|#|>NEXT<|#|>\nQuestion<|#|>Q2<|#|>Answer<|#|>A2\n<|#|>END<|#|>";
    let lead = "Sure, here you go.\n<|#|>START<|#|>Question<|#|>Q<|#|>Answer<|#|>A<|#|>END<|#|>\nDone.";
    let pairs_bad = s(&[
        "<|#|>START<|#|>Question<|#|>Q<|#|>Answer<|#|>A",
        "<|#|>START<|#|>Question<|#|>Q<|#|>END<|#|>",
        "Question: Q\nAnswer: A",
    ]);
    vec![
        Protocol {
            name: "chunking records",
            template_id: template::CHUNK,
            parse: |r| parse_chunk_protocol(r).map(drop),
            goldens: s(&[
                "1<|#|>text<|#|>Alpha beta.<|#|>None<|#|>COMPLETE<|#|><chunk_end>",
                "2<|#|>figure<|#|>![f](a.png) Figure 3 shows the trend.<|#|>a.png<|#|>COMPLETE<|#|><chunk_end>",
                "1<|#|>table with images<|#|>| ![x](x.png) | 1 |<|#|>x.png<|#|>COMPLETE<|#|><chunk_end>\n2<|#|>standalone image<|#|>![y](y.png)<|#|>'None'<|#|>incomplete<|#|><chunk_end>",
            ]),
            malformed: s(&[
                "1<|#|>poem<|#|>Alpha.<|#|>None<|#|>COMPLETE<|#|><chunk_end>",
                "1<|#|>text<|#|>Alpha.<|#|>COMPLETE<|#|><chunk_end>",
                "1<|#|>text<|#|>Alpha.<|#|>None<|#|>DONE<|#|><chunk_end>",
            ]),
        },
        Protocol {
            name: "completeness",
            template_id: template::COMPLETENESS,
            parse: |r| parse_completeness(r).map(drop),
            goldens: s(&[
                "Status: COMPLETE, Query: None, Explanation: self-contained",
                "Status: INCOMPLETE, Query: definition of GTR | Figure 2 content, Explanation: GTR undefined",
                "Status: INCOMPLETE, Query: a | a |  b ,Explanation: x",
            ]),
            malformed: s(&[
                "Status: MAYBE, Query: None, Explanation: ?",
                "Status: INCOMPLETE, Query: None, Explanation: nothing to ask",
                "looks fine to me",
            ]),
        },
        Protocol {
            name: "admission",
            template_id: template::ADDITION,
            parse: |r| parse_admission(r).map(drop),
            goldens: s(&[
                "Status: EXPLANATORY\nExplanation: supplies Figure 2",
                "Status: RELATED\nExplanation: same subsystem",
                "Status: <UNRELATED>",
            ]),
            malformed: s(&["Status: MAYBE", "EXPLANATORY", ""]),
        },
        Protocol {
            name: "qa generation",
            template_id: template::QA_GENERATION,
            parse: |r| parse_generation(r, &members()).map(drop),
            goldens: vec![
                QA_GOLDEN.to_string(),
                QA_GOLDEN.replace("Chunk c7", "Chunk 2").replace("Chunk c1", "Chunk 1, Chunk 2"),
                QA_GOLDEN.replace("Relevance: 8", "Relevance: 8/10"),
            ],
            malformed: vec![
                QA_GOLDEN.replace("<|#|>END<|#|>", ""),
                QA_GOLDEN.replace("Chunk c1", "Chunk c99"),
                QA_GOLDEN.replace("Difficulty: 6", "Difficulty: 14"),
            ],
        },
        Protocol {
            name: "verification",
            template_id: template::VERIFY,
            parse: |r| parse_verdict(r).map(drop),
            goldens: s(&[
                "QUESTION_CORRECT\nANSWER_CORRECT\nREQUIRES_CONTENT\nJustification: grounded",
                "QUESTION_CORRECT\nANSWER_INCORRECT\nREQUIRES_CONTENT",
                "QUESTION_INCORRECT\nANSWER_CORRECT\nCAN_ANSWER_WITHOUT_CONTENT",
            ]),
            malformed: s(&[
                "QUESTION_CORRECT\nREQUIRES_CONTENT",
                "QUESTION_CORRECT QUESTION_INCORRECT ANSWER_CORRECT REQUIRES_CONTENT",
                "all good",
            ]),
        },
        Protocol {
            name: "rerank",
            template_id: template::RERANK,
            parse: |r| parse_rerank(r, &rerank_ids()).map(drop),
            goldens: s(&[
                "<Rank 1>Chunk c2\n<Rank 2>Chunk c1\n<Rank 3>Chunk c3",
                "<Rank 3>Chunk c3\n<Rank 1>Chunk c1\n<Rank 2>Chunk c2",
                "Ranking:\n  <Rank 1>Chunk c3\n  <Rank 2>Chunk c2\n  <Rank 3>Chunk c1\n",
            ]),
            malformed: s(&[
                "<Rank 1>Chunk c2\n<Rank 2>Chunk c1",
                "<Rank 1>Chunk c2\n<Rank 2>Chunk c2\n<Rank 3>Chunk c3",
                "<Rank 1>Chunk c9\n<Rank 2>Chunk c1\n<Rank 3>Chunk c2",
            ]),
        },
        Protocol {
            name: "domain/persona",
            template_id: template::DOMAIN_PERSONA,
            parse: |r| parse_domain_persona(r).map(drop),
            goldens: s(&[
                "<|#|>START<|#|>\n<|#|>Domain: Corporate Financial Reporting\n<|#|>Expert Role: Financial Analyst\n<|#|>END<|#|>",
                "<|#|>START<|#|>Domain: Transport regulation\nExpert Role: Compliance officer<|#|>END<|#|>",
                "Preamble.\n<|#|>START<|#|>\nExpert Role: Reliability engineer\nDomain: Power electronics\n<|#|>END<|#|>",
            ]),
            malformed: s(&[
                "<|#|>START<|#|>\nDomain: Finance\n<|#|>END<|#|>",
                "Domain: Finance\nExpert Role: Analyst",
                "<|#|>START<|#|>\nDomain:\nExpert Role: Analyst\n<|#|>END<|#|>",
            ]),
        },
        Protocol {
            name: "rank",
            template_id: template::RANK,
            parse: |r| parse_pairs(r, "deduplication_rank").map(drop),
            goldens: vec![pair.into(), pairs.into(), lead.into()],
            malformed: pairs_bad.clone(),
        },
        Protocol {
            name: "merge",
            template_id: template::MERGE,
            parse: |r| parse_pairs(r, "deduplication_merge").map(drop),
            goldens: vec![pair.into(), pairs.into(), lead.into()],
            malformed: pairs_bad,
        },
    ]
}

/// A request for `template_id` with every placeholder filled.
fn filled(template_id: &str) -> ChatRequest {
    let t = template::lookup(template_id).expect("known template");
    template::placeholders(t.text)
        .iter()
        .fold(ChatRequest::new(template_id), |req, name| req.var(name, "x"))
        .alias("probe")
}

fn profile() -> CorpusProfile {
    CorpusProfile::generic(vec![])
}

fn declared_fallbacks() -> Outcome {
    let opts = ContextOptions::default();
    let c1 = chunk("c1", "The GTR limits truck speed.");

    let gw = scripted(vec![(template::COMPLETENESS, WILDCARD, "Status: MAYBE")]);
    let mut s = Session::new(&gw);
    let a = assess_completeness(&mut s, &[&c1], &profile(), &opts, "comp").map_err(|e| e.to_string())?;
    ensure!(a.complete && s.exchanges.len() == 2, "completeness fallback");

    let gw = scripted(vec![(template::ADDITION, WILDCARD, "Status: MAYBE")]);
    let mut s = Session::new(&gw);
    let v = admit(&mut s, &[&c1], "q", &c1, &profile(), &opts, "add").map_err(|e| e.to_string())?;
    ensure!(v == AdmissionVerdict::Unrelated && s.exchanges.len() == 2, "admission fallback");

    let gw = scripted(vec![(template::RERANK, WILDCARD, "nonsense")]);
    let mut s = Session::new(&gw);
    let retrieved = RankedCandidates {
        query: "q".into(),
        items: vec![("c2".into(), 0.9), ("c1".into(), 0.5)],
        stage: RankStage::Retrieved,
    };
    let items: Vec<RerankItem> = ["c2", "c1"]
        .iter()
        .map(|id| RerankItem { id: id.to_string(), content: "x".into(), images: vec![] })
        .collect();
    let out = rerank(&mut s, "q", &retrieved, &items, 5, "rr").map_err(|e| e.to_string())?;
    ensure!(out.ids() == ["c2", "c1"] && s.exchanges.len() == 2, "rerank fallback");

    let store = ChunkStore::new(vec![c1.clone()]);
    let ctx = SemanticContext {
        seed_id: "c1".into(),
        members: vec!["c1".into()],
        status: ContextStatus::Complete,
        iterations: 0,
        trace: vec![],
    };
    let qa_opts = QaOptions { candidates_per_context: 1, ..QaOptions::default() };
    let gw = scripted(vec![(template::QA_GENERATION, WILDCARD, "no markers")]);
    let mut s = Session::new(&gw);
    let out = generate_for_context(&mut s, &store, &ctx, &profile(), &qa_opts).map_err(|e| e.to_string())?;
    ensure!(out.candidates.is_empty() && s.exchanges.len() == 2, "generation fallback");

    let single = QA_GOLDEN.replace("Chunk c7", "Chunk c1");
    let gw = scripted(vec![
        (template::QA_GENERATION, WILDCARD, &single),
        (template::VERIFY, WILDCARD, "looks right"),
    ]);
    let mut s = Session::new(&gw);
    let out = generate_for_context(&mut s, &store, &ctx, &profile(), &qa_opts).map_err(|e| e.to_string())?;
    ensure!(
        out.accepted.is_empty() && out.candidates.len() == 1 && s.exchanges.len() == 3,
        "verification fallback"
    );

    let (a, b) = similar_pair();
    let sub = answer_subclusters(&question_communities(&[a.clone(), b.clone()], 0.8)[0], &[a.clone(), b.clone()], 0.7, 0.75);
    let gw = scripted(vec![(template::RANK, WILDCARD, "no pairs")]);
    let mut s = Session::new(&gw);
    let (kept, decision) =
        refine(&mut s, &sub[0], &[&a.unit, &b.unit], &profile(), 0.85).map_err(|e| e.to_string())?;
    ensure!(
        matches!(decision, Decision::Fallback { .. }) && kept == vec![a.unit, b.unit] && s.exchanges.len() == 2,
        "rank fallback"
    );
    Ok("declared fallbacks hold".into())
}

fn protocol_goldens() -> Outcome {
    let mut total = 0;
    for p in protocols() {
        ensure!(p.goldens.len() >= 3 && !p.malformed.is_empty(), "{}: too few fixtures", p.name);
        for g in &p.goldens {
            (p.parse)(g).map_err(|e| format!("{}: golden rejected: {e}\n{g}", p.name))?;
            total += 1;
        }
        for m in &p.malformed {
            match (p.parse)(m) {
                Err(e) if e.is_protocol() => total += 1,
                other => return Err(format!("{}: malformed accepted or mistyped: {other:?}\n{m}", p.name)),
            }
        }

        let gw = scripted(vec![(p.template_id, WILDCARD, &p.malformed[0])]);
        let mut s = Session::new(&gw);
        let parsed = s.ask(&filled(p.template_id), p.parse).map_err(|e| e.to_string())?;
        ensure!(parsed.reprompted, "{}: no re-prompt", p.name);
        ensure!(s.exchanges.len() == 2, "{}: {} exchanges", p.name, s.exchanges.len());
        ensure!(
            !s.exchanges[0].request.reprompt && s.exchanges[1].request.reprompt,
            "{}: re-prompt not marked",
            p.name
        );
        ensure!(
            s.exchanges[1].prompt.ends_with(template::REPROMPT_SUFFIX),
            "{}: re-prompt suffix missing",
            p.name
        );
        ensure!(
            matches!(&parsed.result, Err(e) if e.is_protocol()),
            "{}: second failure not a protocol error",
            p.name
        );

        let gw = scripted(vec![
            (p.template_id, "probe", &p.malformed[0]),
            (p.template_id, "probe!retry", &p.goldens[0]),
        ]);
        let mut s = Session::new(&gw);
        let parsed = s.ask(&filled(p.template_id), p.parse).map_err(|e| e.to_string())?;
        ensure!(parsed.result.is_ok() && s.exchanges.len() == 2, "{}: re-prompt did not recover", p.name);
    }
    declared_fallbacks()?;
    Ok(format!("9 protocols, {total} fixtures, one re-prompt each before fallback"))
}

// 4

fn scripted_end_to_end() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let (art, manifest) = common::run(common::e2e_config(a.path()));
    let first_elapsed = started.elapsed();
    common::run(common::e2e_config(b.path()));
    ensure!(first_elapsed.as_secs_f64() < 10.0, "run took {first_elapsed:?}");
    ensure!(manifest.counts.chunks == 12, "{} chunks", manifest.counts.chunks);
    let first = std::fs::read(a.path().join(DATASET)).unwrap();
    let second = std::fs::read(b.path().join(DATASET)).unwrap();
    ensure!(first == second, "datasets differ across runs");
    let golden = std::fs::read(common::fixture("e2e/golden_dataset.jsonl")).unwrap();
    ensure!(first == golden, "dataset differs from golden");
    let multi: BTreeSet<&str> = ["transport_0002", "transport_0004", "finance_0002"].into();
    let (mut m, mut single) = (0, 0);
    for u in &art.dataset {
        if multi.contains(u.seed_id.as_str()) {
            ensure!(u.hops >= 2, "{} expected multi-hop, got {}", u.id, u.hops);
            m += 1;
        } else {
            ensure!(u.hops == 1, "{} expected single hop, got {}", u.id, u.hops);
            single += 1;
        }
    }
    ensure!(m == 3 && single == 7, "unexpected split {m}/{single}");
    ensure!(manifest.audits_pass(), "audits failed: {:?}", manifest.audits);
    Ok(format!(
        "{} units byte-identical to golden, {m} multi-hop, {single} single-hop, {first_elapsed:.2?} per run",
        art.dataset.len()
    ))
}

// 5

const VERDICTS: [&str; 4] = [
    "QUESTION_CORRECT\nANSWER_CORRECT\nREQUIRES_CONTENT\nJustification: supported",
    "QUESTION_CORRECT\nANSWER_INCORRECT\nREQUIRES_CONTENT\nJustification: wrong figure",
    "QUESTION_INCORRECT\nANSWER_CORRECT\nREQUIRES_CONTENT\nJustification: not standalone",
    "QUESTION_CORRECT\nANSWER_CORRECT\nCAN_ANSWER_WITHOUT_CONTENT\nJustification: trivia",
];

const VOCAB: [&str; 24] = [
    "turbine", "ledger", "axle", "dividend", "voltage", "coolant", "margin", "gearbox", "invoice", "sensor",
    "bearing", "audit", "torque", "tariff", "relay", "solvent", "payload", "rotor", "lease", "valve",
    "freight", "clutch", "bond", "filter",
];

fn gate_run(verify: bool) -> Result<(Vec<QaUnit>, BTreeSet<String>), String> {
    let n = 50;
    let mut script: Vec<(String, String, String)> = Vec::new();
    let mut rejected = BTreeSet::new();
    let mut chunks = Vec::new();
    for i in 0..n {
        let seed = format!("s{i:02}");
        let (w1, w2) = (VOCAB[i % VOCAB.len()], VOCAB[(i * 7 + 3) % VOCAB.len()]);
        chunks.push(chunk(&seed, &format!("Record {i}: the {w1} rating is {i} units.")));
        let gen = QA_GOLDEN
            .replace(
                "Under the Global Truck Regulation defined in Annex A, what speed limit applies to trucks?",
                &format!("Which {w1} rating pairs with {w2} batch {i}?"),
            )
            .replace("80 km/h.", &format!("{i} {w2} units."))
            .replace("Chunk c7", "Chunk 1")
            .replace("Chunk c1", "Chunk 1");
        script.push((template::QA_GENERATION.into(), format!("qa:{seed}:s0"), gen));
        script.push((template::VERIFY.into(), format!("ver:{seed}:s0"), VERDICTS[i % 4].into()));
        if i % 4 != 0 {
            rejected.insert(seed);
        }
    }
    script.push((template::RANK.into(), WILDCARD.into(), "not a ranking".into()));
    let gw = scripted(script.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())).collect());
    let store = ChunkStore::new(chunks);
    let opts = QaOptions { candidates_per_context: 1, verify, ..QaOptions::default() };
    let mut session = Session::new(&gw);
    let mut accepted = Vec::new();
    let mut candidates = 0;
    for c in store.chunks() {
        let ctx = SemanticContext {
            seed_id: c.id.clone(),
            members: vec![c.id.clone()],
            status: ContextStatus::BudgetStop,
            iterations: 0,
            trace: vec![],
        };
        let out = generate_for_context(&mut session, &store, &ctx, &profile(), &opts).map_err(|e| e.to_string())?;
        candidates += out.candidates.len();
        accepted.extend(out.accepted);
    }
    ensure!(candidates == n, "{candidates} candidates generated");
    let (dataset, _) =
        curate(&mut session, accepted, &profile(), &CuratorOptions::default()).map_err(|e| e.to_string())?;
    Ok((dataset, rejected))
}

fn verifier_gate() -> Outcome {
    let (dataset, rejected) = gate_run(true)?;
    let leaked: Vec<&QaUnit> = dataset.iter().filter(|u| rejected.contains(&u.seed_id)).collect();
    ensure!(leaked.is_empty(), "{} rejected candidates reached the dataset", leaked.len());
    ensure!(dataset.len() == 50 - rejected.len(), "{} units survived", dataset.len());
    ensure!(dataset.iter().all(|u| u.verdict.as_ref().is_some_and(|v| v.accepted())), "unverified unit");

    let (open, _) = gate_run(false)?;
    ensure!(open.len() == 50, "without verification {} of 50 passed", open.len());
    Ok(format!(
        "{} of 50 rejected and none reached the dataset; all 50 pass without verification",
        rejected.len()
    ))
}

// 6

struct FuzzBackend {
    rng: Mutex<ChaCha8Rng>,
}

impl ChatBackend for FuzzBackend {
    fn id(&self) -> &str {
        "fuzz"
    }

    fn send(&self, call: &BackendCall<'_>) -> Result<BackendReply, BackendError> {
        let mut rng = self.rng.lock().unwrap();
        let text = match call.template_id {
            template::COMPLETENESS => {
                if rng.gen_bool(0.3) {
                    "Status: COMPLETE, Query: None, Explanation: ok".to_string()
                } else {
                    let queries: Vec<String> = (0..rng.gen_range(1..=2))
                        .map(|_| format!("{} {}", VOCAB.choose(&mut *rng).unwrap(), VOCAB.choose(&mut *rng).unwrap()))
                        .collect();
                    format!("Status: INCOMPLETE, Query: {}, Explanation: gap", queries.join(" | "))
                }
            }
            template::RERANK => {
                let mut ids: Vec<&str> = call
                    .prompt
                    .text
                    .split("<CHUNK_START id=")
                    .skip(1)
                    .filter_map(|s| s.split('>').next())
                    .collect();
                ids.shuffle(&mut *rng);
                if rng.gen_bool(0.1) {
                    "garbled".to_string()
                } else {
                    ids.iter()
                        .enumerate()
                        .map(|(k, id)| format!("<Rank {}>Chunk {id}", k + 1))
                        .collect::<Vec<_>>()
                        .join("\n")
                }
            }
            template::ADDITION => ["Status: EXPLANATORY", "Status: RELATED", "Status: UNRELATED", "Status: ???"]
                [rng.gen_range(0..4)]
            .to_string(),
            other => return Err(BackendError::Fatal(format!("unexpected template {other}"))),
        };
        Ok(BackendReply { text, latency_ms: 0 })
    }
}

fn check_loop(ctx: &SemanticContext, opts: &ContextOptions) -> Result<(), String> {
    ensure!(ctx.iterations <= opts.max_depth, "{} iterations > {}", ctx.iterations, opts.max_depth);
    ensure!(ctx.iterations == ctx.trace.len(), "trace length");
    let mut rebuilt = vec![ctx.seed_id.clone()];
    for (t, step) in ctx.trace.iter().enumerate() {
        let continuing = t + 1 < ctx.trace.len() || ctx.status != ContextStatus::Exhausted;
        if continuing {
            ensure!(!step.admitted.is_empty(), "no growth at continuing iteration {t}");
        } else {
            ensure!(step.admitted.is_empty(), "exhausted after growth");
        }
        for e in &step.evaluations {
            if e.admitted {
                ensure!(e.verdict != AdmissionVerdict::Unrelated, "unrelated admitted");
                rebuilt.push(e.chunk_id.clone());
            }
        }
    }
    ensure!(rebuilt == ctx.members, "members are not seed plus admissions");
    let unique: BTreeSet<&String> = ctx.members.iter().collect();
    ensure!(unique.len() == ctx.members.len(), "duplicate member");
    if ctx.status == ContextStatus::BudgetStop {
        ensure!(ctx.iterations == opts.max_depth, "budget stop before depth limit");
    }
    Ok(())
}

fn context_loop() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x100);
    let mut statuses: BTreeMap<String, usize> = BTreeMap::new();
    for case in 0..100 {
        let backend = FuzzBackend { rng: Mutex::new(ChaCha8Rng::seed_from_u64(case)) };
        let gw = Gateway::new(Arc::new(backend), Arc::new(HashEmbedder::new(64, case)))
            .with_retry(RetryPolicy::immediate());
        let chunks: Vec<Chunk> = (0..16)
            .map(|i| {
                let words: Vec<&str> = (0..6).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect();
                chunk(&format!("k{i:02}"), &words.join(" "))
            })
            .collect();
        let (store, index) = indexed(&gw, chunks);
        let opts = ContextOptions {
            max_depth: rng.gen_range(1..=4),
            member_budget: rng.gen_range(2..=6),
            keep_k: rng.gen_range(1..=4),
            top_n: rng.gen_range(2..=8),
            ..ContextOptions::default()
        };
        let seed = format!("k{:02}", rng.gen_range(0..16));
        let mut s = Session::new(&gw);
        let ctx = build_context(&mut s, &store, &index, &profile(), &seed, &opts).map_err(|e| e.to_string())?;
        check_loop(&ctx, &opts).map_err(|e| format!("case {case}: {e}"))?;
        *statuses.entry(format!("{:?}", ctx.status)).or_default() += 1;
    }

    let gw = scripted(vec![
        (template::COMPLETENESS, WILDCARD, "Status: INCOMPLETE, Query: turbine ledger, Explanation: x"),
        (template::RERANK, WILDCARD, "not a ranking"),
        (template::ADDITION, WILDCARD, "Status: UNRELATED\nExplanation: no"),
    ]);
    let chunks = (0..6).map(|i| chunk(&format!("u{i}"), VOCAB[i])).collect();
    let (store, index) = indexed(&gw, chunks);
    let mut s = Session::new(&gw);
    let opts = ContextOptions::default();
    let ctx = build_context(&mut s, &store, &index, &profile(), "u0", &opts).map_err(|e| e.to_string())?;
    ensure!(
        ctx.status == ContextStatus::Exhausted && ctx.iterations == 1 && ctx.members == ["u0"],
        "all-unrelated loop ended {:?} after {}",
        ctx.status,
        ctx.iterations
    );
    Ok(format!("100 fuzzed loops grow strictly within depth {statuses:?}; all-unrelated exhausts in 1"))
}

// 7

fn embedded(id: &str, answer: Vec<f64>, ctx: &[&str]) -> EmbeddedUnit {
    EmbeddedUnit {
        unit: QaUnit {
            id: id.into(),
            question: format!("question {id}"),
            answer: format!("answer {id}"),
            relevance: 0.5,
            difficulty: 0.5,
            hops: 1,
            seed_id: ctx[0].into(),
            context_ids: ctx.iter().map(|s| s.to_string()).collect(),
            decomposition: vec![DecompositionEntry {
                fragment: id.into(),
                chunk_id: ctx[0].into(),
                side: Side::Answer,
            }],
            topic_id: None,
            verdict: None,
            lineage: vec![],
        },
        question_vec: vec![1.0, 0.0],
        answer_vec: answer,
    }
}

fn with_cos(c: f64) -> Vec<f64> {
    vec![c, (1.0 - c * c).sqrt()]
}

/// Shared contexts, so similarity = 0.7 cos + 0.3; cos 6/7 gives 0.9.
fn similar_pair() -> (EmbeddedUnit, EmbeddedUnit) {
    (
        embedded("u1", vec![1.0, 0.0], &["c1"]),
        embedded("u2", with_cos(6.0 / 7.0), &["c1"]),
    )
}

fn curator_refinement() -> Outcome {
    let a = embedded("a", vec![1.0, 0.0], &["c1", "c2", "c3"]);
    let b = embedded("b", with_cos(0.9), &["c1", "c2", "c4"]);
    let hand = 0.7 * 0.9 + 0.3 * (2.0 / 4.0);
    let got = unit_similarity(&a, &b, 0.7);
    ensure!((got - 0.78).abs() <= 1e-9 && (hand - 0.78f64).abs() <= 1e-12, "hand value {got}");

    let (u1, u2) = similar_pair();
    let units = [u1.clone(), u2.clone()];
    let communities = question_communities(&units, 0.8);
    let subs = answer_subclusters(&communities[0], &units, 0.7, 0.75);
    ensure!(subs.len() == 1, "{} subclusters", subs.len());
    ensure!((subs[0].min_pairwise_sim - 0.9).abs() <= 1e-9, "min sim {}", subs[0].min_pairwise_sim);
    let ranked = "<|#|>START<|#|>Question<|#|>question u2<|#|>Answer<|#|>answer u2<|#|>NEXT<|#|>Question<|#|>question u1<|#|>Answer<|#|>answer u1<|#|>END<|#|>";
    let merged = "<|#|>START<|#|>Question<|#|>merged question<|#|>Answer<|#|>merged answer<|#|>END<|#|>";
    let gw = scripted(vec![(template::RANK, WILDCARD, ranked), (template::MERGE, WILDCARD, merged)]);
    let mut s = Session::new(&gw);
    let (out, decision) =
        refine(&mut s, &subs[0], &[&u1.unit, &u2.unit], &profile(), 0.85).map_err(|e| e.to_string())?;
    let merges = s.exchanges.iter().filter(|e| e.request.template_id == template::MERGE).count();
    ensure!(merges == 1, "{merges} merge calls");
    ensure!(matches!(decision, Decision::Merged { outputs: 1 }), "decision {decision:?}");
    ensure!(out.len() == 1 && out[0].lineage == ["u1", "u2"], "merged output {out:?}");

    let low = embedded("u3", with_cos(2.0 / 7.0), &["c1"]);
    let sim = unit_similarity(&u1, &low, 0.7);
    ensure!((sim - 0.5).abs() <= 1e-9, "low fixture sim {sim}");
    let sub = AnswerSubcluster {
        id: "u1/u1".into(),
        community_id: "u1".into(),
        members: vec!["u1".into(), "u3".into()],
        min_pairwise_sim: sim,
    };
    let gw = scripted(vec![]);
    let mut s = Session::new(&gw);
    let (kept, decision) =
        refine(&mut s, &sub, &[&u1.unit, &low.unit], &profile(), 0.85).map_err(|e| e.to_string())?;
    ensure!(decision == Decision::Retained && s.exchanges.is_empty(), "0.5 fixture was refined");
    ensure!(kept == vec![u1.unit.clone(), low.unit.clone()], "originals altered");
    Ok("0.9 triggers one merge, 0.5 retains verbatim, hand value 0.78".into())
}

// 8

fn ablation_structure() -> Outcome {
    let out = tempfile::tempdir().unwrap();
    let (art, _) = common::run(RunConfig { no_multihop: true, ..common::e2e_config(out.path()) });
    ensure!(
        art.contexts.iter().all(|c| c.members == [c.seed_id.clone()]),
        "no-multihop context grew"
    );
    ensure!(art.dataset.iter().all(|u| u.hops == 1), "no-multihop unit with hops > 1");

    let out = tempfile::tempdir().unwrap();
    common::run(RunConfig { no_persona: true, ..common::e2e_config(out.path()) });
    let generation: Vec<_> = common::transcript(out.path(), Stage::Generate)
        .into_iter()
        .filter(|e| e.request.template_id == template::QA_GENERATION)
        .collect();
    ensure!(!generation.is_empty(), "no generation prompts recorded");
    ensure!(
        generation
            .iter()
            .all(|e| e.prompt.contains(GENERIC_PERSONA) && e.prompt.contains(GENERIC_DOMAIN)),
        "generation prompt without generic placeholders"
    );
    ensure!(
        common::all_exchanges(out.path())
            .iter()
            .all(|e| e.request.template_id != template::DOMAIN_PERSONA),
        "persona synthesis ran"
    );

    let out = tempfile::tempdir().unwrap();
    let (art, _) = common::run(RunConfig { chunker: "fixed:40".into(), ..common::e2e_config(out.path()) });
    ensure!(
        common::all_exchanges(out.path())
            .iter()
            .all(|e| e.request.template_id != template::CHUNK),
        "segmentation calls under fixed chunking"
    );
    Ok(format!(
        "single-chunk contexts, generic placeholders in {} prompts, fixed chunking made {} chunks without segmentation calls",
        generation.len(),
        art.chunks.len()
    ))
}

// 9

fn mmr() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x33);
    for case in 0..50 {
        let n = rng.gen_range(1..=30);
        let k = rng.gen_range(1..=n);
        let candidates: Vec<Candidate> = (0..n)
            .map(|i| Candidate {
                term: format!("t{i:02}"),
                relevance: rng.gen_range(0.0..1.0),
                embedding: unit_vec(&mut rng, 6),
            })
            .collect();
        let mut sorted = candidates.clone();
        sorted.sort_by(|a, b| b.relevance.total_cmp(&a.relevance).then(a.term.cmp(&b.term)));
        let expected: Vec<String> = sorted.iter().take(k).map(|c| c.term.clone()).collect();
        let got = mmr_select(&candidates, k, 1.0);
        ensure!(got == expected, "case {case}: {got:?} vs {expected:?}");
    }

    let lambda = 0.7;
    let near = vec![0.999, (1.0f64 - 0.999 * 0.999).sqrt(), 0.0];
    let fixture = vec![
        Candidate { term: "speed".into(), relevance: 0.9, embedding: vec![1.0, 0.0, 0.0] },
        Candidate { term: "speeds".into(), relevance: 0.88, embedding: near },
        Candidate { term: "tachograph".into(), relevance: 0.6, embedding: vec![0.0, 0.0, 1.0] },
    ];
    let cos = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut best: Option<(f64, BTreeSet<String>)> = None;
    for i in 0..fixture.len() {
        for j in i + 1..fixture.len() {
            let (a, b) = (&fixture[i], &fixture[j]);
            let value = lambda * (a.relevance + b.relevance) - (1.0 - lambda) * cos(&a.embedding, &b.embedding);
            if best.as_ref().is_none_or(|(v, _)| value > *v) {
                best = Some((value, [a.term.clone(), b.term.clone()].into()));
            }
        }
    }
    let (_, best) = best.unwrap();
    let got: BTreeSet<String> = mmr_select(&fixture, 2, lambda).into_iter().collect();
    ensure!(got == best, "mmr picked {got:?}, brute force {best:?}");
    ensure!(!got.contains("speeds"), "near duplicate selected");
    Ok("lambda 1 equals relevance top-k on 50 sets; near-duplicate excluded as in the best pair".into())
}

// 10

fn determinism_audit() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, ma) = common::run(common::e2e_config(a.path()));
    let (_, mb) = common::run(common::e2e_config(b.path()));
    ensure!(ma.counts == mb.counts, "counts differ: {:?} vs {:?}", ma.counts, mb.counts);
    for stage in Stage::ALL {
        let (ra, rb) = (&ma.stages[stage.name()], &mb.stages[stage.name()]);
        ensure!(ra.transcript_sha256 == rb.transcript_sha256, "{stage}: transcript hashes differ");
        let recomputed = transcript_hash(&common::transcript(a.path(), stage));
        ensure!(recomputed == ra.transcript_sha256, "{stage}: recorded hash does not match transcript");
    }
    let calls: u64 = ma.stages.values().map(|r| r.calls as u64).sum();
    Ok(format!("identical counts and {} stage transcript hashes over {calls} calls", Stage::ALL.len()))
}
