use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qaforge_core::config::RunConfig;
use qaforge_core::metrics::ScoreOptions;
use qaforge_core::pipeline::{self, Pipeline, RunManifest, Stage};

/// Generate verified multi-hop QA datasets from a markdown corpus.
#[derive(Parser, Debug)]
#[command(name = "qaforge", version)]
struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Generic override, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chunk, describe, and embed the corpus.
    Ingest,
    /// Build the corpus profile (topics, domain, persona).
    Profile,
    /// Build a semantic context per seed chunk.
    Contexts,
    /// Generate and verify QA candidates.
    Generate,
    /// Cluster, merge, and export the final dataset.
    Curate,
    /// Score a dataset. Without file arguments, runs the pipeline through scoring.
    Score(ScoreArgs),
    /// Run every stage.
    Run,
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long, requires_all = ["profile", "chunks"])]
    dataset: Option<PathBuf>,
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    chunks: Option<PathBuf>,
    /// Where to write the report JSON (standalone mode).
    #[arg(long)]
    report: Option<PathBuf>,
}

/// One flag per configuration key.
#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long, global = true)]
    corpus_dir: Option<String>,
    #[arg(long, global = true)]
    out_dir: Option<String>,
    #[arg(long, global = true)]
    chat_url: Option<String>,
    #[arg(long, global = true)]
    chat_model: Option<String>,
    #[arg(long, global = true)]
    vision_model: Option<String>,
    #[arg(long, global = true)]
    embedding_url: Option<String>,
    #[arg(long, global = true)]
    embedding_model: Option<String>,
    #[arg(long, global = true)]
    api_key_env: Option<String>,
    #[arg(long, global = true)]
    mock_script: Option<String>,
    #[arg(long, global = true)]
    mock_embedding_dim: Option<String>,
    #[arg(long, global = true)]
    max_in_flight: Option<String>,
    #[arg(long, global = true)]
    request_timeout_secs: Option<String>,
    #[arg(long, global = true)]
    threads: Option<String>,
    #[arg(long, global = true)]
    window_length: Option<String>,
    #[arg(long, global = true)]
    window_overlap: Option<String>,
    #[arg(long, global = true)]
    chunker: Option<String>,
    /// Shorthand for --chunker fixed:<TOKENS>.
    #[arg(long, global = true, value_name = "TOKENS")]
    fixed_chunk_size: Option<usize>,
    #[arg(long, global = true)]
    lambda: Option<String>,
    #[arg(long, global = true)]
    projection_dims: Option<String>,
    #[arg(long, global = true)]
    eps: Option<String>,
    #[arg(long, global = true)]
    min_pts: Option<String>,
    #[arg(long, global = true)]
    mmr_lambda: Option<String>,
    #[arg(long, global = true)]
    keywords_k: Option<String>,
    #[arg(long, global = true)]
    top_n: Option<String>,
    #[arg(long, global = true)]
    keep_k: Option<String>,
    #[arg(long, global = true)]
    max_depth: Option<String>,
    #[arg(long, global = true)]
    member_budget: Option<String>,
    #[arg(long, global = true)]
    candidates_per_context: Option<String>,
    #[arg(long, global = true)]
    difficulty_min: Option<String>,
    #[arg(long, global = true)]
    alpha: Option<String>,
    #[arg(long, global = true)]
    tau: Option<String>,
    #[arg(long, global = true)]
    question_threshold: Option<String>,
    #[arg(long, global = true)]
    link_threshold: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    target_count: Option<String>,
    #[arg(long, global = true)]
    no_multihop: bool,
    #[arg(long, global = true)]
    no_verifier: bool,
    #[arg(long, global = true)]
    no_persona: bool,
    #[arg(long, global = true)]
    image_only: bool,
    #[arg(long, global = true)]
    description_only: bool,
    /// Skip judge calls during scoring.
    #[arg(long, global = true)]
    no_judge: bool,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut opt = |k: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k, v.clone()));
            }
        };
        opt("corpus_dir", &self.corpus_dir);
        opt("out_dir", &self.out_dir);
        opt("chat_url", &self.chat_url);
        opt("chat_model", &self.chat_model);
        opt("vision_model", &self.vision_model);
        opt("embedding_url", &self.embedding_url);
        opt("embedding_model", &self.embedding_model);
        opt("api_key_env", &self.api_key_env);
        opt("mock_script", &self.mock_script);
        opt("mock_embedding_dim", &self.mock_embedding_dim);
        opt("max_in_flight", &self.max_in_flight);
        opt("request_timeout_secs", &self.request_timeout_secs);
        opt("threads", &self.threads);
        opt("window_length", &self.window_length);
        opt("window_overlap", &self.window_overlap);
        opt("chunker", &self.chunker);
        opt("lambda", &self.lambda);
        opt("projection_dims", &self.projection_dims);
        opt("eps", &self.eps);
        opt("min_pts", &self.min_pts);
        opt("mmr_lambda", &self.mmr_lambda);
        opt("keywords_k", &self.keywords_k);
        opt("top_n", &self.top_n);
        opt("keep_k", &self.keep_k);
        opt("max_depth", &self.max_depth);
        opt("member_budget", &self.member_budget);
        opt("candidates_per_context", &self.candidates_per_context);
        opt("difficulty_min", &self.difficulty_min);
        opt("alpha", &self.alpha);
        opt("tau", &self.tau);
        opt("question_threshold", &self.question_threshold);
        opt("link_threshold", &self.link_threshold);
        opt("seed", &self.seed);
        opt("target_count", &self.target_count);
        if let Some(n) = self.fixed_chunk_size {
            out.push(("chunker", format!("fixed:{n}")));
        }
        for (k, on) in [
            ("no_multihop", self.no_multihop),
            ("no_verifier", self.no_verifier),
            ("no_persona", self.no_persona),
            ("image_only", self.image_only),
            ("description_only", self.description_only),
        ] {
            if on {
                out.push((k, "true".into()));
            }
        }
        if self.no_judge {
            out.push(("judge", "false".into()));
        }
        out
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    for raw in &cli.sets {
        let Some((k, v)) = raw.split_once('=') else {
            bail!("--set expects KEY=VALUE, got {raw:?}");
        };
        config.set(k.trim(), v.trim())?;
    }
    for (k, v) in cli.overrides.pairs() {
        config.set(k, &v)?;
    }
    Ok(config)
}

fn report(manifest: &RunManifest) {
    let c = &manifest.counts;
    println!("run {} ({})", manifest.run_id, manifest.backend);
    for stage in &manifest.completed {
        let resumed = if manifest.resumed.contains(stage) { " (resumed)" } else { "" };
        println!("  {stage}: done{resumed}");
    }
    println!(
        "  chunks {} | contexts {:?} | candidates {} | verified {} | final {}",
        c.chunks, c.contexts, c.candidates, c.verified, c.final_units
    );
    if let Some(s) = &manifest.score {
        println!(
            "  faithfulness {:.3} | relevance {:.3} | avg hops {:.2} | visual grounding {:.3} | jsd {:.4}",
            s.faithfulness, s.relevance, s.avg_hops, s.visual_grounding_rate, s.jsd
        );
    }
    let flags = manifest.flags().count();
    if flags > 0 {
        println!("  {flags} warning(s); see manifest.json");
    }
    for a in manifest.audits.iter().filter(|a| !a.passed) {
        eprintln!("audit {} failed: {}", a.name, a.detail);
    }
}

fn run_stages(config: RunConfig, until: Stage) -> Result<ExitCode> {
    let gateway = config.gateway()?;
    let out = config.out_dir.clone();
    let pipeline = Pipeline::new(config, &gateway)?;
    let (_, manifest) = pipeline.run(until)?;
    report(&manifest);
    println!("artifacts in {}", out.display());
    Ok(if manifest.audits_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn score_standalone(config: RunConfig, args: &ScoreArgs) -> Result<ExitCode> {
    let (Some(dataset), Some(profile), Some(chunks)) = (&args.dataset, &args.profile, &args.chunks) else {
        bail!("--dataset, --profile, and --chunks must be given together");
    };
    let gateway = config.gateway()?;
    let opts = ScoreOptions {
        judge: config.judge,
        grounding: true,
    };
    let (scores, report, flags) = pipeline::score_files(&gateway, dataset, profile, chunks, &opts)?;
    for f in &flags {
        eprintln!("warning [{}]: {}", f.subject, f.message);
    }
    let Some(report) = report else {
        println!("dataset is empty; nothing to score");
        return Ok(ExitCode::SUCCESS);
    };
    let json = serde_json::to_string_pretty(&report)?;
    match &args.report {
        Some(path) => {
            pipeline::write_json(path, &report)?;
            let scores_path = path.with_extension("units.jsonl");
            pipeline::write_jsonl(&scores_path, &scores)?;
            println!("wrote {} and {}", path.display(), scores_path.display());
        }
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("error")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = effective_config(&cli).and_then(|config| match &cli.command {
        Command::Config => {
            print!("{}", config.to_toml());
            Ok(ExitCode::SUCCESS)
        }
        Command::Ingest => run_stages(config, Stage::Ingest),
        Command::Profile => run_stages(config, Stage::Profile),
        Command::Contexts => run_stages(config, Stage::Contexts),
        Command::Generate => run_stages(config, Stage::Generate),
        Command::Curate => run_stages(config, Stage::Curate),
        Command::Score(args) if args.dataset.is_some() => score_standalone(config, args),
        Command::Score(_) => run_stages(config, Stage::Score),
        Command::Run => run_stages(config, Stage::Score),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
